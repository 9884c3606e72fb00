"""Monte Carlo studies: solution moments, sup tails, cut-off and truncation rates."""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
import logging
import math

import numpy as np

from . import _rng
from .analysis import (chernov_bound, combined_tail, gaussian_tail_function,
                       gaussian_tail_params, kernel_sup_constants, moment_series_certificate,
                       poincare_apriori_constant, talagrand_bound)
from .errors import LevyFieldError, NonSummableError, StudyError, ValidationError
from .fem import (assemble_solve, coefficient_sensitivity, data_norms, difference, h1_norm,
                  interval_mesh, rectangle_mesh)
from .field import TransformSpec, smooth_realization, transform_field, truncation_padding
from .matern import MaternKernel, decay_radius
from .measure import LevyTriplet
from .mercer import fields_for_levels, nystrom_eig, truncation_remainder
from .noise import Box, CellGrid, sample_noise

log = logging.getLogger(__name__)

MAX_FAILURE_RATE = 0.01
GAUSSIAN_SHARE = 0.2


@dataclass(frozen=True)
class StudyConfig:
    """Everything a study needs; immutable and picklable."""

    triplet: LevyTriplet
    kernel: MaternKernel
    transform: TransformSpec = field(default_factory=TransformSpec.exp)
    domain: Box = field(default_factory=lambda: Box((0.0,), (1.0,)))
    mesh_cells: tuple = (32,)
    noise_spacing: float = None
    source: float = 1.0
    dirichlet_value: float = 0.0
    neumann_flux: float = 0.0
    dirichlet: tuple = None
    samples: int = 100
    seed: int = 0
    workers: int = 1
    drift_tolerance: float = 1e-3
    padding: float = None
    orders: tuple = (1, 2)
    beta: float = None
    tau: float = 0.5
    talagrand_K: float = 1.0
    eta: float = 0.5
    apriori_constant: float = None
    thresholds: tuple = ()
    paddings: tuple = ()
    reference_padding: float = None
    n_terms: tuple = ()
    kl_padding: float = None
    bootstrap: int = 1000

    def __post_init__(self):
        if self.domain.d != self.kernel.d:
            raise ValidationError("domain and kernel dimensions differ")
        if len(self.mesh_cells) != self.domain.d or min(self.mesh_cells) < 1:
            raise ValidationError("mesh_cells needs one positive count per axis")
        if self.samples < 2:
            raise ValidationError("samples must be at least 2")
        if self.workers < 1:
            raise ValidationError("workers must be positive")
        for name in ("orders", "thresholds", "paddings", "n_terms"):
            vals = list(getattr(self, name))
            if vals != sorted(vals) or len(set(vals)) != len(vals):
                raise ValidationError(f"{name} must be sorted and free of duplicates")

    @property
    def h_noise(self):
        if self.noise_spacing is not None:
            return float(self.noise_spacing)
        return float(min(np.divide(self.domain.lengths, self.mesh_cells)))

    @property
    def pad(self):
        return decay_radius(self.kernel, 1e-8) if self.padding is None else float(self.padding)


def build_mesh(cfg):
    d = cfg.domain
    if d.d == 1:
        sides = cfg.dirichlet or ("left", "right")
        return interval_mesh(d.lower[0], d.upper[0], cfg.mesh_cells[0], sides)
    sides = cfg.dirichlet or ("left", "right", "bottom", "top")
    return rectangle_mesh(d.lower, d.upper, cfg.mesh_cells[0], cfg.mesh_cells[1], sides)


def noise_grid(cfg, pad=None):
    return CellGrid.around(cfg.domain, cfg.pad if pad is None else pad, cfg.h_noise)


def solve_field(cfg, mesh, fr):
    coef = transform_field(fr, cfg.transform)
    return assemble_solve(mesh, coef.values, cfg.source, cfg.dirichlet_value, cfg.neumann_flux)


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit of ``log y`` against ``log x`` (loglog) or ``x`` (semilog)."""

    x: tuple
    y: tuple
    slope: float
    intercept: float
    r_squared: float
    scale: str


def fit_rate(x, y, scale="loglog"):
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x) < 3 or np.any(y <= 0) or not np.all(np.isfinite(y)):
        raise StudyError("rate fit needs at least three positive errors")
    xs = np.log(x) if scale == "loglog" else x
    ly = np.log(y)
    slope, intercept = np.polyfit(xs, ly, 1)
    resid = ly - (slope * xs + intercept)
    r2 = 1.0 - float(np.sum(resid ** 2) / np.sum((ly - ly.mean()) ** 2))
    return RateFit(tuple(x), tuple(y), float(slope), float(intercept), r2, scale)


def bootstrap_ci(values, n_boot=1000, seed=0, level=0.95, stat=np.mean):
    """Percentile bootstrap interval of ``stat`` over the first axis."""
    values = np.asarray(values, dtype=float)
    rng = _rng.stream(seed, "bootstrap")
    idx = rng.integers(0, len(values), size=(n_boot, len(values)))
    stats = np.array([stat(values[i]) for i in idx])
    lo, hi = np.quantile(stats, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def _run(fn, cfg, count):
    """Map ``fn(cfg, i)`` over ``range(count)`` in order, optionally in parallel."""
    if cfg.workers <= 1 or count < 2:
        return [fn(cfg, i) for i in range(count)]
    chunk = max(1, count // (4 * cfg.workers))
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(fn, [cfg] * count, range(count), chunksize=chunk))


def _collect(results, label):
    fails = [r for r in results if r.get("error")]
    for r in fails:
        log.warning("%s sample %s failed: %s", label, r["index"], r["error"])
    if len(fails) > MAX_FAILURE_RATE * len(results):
        raise StudyError(f"{label}: {len(fails)} of {len(results)} samples failed")
    return [r for r in results if not r.get("error")], len(fails)


def _moment_sample(cfg, i):
    try:
        mesh = build_mesh(cfg)
        z = sample_noise(cfg.triplet, noise_grid(cfg), (cfg.seed, i),
                         drift_tolerance=cfg.drift_tolerance)
        fr = smooth_realization(z, cfg.kernel, mesh.vertices, domain=cfg.domain)
        sol = solve_field(cfg, mesh, fr)
        return {"index": i, "h1": h1_norm(sol), "sup": float(np.max(np.abs(fr.values)))}
    except (LevyFieldError, np.linalg.LinAlgError) as exc:
        return {"index": i, "error": f"{type(exc).__name__}: {exc}"}


@dataclass(frozen=True)
class MomentResult:
    orders: tuple
    estimates: tuple
    ci_low: tuple
    ci_high: tuple
    bounds: tuple
    bound_notes: tuple
    norms: np.ndarray
    failures: int


def default_apriori_constant(cfg):
    """Rigorous constant for zero-data 1D problems, else the configured one."""
    if cfg.apriori_constant is not None:
        return float(cfg.apriori_constant)
    mesh = build_mesh(cfg)
    if (cfg.domain.d == 1 and set(mesh.dirichlet) == {"left", "right"}
            and cfg.dirichlet_value == 0 and cfg.neumann_flux == 0):
        return poincare_apriori_constant(float(cfg.domain.lengths[0]))
    return None


def _jump_share(cfg):
    return 1.0 - GAUSSIAN_SHARE if cfg.triplet.sigma2 > 0 else 1.0


def field_tail_function(cfg, K=None):
    """Union tail bound ``j -> P(sup_D |Z_k| >= j)`` built from the configuration.

    With both parts present the Gaussian bound gets ``GAUSSIAN_SHARE`` of the
    threshold; its super-exponential decay makes a small share enough.
    """
    k, trip = cfg.kernel, cfg.triplet
    offset = abs(trip.effective_drift) * k.integral
    gauss = None
    if trip.sigma2 > 0:
        params = gaussian_tail_params(trip.sigma2, k, cfg.domain.diameter, cfg.eta)
        gauss = gaussian_tail_function(params, cfg.talagrand_K if K is None else K)
    jumps = None
    if not trip.nu.is_null:
        if cfg.beta is None:
            raise ValidationError("a Chernov rate beta is needed for noise with jumps")
        k_inf, k_one = kernel_sup_constants(k, cfg.domain)

        def jumps(p):
            return chernov_bound(trip.nu, cfg.beta, k_one, k_inf, cfg.tau, p)
    return lambda j: combined_tail(j, offset=offset, gaussian=gauss, jumps=jumps,
                                   split=GAUSSIAN_SHARE)


def solution_moment_bound(cfg, n):
    """Certified bound on ``E ||u||_{H^1}^n`` or raise :class:`NonSummableError`."""
    c = default_apriori_constant(cfg)
    if c is None:
        raise ValidationError("no a priori constant available for this boundary setup")
    mesh = build_mesh(cfg)
    ref = assemble_solve(mesh, 1.0, cfg.source, cfg.dirichlet_value, cfg.neumann_flux)
    data = sum(data_norms(ref))
    kappa = cfg.kernel.at_zero()
    beta = cfg.beta if not cfg.triplet.nu.is_null else None
    return moment_series_certificate(cfg.transform, n, field_tail_function(cfg), data, c,
                                     beta=beta, kappa=kappa,
                                     rate_fraction=cfg.tau * _jump_share(cfg))


def mc_solution_moments(cfg):
    """Monte Carlo estimates of ``E ||u||_{H^1}^n`` with bootstrap intervals and bounds."""
    results, fails = _collect(_run(_moment_sample, cfg, cfg.samples), "moments")
    norms = np.array([r["h1"] for r in results])
    est, lo, hi, bounds, notes = [], [], [], [], []
    for n in cfg.orders:
        vals = norms ** n
        est.append(float(vals.mean()))
        a, b = bootstrap_ci(vals, cfg.bootstrap, (cfg.seed, "ci", n))
        lo.append(a)
        hi.append(b)
        try:
            bounds.append(solution_moment_bound(cfg, n).value)
            notes.append("ok")
        except (NonSummableError, ValidationError) as exc:
            bounds.append(math.nan)
            notes.append(str(exc))
    return MomentResult(tuple(cfg.orders), tuple(est), tuple(lo), tuple(hi), tuple(bounds),
                        tuple(notes), norms, fails)


def _domain_nodes(cfg):
    mesh = build_mesh(cfg)
    return mesh.vertices


def _tail_sample(cfg, i):
    try:
        z = sample_noise(cfg.triplet, noise_grid(cfg), (cfg.seed, i),
                         drift_tolerance=cfg.drift_tolerance)
        fr = smooth_realization(z, cfg.kernel, _domain_nodes(cfg), domain=cfg.domain)
        return {"index": i, "total": float(np.max(np.abs(fr.values))),
                "gauss": float(np.max(np.abs(fr.gaussian_part))),
                "jump": float(np.max(np.abs(fr.jump_part)))}
    except (LevyFieldError, np.linalg.LinAlgError) as exc:
        return {"index": i, "error": f"{type(exc).__name__}: {exc}"}


@dataclass(frozen=True)
class TailResult:
    thresholds: tuple
    survival_total: tuple
    survival_gauss: tuple
    survival_jump: tuple
    gauss_bound: tuple
    jump_bound: tuple
    calibrated_K: float
    failures: int

    def rows(self):
        return list(zip(self.thresholds, self.survival_total, self.survival_gauss,
                        self.survival_jump, self.gauss_bound, self.jump_bound))


def tail_study(cfg):
    """Empirical survival of ``sup_D |Z_k|`` and its parts against the tail bounds.

    The Gaussian bound is reported with the configured ``K``; ``calibrated_K``
    is the smallest ``K`` for which it covers every valid threshold.
    """
    if not cfg.thresholds:
        raise ValidationError("tail study needs thresholds")
    results, fails = _collect(_run(_tail_sample, cfg, cfg.samples), "tails")
    sup = {key: np.array([r[key] for r in results]) for key in ("total", "gauss", "jump")}
    th = tuple(float(j) for j in cfg.thresholds)
    surv = {key: tuple(float(np.mean(v >= j)) for j in th) for key, v in sup.items()}
    k, trip = cfg.kernel, cfg.triplet
    gauss_b = [math.nan] * len(th)
    k_cal = math.nan
    if trip.sigma2 > 0:
        params = gaussian_tail_params(trip.sigma2, k, cfg.domain.diameter, cfg.eta)
        ratios = []
        for i, j in enumerate(th):
            if j >= params.threshold:
                gauss_b[i] = talagrand_bound(params.sigma_bar, params.A, params.v, cfg.talagrand_K, j)
                unit = talagrand_bound(params.sigma_bar, params.A, params.v, 1.0, j)
                if surv["gauss"][i] > 0:
                    ratios.append((surv["gauss"][i] / unit) ** (1.0 / params.v))
        k_cal = max(ratios) if ratios else math.nan
        # the power round trip can land one ulp short of the survival it must cover
        while ratios and any(
                talagrand_bound(params.sigma_bar, params.A, params.v, k_cal, j) < surv["gauss"][i]
                for i, j in enumerate(th) if j >= params.threshold):
            k_cal = math.nextafter(k_cal, math.inf)
    jump_b = [math.nan] * len(th)
    if not trip.nu.is_null and cfg.beta is not None:
        k_inf, k_one = kernel_sup_constants(k, cfg.domain)
        jump_b = [min(1.0, chernov_bound(trip.nu, cfg.beta, k_one, k_inf, cfg.tau, j)) for j in th]
    return TailResult(th, surv["total"], surv["gauss"], surv["jump"], tuple(gauss_b),
                      tuple(jump_b), float(k_cal), fails)


def aligned_padding(pad, h):
    """Padding rounded up so the cut-off box boundary falls on cell faces."""
    return (math.ceil(pad / h - 1e-9) + 0.5) * h if pad > 0.5 * h else 0.5 * h


def _cutoff_sample(cfg, i):
    try:
        mesh = build_mesh(cfg)
        grid = noise_grid(cfg, cfg.reference_padding)
        z = sample_noise(cfg.triplet, grid, (cfg.seed, i), drift_tolerance=cfg.drift_tolerance)
        nodes = mesh.vertices
        ref = smooth_realization(z, cfg.kernel, nodes, min_padding=0.0, domain=cfg.domain)
        u_ref = solve_field(cfg, mesh, ref)
        f_err, u_err = [], []
        for p in cfg.paddings:
            box = cfg.domain.padded(aligned_padding(p, cfg.h_noise))
            fr = smooth_realization(z.restrict(box), cfg.kernel, nodes, min_padding=0.0,
                                    domain=cfg.domain)
            f_err.append(float(np.max(np.abs(fr.values - ref.values))))
            u_err.append(h1_norm(difference(solve_field(cfg, mesh, fr), u_ref)))
        return {"index": i, "field": f_err, "solution": u_err}
    except (LevyFieldError, np.linalg.LinAlgError) as exc:
        return {"index": i, "error": f"{type(exc).__name__}: {exc}"}


@dataclass(frozen=True)
class CutoffResult:
    distances: tuple
    field_errors: np.ndarray
    solution_errors: np.ndarray
    field_fit: RateFit
    solution_fit: RateFit
    failures: int


def cutoff_rate_study(cfg):
    """Error of cutting the noise off at distance ``p`` from the domain.

    Fields and solutions are compared with those of the same noise cut off
    at ``reference_padding``; mean errors are fitted against the distance on
    a semi-log scale.
    """
    if not cfg.paddings or cfg.reference_padding is None:
        raise ValidationError("cut-off study needs paddings and a reference padding")
    h = cfg.h_noise
    dist = tuple(aligned_padding(p, h) for p in cfg.paddings)
    if aligned_padding(cfg.reference_padding, h) <= max(dist):
        raise ValidationError("reference padding must exceed every swept padding")
    if max(dist) - min(dist) < 3.0 / cfg.kernel.m:
        raise ValidationError("swept paddings must span at least three correlation lengths")
    results, fails = _collect(_run(_cutoff_sample, cfg, cfg.samples), "cutoff")
    fe = np.array([r["field"] for r in results])
    ue = np.array([r["solution"] for r in results])
    return CutoffResult(dist, fe, ue, fit_rate(dist, fe.mean(axis=0), "semilog"),
                        fit_rate(dist, ue.mean(axis=0), "semilog"), fails)


def kl_setup(cfg):
    """Noise grid and Mercer basis shared by every sample of a truncation study."""
    if not cfg.n_terms:
        raise ValidationError("truncation study needs n_terms")
    pad = cfg.kl_padding
    if pad is None:
        pad = truncation_padding(cfg.kernel, max(cfg.n_terms))
    grid = noise_grid(cfg, pad)
    basis = nystrom_eig(cfg.kernel, grid.box, grid.shape)
    if basis.rank < 2 * max(cfg.n_terms):
        raise ValidationError(f"basis rank {basis.rank} is below twice the largest truncation level")
    return grid, basis


_KL_CACHE = {}


def _kl_basis(cfg):
    key = (cfg.kernel, cfg.domain, cfg.h_noise, cfg.kl_padding, tuple(cfg.n_terms))
    if key not in _KL_CACHE:
        _KL_CACHE.clear()
        _KL_CACHE[key] = kl_setup(cfg)
    return _KL_CACHE[key]


def _kl_sample(cfg, i):
    try:
        grid, basis = _kl_basis(cfg)
        mesh = build_mesh(cfg)
        z = sample_noise(cfg.triplet, grid, (cfg.seed, i), drift_tolerance=cfg.drift_tolerance)
        levels = list(cfg.n_terms) + [basis.rank]
        fields = fields_for_levels(basis, z, mesh.vertices, levels)
        ref = fields[basis.rank]
        u_ref = solve_field(cfg, mesh, ref)
        direct = smooth_realization(z, cfg.kernel, mesh.vertices, min_padding=0.0,
                                    domain=cfg.domain)
        f_err, u_err, lip = [], [], []
        for n in cfg.n_terms:
            fr = fields[n]
            sol = solve_field(cfg, mesh, fr)
            f_err.append(float(np.max(np.abs(fr.values - ref.values))))
            u_err.append(h1_norm(difference(sol, u_ref)))
            slope = float(np.max(cfg.transform.derivative_bound(fr.values, ref.values)))
            lip.append(coefficient_sensitivity(mesh, u_ref, slope, float(sol.coefficient.min())))
        return {"index": i, "field": f_err, "solution": u_err, "lipschitz": lip,
                "floor": float(np.max(np.abs(direct.values - ref.values)))}
    except (LevyFieldError, np.linalg.LinAlgError) as exc:
        return {"index": i, "error": f"{type(exc).__name__}: {exc}"}


@dataclass(frozen=True)
class KLResult:
    n_terms: tuple
    field_errors: np.ndarray
    solution_errors: np.ndarray
    field_fit: RateFit
    solution_fit: RateFit
    kappa: tuple
    support_volume: float
    floor: float
    lipschitz: np.ndarray
    sensitivity_ratio: float
    correlation: float
    raw_correlation: float
    failures: int


def kl_rate_study(cfg):
    """Error of truncating the Mercer expansion to ``N'`` terms.

    The reference is the full-rank expansion on the same cut-off box, so
    the errors isolate the truncation. ``floor`` reports the mean sup gap
    between the full-rank field and direct smoothing (quadrature and
    interpolation of the atoms).

    Each seed also gets a pipeline Lipschitz factor ``L`` with
    ``||u - u_N'||_{H^1} <= L sup|Z - Z_N'|`` (coefficient sensitivity times
    the transform slope between the two fields). ``sensitivity_ratio`` is
    the largest observed ``error / (L field_error)`` (at most 1 when the bound
    holds), ``correlation`` the smallest per-level Pearson correlation across
    seeds between the solution error and ``L field_error``, and
    ``raw_correlation`` the same against the bare field error.
    """
    grid, basis = _kl_basis(cfg)
    results, fails = _collect(_run(_kl_sample, cfg, cfg.samples), "truncation")
    fe = np.array([r["field"] for r in results])
    ue = np.array([r["solution"] for r in results])
    lip = np.array([r["lipschitz"] for r in results])
    floor = float(np.mean([r["floor"] for r in results]))
    nodes = build_mesh(cfg).vertices
    kappa = tuple(truncation_remainder(basis, n, nodes) for n in cfg.n_terms)
    predicted = lip * fe
    ratio = float(np.max(ue / predicted))
    levels = range(fe.shape[1])
    corr = min(float(np.corrcoef(predicted[:, i], ue[:, i])[0, 1]) for i in levels)
    raw = min(float(np.corrcoef(fe[:, i], ue[:, i])[0, 1]) for i in levels)
    return KLResult(tuple(cfg.n_terms), fe, ue, fit_rate(cfg.n_terms, fe.mean(axis=0)),
                    fit_rate(cfg.n_terms, ue.mean(axis=0)), kappa, grid.box.volume,
                    floor, lip, ratio, corr, raw, fails)


def _field_sample(cfg, i):
    z = sample_noise(cfg.triplet, noise_grid(cfg), (cfg.seed, i), drift_tolerance=cfg.drift_tolerance)
    return smooth_realization(z, cfg.kernel, _domain_nodes(cfg), domain=cfg.domain)


def sample_fields(cfg, count=None):
    """Field realizations at the mesh vertices for ``count`` seeds."""
    return _run(_field_sample, cfg, cfg.samples if count is None else count)


def lag_covariance(values, lags_index):
    """Empirical ``Cov(Z(x_0), Z(x_l))`` with standard errors.

    ``values`` has shape (samples, nodes); covariances are taken between
    node 0 and each node in ``lags_index``.
    """
    v = np.asarray(values, dtype=float)
    c = v - v.mean(axis=0)
    out, err = [], []
    for j in lags_index:
        prod = c[:, 0] * c[:, j]
        out.append(float(prod.mean() * len(prod) / (len(prod) - 1)))
        err.append(float(prod.std(ddof=1) / math.sqrt(len(prod))))
    return np.array(out), np.array(err)


def with_overrides(cfg, **kwargs):
    return replace(cfg, **{k: v for k, v in kwargs.items() if v is not None})
