"""Smoothed noise fields ``Z_k(x) = Z(k(x - .))`` and coefficient transforms."""

from collections import OrderedDict
from dataclasses import dataclass, field
import math

import numpy as np
from scipy.signal import fftconvolve

from .errors import GridMismatchError, PaddingError, ValidationError
from .matern import decay_radius
from .measure import quad
from .noise import Box, multilinear

DENSE_LIMIT = 2 * 10 ** 7


@dataclass(frozen=True, eq=False)
class FieldRealization:
    """Field values at ``nodes`` split into drift, Gaussian and jump parts.

    ``values`` is always ``drift_part + gaussian_part + jump_part``.
    """

    nodes: np.ndarray
    drift_part: np.ndarray
    gaussian_part: np.ndarray
    jump_part: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        parts = [np.array(p, dtype=float) for p in (self.drift_part, self.gaussian_part, self.jump_part)]
        nodes = np.atleast_2d(np.array(self.nodes, dtype=float))
        if any(p.shape != (len(nodes),) for p in parts):
            raise GridMismatchError("field parts must have one value per node")
        for name, arr in zip(("drift_part", "gaussian_part", "jump_part"), parts):
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        nodes.flags.writeable = False
        object.__setattr__(self, "nodes", nodes)
        values = parts[0] + parts[1] + parts[2]
        values.flags.writeable = False
        object.__setattr__(self, "values", values)

    def __add__(self, other):
        if not np.array_equal(self.nodes, other.nodes):
            raise GridMismatchError("fields live on different nodes")
        return FieldRealization(self.nodes, self.drift_part + other.drift_part,
                                self.gaussian_part + other.gaussian_part,
                                self.jump_part + other.jump_part)


class _Smoother:
    """Cached linear map from Gaussian cells (and the support mask) to node values."""

    def __init__(self, kernel, grid, nodes):
        self.kernel, self.grid, self.nodes = kernel, grid, nodes
        self.dense = len(nodes) * grid.size <= DENSE_LIMIT
        if self.dense:
            centers = grid.centers()
            dist = np.sqrt(((nodes[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2))
            self.matrix = kernel.evaluate(dist)
        else:
            h = grid.spacing
            reach_r = decay_radius(kernel, 1e-16 * kernel.at_zero())
            reach = [min(n - 1, int(math.ceil(reach_r / hi))) for n, hi in zip(grid.shape, h)]
            offsets = np.meshgrid(*[hi * np.arange(-r, r + 1) for r, hi in zip(reach, h)],
                                  indexing="ij")
            self.stencil = kernel.evaluate(np.sqrt(sum(o ** 2 for o in offsets)))

    def apply(self, cells):
        if self.dense:
            return self.matrix @ cells.ravel()
        conv = fftconvolve(cells, self.stencil, mode="same")
        return multilinear(conv, self.grid, self.nodes)


_SMOOTHERS = OrderedDict()


def _smoother(kernel, grid, nodes):
    key = (kernel, grid, nodes.shape, nodes.tobytes())
    op = _SMOOTHERS.get(key)
    if op is None:
        op = _Smoother(kernel, grid, nodes)
        _SMOOTHERS[key] = op
        while len(_SMOOTHERS) > 6:
            _SMOOTHERS.popitem(last=False)
    else:
        _SMOOTHERS.move_to_end(key)
    return op


_DRIFT_CACHE = OrderedDict()


def kernel_box_integral(kernel, box, nodes, grid=None):
    """``int_box k(x - y) dy`` at each node.

    Exact adaptive quadrature in 1D; in 2D a midpoint sum over the cells of
    ``grid`` whose centers lie in ``box``.
    """
    nodes = np.atleast_2d(nodes)
    key = (kernel, box, grid, nodes.tobytes())
    hit = _DRIFT_CACHE.get(key)
    if hit is not None:
        return hit
    if kernel.d == 1:
        lo, hi = box.lower[0], box.upper[0]
        prim = {}

        def half(t):
            if t not in prim:
                prim[t] = math.copysign(quad(lambda r: float(kernel.evaluate(r)), 0.0, abs(t)), t)
            return prim[t]

        out = np.array([half(float(x - lo)) + half(float(hi - x)) for x in nodes[:, 0]])
    else:
        if grid is None:
            raise ValidationError("a cell grid is needed for the 2D box integral")
        mask = grid.cell_mask(box).astype(float)
        out = _smoother(kernel, grid, nodes).apply(mask) * grid.cell_volume
    out.flags.writeable = False
    _DRIFT_CACHE[key] = out
    while len(_DRIFT_CACHE) > 32:
        _DRIFT_CACHE.popitem(last=False)
    return out


def jump_sum(kernel, nodes, locations, sizes):
    """``sum_k S_k k(|x - X_k|)`` at each node, skipping negligible atoms."""
    out = np.zeros(len(nodes))
    if len(sizes) == 0:
        return out
    reach = decay_radius(kernel, 1e-16 * kernel.at_zero())
    lo = nodes.min(axis=0) - reach
    hi = nodes.max(axis=0) + reach
    near = np.all((locations >= lo) & (locations <= hi), axis=1)
    locs, s = locations[near], sizes[near]
    chunk = max(1, 4_000_000 // max(1, len(nodes)))
    for start in range(0, len(s), chunk):
        diff = nodes[:, None, :] - locs[None, start:start + chunk, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        out += kernel.evaluate(dist) @ s[start:start + chunk]
    return out


def smooth_realization(z, kernel, nodes, *, min_padding=None, domain=None):
    """Evaluate ``Z_k(x)`` at ``nodes`` for a noise realization ``z``.

    Parameters
    ----------
    z : NoiseRealization
    kernel : MaternKernel
    nodes : array_like, shape (n, d)
    min_padding : float, optional
        Required distance between ``domain`` and the complement of the noise
        support. Defaults to the kernel decay radius at 1e-8; pass 0 to
        evaluate deliberately truncated noise.
    domain : Box, optional
        Defaults to the bounding box of ``nodes``.
    """
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    if nodes.shape[1] != kernel.d or z.grid.d != kernel.d:
        raise GridMismatchError("kernel, grid and nodes must share the dimension")
    if not np.all(z.grid.box.contains(nodes)):
        raise GridMismatchError("evaluation nodes lie outside the noise grid")
    if domain is None:
        domain = Box(tuple(nodes.min(axis=0)), tuple(nodes.max(axis=0) + 1e-12))
    need = decay_radius(kernel, 1e-8) if min_padding is None else min_padding
    margin = domain.margin_inside(z.support)
    if margin < need - 1e-9:
        raise PaddingError(
            f"noise support leaves a margin of {margin:.4g} around the domain; "
            f"the kernel needs at least {need:.4g}")
    drift = np.zeros(len(nodes))
    if z.drift != 0.0:
        drift = z.drift * kernel_box_integral(kernel, z.support, nodes, z.grid)
    gauss = np.zeros(len(nodes))
    if np.any(z.gaussian):
        gauss = _smoother(kernel, z.grid, nodes).apply(z.gaussian)
    jumps = jump_sum(kernel, nodes, z.atom_locations, z.atom_sizes)
    return FieldRealization(nodes, drift, gauss, jumps, meta={"seed": z.seed})


def truncation_padding(kernel, n_terms, mass_factor=0.9):
    """Padding ``1/2 + (2 / m') (alpha/d - 1) log(n_terms)`` with ``m' = mass_factor * m``.

    Growing the cut-off box at this rate keeps the cut-off error in step
    with the truncation error of an ``n_terms`` expansion.
    """
    if not 0 < mass_factor < 1:
        raise ValidationError("mass_factor must lie in (0, 1)")
    m_eff = mass_factor * kernel.m
    return 0.5 + (2.0 / m_eff) * (kernel.alpha / kernel.d - 1.0) * math.log(max(n_terms, 1))


def cutoff_padding(kernel, n_terms=None, tol=1e-8, mass_factor=0.9):
    """Default cut-off padding: the decay radius at ``tol``, or the larger of
    that and :func:`truncation_padding` when ``n_terms`` is given."""
    base = decay_radius(kernel, tol)
    if n_terms is None:
        return base
    return max(base, truncation_padding(kernel, n_terms, mass_factor))


@dataclass(frozen=True)
class TransformSpec:
    """Coefficient map ``T`` with certified bounds.

    The bounds promise, for every real ``z``,

        B^-1 exp(-rho |z|^h) <= T(z) <= B exp(rho |z|^h),   |T'(z)| <= B exp(rho |z|^h).

    They are checked on a dense sample of ``[-50, 50]`` at construction.
    """

    kind: str
    params: tuple = ()
    bound: float = 1.0
    rho: float = 1.0
    h: float = 1.0

    EPS0 = 1e-3

    def __post_init__(self):
        if self.kind not in ("exp", "smoothed_step", "tempered_exp"):
            raise ValidationError(f"unknown transform {self.kind!r}")
        if not (self.bound >= 1 and self.rho >= 0 and 0 <= self.h <= 1):
            raise ValidationError("need B >= 1, rho >= 0 and 0 <= h <= 1")
        self.verify()

    @classmethod
    def exp(cls):
        return cls("exp", (), 1.0, 1.0, 1.0)

    @classmethod
    def smoothed_step(cls, low, high, width):
        """Logistic step from ``low`` to ``high`` over a length scale ``width``."""
        if not (0 < low < high and width > 0):
            raise ValidationError("need 0 < low < high and width > 0")
        bound = max(high, 1.0 / low, (high - low) / (4.0 * width), 1.0)
        return cls("smoothed_step", (float(low), float(high), float(width)), bound, 0.0, 0.0)

    @classmethod
    def tempered_exp(cls, h, rho):
        """``exp(rho sign(z) ((|z| + e0)^h - e0^h))`` with ``e0 = 1e-3``; C^1 at 0."""
        if not (0 < h <= 1 and rho > 0):
            raise ValidationError("need 0 < h <= 1 and rho > 0")
        bound = max(1.0, rho * h * cls.EPS0 ** (h - 1.0))
        return cls("tempered_exp", (float(h), float(rho)), bound, float(rho), float(h))

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "exp":
            return np.exp(z)
        if self.kind == "smoothed_step":
            low, high, width = self.params
            return low + (high - low) * 0.5 * (1.0 + np.tanh(0.5 * z / width))
        h, rho = self.params
        e0 = self.EPS0
        return np.exp(rho * np.sign(z) * ((np.abs(z) + e0) ** h - e0 ** h))

    def derivative(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "exp":
            return np.exp(z)
        if self.kind == "smoothed_step":
            low, high, width = self.params
            e = np.exp(-np.abs(z) / width)
            return (high - low) / width * e / (1.0 + e) ** 2
        h, rho = self.params
        e0 = self.EPS0
        return rho * h * (np.abs(z) + e0) ** (h - 1.0) * self(z)

    def derivative_bound(self, lo, hi):
        """Elementwise ``sup |T'|`` over ``[lo, hi]``."""
        lo, hi = np.minimum(lo, hi), np.maximum(lo, hi)
        if self.kind == "exp":
            return np.exp(hi)
        if self.kind == "smoothed_step":
            return self.derivative(np.clip(0.0, lo, hi))
        return self.bound * self.envelope(np.maximum(np.abs(lo), np.abs(hi)))

    def envelope(self, z):
        return np.exp(self.rho * np.abs(np.asarray(z, dtype=float)) ** self.h)

    def verify(self, half_range=50.0, n=20001):
        z = np.linspace(-half_range, half_range, n)
        with np.errstate(over="ignore"):
            env = self.envelope(z)
            t = self(z)
            dt = np.abs(self.derivative(z))
        slack = 1.0 + 1e-12
        ok = (np.all(t * slack >= env ** -1 / self.bound) and np.all(t <= self.bound * env * slack)
              and np.all(dt <= self.bound * env * slack))
        if not ok:
            raise ValidationError(f"declared bounds (B={self.bound}, rho={self.rho}, h={self.h}) "
                                  f"do not hold for the {self.kind} transform")

    def to_dict(self):
        return {"kind": self.kind, "params": list(self.params), "B": self.bound,
                "rho": self.rho, "h": self.h}


@dataclass(frozen=True, eq=False)
class Coefficient:
    """Diffusion coefficient ``a = T(Z_k)`` at the field nodes."""

    nodes: np.ndarray
    values: np.ndarray

    @property
    def min(self):
        return float(self.values.min())

    @property
    def max(self):
        return float(self.values.max())


def transform_field(fr, transform):
    """Apply a coefficient transform to a field realization."""
    with np.errstate(over="ignore"):
        values = transform(fr.values)
    if not np.all(np.isfinite(values)):
        raise ValidationError("transformed coefficient is not finite")
    return Coefficient(fr.nodes, values)


def sup_abs(fr, region=None):
    """``max |Z_k|`` over the nodes (optionally only those inside ``region``)."""
    vals = fr.values
    if region is not None:
        vals = vals[region.contains(fr.nodes)]
    return float(np.max(np.abs(vals))) if vals.size else 0.0


@dataclass(frozen=True)
class DominationResult:
    ok: bool
    worst_index: int
    excess: float


def domination_check(signed, absolute, rtol=1e-12):
    """Check ``|P_k| <= P_|k|,|nu|`` node by node for a paired jump field.

    ``signed`` is the jump part of a field and ``absolute`` the jump part of
    the same atoms with ``|S_k|`` smoothed by ``|k|``.
    """
    lhs = np.abs(signed.jump_part)
    rhs = absolute.jump_part
    excess = lhs - rhs * (1.0 + rtol) - 1e-300
    worst = int(np.argmax(excess))
    return DominationResult(bool(np.all(excess <= 0)), worst, float(excess[worst]))
