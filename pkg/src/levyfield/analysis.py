"""Moments, covariances and tail/moment bounds for smoothed Levy fields."""

from dataclasses import dataclass
import logging
import math

import numpy as np
from scipy import special

from .errors import DivergenceError, NonSummableError, ValidationError
from .matern import holder_constant
from .measure import exp_integral, jump_moment, quad

log = logging.getLogger(__name__)

MAX_PARTITION_ORDER = 8


def enumerate_partitions(n):
    """All set partitions of ``{0, ..., n-1}`` as tuples of blocks.

    Generated from restricted growth strings, so the count is the Bell
    number ``B_n``.
    """
    if not (1 <= n <= MAX_PARTITION_ORDER):
        raise ValidationError(f"partition order must lie in [1, {MAX_PARTITION_ORDER}]")
    out = []
    labels = [0] * n

    def rec(i, top):
        if i == n:
            blocks = [[] for _ in range(top + 1)]
            for idx, lab in enumerate(labels):
                blocks[lab].append(idx)
            out.append(tuple(tuple(b) for b in blocks))
            return
        for lab in range(top + 2):
            labels[i] = lab
            rec(i + 1, max(top, lab))

    labels[0] = 0
    rec(1, 0)
    return out


def cumulants(triplet, max_order):
    """``(c_1, ..., c_max_order)`` of the noise.

    ``c_1 = b + b_1``, ``c_2 = sigma2 + b_2`` and ``c_n = b_n`` for ``n >= 3``.
    """
    out = []
    for n in range(1, max_order + 1):
        bn = jump_moment(triplet.nu, n)
        if n == 1:
            out.append(triplet.b + bn)
        elif n == 2:
            out.append(triplet.sigma2 + bn)
        else:
            out.append(bn)
    return tuple(out)


def mixed_moment(triplet, functions, cell_volume):
    """``E[Z(f_1) ... Z(f_n)]`` for test functions sampled on a common grid.

    Sum over set partitions ``I`` of ``prod_{B in I} c_|B| int prod_{i in B} f_i``
    with the integrals as cell sums.
    """
    fs = [np.asarray(f, dtype=float).ravel() for f in functions]
    n = len(fs)
    if n == 0:
        return 1.0
    if len({f.shape for f in fs}) != 1:
        raise ValidationError("test functions must share one grid")
    c = cumulants(triplet, n)
    total = 0.0
    for part in enumerate_partitions(n):
        term = 1.0
        for block in part:
            prod = np.ones_like(fs[0])
            for i in block:
                prod = prod * fs[i]
            term *= c[len(block) - 1] * prod.sum() * cell_volume
        total += term
    return total


def smoothed_covariance(triplet, kernel, r):
    """``Cov(Z_k(x), Z_k(y)) = (sigma2 + b_2) (k * k)(|x - y|)``."""
    return (triplet.sigma2 + jump_moment(triplet.nu, 2)) * kernel.squared().evaluate(r)


def talagrand_bound(sigma_bar, A, v, K, g):
    """Gaussian sup-tail bound ``(K A g / (sqrt(v) sigma_bar^2))^v exp(-g^2 / (2 sigma_bar^2))``.

    Valid for ``g >= sigma_bar (1 + sqrt(v))``; ``A >= sigma_bar`` and ``K, v > 0``.
    """
    if not (sigma_bar > 0 and v > 0 and K > 0):
        raise ValidationError("need sigma_bar, v, K > 0")
    if A < sigma_bar:
        raise ValidationError("covering constant A must be at least sigma_bar")
    if g < sigma_bar * (1.0 + math.sqrt(v)) * (1 - 1e-12):
        raise ValidationError(
            f"threshold g={g} lies below the validity limit sigma_bar(1+sqrt(v))="
            f"{sigma_bar * (1 + math.sqrt(v)):.6g}")
    log_val = v * math.log(K * A * g / (math.sqrt(v) * sigma_bar ** 2)) - g * g / (2 * sigma_bar ** 2)
    return math.exp(log_val)


@dataclass(frozen=True)
class GaussianTailParams:
    sigma_bar: float
    A: float
    v: float
    holder: float

    @property
    def threshold(self):
        """Smallest ``g`` where the Gaussian tail bound applies."""
        return self.sigma_bar * (1.0 + math.sqrt(self.v))


def gaussian_tail_params(sigma2, kernel, domain_diameter, eta=0.5):
    """Constants of the Gaussian sup-tail bound for ``sigma2``-white noise smoothed by ``kernel``.

    ``sigma_bar^2 = sigma2 (k*k)(0)``, ``v = 2 d / eta`` and
    ``A = max(C' a^(eta/2), sigma_bar + 1)`` with ``C'^2 = 2 sigma2 C_1`` where
    ``C_1`` is the Holder constant of ``k*k`` and ``a`` slightly exceeds the
    domain diameter.
    """
    if not sigma2 > 0:
        raise ValidationError("Gaussian variance must be positive")
    cov = kernel.squared()
    sigma_bar = math.sqrt(sigma2 * cov.at_zero())
    c1 = holder_constant(cov, eta)
    c_prime = math.sqrt(2.0 * sigma2 * c1)
    a = domain_diameter * (1.0 + 1e-9) + 1e-12
    A = max(c_prime * a ** (0.5 * eta), sigma_bar + 1.0)
    return GaussianTailParams(sigma_bar, A, 2.0 * kernel.d / eta, c1)


def chernov_bound(nu, beta, kappa1, kappa_inf, tau, p):
    """Chernov-type bound on ``P(sup |P_k| >= p)`` for the jump part.

    ``exp((beta kappa1 / kappa_inf) (e^beta int_{0<s<=1} s nu_+(ds)
    + (1/(beta e (1-tau))) int_{s>1} e^(beta s) nu_+(ds))) exp(-(beta/kappa_inf) tau p)``
    """
    if not (beta > 0 and kappa1 > 0 and kappa_inf > 0 and 0 < tau < 1):
        raise ValidationError("need beta, kappa1, kappa_inf > 0 and 0 < tau < 1")
    if beta >= nu.exp_beta_limit:
        raise DivergenceError(
            f"beta={beta} reaches the exponential moment limit {nu.exp_beta_limit} of the jump measure")
    plus = nu.abs_image()
    small = plus.integrate(lambda s: s, 0.0, 1.0)
    if plus.kind == "gamma":
        # int_1^inf e^(beta s) v e^(-w s) / s ds = v E1(w - beta)
        large = plus.intensity * float(special.exp1(plus.decay - beta))
    else:
        large = plus.integrate(lambda s: math.exp(beta * s), 1.0)
    log_val = ((beta * kappa1 / kappa_inf)
               * (math.exp(beta) * small + large / (beta * math.e * (1.0 - tau)))
               - beta / kappa_inf * tau * p)
    return math.exp(min(log_val, 700.0))


def legendre_jump_bound(nu, kernel_profile, cell_volume, p, beta_max=None):
    """Sharper jump-part tail bound ``exp(-sup_t (t p - f(t)))``.

    ``f(t) = sum_y |cell| int (exp(t s kt(y)) - 1) nu_+(ds)`` where
    ``kernel_profile`` holds ``kt(y) = sup_x |k(x - y)|`` on a cell grid.
    """
    from scipy.optimize import minimize_scalar

    prof = np.asarray(kernel_profile, dtype=float).ravel()
    prof = prof[prof > 0]
    top = float(prof.max())
    limit = nu.exp_beta_limit if beta_max is None else beta_max
    t_max = (limit / top) * (1 - 1e-9) if math.isfinite(limit) else 50.0 / top

    def f(t):
        return cell_volume * sum(exp_integral(nu, t * kv) for kv in prof)

    res = minimize_scalar(lambda t: -(t * p - f(t)), bounds=(0.0, t_max), method="bounded",
                          options={"xatol": 1e-10 * t_max})
    return float(min(1.0, math.exp(res.fun)))


def kernel_sup_constants(kernel, domain):
    """``(kappa_inf, kappa_1)`` for a box domain.

    ``kappa_inf = k(0)`` and ``kappa_1 = int sup_{x in D} k(x - y) dy
    = int k(dist(y, D)) dy``, evaluated with the Steiner formula of the box.
    """
    k0 = kernel.at_zero()
    lengths = domain.lengths
    radial = quad(lambda r: float(kernel.evaluate(r)), 0.0, math.inf)
    if kernel.d == 1:
        k1 = lengths[0] * k0 + 2.0 * radial
    else:
        a, b = lengths
        k1 = a * b * k0 + 2.0 * (a + b) * radial + kernel.integral
    return k0, float(k1)


@dataclass(frozen=True)
class SeriesCertificate:
    """Value of the moment series bound with its convergence record."""

    value: float
    terms: int
    prefactor: float
    series: float


def moment_series_certificate(transform, n, tail_prob, data_norm, apriori_constant=1.0, *,
                              beta=None, kappa=None, rate_fraction=1.0, rel_tol=1e-12,
                              max_terms=200000):
    """Bound on ``E ||u||_{H^1}^n`` from sup-tail probabilities of the field.

    ``C^n 2^(n-1) (B^n + B^(2n)) sum_j exp(2 n rho (j+1)^h) min(1, P(sup >= j))``
    with ``C = apriori_constant * data_norm`` and ``(B, rho, h)`` from the
    transform. The series stops once a term is below ``rel_tol`` times the
    running sum and the terms have decreased five times in a row.

    For ``h = 1``, pass ``beta`` and ``kappa`` (jump-tail rate and kernel sup)
    to reject orders with ``n >= beta / (2 kappa rho)`` up front. A tail bound
    that only decays like ``exp(-rate_fraction beta j / kappa)`` (Chernov
    split ``tau`` and the share of the threshold given to the jumps) can only
    certify ``n < rate_fraction beta / (2 kappa rho)``; such orders are
    rejected with their own message.
    """
    if int(n) != n or n < 1:
        raise ValidationError("moment order must be a positive integer")
    B, rho, h = transform.bound, transform.rho, transform.h
    if h > 1:
        raise NonSummableError("exponent growth h > 1 is not summable")
    if h == 1 and rho > 0 and beta is not None and kappa is not None:
        limit = beta / (2.0 * kappa * rho)
        if n >= limit:
            raise NonSummableError(
                f"moment series diverges: linear exponent growth needs n < beta/(2 kappa rho) = {limit:.6g}, "
                f"got n = {n}")
        if n >= rate_fraction * limit:
            raise NonSummableError(
                f"order n = {n} satisfies n < beta/(2 kappa rho) = {limit:.6g}, but the tail bound "
                f"decays at {rate_fraction:.3g} of that rate and only certifies n < "
                f"{rate_fraction * limit:.6g}; raise tau towards 1")
    prefactor = (apriori_constant * data_norm) ** n * 2.0 ** (n - 1) * (B ** n + B ** (2 * n))
    total = 0.0
    decreasing = 0
    prev = math.inf
    for j in range(max_terms):
        p = min(1.0, float(tail_prob(j)))
        if p <= 0.0:
            term = 0.0
        else:
            log_term = 2.0 * n * rho * (j + 1) ** h + math.log(p)
            if log_term > 700.0:
                raise NonSummableError(f"moment series overflows at term {j}")
            term = math.exp(log_term)
        total += term
        decreasing = decreasing + 1 if term <= prev else 0
        prev = term
        if decreasing >= 5 and term < rel_tol * total:
            log.debug("moment series converged after %d terms: sum=%g", j + 1, total)
            return SeriesCertificate(prefactor * total, j + 1, prefactor, total)
    raise NonSummableError(f"moment series did not converge within {max_terms} terms")


def moment_series_bound(transform, n, tail_prob, data_norm, apriori_constant=1.0, **kwargs):
    """Value of :func:`moment_series_certificate`."""
    return moment_series_certificate(transform, n, tail_prob, data_norm,
                                     apriori_constant, **kwargs).value


def combined_tail(j, *, offset=0.0, gaussian=None, jumps=None, split=0.5):
    """Union bound for ``P(sup |drift + G + P| >= j)``.

    ``gaussian(g)`` and ``jumps(p)`` are tail bounds for the two parts (either
    may be None), ``offset`` bounds the deterministic part and ``split`` is
    the share of the threshold given to the Gaussian part.
    """
    rest = j - abs(offset)
    if rest <= 0:
        return 1.0
    if gaussian is None and jumps is None:
        return 0.0
    if gaussian is None:
        return min(1.0, jumps(rest))
    if jumps is None:
        return min(1.0, gaussian(rest))
    return min(1.0, gaussian(split * rest) + jumps((1.0 - split) * rest))


def gaussian_tail_function(params, K):
    """``g -> talagrand_bound(...)`` extended by 1 below its validity threshold."""
    def tail(g):
        if g < params.threshold:
            return 1.0
        return talagrand_bound(params.sigma_bar, params.A, params.v, K, g)
    return tail


def poincare_apriori_constant(length):
    """Constant ``C`` with ``||u||_{H^1} <= C ||f||_{L^2} / min a`` on ``(0, L)``
    with zero Dirichlet data at both ends: ``(L/pi) sqrt(1 + (L/pi)^2)``."""
    x = length / math.pi
    return x * math.sqrt(1.0 + x * x)
