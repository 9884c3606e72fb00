"""Matern kernel ``k`` with Fourier symbol ``(|xi|^2 + m^2)^(-alpha)``.

In physical space

    k(r) = (r/m)^nu K_nu(r m) / (2^(alpha-1) Gamma(alpha) (2 pi)^(d/2)),
    nu = alpha - d/2,

with the limit ``Gamma(nu) 2^(nu-1) m^(-2 nu)`` in place of ``(r/m)^nu K_nu``
at ``r = 0``.
"""

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy import special
from scipy.optimize import brentq

from .errors import AliasingError, ValidationError
from .measure import quad

MAX_SCIPY_ORDER = 25.0


def _half_integer_kv_scaled(nu, z):
    """``z^nu K_nu(z)`` for half-integer ``nu`` via the terminating series."""
    n = int(round(nu - 0.5))
    # K_{n+1/2}(z) = sqrt(pi/(2z)) e^-z sum_k (n+k)! / (k! (n-k)! (2z)^k)
    acc = np.zeros_like(z)
    for k in range(n + 1):
        coef = math.factorial(n + k) / (math.factorial(k) * math.factorial(n - k) * 2.0 ** k)
        acc = acc + coef * z ** (n - k)
    return math.sqrt(0.5 * math.pi) * np.exp(-z) * acc


def _log_kv_quad(nu, z):
    """``log K_nu(z)`` from ``int_0^inf exp(-z cosh t) cosh(nu t) dt``."""
    t_star = math.asinh(nu / z)
    peak = -z * math.cosh(t_star) + nu * t_star

    def integrand(t):
        e = -z * math.cosh(t) + nu * t - peak
        return math.exp(e) * 0.5 * (1.0 + math.exp(-2.0 * nu * t))

    width = 50.0 / max(1.0, math.sqrt(z * math.cosh(t_star)))
    val = quad(integrand, 0.0, t_star + width, points=[t_star] if t_star > 0 else None)
    return peak + math.log(val)


@dataclass(frozen=True)
class MaternKernel:
    """Isotropic Matern kernel on ``R^d``.

    Parameters
    ----------
    alpha : float
        Exponent of the Fourier symbol; ``2 alpha > d`` is required.
    m : float
        Inverse correlation length.
    d : int
        Dimension, 1 or 2.
    """

    alpha: float
    m: float
    d: int = 1

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ValidationError("dimension d must be 1 or 2")
        if not (math.isfinite(self.alpha) and 2 * self.alpha > self.d):
            raise ValidationError(f"alpha={self.alpha} must satisfy 2*alpha > d={self.d}")
        if not (math.isfinite(self.m) and self.m > 0):
            raise ValidationError("mass m must be positive")

    @property
    def order(self):
        """Bessel order ``alpha - d/2``."""
        return self.alpha - 0.5 * self.d

    @property
    def normalization(self):
        return 2.0 ** (self.alpha - 1) * math.gamma(self.alpha) * (2 * math.pi) ** (0.5 * self.d)

    @property
    def integral(self):
        """``int k = m^(-2 alpha)``."""
        return self.m ** (-2.0 * self.alpha)

    def squared(self):
        """Kernel of ``k * k``, i.e. symbol ``(|xi|^2 + m^2)^(-2 alpha)``."""
        return MaternKernel(2.0 * self.alpha, self.m, self.d)

    def symbol(self, xi_norm):
        return (np.asarray(xi_norm, dtype=float) ** 2 + self.m ** 2) ** (-self.alpha)

    def __call__(self, r):
        return self.evaluate(r)

    def evaluate(self, r):
        """Kernel value at distance ``r`` (array-like, ``r >= 0``)."""
        r = np.abs(np.asarray(r, dtype=float))
        nu, m = self.order, self.m
        z = r * m
        out = np.empty_like(z)
        # z^nu K_nu(z) equals its value at 0 up to O(z^min(2nu, 2)); below this
        # cut-off the limit is exact in double precision and kv would overflow
        zero = z <= 1e-16 ** (1.0 / min(2.0 * nu, 2.0))
        out[zero] = math.gamma(nu) * 2.0 ** (nu - 1) * m ** (-2 * nu)
        pos = ~zero
        zp = z[pos]
        if zp.size:
            # (r/m)^nu K_nu(rm) = m^(-2nu) z^nu K_nu(z)
            if abs(nu - round(nu - 0.5) - 0.5) < 1e-12 and nu < 12:
                scaled = _half_integer_kv_scaled(nu, zp)
            elif nu <= MAX_SCIPY_ORDER:
                with np.errstate(over="ignore", invalid="ignore"):
                    scaled = zp ** nu * special.kv(nu, zp)
                bad = ~np.isfinite(scaled)
                if np.any(bad):
                    scaled[bad] = [math.exp(nu * math.log(x) + _log_kv_quad(nu, x))
                                   for x in zp[bad]]
            else:
                scaled = np.array([math.exp(nu * math.log(x) + _log_kv_quad(nu, x))
                                   for x in zp])
            out[pos] = m ** (-2 * nu) * scaled
        return out / self.normalization if out.ndim else float(out / self.normalization)

    def at_zero(self):
        return float(self.evaluate(0.0))


def covariance(kernel, sigma2, r):
    """Covariance ``sigma2 * (k * k)(r)`` of the Gaussian field smoothed by ``kernel``."""
    return sigma2 * kernel.squared().evaluate(r)


def holder_constant(kernel, eta):
    """Constant ``C`` with ``|k(x) - k(y)| <= C |x - y|^eta``.

    Computed as ``2^(1-eta) (2 pi)^(-d) int |xi|^eta (|xi|^2 + m^2)^(-alpha) d xi``
    by radial quadrature. Needs ``0 < eta < 2 alpha - d`` and ``eta <= 1``.
    """
    d, a, m = kernel.d, kernel.alpha, kernel.m
    if not (0 < eta <= 1 and eta < 2 * a - d):
        raise ValidationError(f"Holder exponent eta={eta} must lie in (0, min(1, 2*alpha-d))")
    sphere = 2.0 if d == 1 else 2.0 * math.pi
    power = eta + d - 1

    def integrand(r):
        return r ** power * (r * r + m * m) ** (-a)

    radial = quad(integrand, 0.0, m) + quad(integrand, m, math.inf)
    return 2.0 ** (1 - eta) * (2 * math.pi) ** (-d) * sphere * radial


def decay_radius(kernel, tol):
    """Smallest ``r`` with ``k(r') <= tol`` for every ``r' >= r``.

    The Matern profile is decreasing, so this is the root of ``k(r) = tol``.
    """
    if not tol > 0:
        raise ValidationError("tolerance must be positive")
    return _decay_radius(kernel, float(tol))


@lru_cache(maxsize=256)
def _decay_radius(kernel, tol):
    if kernel.at_zero() <= tol:
        return 0.0
    hi = 1.0 / kernel.m
    while kernel.evaluate(hi) > tol:
        hi *= 2.0
    return brentq(lambda r: kernel.evaluate(r) - tol, 0.0, hi, xtol=1e-13, rtol=1e-15)


def _folded_symbol(kernel, n, h, fold):
    """Periodized symbol ``sum_q khat(xi + q Omega)`` on the FFT frequency grid.

    Terms with ``|q|_inf <= fold`` are summed explicitly, the remainder is
    replaced by its integral approximation.
    """
    d, a, m = kernel.d, kernel.alpha, kernel.m
    omega = 2.0 * math.pi / h
    xi1 = 2.0 * math.pi * np.fft.fftfreq(n, d=h)
    grids = np.meshgrid(*([xi1] * d), indexing="ij")
    total = np.zeros([n] * d)
    shifts = range(-fold, fold + 1)
    if d == 1:
        for q in shifts:
            total += ((grids[0] + q * omega) ** 2 + m * m) ** (-a)
        big_r = fold + 0.5
        total += 2.0 * omega ** (-2 * a) * big_r ** (1 - 2 * a) / (2 * a - 1)
    else:
        for q1 in shifts:
            s1 = (grids[0] + q1 * omega) ** 2 + m * m
            for q2 in shifts:
                total += (s1 + (grids[1] + q2 * omega) ** 2) ** (-a)
        big_r = fold + 0.5
        angular = 8.0 * quad(lambda t: math.cos(t) ** (2 * a - 2), 0.0, 0.25 * math.pi)
        total += omega ** (-2 * a) * big_r ** (2 - 2 * a) * angular / (2 * a - 2)
    return total


def eval_grid_spectral(kernel, half_width, h, *, pad=None, tol=1e-6, fold=None):
    """Kernel on the symmetric lattice ``h Z^d`` within ``[-half_width, half_width]^d``.

    The values come from an inverse FFT of the aliased (periodized) Fourier
    symbol on a periodic box enlarged by ``pad`` (default: the decay radius at
    1e-8 plus one correlation length), and are checked against
    :meth:`MaternKernel.evaluate`.

    Returns
    -------
    coords : ndarray, shape (n,)
        Lattice coordinates along one axis (the grid is their tensor product).
    values : ndarray, shape (n,) * d
        Exactly symmetric under ``x -> -x``.
    """
    if not (h > 0 and half_width >= 0):
        raise ValidationError("need h > 0 and half_width >= 0")
    if pad is None:
        pad = decay_radius(kernel, 1e-8) + 1.0 / kernel.m
    if fold is None:
        fold = 256 if kernel.d == 1 else 16
    if kernel.d == 2 and kernel.alpha <= 1:
        raise ValidationError("spectral evaluation in 2D needs alpha > 1")
    n_half = int(math.floor(half_width / h + 1e-9))
    n = 2 * int(math.ceil((n_half * h + pad) / h))
    sym = _folded_symbol(kernel, n, h, fold)
    periodic = np.real(np.fft.ifftn(sym)) / h ** kernel.d
    idx = np.arange(-n_half, n_half + 1) % n
    values = periodic[np.ix_(*([idx] * kernel.d))]
    values = 0.5 * (values + values[(slice(None, None, -1),) * kernel.d])
    coords = h * np.arange(-n_half, n_half + 1)
    mesh = np.meshgrid(*([coords] * kernel.d), indexing="ij")
    radius = np.sqrt(sum(c ** 2 for c in mesh))
    exact = kernel.evaluate(radius)
    mismatch = float(np.max(np.abs(values - exact) / exact))
    if mismatch > tol:
        raise AliasingError(
            f"spectral kernel differs from the closed form by {mismatch:.3g} (relative); "
            "increase the padding or the fold count")
    return coords, values
