"""Levy measures, Levy triplets and the jump-size shell decomposition.

A jump measure ``nu`` is one of

* ``null``: no jumps,
* ``discrete``: finitely many atoms ``sum_k c_k delta_{s_k}`` with ``s_k != 0``,
* ``gamma``: ``v exp(-w s) / s`` on ``s > 0``,
* ``bigamma``: ``v exp(-w |s|) / |s|`` on ``s != 0``.

The characteristic exponent of a triplet ``(b, sigma2, nu)`` is

    psi(t) = i b t - sigma2 t^2 / 2
             + int (exp(i t s) - 1 - i t s 1{|s| <= 1}) nu(ds).
"""

from dataclasses import dataclass, field
from functools import cached_property, lru_cache
import math
import warnings

import numpy as np
from scipy import integrate, special
from scipy.interpolate import PchipInterpolator

from .errors import DivergenceError, QuadratureError, ShellError, ValidationError

KINDS = ("null", "discrete", "gamma", "bigamma")

QUAD_EPSABS = 1e-10
QUAD_EPSREL = 1e-8


def quad(fn, a, b, *, points=None, limit=200):
    """Adaptive Gauss-Kronrod quadrature of a scalar function on ``[a, b]``.

    An infinite upper limit is mapped to a finite one with ``s = a + tan(u)``.
    Raises :class:`QuadratureError` when QUADPACK reports a failure and the
    error estimate exceeds the requested tolerance.
    """
    if b == a:
        return 0.0
    if math.isinf(b):
        def mapped(u):
            c = math.cos(u)
            if c <= 0.0:
                return 0.0
            val = fn(a + math.tan(u)) / (c * c)
            return val if math.isfinite(val) else 0.0

        lo, hi, fn_used, pts = 0.0, 0.5 * math.pi, mapped, None
        if points is not None:
            pts = [math.atan(p - a) for p in points if p > a]
    else:
        lo, hi, fn_used, pts = a, b, fn, points
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        res = integrate.quad(fn_used, lo, hi, epsabs=QUAD_EPSABS,
                             epsrel=QUAD_EPSREL, limit=limit, points=pts,
                             full_output=1)
    value, abserr = res[0], res[1]
    if not math.isfinite(value):
        raise DivergenceError(f"integral on [{a}, {b}] is not finite")
    if len(res) > 3 and abserr > 100 * max(QUAD_EPSABS, QUAD_EPSREL * abs(value)):
        raise QuadratureError(
            f"quadrature on [{a}, {b}] did not converge (error estimate {abserr:.3g})",
            residual=abserr)
    return value


@dataclass(frozen=True)
class JumpMeasure:
    """A Levy jump measure of one of the supported kinds.

    Use the constructors :meth:`null`, :meth:`discrete`, :meth:`gamma` and
    :meth:`bigamma` rather than the raw fields.
    """

    kind: str
    locations: tuple = ()
    masses: tuple = ()
    intensity: float = 0.0
    decay: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(f"unknown jump measure kind {self.kind!r}")
        if self.kind == "discrete":
            if len(self.locations) == 0 or len(self.locations) != len(self.masses):
                raise ValidationError("discrete measure needs matching, non-empty locations and masses")
            for s, c in zip(self.locations, self.masses):
                if not (math.isfinite(s) and s != 0.0):
                    raise ValidationError(f"atom location {s} must be finite and non-zero")
                if not (math.isfinite(c) and c > 0.0):
                    raise ValidationError(f"atom mass {c} must be finite and positive")
        if self.kind in ("gamma", "bigamma"):
            if not (self.intensity > 0 and math.isfinite(self.intensity)):
                raise ValidationError("gamma intensity v must be positive")
            if not (self.decay > 0 and math.isfinite(self.decay)):
                raise ValidationError("gamma decay w must be positive")

    @classmethod
    def null(cls):
        return cls("null")

    @classmethod
    def discrete(cls, locations, masses):
        locs = tuple(float(s) for s in np.atleast_1d(locations))
        ms = tuple(float(c) for c in np.atleast_1d(masses))
        return cls("discrete", locations=locs, masses=ms)

    @classmethod
    def dirac(cls, location, mass=1.0):
        return cls.discrete([location], [mass])

    @classmethod
    def gamma(cls, intensity, decay):
        return cls("gamma", intensity=float(intensity), decay=float(decay))

    @classmethod
    def bigamma(cls, intensity, decay):
        return cls("bigamma", intensity=float(intensity), decay=float(decay))

    @property
    def is_null(self):
        return self.kind == "null"

    @property
    def is_finite(self):
        """True when the total mass is finite (compound Poisson)."""
        return self.kind in ("null", "discrete")

    @property
    def exp_beta_limit(self):
        """Supremum of ``beta`` with ``int_{s>1} exp(beta |s|) nu(ds) < inf``."""
        return self.decay if self.kind in ("gamma", "bigamma") else math.inf

    def density(self, s):
        """Density with respect to Lebesgue measure (continuous kinds only)."""
        s = np.asarray(s, dtype=float)
        v, w = self.intensity, self.decay
        if self.kind == "gamma":
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(s > 0, v * np.exp(-w * s) / s, 0.0)
        if self.kind == "bigamma":
            a = np.abs(s)
            with np.errstate(divide="ignore", invalid="ignore"):
                return np.where(a > 0, v * np.exp(-w * a) / a, 0.0)
        raise ValidationError(f"{self.kind} measure has no density")

    def tail_mass(self, eps):
        """``nu({|s| > eps})`` for ``eps >= 0`` (infinite at 0 for gamma kinds)."""
        eps = float(eps)
        if math.isinf(eps):
            return 0.0
        if self.kind == "null":
            return 0.0
        if self.kind == "discrete":
            return float(sum(c for s, c in zip(self.locations, self.masses) if abs(s) > eps))
        if eps <= 0:
            return math.inf
        one = self.intensity * float(special.exp1(self.decay * eps))
        return one if self.kind == "gamma" else 2.0 * one

    def band_mass(self, lo, hi):
        """``nu({lo < |s| <= hi})``."""
        if self.kind == "discrete":
            return float(sum(c for s, c in zip(self.locations, self.masses) if lo < abs(s) <= hi))
        return self.tail_mass(lo) - self.tail_mass(hi)

    def integrate(self, g, lo=0.0, hi=math.inf):
        """``int_{lo < |s| <= hi} g(s) nu(ds)`` for a scalar function ``g``.

        Exact for atoms, adaptive quadrature for the gamma kinds.
        """
        if hi <= lo or self.kind == "null":
            return 0.0
        if self.kind == "discrete":
            return float(sum(g(s) * c for s, c in zip(self.locations, self.masses)
                             if lo < abs(s) <= hi))
        v, w = self.intensity, self.decay
        if self.kind == "gamma":
            def integrand(s):
                return g(s) * v * math.exp(-w * s) / s
        else:
            def integrand(s):
                return (g(s) + g(-s)) * v * math.exp(-w * s) / s
        return quad(integrand, lo, hi)

    def abs_image(self):
        """Image of the measure under ``s -> |s|``."""
        if self.kind == "discrete":
            merged = {}
            for s, c in zip(self.locations, self.masses):
                merged[abs(s)] = merged.get(abs(s), 0.0) + c
            keys = sorted(merged)
            return JumpMeasure.discrete(keys, [merged[k] for k in keys])
        if self.kind == "bigamma":
            return JumpMeasure.gamma(2.0 * self.intensity, self.decay)
        return self

    def to_dict(self):
        if self.kind == "discrete":
            return {"kind": "discrete", "locations": list(self.locations),
                    "masses": list(self.masses)}
        if self.kind in ("gamma", "bigamma"):
            return {"kind": self.kind, "intensity": self.intensity, "decay": self.decay}
        return {"kind": "null"}


@dataclass(frozen=True)
class LevyTriplet:
    """Levy triplet ``(b, sigma2, nu)`` with the truncation function ``1{|s| <= 1}``."""

    b: float
    sigma2: float
    nu: JumpMeasure = field(default_factory=JumpMeasure.null)

    def __post_init__(self):
        if not math.isfinite(self.b):
            raise ValidationError("drift b must be finite")
        if not (math.isfinite(self.sigma2) and self.sigma2 >= 0):
            raise ValidationError("Gaussian variance sigma2 must be non-negative")

    @classmethod
    def from_jumps(cls, nu, sigma2=0.0, drift=0.0):
        """Triplet whose small jumps are not compensated.

        ``b`` is set to ``drift + int_{|s| <= 1} s nu(ds)``, so the sampled
        noise is ``drift`` times Lebesgue measure plus Gaussian white noise
        plus the plain sum of all jumps.
        """
        tmp = cls(0.0, float(sigma2), nu)
        return cls(float(drift) + tmp.compensator, float(sigma2), nu)

    @cached_property
    def compensator(self):
        """``int_{0 < |s| <= 1} s nu(ds)``."""
        return self.nu.integrate(lambda s: s, 0.0, 1.0)

    @property
    def effective_drift(self):
        """Drift of the Lebesgue part once all jumps are summed without compensation."""
        return self.b - self.compensator

    def characteristic(self, t):
        return levy_characteristic(self, t)

    def to_dict(self):
        return {"b": self.b, "sigma2": self.sigma2, "nu": self.nu.to_dict()}


def _psi_jump_scalar(nu, t):
    if t == 0.0 or nu.is_null:
        return 0j
    if nu.kind == "discrete":
        acc = 0j
        for s, c in zip(nu.locations, nu.masses):
            comp = 1j * t * s if abs(s) <= 1.0 else 0.0
            acc += c * (np.exp(1j * t * s) - 1.0 - comp)
        return complex(acc)

    def re(s):
        return -2.0 * math.sin(0.5 * t * s) ** 2

    real = nu.integrate(re, 0.0, 1.0) + nu.integrate(re, 1.0)
    if nu.kind == "bigamma":
        return complex(real, 0.0)
    imag = (nu.integrate(lambda s: math.sin(t * s) - t * s, 0.0, 1.0)
            + nu.integrate(lambda s: math.sin(t * s), 1.0))
    return complex(real, imag)


def levy_characteristic(triplet, t):
    """Characteristic exponent ``psi(t)`` of a Levy triplet.

    Parameters
    ----------
    triplet : LevyTriplet
    t : float or array_like

    Returns
    -------
    complex or ndarray of complex
        Same shape as ``t``. ``psi(0) == 0`` exactly.
    """
    t_arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t_arr)):
        raise ValidationError("t must be finite")
    flat = t_arr.ravel()
    uniq, inv = np.unique(flat, return_inverse=True)
    vals = np.empty(uniq.shape, dtype=complex)
    for i, tv in enumerate(uniq):
        if tv == 0.0:
            vals[i] = 0j
            continue
        vals[i] = (1j * triplet.b * tv - 0.5 * triplet.sigma2 * tv * tv
                   + _psi_jump_scalar(triplet.nu, float(tv)))
    out = vals[inv].reshape(t_arr.shape)
    return complex(out) if out.ndim == 0 else out


def jump_moment(nu, n):
    """Jump moment ``b_n`` of the measure.

    ``b_1 = int_{|s| > 1} s nu(ds)`` and ``b_n = int s^n nu(ds)`` for ``n >= 2``.
    """
    if int(n) != n or n < 1:
        raise ValidationError("moment order must be a positive integer")
    n = int(n)
    if nu.kind == "null":
        return 0.0
    if nu.kind == "discrete":
        return float(sum(c * s ** n for s, c in zip(nu.locations, nu.masses)
                         if n >= 2 or abs(s) > 1.0))
    v, w = nu.intensity, nu.decay
    if n == 1:
        one = v * math.exp(-w) / w
        return one if nu.kind == "gamma" else 0.0
    one = v * math.gamma(n) / w ** n
    if not math.isfinite(one):
        raise DivergenceError(f"jump moment of order {n} overflows")
    if nu.kind == "gamma":
        return one
    return 2.0 * one if n % 2 == 0 else 0.0


def exp_integral(nu, beta):
    """``int (exp(beta s) - 1) nu_+(ds)`` where ``nu_+`` is the image under ``|s|``.

    Raises :class:`DivergenceError` when ``beta`` reaches the exponential
    moment limit of the measure.
    """
    beta = float(beta)
    if beta < 0 or not math.isfinite(beta):
        raise ValidationError("beta must be finite and non-negative")
    if nu.kind == "null":
        return 0.0
    if nu.kind == "discrete":
        return float(sum(c * math.expm1(beta * abs(s)) for s, c in zip(nu.locations, nu.masses)))
    if beta >= nu.decay:
        raise DivergenceError(
            f"exponential integral diverges: beta={beta} >= decay w={nu.decay}")
    one = -nu.intensity * math.log1p(-beta / nu.decay)
    return one if nu.kind == "gamma" else 2.0 * one


class _TailInverter:
    """Inverse of ``T(s) = v E1(w s)`` on ``s > 0`` (one-sided gamma tail).

    A monotone cubic table in log-log coordinates gives a starting point
    that two Newton steps polish to machine precision.
    """

    KNOTS = 4096

    def __init__(self, v, w, s_min):
        self.v, self.w = v, w
        s_lo = 0.5 * s_min
        s_hi = 700.0 / w
        x = np.linspace(math.log(s_lo), math.log(s_hi), self.KNOTS)
        u = np.log(v * special.exp1(w * np.exp(x)))
        keep = np.isfinite(u)
        self.x_lo, self.x_hi = x[keep][0], x[keep][-1]
        self._table = PchipInterpolator(u[keep][::-1], x[keep][::-1], extrapolate=True)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        x = np.clip(self._table(np.log(y)), self.x_lo, self.x_hi)
        for _ in range(3):
            s = np.exp(x)
            resid = self.v * special.exp1(self.w * s) - y
            x = x + resid / (self.v * np.exp(-self.w * s))
        return np.exp(x)


@dataclass(frozen=True, eq=False)
class ShellDecomposition:
    """Partition of the jump sizes into ``|s| > 1`` and ``1/(l+1) < |s| <= 1/l``.

    ``indices[i]`` is the shell number ``l`` (0 for ``|s| > 1``), with
    ``lower[i] < |s| <= upper[i]`` and mass ``masses[i]``. ``residual`` is
    ``int |s| nu(ds)`` over the jumps smaller than every retained shell,
    ``residual_mean`` the signed version of the same integral.
    """

    measure: JumpMeasure
    tolerance: float
    ell_max: int
    indices: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    masses: np.ndarray
    residual: float
    residual_mean: float
    _inverter: object = None

    @property
    def total_mass(self):
        return float(self.masses.sum())

    def sample_sizes(self, shell_positions, rng):
        """Draw one jump size for each entry of ``shell_positions``.

        ``shell_positions`` indexes into ``self.indices`` (not the shell
        number itself).
        """
        pos = np.asarray(shell_positions, dtype=np.intp)
        out = np.empty(pos.shape, dtype=float)
        if pos.size == 0:
            return out
        nu = self.measure
        if nu.kind == "discrete":
            locs = np.asarray(nu.locations)
            ms = np.asarray(nu.masses)
            u = rng.random(pos.size)
            for p in np.unique(pos):
                sel = pos == p
                lo, hi = self.lower[p], self.upper[p]
                in_shell = (np.abs(locs) > lo) & (np.abs(locs) <= hi)
                cdf = np.cumsum(ms[in_shell])
                k = np.searchsorted(cdf, u[sel] * cdf[-1], side="right")
                out[sel] = locs[in_shell][np.minimum(k, in_shell.sum() - 1)]
            return out
        inv = self._inverter
        lo, hi = self.lower[pos], self.upper[pos]
        t_lo = nu.intensity * special.exp1(nu.decay * lo)
        t_hi = np.where(np.isinf(hi), 0.0, nu.intensity * special.exp1(nu.decay * np.where(np.isinf(hi), 1.0, hi)))
        u = 1.0 - rng.random(pos.size)
        size = np.clip(inv(t_hi + u * (t_lo - t_hi)), lo, hi)
        if nu.kind == "bigamma":
            size = np.where(rng.random(pos.size) < 0.5, -size, size)
        return size


def _residual(nu, eps):
    return nu.integrate(abs, 0.0, eps)


@lru_cache(maxsize=64)
def shell_partition(nu, drift_tolerance, max_shells=10 ** 6):
    """Shell decomposition whose neglected small jumps carry at most
    ``drift_tolerance`` of first absolute moment.

    Parameters
    ----------
    nu : JumpMeasure
    drift_tolerance : float
        Bound on ``int_{0 < |s| <= 1/(ell_max+1)} |s| nu(ds)``.
    max_shells : int
        Largest admissible ``ell_max``; :class:`ShellError` otherwise.
    """
    if not drift_tolerance > 0:
        raise ValidationError("drift tolerance must be positive")
    empty = np.zeros(0)
    if nu.kind == "null":
        return ShellDecomposition(nu, drift_tolerance, 0, np.zeros(0, dtype=int),
                                  empty, empty, empty, 0.0, 0.0)
    if nu.kind == "discrete":
        ells = sorted({0 if abs(s) > 1 else int(math.floor(1.0 / abs(s)))
                       for s in nu.locations})
        lower, upper, masses = [], [], []
        for ell in ells:
            lo, hi = (1.0, math.inf) if ell == 0 else (1.0 / (ell + 1), 1.0 / ell)
            lower.append(lo)
            upper.append(hi)
            masses.append(nu.band_mass(lo, hi))
        return ShellDecomposition(nu, drift_tolerance, max(ells), np.array(ells),
                                  np.array(lower), np.array(upper), np.array(masses),
                                  0.0, 0.0)
    # gamma kinds: smallest ell_max meeting the tolerance, by bisection
    if _residual(nu, 1.0) <= drift_tolerance:
        ell_max = 0
    else:
        worst = _residual(nu, 1.0 / (max_shells + 1))
        if worst > drift_tolerance:
            raise ShellError(
                f"drift tolerance {drift_tolerance:g} needs more than {max_shells} shells "
                f"(residual at the limit is {worst:.3g})", residual=worst)
        lo_ell, hi_ell = 0, max_shells
        while hi_ell - lo_ell > 1:
            mid = (lo_ell + hi_ell) // 2
            if _residual(nu, 1.0 / (mid + 1)) <= drift_tolerance:
                hi_ell = mid
            else:
                lo_ell = mid
        ell_max = hi_ell
    eps = 1.0 / (ell_max + 1)
    ells = np.arange(ell_max + 1)
    lower = np.empty(ell_max + 1)
    upper = np.empty(ell_max + 1)
    lower[0], upper[0] = 1.0, math.inf
    if ell_max > 0:
        lower[1:] = 1.0 / (ells[1:] + 1.0)
        upper[1:] = 1.0 / ells[1:]
    tail = (nu.intensity * special.exp1(nu.decay * lower)
            * (2.0 if nu.kind == "bigamma" else 1.0))
    upper_tail = np.concatenate(([0.0], tail[:-1]))
    masses = tail - upper_tail
    residual = _residual(nu, eps)
    residual_mean = residual if nu.kind == "gamma" else 0.0
    inverter = _TailInverter(nu.intensity, nu.decay, eps)
    return ShellDecomposition(nu, drift_tolerance, ell_max, ells, lower, upper,
                              masses, residual, residual_mean, inverter)


def sample_jump(decomposition, position, rng):
    """Draw a single jump size from shell ``position`` of a decomposition."""
    return float(decomposition.sample_sizes([position], rng)[0])
