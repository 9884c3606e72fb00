"""Cut-off Levy white noise on a box: sampling, test-function pairing and snapshots.

A realization is stored as

* Gaussian cell integrals ``W_j ~ N(0, sigma2 |cell|)`` on a regular grid,
* a finite list of atoms ``(X_k, S_k)``,
* a deterministic drift density applied to the support box.

Pairing with a test function ``f`` sampled at cell centers gives

    Z(f) = drift * sum_j f_j |cell| + sum_j W_j f_j + sum_k S_k f(X_k)

with ``f(X_k)`` from multilinear interpolation of the cell-center values.
"""

from dataclasses import dataclass, field, replace
from functools import lru_cache
import math
import struct

import numpy as np

from . import _rng
from .errors import GridMismatchError, ValidationError
from .measure import levy_characteristic, shell_partition


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``prod_i [lower_i, upper_i]``."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(x) for x in np.atleast_1d(self.lower))
        hi = tuple(float(x) for x in np.atleast_1d(self.upper))
        if len(lo) != len(hi) or len(lo) == 0:
            raise ValidationError("box bounds must have the same non-zero length")
        if any(not (math.isfinite(a) and math.isfinite(b) and b > a) for a, b in zip(lo, hi)):
            raise ValidationError(f"box bounds {lo}, {hi} must be finite with upper > lower")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def d(self):
        return len(self.lower)

    @property
    def lengths(self):
        return np.subtract(self.upper, self.lower)

    @property
    def volume(self):
        return float(np.prod(self.lengths))

    @property
    def diameter(self):
        return float(np.linalg.norm(self.lengths))

    def contains(self, points, slack=0.0):
        p = np.atleast_2d(np.asarray(points, dtype=float))
        return np.all((p >= np.asarray(self.lower) - slack)
                      & (p <= np.asarray(self.upper) + slack), axis=1)

    def padded(self, pad):
        return Box(tuple(a - pad for a in self.lower), tuple(b + pad for b in self.upper))

    def margin_inside(self, outer):
        """Smallest distance from this box to the complement of ``outer``."""
        return float(min(min(a - A for a, A in zip(self.lower, outer.lower)),
                         min(B - b for b, B in zip(self.upper, outer.upper))))

    def intersect(self, other):
        lo = tuple(max(a, b) for a, b in zip(self.lower, other.lower))
        hi = tuple(min(a, b) for a, b in zip(self.upper, other.upper))
        return Box(lo, hi)


@dataclass(frozen=True)
class CellGrid:
    """Regular grid of ``shape`` cells covering ``box``."""

    box: Box
    shape: tuple

    def __post_init__(self):
        shape = tuple(int(n) for n in np.atleast_1d(self.shape))
        if len(shape) != self.box.d:
            raise ValidationError("grid shape must match the box dimension")
        if any(n < 1 for n in shape):
            raise ValidationError("grid resolution must be at least one cell per axis")
        object.__setattr__(self, "shape", shape)

    @classmethod
    def around(cls, domain, pad, h):
        """Grid of spacing ``h`` whose cell centers hit the corners of ``domain``
        and which extends at least ``pad`` beyond it on every side."""
        if not h > 0:
            raise ValidationError("cell spacing must be positive")
        k = max(int(math.ceil(pad / h - 1e-9)), 0)
        lo, hi, shape = [], [], []
        for a, b in zip(domain.lower, domain.upper):
            n_inner = (b - a) / h
            if abs(n_inner - round(n_inner)) > 1e-8 * max(1.0, n_inner):
                raise GridMismatchError(f"domain length {b - a} is not a multiple of h={h}")
            n_inner = int(round(n_inner))
            lo.append(a - (k + 0.5) * h)
            hi.append(b + (k + 0.5) * h)
            shape.append(n_inner + 1 + 2 * k)
        return cls(Box(tuple(lo), tuple(hi)), tuple(shape))

    @property
    def d(self):
        return self.box.d

    @property
    def spacing(self):
        return self.box.lengths / np.asarray(self.shape)

    @property
    def cell_volume(self):
        return float(np.prod(self.spacing))

    @property
    def size(self):
        return int(np.prod(self.shape))

    def axes(self):
        """Cell-center coordinates along each axis."""
        return [a + (np.arange(n) + 0.5) * h
                for a, n, h in zip(self.box.lower, self.shape, self.spacing)]

    def centers(self):
        """Cell centers as an ``(size, d)`` array in C order."""
        return _centers(self)

    def sample(self, fn):
        """Values of ``fn(points)`` at the cell centers, shaped like the grid."""
        return np.asarray(fn(self.centers()), dtype=float).reshape(self.shape)

    def indicator(self, box):
        """Cell averages of the indicator of ``box`` (exact overlap fractions)."""
        frac = []
        for (a, b), lo, n, h in zip(zip(box.lower, box.upper), self.box.lower,
                                    self.shape, self.spacing):
            left = lo + np.arange(n) * h
            overlap = np.clip(np.minimum(left + h, b) - np.maximum(left, a), 0.0, None)
            frac.append(overlap / h)
        out = frac[0]
        for f in frac[1:]:
            out = np.multiply.outer(out, f)
        return out

    def cell_mask(self, box):
        """Boolean mask of the cells whose centers lie in ``box``."""
        return _cell_mask(self, box)


@lru_cache(maxsize=256)
def _centers(grid):
    mesh = np.meshgrid(*grid.axes(), indexing="ij")
    out = np.stack([m.ravel() for m in mesh], axis=1)
    out.flags.writeable = False
    return out


@lru_cache(maxsize=256)
def _cell_mask(grid, box):
    slack = 1e-9 * float(np.min(grid.spacing))
    out = box.contains(grid.centers(), slack=slack).reshape(grid.shape)
    out.flags.writeable = False
    return out


def multilinear(values, grid, points):
    """Multilinear interpolation of cell-center ``values`` at ``points``.

    ``values`` may carry leading batch dimensions before the grid shape.
    Points outside the cell-center hull are clamped to it.
    """
    values = np.asarray(values, dtype=float)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = grid.d
    if pts.shape[1] != d:
        raise GridMismatchError("points have the wrong dimension for the grid")
    batch = values.shape[:values.ndim - d]
    if values.shape[values.ndim - d:] != grid.shape:
        raise GridMismatchError(f"values of shape {values.shape} do not match grid {grid.shape}")
    flat = values.reshape(batch + (-1,))
    idx0, weights = [], []
    for ax in range(d):
        n, h, lo = grid.shape[ax], grid.spacing[ax], grid.box.lower[ax]
        if n == 1:
            idx0.append(np.zeros(len(pts), dtype=np.intp))
            weights.append(np.zeros(len(pts)))
            continue
        u = np.clip((pts[:, ax] - lo) / h - 0.5, 0.0, n - 1.0)
        i0 = np.minimum(np.floor(u).astype(np.intp), n - 2)
        idx0.append(i0)
        weights.append(u - i0)
    out = np.zeros(batch + (len(pts),))
    strides = np.cumprod((1,) + grid.shape[::-1])[:-1][::-1]
    for corner in range(2 ** d):
        lin = np.zeros(len(pts), dtype=np.intp)
        wt = np.ones(len(pts))
        for ax in range(d):
            bit = (corner >> ax) & 1
            step = bit if grid.shape[ax] > 1 else 0
            lin += (idx0[ax] + step) * strides[ax]
            wt *= weights[ax] if bit else (1.0 - weights[ax])
        out += flat[..., lin] * wt
    return out


def _readonly(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class NoiseRealization:
    """One sample of cut-off Levy white noise.

    Attributes
    ----------
    grid : CellGrid
    support : Box
        Cut-off box; drift and Gaussian cells are zero outside it.
    gaussian : ndarray
        Cell integrals of the Gaussian part, shaped like the grid.
    atom_locations : ndarray, shape (n_atoms, d)
    atom_sizes : ndarray, shape (n_atoms,)
    drift : float
        Density of the deterministic part on ``support``.
    seed : int or None
    """

    grid: CellGrid
    support: Box
    gaussian: np.ndarray
    atom_locations: np.ndarray
    atom_sizes: np.ndarray
    drift: float
    seed: object = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "gaussian", _readonly(self.gaussian))
        locs = np.asarray(self.atom_locations, dtype=float).reshape(-1, self.grid.d)
        object.__setattr__(self, "atom_locations", _readonly(locs))
        object.__setattr__(self, "atom_sizes", _readonly(self.atom_sizes))
        if self.gaussian.shape != self.grid.shape:
            raise GridMismatchError("Gaussian cells do not match the grid shape")
        if len(self.atom_sizes) != len(self.atom_locations):
            raise GridMismatchError("atom locations and sizes differ in length")

    @property
    def n_atoms(self):
        return len(self.atom_sizes)

    def support_mask(self):
        return self.grid.cell_mask(self.support)

    def restrict(self, box):
        """Noise cut off to ``box`` (intersected with the current support).

        Cells are kept when their centers lie in the new support, so grid-
        aligned boxes are restricted exactly.
        """
        new_support = self.support.intersect(box)
        mask = self.grid.cell_mask(new_support)
        keep = new_support.contains(self.atom_locations) if self.n_atoms else np.zeros(0, bool)
        return replace(self, support=new_support,
                       gaussian=np.where(mask, self.gaussian, 0.0),
                       atom_locations=self.atom_locations[keep],
                       atom_sizes=self.atom_sizes[keep])

    def absolute(self):
        """Jump-only realization with sizes ``|S_k|`` (for domination checks)."""
        return replace(self, gaussian=np.zeros(self.grid.shape), drift=0.0,
                       atom_sizes=np.abs(self.atom_sizes))

    def parts(self):
        """Split into (drift-only, Gaussian-only, jump-only) realizations."""
        zeros = np.zeros(self.grid.shape)
        none_loc = np.zeros((0, self.grid.d))
        return (replace(self, gaussian=zeros, atom_locations=none_loc,
                        atom_sizes=np.zeros(0)),
                replace(self, drift=0.0, atom_locations=none_loc, atom_sizes=np.zeros(0)),
                replace(self, drift=0.0, gaussian=zeros))

    def to_bytes(self):
        return snapshot_bytes(self)


def superpose(first, second):
    """Sum of two realizations on the same grid and support."""
    if first.grid != second.grid or first.support != second.support:
        raise GridMismatchError("realizations live on different grids or supports")
    return NoiseRealization(
        first.grid, first.support, first.gaussian + second.gaussian,
        np.concatenate([first.atom_locations, second.atom_locations]),
        np.concatenate([first.atom_sizes, second.atom_sizes]),
        first.drift + second.drift, seed=None)


def sample_noise(triplet, grid, seed, *, support=None, drift_tolerance=1e-3,
                 absorb_residual=True):
    """Sample cut-off Levy noise with the given triplet on ``grid``.

    Parameters
    ----------
    triplet : LevyTriplet
    grid : CellGrid
    seed : int
        Key of the counter-based streams; the Gaussian cells, atom counts,
        atom positions and jump sizes use separate streams.
    support : Box, optional
        Cut-off box (defaults to the grid box).
    drift_tolerance : float
        Passed to :func:`shell_partition`.
    absorb_residual : bool
        Add the mean of the neglected small jumps to the drift.
    """
    support = grid.box if support is None else grid.box.intersect(support)
    mask = grid.cell_mask(support)
    if triplet.sigma2 > 0:
        scale = math.sqrt(triplet.sigma2 * grid.cell_volume)
        gauss = scale * _rng.stream(seed, "gaussian").standard_normal(grid.shape)
        gauss = np.where(mask, gauss, 0.0)
    else:
        gauss = np.zeros(grid.shape)
    drift = triplet.effective_drift
    locs = np.zeros((0, grid.d))
    sizes = np.zeros(0)
    meta = {}
    if not triplet.nu.is_null:
        shells = shell_partition(triplet.nu, float(drift_tolerance))
        counts = _rng.stream(seed, "count").poisson(shells.masses * support.volume)
        positions = np.repeat(np.arange(len(counts)), counts)
        total = int(counts.sum())
        locs = _rng.stream(seed, "location").uniform(
            np.asarray(support.lower), np.asarray(support.upper), size=(total, grid.d))
        sizes = shells.sample_sizes(positions, _rng.stream(seed, "jump"))
        if absorb_residual:
            drift += shells.residual_mean
        meta = {"ell_max": shells.ell_max, "residual": shells.residual}
    return NoiseRealization(grid, support, gauss, locs, sizes, float(drift),
                            seed=seed, meta=meta)


def apply_functional(z, f):
    """Pair the noise with test function values ``f`` at the cell centers.

    ``f`` has the grid shape, optionally with leading batch dimensions; the
    result has the batch shape.
    """
    f = np.asarray(f, dtype=float)
    d = z.grid.d
    if f.shape[f.ndim - d:] != z.grid.shape:
        raise GridMismatchError(f"test function of shape {f.shape} does not match grid {z.grid.shape}")
    mask = z.support_mask()
    axes = tuple(range(f.ndim - d, f.ndim))
    out = z.drift * z.grid.cell_volume * np.sum(np.where(mask, f, 0.0), axis=axes)
    out = out + np.sum(f * z.gaussian, axis=axes)
    if z.n_atoms:
        out = out + multilinear(f, z.grid, z.atom_locations) @ z.atom_sizes
    return out


def reference_char_functional(triplet, f, grid, t, support=None):
    """``exp(sum_j psi(t f_j) |cell|)`` over the cells inside ``support``."""
    f = np.asarray(f, dtype=float)
    support = grid.box if support is None else support
    vals = f[grid.cell_mask(support)]
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    out = np.empty(t_arr.shape, dtype=complex)
    for i, tv in enumerate(t_arr):
        psi = levy_characteristic(triplet, tv * vals)
        out[i] = np.exp(np.sum(psi) * grid.cell_volume)
    return out if np.ndim(t) else complex(out[0])


def empirical_char_functional(triplet, f, t, n_samples, seed, grid, *,
                              drift_tolerance=1e-3):
    """Monte Carlo estimate of ``E exp(i t Z(f))`` and its reference value.

    Returns
    -------
    (empirical, reference) : complex or ndarray of complex
        Both shaped like ``t``.
    """
    if n_samples < 1:
        raise ValidationError("n_samples must be positive")
    f = np.asarray(f, dtype=float)
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    values = np.empty(n_samples)
    for i in range(n_samples):
        z = sample_noise(triplet, grid, (seed, i), drift_tolerance=drift_tolerance)
        values[i] = apply_functional(z, f)
    emp = np.exp(1j * np.multiply.outer(t_arr, values)).mean(axis=1)
    ref = reference_char_functional(triplet, f, grid, t_arr)
    if np.ndim(t) == 0:
        return complex(emp[0]), complex(ref[0])
    return emp, ref


MAGIC = b"LEVYNZ01"


def snapshot_bytes(z):
    """Serialize a realization to the binary snapshot layout.

    Layout (little endian): magic ``LEVYNZ01``; ``u32`` dimension d;
    ``f64`` drift; per axis ``f64`` lower, ``f64`` upper, ``u64`` cells;
    per axis ``f64`` support lower and upper; the cell integrals as ``f64``
    in C order; ``u64`` number of atoms; then one row of ``d + 1`` ``f64``
    per atom (location, size).
    """
    g = z.grid
    parts = [MAGIC, struct.pack("<Id", g.d, z.drift)]
    for a, b, n in zip(g.box.lower, g.box.upper, g.shape):
        parts.append(struct.pack("<ddQ", a, b, n))
    for a, b in zip(z.support.lower, z.support.upper):
        parts.append(struct.pack("<dd", a, b))
    parts.append(np.ascontiguousarray(z.gaussian, dtype="<f8").tobytes())
    parts.append(struct.pack("<Q", z.n_atoms))
    rows = np.column_stack([z.atom_locations, z.atom_sizes]).astype("<f8")
    parts.append(rows.tobytes())
    return b"".join(parts)


def snapshot_from_bytes(data):
    if data[:8] != MAGIC:
        raise ValidationError("not a noise snapshot (bad magic)")
    pos = 8
    d, drift = struct.unpack_from("<Id", data, pos)
    pos += 12
    lo, hi, shape, slo, shi = [], [], [], [], []
    for _ in range(d):
        a, b, n = struct.unpack_from("<ddQ", data, pos)
        pos += 24
        lo.append(a)
        hi.append(b)
        shape.append(n)
    for _ in range(d):
        a, b = struct.unpack_from("<dd", data, pos)
        pos += 16
        slo.append(a)
        shi.append(b)
    size = int(np.prod(shape))
    cells = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape)
    pos += 8 * size
    (n_atoms,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    rows = np.frombuffer(data, dtype="<f8", count=n_atoms * (d + 1), offset=pos).reshape(n_atoms, d + 1)
    grid = CellGrid(Box(tuple(lo), tuple(hi)), tuple(shape))
    return NoiseRealization(grid, Box(tuple(slo), tuple(shi)), cells.astype(float),
                            rows[:, :d].astype(float), rows[:, d].astype(float), drift)


def save_snapshot(z, path):
    with open(path, "wb") as fh:
        fh.write(snapshot_bytes(z))


def load_snapshot(path):
    with open(path, "rb") as fh:
        return snapshot_from_bytes(fh.read())
