"""Nystrom eigen-decomposition of the kernel on a cut-off box and truncated expansions.

The integral operator ``(K f)(x) = int_Lambda k(x - y) f(y) dy`` is discretized
with a quadrature rule ``(y_c, w_c)``. With ``W = diag(w)`` the symmetric
matrix ``W^1/2 K W^1/2`` is diagonalized, ``e = W^-1/2 v`` gives nodal values
of W-orthonormal eigenfunctions, and

    lambda_i e_i(x) = sum_c w_c k(x - y_c) e_i(y_c)

extends them to arbitrary points.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import linalg

from .errors import GridMismatchError, SolverError, ValidationError
from .field import FieldRealization
from .noise import Box, CellGrid, apply_functional, multilinear

CLIP_RATIO = 1e-12
CLUSTER_RTOL = 1e-8


def _pairwise(a, b):
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))


@dataclass(frozen=True, eq=False)
class MercerBasis:
    """Discrete eigenpairs of the kernel operator on ``box``.

    Attributes
    ----------
    nodes, weights : quadrature rule on ``box``
    eigenvalues : descending, clipped to 0 below ``1e-12 * lambda_1``
    eigenfunctions : ndarray, shape (n_nodes, n_nodes)
        Column ``i`` holds the nodal values of ``e_i``.
    clusters : list of index ranges of (near-)degenerate eigenvalues
    """

    kernel: object
    box: Box
    nodes: np.ndarray
    weights: np.ndarray
    eigenvalues: np.ndarray
    eigenfunctions: np.ndarray
    clusters: list = field(default_factory=list)
    grid: CellGrid = None

    @property
    def rank(self):
        return int(np.count_nonzero(self.eigenvalues > 0))

    def reconstruct(self, n_terms=None, rows=None):
        """``sum_{i < n_terms} lambda_i e_i(x_a) e_i(x_b)`` over the nodes."""
        n = self.rank if n_terms is None else min(int(n_terms), self.rank)
        e = self.eigenfunctions[:, :n]
        left = e if rows is None else e[rows]
        return (left * self.eigenvalues[:n]) @ e.T

    def scaled_extension(self, points, n_terms):
        """``lambda_i e_i(x)`` at ``points`` for ``i < n_terms`` (shape (points, n_terms))."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        kmat = self.kernel.evaluate(_pairwise(pts, self.nodes))
        return (kmat * self.weights) @ self.eigenfunctions[:, :n_terms]

    def eigenfunctions_at(self, points, n_terms):
        n = min(int(n_terms), self.rank)
        return self.scaled_extension(points, n) / self.eigenvalues[:n]

    def sup_norms(self, n_terms=None):
        n = self.rank if n_terms is None else min(int(n_terms), self.rank)
        return np.max(np.abs(self.eigenfunctions[:, :n]), axis=0)


def _gauss_rule(box, per_axis):
    pts, wts = [], []
    g, w = np.polynomial.legendre.leggauss(per_axis)
    for a, b in zip(box.lower, box.upper):
        pts.append(0.5 * (a + b) + 0.5 * (b - a) * g)
        wts.append(0.5 * (b - a) * w)
    return pts, wts


def nystrom_eig(kernel, box, nodes_per_axis, rule="midpoint"):
    """Nystrom eigen-decomposition of ``kernel`` on ``box``.

    Parameters
    ----------
    kernel : MaternKernel
    box : Box
    nodes_per_axis : int or sequence of int
    rule : {"midpoint", "gauss"}
        The midpoint rule puts the nodes at the cell centers of a regular
        grid, so noise sampled on that grid can be paired with the
        eigenfunctions without interpolation.
    """
    if box.d != kernel.d:
        raise ValidationError("box and kernel dimensions differ")
    shape = tuple(int(n) for n in np.broadcast_to(nodes_per_axis, (box.d,)))
    if min(shape) < 1:
        raise ValidationError("need at least one node per axis")
    grid = None
    if rule == "midpoint":
        grid = CellGrid(box, shape)
        nodes = np.array(grid.centers())
        weights = np.full(len(nodes), grid.cell_volume)
    elif rule == "gauss":
        pts, wts = _gauss_rule(box, shape[0]) if len(set(shape)) == 1 else (None, None)
        if pts is None:
            raise ValidationError("the Gauss rule needs equal node counts per axis")
        mesh = np.meshgrid(*pts, indexing="ij")
        nodes = np.stack([m.ravel() for m in mesh], axis=1)
        weights = np.prod(np.stack([m.ravel() for m in np.meshgrid(*wts, indexing="ij")]), axis=0)
    else:
        raise ValidationError(f"unknown quadrature rule {rule!r}")
    sw = np.sqrt(weights)
    mat = kernel.evaluate(_pairwise(nodes, nodes)) * np.outer(sw, sw)
    try:
        vals, vecs = linalg.eigh(mat)
    except linalg.LinAlgError as exc:
        resid = float(np.linalg.norm(mat - mat.T))
        raise SolverError(f"eigensolver failed: {exc}", residual=resid) from exc
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    if vals[0] <= 0:
        raise SolverError("kernel matrix has no positive eigenvalue")
    vals = np.where(vals < CLIP_RATIO * vals[0], 0.0, vals)
    efun = vecs / sw[:, None]
    for i in range(efun.shape[1]):
        col = efun[:, i]
        big = np.flatnonzero(np.abs(col) > 1e-12 * np.max(np.abs(col)))
        if big.size and col[big[0]] < 0:
            efun[:, i] = -col
    clusters = []
    start = 0
    for i in range(1, len(vals) + 1):
        if i == len(vals) or vals[i] == 0 or abs(vals[i] - vals[start]) > CLUSTER_RTOL * vals[start]:
            if i - start > 1:
                clusters.append((start, i))
            start = i
    return MercerBasis(kernel, box, nodes, weights, vals, efun, clusters, grid)


@dataclass(frozen=True, eq=False)
class TruncatedKernel:
    """Expansion ``k_{N'}(x, y) = sum_{i < N'} lambda_i e_i(x) e_i(y)``.

    ``kappa`` is the sup of ``|k(x, y) - k_{N'}(x, y)|`` over the evaluation
    nodes ``x`` (inside the domain) and all quadrature nodes ``y``.
    """

    basis: MercerBasis
    n_terms: int
    kappa: float


def truncation_remainder(basis, n_terms, points=None):
    """``max |sum_{i >= n_terms} lambda_i e_i(x) e_i(y)|`` for ``x`` in ``points``."""
    rank = basis.rank
    n = min(int(n_terms), rank)
    if n == rank:
        return 0.0
    tail_y = basis.eigenfunctions[:, n:rank]
    if points is None:
        left = tail_y * basis.eigenvalues[n:rank]
    else:
        left = basis.scaled_extension(points, rank)[:, n:rank]
    return float(np.max(np.abs(left @ tail_y.T)))


def truncate(basis, n_terms, domain_points=None):
    """Truncate the expansion to ``n_terms`` terms and measure the remainder.

    ``domain_points`` are the points ``x`` where the remainder is maximized
    (defaults to every quadrature node).
    """
    if int(n_terms) < 1:
        raise ValidationError("the truncation level must be at least 1")
    if int(n_terms) > basis.rank:
        raise ValidationError(f"truncation level {n_terms} exceeds the basis rank {basis.rank}")
    kappa = truncation_remainder(basis, n_terms, domain_points)
    return TruncatedKernel(basis, int(n_terms), kappa)


def _pair_with_noise(basis, z, n_terms):
    """Coefficients ``Z(e_i)`` for ``i < n_terms``, split into the three noise parts."""
    e = basis.eigenfunctions[:, :n_terms].T
    if basis.grid is not None and basis.grid == z.grid:
        values = e.reshape((n_terms,) + z.grid.shape)
    else:
        if basis.grid is None:
            raise GridMismatchError("pairing needs a midpoint basis or matching grids")
        values = multilinear(e.reshape((n_terms,) + basis.grid.shape), basis.grid,
                             z.grid.centers()).reshape((n_terms,) + z.grid.shape)
    drift_z, gauss_z, jump_z = z.parts()
    return (apply_functional(drift_z, values), apply_functional(gauss_z, values),
            apply_functional(jump_z, values))


def noise_coefficients(basis, z, n_terms):
    """``Z(e_i)`` for ``i < n_terms``."""
    if int(n_terms) < 1:
        raise ValidationError("the truncation level must be at least 1")
    return sum(_pair_with_noise(basis, z, int(n_terms)))


def truncated_field(tk, z, nodes):
    """Field ``sum_{i < N'} lambda_i e_i(x) Z(e_i)`` at ``nodes``."""
    basis, n = tk.basis, tk.n_terms
    if n < 1:
        raise ValidationError("the truncation level must be at least 1")
    if not np.allclose(np.r_[z.support.lower, z.support.upper],
                       np.r_[basis.box.lower, basis.box.upper], atol=1e-9):
        raise GridMismatchError("the basis must be built on the noise support box")
    ext = basis.scaled_extension(nodes, n)
    c_drift, c_gauss, c_jump = _pair_with_noise(basis, z, n)
    return FieldRealization(np.atleast_2d(nodes), ext @ c_drift, ext @ c_gauss, ext @ c_jump,
                            meta={"seed": z.seed, "n_terms": n})


def fields_for_levels(basis, z, nodes, levels):
    """Truncated fields for several truncation levels sharing one pairing."""
    levels = [int(n) for n in levels]
    top = max(levels)
    ext = basis.scaled_extension(nodes, top)
    c = _pair_with_noise(basis, z, top)
    out = {}
    for n in levels:
        parts = [ext[:, :n] @ ci[:n] for ci in c]
        out[n] = FieldRealization(np.atleast_2d(nodes), *parts, meta={"n_terms": n})
    return out


@dataclass(frozen=True)
class DecayReport:
    slope: float
    intercept: float
    r_squared: float
    envelope: float
    window: tuple


def eig_decay_report(basis, window=(5, 50), eps=0.1, envelope_max=None):
    """Log-log fit of ``lambda_j`` against ``j`` over ``window`` (1-based, inclusive).

    ``envelope`` is ``max_j sqrt(lambda_j) ||e_j||_inf j^(alpha/d - 1/2 - eps)``
    over ``j <= envelope_max`` (default: half the rank).
    """
    j0, j1 = window
    if basis.rank < j1:
        raise ValidationError(f"basis rank {basis.rank} is below the fit window end {j1}")
    j = np.arange(j0, j1 + 1)
    lam = basis.eigenvalues[j - 1]
    x, y = np.log(j), np.log(lam)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    r2 = 1.0 - resid.var() / y.var()
    jmax = basis.rank // 2 if envelope_max is None else int(envelope_max)
    jj = np.arange(1, jmax + 1)
    k = basis.kernel
    env = (np.sqrt(basis.eigenvalues[:jmax]) * basis.sup_norms(jmax)
           * jj ** (k.alpha / k.d - 0.5 - eps))
    return DecayReport(float(slope), float(intercept), float(r2), float(env.max()), (j0, j1))


def spectrum_table(basis, n=None):
    """Rows ``(j, lambda_j, ||e_j||_inf)`` for the first ``n`` eigenpairs."""
    n = basis.rank if n is None else min(n, basis.rank)
    sup = basis.sup_norms(n)
    return [(j + 1, float(basis.eigenvalues[j]), float(sup[j])) for j in range(n)]
