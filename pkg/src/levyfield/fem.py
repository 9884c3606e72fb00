"""P1 finite elements for ``-div(a grad u) = f`` with mixed boundary data.

Meshes are uniform: intervals in 1D, and in 2D each grid square is split
into four triangles through an added center node (crossed diagonals).
The coefficient is constant per element.
"""

from dataclasses import dataclass, field
import math

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .errors import EllipticityError, SolverError, ValidationError

SIDES_1D = ("left", "right")
SIDES_2D = ("left", "right", "bottom", "top")
RESIDUAL_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial mesh with tagged boundary facets.

    ``facets[side]`` is an ``(n_facets, d)`` array of vertex indices (points in
    1D, edges in 2D); ``dirichlet`` lists the sides carrying Dirichlet data.
    """

    vertices: np.ndarray
    elements: np.ndarray
    facets: dict
    dirichlet: tuple
    lower: tuple
    upper: tuple
    cells: tuple

    @property
    def d(self):
        return self.vertices.shape[1]

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def h(self):
        return float(max((b - a) / n for a, b, n in zip(self.lower, self.upper, self.cells)))

    @property
    def neumann(self):
        return tuple(s for s in self.facets if s not in self.dirichlet)

    def dirichlet_nodes(self):
        idx = [self.facets[s].ravel() for s in self.dirichlet]
        return np.unique(np.concatenate(idx)) if idx else np.zeros(0, dtype=int)

    def grid_nodes(self):
        """Vertices of the tensor grid (excludes the 2D square centers)."""
        n = int(np.prod([c + 1 for c in self.cells]))
        return self.vertices[:n]


def _check_sides(dirichlet, allowed):
    dirichlet = tuple(dirichlet)
    bad = [s for s in dirichlet if s not in allowed]
    if bad:
        raise ValidationError(f"unknown boundary sides {bad}; choose from {allowed}")
    if not dirichlet:
        raise ValidationError("the Dirichlet boundary must be non-empty")
    return dirichlet


def interval_mesh(a, b, n, dirichlet=SIDES_1D):
    """Uniform mesh of ``[a, b]`` with ``n`` elements."""
    if not (n >= 1 and b > a):
        raise ValidationError("need n >= 1 elements and b > a")
    dirichlet = _check_sides(dirichlet, SIDES_1D)
    x = np.linspace(a, b, n + 1)
    elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
    facets = {"left": np.array([[0]]), "right": np.array([[n]])}
    return Mesh(x[:, None], elements, facets, dirichlet, (float(a),), (float(b),), (int(n),))


def rectangle_mesh(lower, upper, nx, ny, dirichlet=SIDES_2D):
    """Crossed-diagonal mesh of a rectangle with ``nx * ny`` squares (4 triangles each)."""
    if not (nx >= 1 and ny >= 1):
        raise ValidationError("need at least one cell per axis")
    dirichlet = _check_sides(dirichlet, SIDES_2D)
    (x0, y0), (x1, y1) = lower, upper
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    corners = np.column_stack([gx.ravel(), gy.ravel()])
    cx, cy = np.meshgrid(0.5 * (xs[:-1] + xs[1:]), 0.5 * (ys[:-1] + ys[1:]), indexing="ij")
    centers = np.column_stack([cx.ravel(), cy.ravel()])
    vertices = np.vstack([corners, centers])

    def vid(i, j):
        return i * (ny + 1) + j

    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    ii, jj = ii.ravel(), jj.ravel()
    c = len(corners) + ii * ny + jj
    v00, v10, v11, v01 = vid(ii, jj), vid(ii + 1, jj), vid(ii + 1, jj + 1), vid(ii, jj + 1)
    elements = np.concatenate([np.column_stack(t) for t in
                               ((v00, v10, c), (v10, v11, c), (v11, v01, c), (v01, v00, c))])
    i_all, j_all = np.arange(nx), np.arange(ny)
    facets = {
        "left": np.column_stack([vid(0, j_all), vid(0, j_all + 1)]),
        "right": np.column_stack([vid(nx, j_all), vid(nx, j_all + 1)]),
        "bottom": np.column_stack([vid(i_all, 0), vid(i_all + 1, 0)]),
        "top": np.column_stack([vid(i_all, ny), vid(i_all + 1, ny)]),
    }
    return Mesh(vertices, elements, facets, dirichlet, (float(x0), float(y0)),
                (float(x1), float(y1)), (int(nx), int(ny)))


def _geometry(mesh):
    """Element measures and P1 basis gradients (shape (ne, d+1, d))."""
    v = mesh.vertices[mesh.elements]
    if mesh.d == 1:
        length = v[:, 1, 0] - v[:, 0, 0]
        grads = np.stack([-1.0 / length, 1.0 / length], axis=1)[:, :, None]
        return length, grads
    e1 = v[:, 1] - v[:, 0]
    e2 = v[:, 2] - v[:, 0]
    det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    area = 0.5 * np.abs(det)
    inv = np.empty((len(v), 2, 2))
    inv[:, 0, 0] = e2[:, 1] / det
    inv[:, 0, 1] = -e2[:, 0] / det
    inv[:, 1, 0] = -e1[:, 1] / det
    inv[:, 1, 1] = e1[:, 0] / det
    ref = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])
    grads = np.einsum("ak,ekj->eaj", ref, inv)
    return area, grads


def stiffness_matrix(mesh, coef):
    measure, grads = _geometry(mesh)
    local = np.einsum("eaj,ebj->eab", grads, grads) * (coef * measure)[:, None, None]
    return _scatter(mesh.elements, local, mesh.n_vertices)


def mass_matrix(mesh):
    measure, _ = _geometry(mesh)
    k = mesh.d + 1
    ref = (np.ones((k, k)) + np.eye(k)) / ((k) * (k + 1))
    local = measure[:, None, None] * ref[None]
    return _scatter(mesh.elements, local, mesh.n_vertices)


def _scatter(elements, local, n):
    k = elements.shape[1]
    rows = np.repeat(elements, k, axis=1).ravel()
    cols = np.tile(elements, (1, k)).ravel()
    return sparse.csr_matrix((local.ravel(), (rows, cols)), shape=(n, n))


def boundary_mass(mesh, sides):
    """Mass matrix of the boundary facets on ``sides``."""
    n = mesh.n_vertices
    if mesh.d == 1:
        idx = np.concatenate([mesh.facets[s].ravel() for s in sides]) if sides else np.zeros(0, int)
        return sparse.csr_matrix((np.ones(len(idx)), (idx, idx)), shape=(n, n))
    if not sides:
        return sparse.csr_matrix((n, n))
    edges = np.concatenate([mesh.facets[s] for s in sides])
    length = np.linalg.norm(mesh.vertices[edges[:, 1]] - mesh.vertices[edges[:, 0]], axis=1)
    local = length[:, None, None] * (np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0)[None]
    return _scatter(edges, local, n)


def _nodal(mesh, data, name):
    if callable(data):
        out = np.asarray(data(mesh.vertices), dtype=float).reshape(-1)
    else:
        out = np.asarray(data, dtype=float)
        if out.ndim == 0:
            out = np.full(mesh.n_vertices, float(out))
    if out.shape != (mesh.n_vertices,) or not np.all(np.isfinite(out)):
        raise ValidationError(f"{name} must be finite with one value per vertex")
    return out


def element_coefficient(mesh, a):
    """Per-element coefficient from a scalar, nodal values or element values."""
    a = np.asarray(a, dtype=float)
    ne = len(mesh.elements)
    if a.ndim == 0:
        out = np.full(ne, float(a))
    elif a.shape == (ne,):
        out = a.copy()
    elif a.shape == (mesh.n_vertices,):
        out = a[mesh.elements].mean(axis=1)
    else:
        raise ValidationError("coefficient must be scalar, nodal or per element")
    if not np.all(np.isfinite(out)):
        raise EllipticityError("coefficient is not finite")
    if np.any(out <= 0):
        raise EllipticityError(f"coefficient is not strictly positive (min {out.min():.3g})")
    return out


@dataclass(frozen=True, eq=False)
class FemSolution:
    """Nodal P1 solution together with the data that produced it."""

    mesh: Mesh
    values: np.ndarray
    coefficient: np.ndarray
    source: np.ndarray
    dirichlet_values: np.ndarray
    neumann_values: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __call__(self, points):
        return evaluate(self, points)


def assemble_solve(mesh, a, f=0.0, g_D=0.0, g_N=0.0):
    """Solve ``-div(a grad u) = f`` with ``u = g_D`` on the Dirichlet sides and
    ``a du/dn = g_N`` on the others.

    ``a`` is a scalar, nodal array or per-element array (nodal values are
    averaged over each element). ``f``, ``g_D`` and ``g_N`` are scalars,
    nodal arrays or callables of the vertex coordinates.
    """
    coef = element_coefficient(mesh, a)
    f_n = _nodal(mesh, f, "source f")
    gd_n = _nodal(mesh, g_D, "Dirichlet data")
    gn_n = _nodal(mesh, g_N, "Neumann data")
    stiff = stiffness_matrix(mesh, coef)
    rhs = mass_matrix(mesh) @ f_n + boundary_mass(mesh, mesh.neumann) @ gn_n
    fixed = mesh.dirichlet_nodes()
    free = np.setdiff1d(np.arange(mesh.n_vertices), fixed)
    u = np.zeros(mesh.n_vertices)
    u[fixed] = gd_n[fixed]
    a_ff = stiff[free][:, free].tocsc()
    b = rhs[free] - stiff[free][:, fixed] @ u[fixed]
    try:
        u[free] = spsolve(a_ff, b)
    except RuntimeError as exc:
        raise SolverError(f"sparse solve failed: {exc}") from exc
    resid = float(np.linalg.norm(a_ff @ u[free] - b) / max(np.linalg.norm(b), 1e-300))
    if not np.all(np.isfinite(u)) or (np.linalg.norm(b) > 0 and resid > RESIDUAL_TOL):
        raise SolverError(f"linear solve residual {resid:.3g} exceeds {RESIDUAL_TOL}", residual=resid)
    diag = {"residual": resid, "a_min": float(coef.min()), "a_max": float(coef.max()),
            "contrast": float(coef.max() / coef.min()), "dofs": int(len(free))}
    return FemSolution(mesh, u, coef, f_n, gd_n, gn_n, diag)


def l2_norm(sol):
    return float(math.sqrt(max(sol.values @ (mass_matrix(sol.mesh) @ sol.values), 0.0)))


def h1_seminorm(sol):
    ones = np.ones(len(sol.mesh.elements))
    return float(math.sqrt(max(sol.values @ (stiffness_matrix(sol.mesh, ones) @ sol.values), 0.0)))


def h1_norm(sol):
    return math.hypot(l2_norm(sol), h1_seminorm(sol))


def discrete_poincare(mesh):
    """Smallest ``C`` with ``||v||_{L^2} <= C ||grad v||_{L^2}`` for P1 functions
    vanishing on the Dirichlet nodes (generalized eigenproblem on the free dofs)."""
    from scipy.linalg import eigh

    free = np.setdiff1d(np.arange(mesh.n_vertices), mesh.dirichlet_nodes())
    k = stiffness_matrix(mesh, np.ones(len(mesh.elements)))[free][:, free].toarray()
    m = mass_matrix(mesh)[free][:, free].toarray()
    lam = eigh(k, m, eigvals_only=True, subset_by_index=[0, 0])[0]
    return float(1.0 / math.sqrt(lam))


def coefficient_sensitivity(mesh, reference, coefficient_gap, min_coefficient):
    """Bound on ``||u - u'||_{H^1}`` when ``a`` changes to ``a'`` with equal data.

    ``sqrt(1 + C_P^2) ||a - a'||_inf ||grad u||_{L^2} / min a'`` where ``u``
    solves with ``a`` and ``C_P`` is :func:`discrete_poincare`.
    """
    cp = discrete_poincare(mesh)
    return math.sqrt(1.0 + cp * cp) * coefficient_gap * h1_seminorm(reference) / min_coefficient


def difference(sol, other):
    """Nodal difference of two solutions on the same mesh (as a FemSolution)."""
    if sol.mesh is not other.mesh and not np.array_equal(sol.mesh.vertices, other.mesh.vertices):
        raise ValidationError("solutions live on different meshes")
    return FemSolution(sol.mesh, sol.values - other.values, sol.coefficient, sol.source,
                       sol.dirichlet_values, sol.neumann_values)


def _quadrature(mesh, order=5):
    """Points (ne, q, d) and weights (ne, q) of an element quadrature rule."""
    g, w = np.polynomial.legendre.leggauss(order)
    g = 0.5 * (g + 1.0)
    w = 0.5 * w
    v = mesh.vertices[mesh.elements]
    if mesh.d == 1:
        lam = np.stack([1 - g, g], axis=1)
        pts = np.einsum("qa,ead->eqd", lam, v)
        wts = np.outer(v[:, 1, 0] - v[:, 0, 0], w)
        return pts, wts, lam
    # collapsed Gauss rule on the reference triangle
    s, t = np.meshgrid(g, g, indexing="ij")
    ws, wt = np.meshgrid(w, w, indexing="ij")
    xi = s.ravel()
    eta = (t * (1 - s)).ravel()
    wq = (ws * wt * (1 - s)).ravel()
    lam = np.stack([1 - xi - eta, xi, eta], axis=1)
    pts = np.einsum("qa,ead->eqd", lam, v)
    area, _ = _geometry(mesh)
    wts = np.outer(2.0 * area, wq)
    return pts, wts, lam


def errors_against(sol, exact, exact_grad, order=5):
    """``(||u - u_h||_{L^2}, |u - u_h|_{H^1})`` against a manufactured solution."""
    pts, wts, lam = _quadrature(sol.mesh, order)
    uh = np.einsum("qa,ea->eq", lam, sol.values[sol.mesh.elements])
    flat = pts.reshape(-1, sol.mesh.d)
    ue = np.asarray(exact(flat), dtype=float).reshape(uh.shape)
    l2 = math.sqrt(float(np.sum(wts * (ue - uh) ** 2)))
    _, grads = _geometry(sol.mesh)
    gh = np.einsum("eaj,ea->ej", grads, sol.values[sol.mesh.elements])
    ge = np.asarray(exact_grad(flat), dtype=float).reshape(uh.shape + (sol.mesh.d,))
    h1 = math.sqrt(float(np.sum(wts * np.sum((ge - gh[:, None, :]) ** 2, axis=2))))
    return l2, h1


def evaluate(sol, points):
    """Evaluate the P1 solution at points (1D and tensor-grid 2D)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    mesh = sol.mesh
    if mesh.d == 1:
        return np.interp(pts[:, 0], mesh.vertices[:, 0], sol.values)
    from scipy.interpolate import LinearNDInterpolator
    return LinearNDInterpolator(mesh.vertices, sol.values)(pts)


def data_norms(sol):
    """``(||f||_{L^2(D)}, ||g_D||_{L^2(Dirichlet)}, ||g_N||_{L^2(Neumann)})``."""
    mesh = sol.mesh
    f = math.sqrt(max(sol.source @ (mass_matrix(mesh) @ sol.source), 0.0))
    bd = boundary_mass(mesh, mesh.dirichlet)
    bn = boundary_mass(mesh, mesh.neumann)
    gd = math.sqrt(max(sol.dirichlet_values @ (bd @ sol.dirichlet_values), 0.0))
    gn = math.sqrt(max(sol.neumann_values @ (bn @ sol.neumann_values), 0.0))
    return f, gd, gn


def apriori_ratio(sol, a=None, data=None):
    """``||u||_{H^1} / [((1 + max a) / min a) (||f|| + ||g_D|| + ||g_N||)]``.

    ``a`` defaults to the element coefficient used in the solve and ``data``
    to the boundary and source norms from :func:`data_norms`. Boundary data
    norms are L2 norms on the boundary.
    """
    coef = sol.coefficient if a is None else np.asarray(a, dtype=float)
    total = sum(data_norms(sol) if data is None else data)
    if total <= 0:
        raise ValidationError("data norm is zero")
    return h1_norm(sol) / ((1.0 + float(coef.max())) / float(coef.min()) * total)
