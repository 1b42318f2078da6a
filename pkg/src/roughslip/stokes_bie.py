"""Dense Nyström solver for interior Stokes Dirichlet problems.

The velocity is represented by the double layer potential

    u_i(x) = sum_{j,k} int 2 T_ijk(x - y) n_j(y) w_k(y) ds(y),
    T_ijk(d) = -(1/pi) d_i d_j d_k / |d|^4,

whose interior boundary limit is ``(I + D_PV)[w]``.  Boundary fields are
``(J, 2)`` arrays of nodal values; system vectors stack them node-major
(``2*j + k``).  The operator has a one-dimensional null space: its range is
the flux-free data (the weighted transpose annihilates the normal field),
and the density in its kernel generates no interior velocity.  Solves use
the rank-one completed matrix, which picks the density with zero normal
moment and leaves the interior velocity untouched.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.linalg import gmres

from roughslip.errors import CompatibilityError, GeometryError, NearBoundaryWarning, SolverError
from roughslip.geometry import Curve, min_distance_to_boundary

COMPAT_TOL = 1e-6
MAX_ITER = 500


def stresslet(d) -> np.ndarray:
    """Rank-3 stresslet ``T_ijk(d)`` as a (2, 2, 2) array."""
    d = np.asarray(d, dtype=float)
    r2 = float(d @ d)
    if r2 == 0.0:
        raise ZeroDivisionError("stresslet is singular at d = 0; use diagonal_limit")
    return -np.einsum("i,j,k->ijk", d, d, d) / (np.pi * r2 * r2)


def stresslet_gradient(d) -> np.ndarray:
    """``G[i, j, k, m] = d T_ijk / d d_m``."""
    d = np.asarray(d, dtype=float)
    r2 = float(d @ d)
    if r2 == 0.0:
        raise ZeroDivisionError("stresslet gradient is singular at d = 0")
    eye = np.eye(2)
    first = (
        np.einsum("im,j,k->ijkm", eye, d, d)
        + np.einsum("i,jm,k->ijkm", d, eye, d)
        + np.einsum("i,j,km->ijkm", d, d, eye)
    )
    return -(first / r2**2 - 4.0 * np.einsum("i,j,k,m->ijkm", d, d, d, d) / r2**3) / np.pi


def diagonal_limit(curve: Curve, j: int) -> np.ndarray:
    """Limit of ``sum_l T_klm(y - y_j) n_l(y_j)`` as ``y -> y_j`` along the curve.

    Equals ``kappa_j / (2 pi) * t t^T``.  The assembled matrix carries twice
    this value because of the factor 2 in the potential.
    """
    t = curve.tangent[j]
    return curve.kappa[j] / (2.0 * np.pi) * np.outer(t, t)


@dataclass(frozen=True)
class NystromSystem:
    """Discretized ``I + D_PV`` on one curve.

    ``matrix`` is the plain operator; ``completed`` adds the rank-one term
    ``n (W n)^T / <n, n>_W``, which makes the system invertible and, for
    flux-free data, selects the density with ``<n, w>_W = 0``.
    """

    matrix: np.ndarray
    curve: Curve
    completed: np.ndarray = field(repr=False)
    assembly_tolerance: float = 1e-14

    @property
    def J(self) -> int:
        return self.curve.J


def _kernel_blocks(targets: np.ndarray, curve: Curve) -> np.ndarray:
    """``2 T_ijk(x - y_j) n_j`` blocks, shape (P, J, 2, 2), no weights."""
    d = targets[:, None, :] - curve.x[None, :, :]
    r2 = np.sum(d * d, axis=2)
    dn = np.sum(d * curve.normal[None], axis=2)
    coef = -(2.0 / np.pi) * dn / (r2 * r2)
    return coef[..., None, None] * d[..., :, None] * d[..., None, :]


def assemble(curve: Curve) -> NystromSystem:
    """Assemble the dense ``2J x 2J`` second-kind Nyström matrix."""
    J = curve.J
    if J < 16 or J % 2:
        raise GeometryError(f"need an even node count J >= 16, got {J}")
    d = curve.x[:, None, :] - curve.x[None, :, :]
    r2 = np.sum(d * d, axis=2)
    off = ~np.eye(J, dtype=bool)
    if np.any(r2[off] == 0.0):
        raise GeometryError("repeated boundary nodes; cannot assemble")
    np.fill_diagonal(r2, 1.0)
    dn = np.sum(d * curve.normal[None], axis=2)
    coef = -(2.0 / np.pi) * dn / (r2 * r2)
    np.fill_diagonal(coef, 0.0)
    blocks = coef[..., None, None] * d[..., :, None] * d[..., None, :]
    idx = np.arange(J)
    blocks[idx, idx] = (curve.kappa / np.pi)[:, None, None] * (
        curve.tangent[:, :, None] * curve.tangent[:, None, :]
    )
    blocks *= curve.w[None, :, None, None]
    mat = blocks.transpose(0, 2, 1, 3).reshape(2 * J, 2 * J) + np.eye(2 * J)
    n = curve.normal.reshape(-1)
    wn = (curve.normal * curve.w[:, None]).reshape(-1)
    completed = mat + np.outer(n, wn) / float(wn @ n)
    return NystromSystem(matrix=mat, curve=curve, completed=completed)


def weighted_inner(curve: Curve, u: np.ndarray, v: np.ndarray) -> float:
    """Trapezoid inner product ``sum_j u_j . v_j dy_j``."""
    return float(np.sum(np.sum(np.asarray(u) * np.asarray(v), axis=1) * curve.w))


def net_flux(curve: Curve, h: np.ndarray) -> float:
    return weighted_inner(curve, h, curve.normal)


def project_zero_flux(curve: Curve, h: np.ndarray) -> np.ndarray:
    """Subtract the normal component carrying net flux."""
    n = curve.normal
    return h - (net_flux(curve, h) / weighted_inner(curve, n, n)) * n


def check_compatible(curve: Curve, h: np.ndarray, tol: float = COMPAT_TOL) -> np.ndarray:
    """Project nearly flux-free data onto the zero-flux subspace, reject the rest.

    The test is relative: ``|<h, n>| <= tol * |h|_W |n|_W``.
    """
    h = np.asarray(h, dtype=float)
    flux = net_flux(curve, h)
    scale = np.sqrt(weighted_inner(curve, h, h) * weighted_inner(curve, curve.normal, curve.normal))
    if abs(flux) > tol * max(scale, np.finfo(float).tiny):
        raise CompatibilityError(flux)
    return project_zero_flux(curve, h)


def gmres_solve(A: np.ndarray, b: np.ndarray, tol: float = 1e-10, maxiter: int = MAX_ITER):
    """Restart-free unpreconditioned GMRES.  Returns ``(x, iterations)``."""
    if not np.any(b):
        return np.zeros_like(b), 0
    count = [0]

    def cb(_):
        count[0] += 1

    restart = min(maxiter, A.shape[0])
    x, info = gmres(
        A, b, rtol=tol, atol=0.0, restart=restart, maxiter=1, callback=cb, callback_type="pr_norm"
    )
    res = np.linalg.norm(A @ x - b) / np.linalg.norm(b)
    if info != 0 and res > tol * 10:
        raise SolverError(f"GMRES stalled after {count[0]} iterations, residual {res:.2e}")
    return x, count[0]


def solve_dirichlet(sys: NystromSystem, h: np.ndarray, tol: float = 1e-10, return_iterations: bool = False):
    """Density ``w`` (J, 2) with ``(I + D_PV) w = h`` for flux-free data ``h``."""
    curve = sys.curve
    h = np.asarray(h, dtype=float)
    if h.shape != (curve.J, 2):
        raise ValueError(f"boundary data has shape {h.shape}, expected {(curve.J, 2)}")
    h = check_compatible(curve, h)
    x, its = gmres_solve(sys.completed, h.reshape(-1), tol)
    dens = x.reshape(curve.J, 2)
    return (dens, its) if return_iterations else dens


def _guard(curve: Curve, points: np.ndarray, strict: bool):
    limit = 5.0 * (2.0 * np.pi / curve.J) * float(np.max(curve.speed))
    dist = min_distance_to_boundary(curve, points)
    bad = dist < limit
    if np.any(bad):
        msg = (
            f"{int(bad.sum())} evaluation point(s) within {float(dist.min()):.3e} of the boundary "
            f"(resolution limit {limit:.3e})"
        )
        if strict:
            raise GeometryError(msg)
        warnings.warn(msg, NearBoundaryWarning, stacklevel=3)


def eval_interior(curve: Curve, density: np.ndarray, points, strict: bool = False, guard: bool = True) -> np.ndarray:
    """Velocity of the double layer potential at interior ``points`` (P, 2)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if guard:
        _guard(curve, pts, strict)
    K = _kernel_blocks(pts, curve)
    return np.einsum("pjik,jk,j->pi", K, density, curve.w)


def eval_interior_derivative(
    curve: Curve, density: np.ndarray, points, direction, strict: bool = False, guard: bool = True
) -> np.ndarray:
    """Directional derivative ``(a . grad) u`` of the potential at ``points``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if guard:
        _guard(curve, pts, strict)
    a = np.asarray(direction, dtype=float)
    d = pts[:, None, :] - curve.x[None, :, :]
    r2 = np.sum(d * d, axis=2)
    dn = np.sum(d * curve.normal[None], axis=2)
    da = d @ a
    nw = curve.normal
    dw = np.einsum("pjk,jk->pj", d, density)
    aw = density @ a
    na = nw @ a
    # a_m d/dd_m of (d . n)(d . w) d_i / |d|^4
    coef = -(2.0 / np.pi) * curve.w[None, :]
    term = (
        (na[None, :] * dw + dn * aw[None, :])[..., None] * d
        + (dn * dw)[..., None] * a[None, None, :]
        - (4.0 * dn * dw * da / r2)[..., None] * d
    ) / (r2 * r2)[..., None]
    return np.sum(coef[..., None] * term, axis=1)


def line_average(curve: Curve, density: np.ndarray, segment, nq: int | None = None):
    """Forward-path functionals ``(<u . t>_l, <d_n u . t>_l)`` by Gauss-Legendre.

    The near-boundary guard is skipped: segment clearance is checked where
    segments are built, and the endpoints of a wall-spanning segment sit
    closer to the side walls than the generic guard allows.
    """
    pts, wq = segment.quadrature(nq)
    u = eval_interior(curve, density, pts, guard=False)
    du = eval_interior_derivative(curve, density, pts, segment.normal, guard=False)
    t = segment.tangent
    return float(wq @ (u @ t)), float(wq @ (du @ t))
