"""Riesz representors of the two slip functionals on a micro boundary.

For boundary data ``h`` and the interior Stokes solution ``u_h`` the two
functionals are

    l1(h) = int_l u_h . t ds,        l2(h) = int_l (n_l . grad) u_h . t ds,

and the slip amount is ``alpha = -l1(h) / l2(h)``.  With the discrete
weighted inner product ``<u, v>_W = sum_j u_j . v_j w_j`` both functionals
are represented as ``l_k(h) = <r_k, h>_W``.  The representors come from the
intermediate fields ``rt_k`` (the line kernels integrated in closed form)
followed by one solve with the adjoint of the Nyström operator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from roughslip.errors import DegenerateFlowError, GeometryError
from roughslip.geometry import Curve, LineSegment, min_distance_to_boundary
from roughslip.stokes_bie import (
    NystromSystem,
    assemble,
    gmres_solve,
    line_average,
    project_zero_flux,
    solve_dirichlet,
    weighted_inner,
)


@dataclass(frozen=True)
class RieszPair:
    """Representors ``r1, r2`` and intermediate fields ``rt1, rt2``, all (J, 2)."""

    r1: np.ndarray
    r2: np.ndarray
    rt1: np.ndarray
    rt2: np.ndarray
    curve: Curve
    segment: LineSegment

    def functionals(self, h: np.ndarray) -> tuple[float, float]:
        return weighted_inner(self.curve, self.r1, h), weighted_inner(self.curve, self.r2, h)


def _segment_frame(curve: Curve, seg: LineSegment):
    t = seg.tangent
    nl = seg.normal
    rel = curve.x - seg.a[None, :]
    s0 = rel @ t  # position of the node's foot point along the segment
    q = -(rel @ nl)  # offset of the segment line from the node along n_l
    nt = curve.normal @ t
    nn = curve.normal @ nl
    return t, nl, s0, q, nt, nn


def _check_clearance(curve: Curve, seg: LineSegment, min_gap: float | None):
    pts = np.stack([seg.a, seg.b])
    gap = float(np.min(min_distance_to_boundary(curve, pts)))
    if min_gap is None:
        min_gap = 2.0 * curve.spacing
    if gap < min_gap:
        raise GeometryError(f"segment endpoint lies {gap:.3e} from the boundary (need >= {min_gap:.3e})")


def intermediate_representors(curve: Curve, seg: LineSegment, min_gap: float | None = None):
    """Closed-form ``(rt1, rt2)`` at the curve nodes.

    In the frame of the segment, with ``sigma`` the coordinate along ``t`` and
    ``q`` the offset along ``n_l`` measured from the node, the line integrals
    reduce to moments of ``sigma^k / (sigma^2 + q^2)^2`` that are elementary.
    ``rt2`` is the ``q``-derivative of ``rt1``.
    """
    _check_clearance(curve, seg, min_gap)
    t, nl, s0, q, nt, nn = _segment_frame(curve, seg)
    sa = -s0
    sb = seg.length - s0
    ra = sa * sa + q * q
    rb = sb * sb + q * q
    if np.any(ra == 0) or np.any(rb == 0):
        raise GeometryError("segment endpoint coincides with a boundary node")
    # change of the polar angle of (sigma, q) from a to b; equals minus the
    # change of atan(sigma/q) and stays continuous through q = 0
    dangle = np.arctan2(q * (sa - sb), sa * sb + q * q)

    def F(s, r2):
        ft = nt * (0.5 * np.log(r2) + 0.5 * q * q / r2) - nn * 0.5 * q * s / r2
        fn = -nt * 0.5 * q * s / r2 - nn * 0.5 * q * q / r2
        return ft, fn

    fta, fna = F(sa, ra)
    ftb, fnb = F(sb, rb)
    c1t = ftb - fta - 0.5 * nn * dangle
    c1n = fnb - fna - 0.5 * nt * dangle

    def G(s, r2):
        r4 = r2 * r2
        cross = -s / r2 + q * q * s / r4
        gt = nt * (2.0 * q / r2 - q**3 / r4) + nn * cross
        gn = nt * cross + nn * (-q / r2 + q**3 / r4)
        return gt, gn

    gta, gna = G(sa, ra)
    gtb, gnb = G(sb, rb)
    c2t = gtb - gta
    c2n = gnb - gna
    k = -2.0 / np.pi
    rt1 = k * (c1t[:, None] * t[None, :] + c1n[:, None] * nl[None, :])
    rt2 = k * (c2t[:, None] * t[None, :] + c2n[:, None] * nl[None, :])
    return rt1, rt2


def intermediate_representors_quadrature(curve: Curve, seg: LineSegment, n: int = 200, panels: int = 50):
    """Composite Gauss-Legendre evaluation of the adjoint line kernels (oracle)."""
    s, ws = np.polynomial.legendre.leggauss(n)
    edges = np.linspace(0.0, 1.0, panels + 1)
    h = np.diff(edges)
    u = (edges[:-1, None] + 0.5 * h[:, None] * (s[None, :] + 1.0)).ravel()
    wq = (0.5 * h[:, None] * ws[None, :]).ravel() * seg.length
    pts = seg.a[None, :] + u[:, None] * (seg.b - seg.a)[None, :]
    t, nl = seg.tangent, seg.normal
    rt1 = np.zeros((curve.J, 2))
    rt2 = np.zeros((curve.J, 2))
    for j in range(curve.J):
        d = pts - curve.x[j]
        r2 = np.sum(d * d, axis=1)
        dn = d @ curve.normal[j]
        dt = d @ t
        da = d @ nl
        base = -(2.0 / np.pi) / (r2 * r2)
        rt1[j] = (wq * base * dn * dt) @ d
        # derivative of (d.n)(d.t) d / |d|^4 along n_l
        term = (
            ((curve.normal[j] @ nl) * dt + dn * (t @ nl))[:, None] * d
            + (dn * dt)[:, None] * nl[None, :]
            - (4.0 * dn * dt * da / r2)[:, None] * d
        )
        rt2[j] = (wq * base) @ term
    return rt1, rt2


def solve_adjoint(sys: NystromSystem, rt: np.ndarray, tol: float = 1e-10, return_iterations: bool = False):
    """Solve ``A* r = rt`` with ``A*`` the ``<., .>_W`` adjoint of the completed operator.

    The result is projected onto the zero-flux subspace; the normal
    component is invisible to compatible data.
    """
    curve = sys.curve
    rt = np.asarray(rt, dtype=float)
    wv = np.repeat(curve.w, 2)
    adj = sys.completed.T * wv[None, :] / wv[:, None]
    x, its = gmres_solve(adj, rt.reshape(-1), tol)
    r = x.reshape(curve.J, 2)
    n = curve.normal
    r = r - (weighted_inner(curve, r, n) / weighted_inner(curve, n, n)) * n
    return (r, its) if return_iterations else r


def riesz_pair(curve: Curve, seg: LineSegment, sys: NystromSystem | None = None, tol: float = 1e-10,
               min_gap: float | None = None) -> RieszPair:
    sys = assemble(curve) if sys is None else sys
    rt1, rt2 = intermediate_representors(curve, seg, min_gap)
    r1 = solve_adjoint(sys, rt1, tol)
    r2 = solve_adjoint(sys, rt2, tol)
    return RieszPair(r1=r1, r2=r2, rt1=rt1, rt2=rt2, curve=curve, segment=seg)


def slip_from_functionals(num: float, den: float, scale: float) -> float:
    if abs(den) < 1e-12 * scale or den == 0.0:
        raise DegenerateFlowError(f"slip denominator {den:.3e} vanishes relative to {scale:.3e}")
    return -num / den


def slip_amount(pair: RieszPair, h: np.ndarray) -> float:
    """``alpha = -<h, r1>_W / <h, r2>_W``."""
    h = np.asarray(h, dtype=float)
    c = pair.curve
    num, den = pair.functionals(h)
    scale = np.sqrt(weighted_inner(c, pair.r2, pair.r2) * weighted_inner(c, h, h))
    return slip_from_functionals(num, den, scale)


def direct_slip(sys: NystromSystem, seg: LineSegment, h: np.ndarray, nq: int = 64) -> float:
    """Slip from a forward solve and Gauss-Legendre line averages (oracle path)."""
    dens = solve_dirichlet(sys, h)
    a, b = line_average(sys.curve, dens, seg, nq)
    return slip_from_functionals(a, b, 0.0)


def _rel_l2(curve: Curve, pred: np.ndarray, ref: np.ndarray) -> float:
    return float(np.sqrt(weighted_inner(curve, pred - ref, pred - ref) / weighted_inner(curve, ref, ref)))


def micro_error(pred, ref) -> float:
    """Max over domains of ``|r1 - r1*| / |r1*| + |r2 - r2*| / |r2*|`` in the W-norm.

    Both arguments are sequences of :class:`RieszPair` or of
    ``(curve, r1, r2)`` triples on matching curves.
    """
    worst = 0.0
    for p, q in zip(pred, ref, strict=True):
        if isinstance(p, RieszPair):
            p = (p.curve, p.r1, p.r2)
        if isinstance(q, RieszPair):
            q = (q.curve, q.r1, q.r2)
        curve = q[0]
        e = _rel_l2(curve, p[1], q[1]) + _rel_l2(curve, p[2], q[2])
        worst = max(worst, e)
    return worst



def alignment_toy(gamma1: float, gamma2: float, aspect: float, U: float = 1.0, J: int = 2048,
                  corner_radius: float | None = None) -> tuple[float, float]:
    """Normalized line means ``(<u . t>/U, <d_y u . t>/U)`` for the flat-wall toy box.

    The box is ``[0, aspect * gamma2] x [-gamma1, gamma2]`` with the wall at
    ``y = -gamma1`` and the evaluation line at ``y = 0``, spanning the middle
    half of the width.  The boundary carries the shear profile that vanishes
    on the wall and equals ``U`` on the top, which is what a periodic cell sees;
    a closed box driven by the lid alone would develop a return flow.  The
    means tend to ``gamma1 / gamma2`` and ``1 / gamma2`` once
    ``gamma1 << gamma2``.
    """
    from roughslip.geometry import box_with_wall

    W = aspect * gamma2
    H = gamma1 + gamma2
    r = 0.1 * min(W, H) if corner_radius is None else corner_radius
    zero = lambda x: np.zeros_like(np.asarray(x, dtype=float))  # noqa: E731
    box = box_with_wall(zero, zero, zero, W, H, r)
    curve = box.discretize(J).transformed(np.eye(2), (0.0, -gamma1))
    h = np.zeros((curve.J, 2))
    h[:, 0] = U * (curve.x[:, 1] + gamma1) / H
    h = project_zero_flux(curve, h)  # remove the quadrature error in the flux
    seg = LineSegment(np.array([0.25 * W, 0.0]), np.array([0.75 * W, 0.0]))
    dens = solve_dirichlet(assemble(curve), h)
    a, b = line_average(curve, dens, seg)
    # the segment normal points down, so d_n = -d_y
    return a / (seg.length * U), -b / (seg.length * U)
