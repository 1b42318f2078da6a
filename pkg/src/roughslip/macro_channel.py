"""Macro Stokes problem on the periodic channel ``[0, L) x [y0, 1]`` with a Navier-slip wall.

The flow is written with a streamfunction, ``u = psi_y``, ``v = -psi_x``, so
the discrete velocity is divergence free by construction, and ``psi`` solves
the biharmonic equation.  It is discretized by collocation on a Fourier (x) x
Chebyshev-Gauss-Lobatto (y) tensor grid.  Boundary rows:

* wall ``y = y0``:  ``psi = 0`` (no penetration) and the Robin row
  ``psi_y - alpha(x) psi_yy = 0``, i.e. ``u + alpha (t . d_n u) t = 0`` with
  ``n = -e_y``, ``t = e_x``;
* top ``y = 1``:  ``psi = Q`` and ``psi_y = g(x)``.

The flux ``Q`` is an extra unknown closed by requiring a periodic pressure
(zero mean pressure gradient), i.e. the x-mean of ``psi_yyy`` vanishes.  A
slip that varies along the wall couples all Fourier modes; at 21 x 21 points
the coupled system is small enough to solve directly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from numpy.polynomial import chebyshev as C

from roughslip.errors import ConfigError, GeometryError, NumericalError

ALPHA_MIN = 1e-6


def cheb(N: int):
    """Chebyshev-Gauss-Lobatto points on [-1, 1] (descending) and the differentiation matrix."""
    if N == 0:
        return np.array([1.0]), np.zeros((1, 1))
    x = np.cos(np.pi * np.arange(N + 1) / N)
    c = np.hstack([2.0, np.ones(N - 1), 2.0]) * (-1.0) ** np.arange(N + 1)
    X = np.tile(x, (N + 1, 1)).T
    dX = X - X.T
    D = np.outer(c, 1.0 / c) / (dX + np.eye(N + 1))
    D = D - np.diag(D.sum(axis=1))
    return x, D


def fourier_diff(N: int, period: float, order: int = 1) -> np.ndarray:
    """Spectral differentiation matrix on ``N`` uniform points of one period."""
    k = np.fft.fftfreq(N, 1.0 / N) * (2 * np.pi / period)
    if N % 2 == 0 and order % 2 == 1:
        k[N // 2] = 0.0
    F = np.fft.fft(np.eye(N), axis=0)
    return np.real(np.fft.ifft(((1j * k) ** order)[:, None] * F, axis=0))


# ---------------------------------------------------------------------------
# slip functions


@dataclass(frozen=True)
class SlipFunction:
    """Trigonometric slip ``alpha(x)`` on one period, floored at ``alpha_min``."""

    coeffs: np.ndarray  # fft(alpha_n) / N
    period: float = 1.0
    alpha_min: float = ALPHA_MIN
    clamped: bool = False
    nodes: np.ndarray | None = None
    values: np.ndarray | None = None

    @property
    def N(self) -> int:
        return len(self.coeffs)

    def raw(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        N = self.N
        k = np.fft.fftfreq(N, 1.0 / N)
        c = np.array(self.coeffs, dtype=complex)
        if N % 2 == 0:
            # split the Nyquist term evenly so the interpolant is real
            kk = np.concatenate([k, [N // 2]])
            k = kk.copy()
            k[N // 2] = -N // 2
            c = np.concatenate([c, [c[N // 2]]])
            c[N // 2] *= 0.5
            c[-1] *= 0.5
        phase = np.exp(2j * np.pi * np.multiply.outer(x, k) / self.period)
        return np.real(phase @ c)

    def __call__(self, x) -> np.ndarray:
        return np.maximum(self.raw(x), self.alpha_min)

    @classmethod
    def constant(cls, value: float, period: float = 1.0, N: int = 1) -> "SlipFunction":
        c = np.zeros(N, dtype=complex)
        c[0] = value
        return cls(c, period)


def interpolate_slip(x_nodes, alpha_n, period: float = 1.0, alpha_min: float = ALPHA_MIN) -> SlipFunction:
    """Trigonometric interpolant through slip values at uniform nodes (via FFT).

    Values below ``alpha_min`` are raised to it first and ``clamped`` is set.
    """
    x_nodes = np.asarray(x_nodes, dtype=float)
    a = np.asarray(alpha_n, dtype=float)
    N = len(a)
    if N == 0 or x_nodes.shape != a.shape:
        raise ConfigError("need matching, nonempty node and value arrays")
    if not np.all(np.isfinite(a)):
        raise NumericalError("non-finite slip value")
    expected = x_nodes[0] + period * np.arange(N) / N
    if N > 1 and not np.allclose(x_nodes, expected, atol=1e-12 * period):
        raise ConfigError("slip interpolation needs uniform nodes on the period")
    clamped = bool(np.any(a < alpha_min))
    if clamped:
        warnings.warn(f"{int(np.sum(a < alpha_min))} slip value(s) below {alpha_min:g} clamped", RuntimeWarning, stacklevel=2)
        a = np.maximum(a, alpha_min)
    c = np.fft.fft(a) / N
    if x_nodes[0] != 0.0:
        k = np.fft.fftfreq(N, 1.0 / N)
        c = c * np.exp(-2j * np.pi * k * x_nodes[0] / period)
        if N % 2 == 0:
            # the split Nyquist term must stay real after the shift
            c[N // 2] = np.real(c[N // 2] * np.exp(2j * np.pi * (N // 2) * x_nodes[0] / period)) * np.exp(
                -2j * np.pi * (N // 2) * x_nodes[0] / period
            )
    return SlipFunction(c, period, alpha_min, clamped, x_nodes.copy(), a.copy())


# ---------------------------------------------------------------------------
# macro field


@dataclass(frozen=True)
class ChannelGeometry:
    period: float = 1.0
    y0: float = 0.0
    top: float = 1.0

    def __post_init__(self):
        if not self.top > self.y0:
            raise GeometryError("channel needs top > y0")
        if not self.period > 0:
            raise GeometryError("period must be positive")


def top_data(x) -> np.ndarray:
    """Default driving velocity on the top wall, ``(2 + sin(2 pi x), 0)``."""
    x = np.asarray(x, dtype=float)
    return np.stack([2.0 + np.sin(2 * np.pi * x), np.zeros_like(x)], axis=-1)


@dataclass
class SpectralField:
    """Streamfunction on the tensor grid plus its spectral coefficients."""

    geom: ChannelGeometry
    x: np.ndarray  # (Nx,)
    y: np.ndarray  # (Ny,) descending from top to y0
    psi: np.ndarray  # (Nx, Ny)
    Q: float
    alpha: np.ndarray  # slip at the grid x-points (0 for no-slip)
    coef: np.ndarray = field(repr=False, default=None)  # (Nx fourier, Ny cheb)

    def __post_init__(self):
        Nx, Ny = self.psi.shape
        s = self._s(self.y)
        V = C.chebvander(s, Ny - 1)
        cheb_coef = np.linalg.solve(V, self.psi.T)  # (Ny, Nx)
        self.coef = np.fft.fft(cheb_coef, axis=1).T / Nx  # (Nx, Ny)

    @property
    def Nx(self) -> int:
        return self.psi.shape[0]

    @property
    def Ny(self) -> int:
        return self.psi.shape[1]

    def _s(self, y):
        g = self.geom
        return (2.0 * np.asarray(y) - (g.top + g.y0)) / (g.top - g.y0)

    def _eval(self, x, y, dx: int = 0, dy: int = 0):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        y = np.atleast_1d(np.asarray(y, dtype=float))
        g = self.geom
        k = np.fft.fftfreq(self.Nx, 1.0 / self.Nx) * (2 * np.pi / g.period)
        if self.Nx % 2 == 0:
            k[self.Nx // 2] = 0.0
        cy = self.coef.T  # (Ny cheb, Nx)
        if dy:
            cy = C.chebder(cy, dy, scl=2.0 / (g.top - g.y0), axis=0)
        vals = C.chebval(self._s(y), cy, tensor=True)  # (Nx, P)
        fac = (1j * k) ** dx
        phase = np.exp(1j * np.outer(x, k))  # (P, Nx)
        return np.real(np.sum(phase * (fac[:, None] * vals).T, axis=1))

    def psi_at(self, x, y):
        return self._eval(x, y)

    def velocity(self, points) -> np.ndarray:
        p = np.atleast_2d(points)
        u = self._eval(p[:, 0], p[:, 1], 0, 1)
        v = -self._eval(p[:, 0], p[:, 1], 1, 0)
        return np.stack([u, v], axis=1)

    def gradient(self, points) -> np.ndarray:
        """``G[p, i, j] = d u_i / d x_j``."""
        p = np.atleast_2d(points)
        ux = self._eval(p[:, 0], p[:, 1], 1, 1)
        uy = self._eval(p[:, 0], p[:, 1], 0, 2)
        vx = -self._eval(p[:, 0], p[:, 1], 2, 0)
        vy = -ux
        return np.stack([np.stack([ux, uy], -1), np.stack([vx, vy], -1)], axis=1)

    def grid_velocity(self):
        Dx = fourier_diff(self.Nx, self.geom.period)
        Dy = _cheb_y(self.Ny, self.geom)[1]
        return self.psi @ Dy.T, -(Dx @ self.psi)

    def pressure(self, points) -> np.ndarray:
        """Pressure (zero mean) from ``p_x = Laplacian u`` mode by mode."""
        p = np.atleast_2d(points)
        g = self.geom
        k = np.fft.fftfreq(self.Nx, 1.0 / self.Nx) * (2 * np.pi / g.period)
        scl = 2.0 / (g.top - g.y0)
        cy = self.coef.T
        # Laplacian u = psi_xxy + psi_yyy
        lap_u = (1j * k) ** 2 * C.chebder(cy, 1, scl=scl, axis=0) + C.chebder(cy, 3, scl=scl, axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            pc = np.where(k != 0, lap_u / (1j * k), 0.0)
        vals = C.chebval(self._s(p[:, 1]), pc, tensor=True)
        phase = np.exp(1j * np.outer(p[:, 0], k))
        return np.real(np.sum(phase * vals.T, axis=1))

    def divergence(self) -> float:
        ugrid, vgrid = self.grid_velocity()
        Dx = fourier_diff(self.Nx, self.geom.period)
        Dy = _cheb_y(self.Ny, self.geom)[1]
        return float(np.max(np.abs(Dx @ ugrid + vgrid @ Dy.T)))

    def robin_residual(self) -> float:
        """Max over wall points of ``|u + alpha (t . d_n u) t|``."""
        Dy = _cheb_y(self.Ny, self.geom)[1]
        u = self.psi @ Dy.T
        uy = u @ Dy.T
        r_t = u[:, -1] - self.alpha * uy[:, -1]
        Dx = fourier_diff(self.Nx, self.geom.period)
        r_n = -(Dx @ self.psi)[:, -1]
        return float(np.max(np.hypot(r_t, r_n)))

    def h1_seminorm_diff(self, other: "SpectralField", n: int = 64) -> float:
        """``|grad(u - u')|_{L2}`` by Gauss-Legendre in y and trapezoid in x."""
        g = self.geom
        xs = np.arange(n) * g.period / n
        s, ws = np.polynomial.legendre.leggauss(n)
        ys = g.y0 + 0.5 * (s + 1) * (g.top - g.y0)
        wy = 0.5 * ws * (g.top - g.y0)
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=1)
        d = self.gradient(pts) - other.gradient(pts)
        wgt = (g.period / n) * np.broadcast_to(wy[None, :], X.shape).ravel()
        return float(np.sqrt(np.sum(wgt * np.sum(d * d, axis=(1, 2)))))


def _cheb_y(Ny: int, geom: ChannelGeometry):
    s, D = cheb(Ny - 1)
    half = 0.5 * (geom.top - geom.y0)
    y = geom.y0 + half * (s + 1.0)
    return y, D / half


def solve_macro(
    slip,
    geom: ChannelGeometry = ChannelGeometry(),
    g=top_data,
    Nx: int = 21,
    Ny: int = 21,
    no_slip: bool = False,
) -> SpectralField:
    """Solve the slip-channel Stokes problem.

    ``slip`` is a :class:`SlipFunction`, a constant, or a callable of x;
    ``no_slip=True`` imposes ``u = 0`` at the wall instead (naive model).
    """
    if Ny < 6:
        raise ConfigError("need at least 6 Chebyshev points")
    x = geom.period * np.arange(Nx) / Nx
    y, Dy = _cheb_y(Ny, geom)
    if no_slip:
        alpha = np.zeros(Nx)
    elif callable(slip):
        alpha = np.asarray(slip(x), dtype=float) * np.ones(Nx)
    else:
        alpha = float(slip) * np.ones(Nx)
    if not no_slip and np.any(alpha <= 0):
        raise NumericalError("slip must be positive on the collocation grid (use no_slip for alpha = 0)")
    gx = np.asarray(g(x))[:, 0]
    Dx = fourier_diff(Nx, geom.period)
    Dxx = fourier_diff(Nx, geom.period, 2)
    Dxxxx = fourier_diff(Nx, geom.period, 4)
    Dyy = Dy @ Dy
    Dyyyy = Dyy @ Dyy
    Ix, Iy = np.eye(Nx), np.eye(Ny)
    n = Nx * Ny
    A = np.zeros((n + 1, n + 1))
    b = np.zeros(n + 1)
    A[:n, :n] = np.kron(Dxxxx, Iy) + 2 * np.kron(Dxx, Dyy) + np.kron(Ix, Dyyyy)
    top, wall = 0, Ny - 1
    for i in range(Nx):
        r = i * Ny
        # psi = Q on the top
        A[r + top] = 0.0
        A[r + top, r + top] = 1.0
        A[r + top, n] = -1.0
        # psi_y = g on the top
        A[r + 1] = 0.0
        A[r + 1, r : r + Ny] = Dy[top]
        b[r + 1] = gx[i]
        # psi = 0 on the wall
        A[r + wall] = 0.0
        A[r + wall, r + wall] = 1.0
        # Robin (or no-slip) on the wall
        A[r + wall - 1] = 0.0
        A[r + wall - 1, r : r + Ny] = Dy[wall] - alpha[i] * Dyy[wall]
    # periodic pressure: x-mean of psi_yyy vanishes (at the wall row)
    Dyyy = Dyy @ Dy
    for i in range(Nx):
        A[n, i * Ny : (i + 1) * Ny] = Dyyy[wall] / Nx
    # equilibrate rows (the biharmonic rows are O(N^8) larger) and refine once
    scale = 1.0 / np.max(np.abs(A), axis=1)
    A *= scale[:, None]
    b *= scale
    lu = scipy.linalg.lu_factor(A)
    sol = scipy.linalg.lu_solve(lu, b)
    sol += scipy.linalg.lu_solve(lu, b - A @ sol)
    psi = sol[:n].reshape(Nx, Ny)
    return SpectralField(geom, x, y, psi, float(sol[n]), alpha)


def couette_slip_profile(y, U0: float, y0: float, c: float, top: float = 1.0):
    """Analytic slip-Couette velocity ``U0 (y - y0 + c) / (top - y0 + c)``."""
    return U0 * (np.asarray(y) - y0 + c) / (top - y0 + c)


def analytic_channel(alpha: float, geom: ChannelGeometry, modes: dict, points) -> np.ndarray:
    """Exact Stokes velocity for constant slip and top data ``sum_m a_m e^{i k_m x}``.

    ``modes`` maps integer m to complex amplitude of ``u(x, top)``; the data
    is ``Re sum a_m e^{2 pi i m x / L}`` (pass conjugate pairs implicitly by
    using m >= 0 and real parts).  Used as an independent oracle.
    """
    p = np.atleast_2d(points)
    H = geom.top - geom.y0
    out = np.zeros((p.shape[0], 2))
    for m, amp in modes.items():
        if m == 0:
            c = alpha
            out[:, 0] += np.real(amp) * (p[:, 1] - geom.y0 + c) / (H + c)
            continue
        k = 2 * np.pi * m / geom.period
        # psi(y) = (A + B s) cosh(k s) + (C + D s) sinh(k s), s = y - y0
        def basis(s):
            ch, sh = np.cosh(k * s), np.sinh(k * s)
            f = np.array([ch, s * ch, sh, s * sh])
            df = np.array([k * sh, ch + k * s * sh, k * ch, sh + k * s * ch])
            ddf = np.array([k * k * ch, 2 * k * sh + k * k * s * ch, k * k * sh, 2 * k * ch + k * k * s * sh])
            return f, df, ddf

        f0, d0, dd0 = basis(0.0)
        fH, dH, _ = basis(H)
        M = np.array([f0, d0 - alpha * dd0, fH, dH])
        rhs = np.array([0, 0, 0, amp], dtype=complex)
        coef = np.linalg.solve(M.astype(complex), rhs)
        s = p[:, 1] - geom.y0
        f, df, _ = basis(s)
        ph = np.exp(1j * k * p[:, 0])
        out[:, 0] += np.real(ph * (coef @ df))
        out[:, 1] += np.real(-1j * k * ph * (coef @ f))
    return out


# ---------------------------------------------------------------------------
# reconstruction: macro field -> micro boundary data

POLY_DEGREE = 5


def _gap_parameters(box, y_line: float):
    """Parameter values where the box sides cross the macro boundary."""
    r = box.corner_radius
    out = []
    for name, y_start, y_end in (
        ("right", float(box.wall(np.array([box.width]))[0]) + r, box.height - r),
        ("left", box.height - r, float(box.wall(np.array([0.0]))[0]) + r),
    ):
        lo, hi = sorted((y_start, y_end))
        if not lo < y_line < hi:
            raise GeometryError(f"macro boundary at {y_line:.4g} does not cross the straight {name} side")
        t0, t1 = box.piece_interval(name)
        out.append(t0 + (y_line - y_start) / (y_end - y_start) * (t1 - t0))
    return out


def _dirichlet_energy(deg: int) -> np.ndarray:
    """``M[k, l] = int_0^1 (k s^(k-1)) (l s^(l-1)) ds``."""
    k = np.arange(deg + 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        M = np.outer(k, k) / (k[:, None] + k[None, :] - 1.0)
    M[0, :] = 0.0
    M[:, 0] = 0.0
    return M


def reconstruct_bc(field, box, curve, placement, y_line: float | None = None) -> np.ndarray:
    """Micro boundary data (J, 2) from a macro velocity field.

    ``field`` exposes ``velocity(points)`` and ``gradient(points)`` in channel
    coordinates; ``box``/``curve`` live in box units and ``placement`` maps
    them to the channel.  The data equals the macro trace where the box lies
    above the macro boundary (``y_line``, box units; defaults to the macro
    field's ``y0``), vanishes on the rough wall, and on the two side gaps is a
    quintic in the curve parameter that matches value and derivative at both
    ends, minimizes ``|dp/dt|^2``, and makes the net flux exactly zero.
    """
    if y_line is None:
        y_line = float(placement.to_box(np.array([0.0, field.geom.y0]))[1])
    t = curve.t
    t_w0, t_w1 = box.piece_interval("wall")
    t_r, t_l = _gap_parameters(box, y_line)
    if not t_w1 < t_r < t_l < 2 * np.pi:
        raise GeometryError("overlapping reconstruction markers")
    h = np.zeros((curve.J, 2))
    macro = (t >= t_r) & (t <= t_l)
    if np.any(macro):
        h[macro] = field.velocity(placement.to_channel(curve.x[macro]))
    ends = box.evaluate(np.array([t_r, t_l]))
    pe, dpe = ends[0], ends[1]
    ue = field.velocity(placement.to_channel(pe))
    ge = field.gradient(placement.to_channel(pe))
    due = np.einsum("pij,pj->pi", ge, placement.scale * dpe)  # d u / dt at the ends

    deg = POLY_DEGREE
    nc = deg + 1
    # gaps: (start, end, value/derivative at s=0, at s=1, node mask)
    gaps = [
        (t_w1, t_r, (np.zeros(2), np.zeros(2)), (ue[0], due[0]), (t > t_w1) & (t < t_r)),
        (t_l, 2 * np.pi, (ue[1], due[1]), (np.zeros(2), np.zeros(2)), t > t_l),
    ]
    nvar = len(gaps) * 2 * nc
    M = np.zeros((nvar, nvar))
    rows, rhs = [], []
    flux_row = np.zeros(nvar)
    M1 = _dirichlet_energy(deg)
    pw = np.arange(nc)
    for g, (ta, tb, start, end, mask) in enumerate(gaps):
        dt = tb - ta
        s_nodes = (t[mask] - ta) / dt
        V = s_nodes[:, None] ** pw[None, :]
        for comp in range(2):
            off = (2 * g + comp) * nc
            M[off : off + nc, off : off + nc] = M1 / dt
            for s_end, (val, der) in ((0.0, start), (1.0, end)):
                r = np.zeros(nvar)
                r[off : off + nc] = s_end**pw
                rows.append(r)
                rhs.append(val[comp])
                r = np.zeros(nvar)
                r[off + 1 : off + nc] = pw[1:] * s_end ** (pw[1:] - 1)
                rows.append(r)
                rhs.append(der[comp] * dt)
            flux_row[off : off + nc] = (curve.w[mask] * curve.normal[mask, comp]) @ V
    fixed_flux = float(np.sum(curve.w * np.sum(h * curve.normal, axis=1)))
    rows.append(flux_row)
    rhs.append(-fixed_flux)
    E = np.array(rows)
    d = np.array(rhs)
    m = E.shape[0]
    K = np.block([[2 * M, E.T], [E, np.zeros((m, m))]])
    try:
        sol = np.linalg.solve(K, np.concatenate([np.zeros(nvar), d]))
    except np.linalg.LinAlgError as exc:
        raise GeometryError("gap fit constraints are infeasible") from exc
    c = sol[:nvar]
    for g, (ta, tb, _, _, mask) in enumerate(gaps):
        s_nodes = (t[mask] - ta) / (tb - ta)
        V = s_nodes[:, None] ** pw[None, :]
        for comp in range(2):
            off = (2 * g + comp) * nc
            h[mask, comp] = V @ c[off : off + nc]
    return h


class LinearShear:
    """Macro field ``u = (U (y - y0 + c) / (H + c), 0)`` usable by :func:`reconstruct_bc`."""

    def __init__(self, geom: ChannelGeometry, U: float = 1.0, c: float = 0.0):
        self.geom, self.U, self.c = geom, U, c
        self.rate = U / (geom.top - geom.y0 + c)

    def velocity(self, points):
        p = np.atleast_2d(points)
        return np.stack([self.rate * (p[:, 1] - self.geom.y0 + self.c), np.zeros(len(p))], axis=1)

    def gradient(self, points):
        p = np.atleast_2d(points)
        G = np.zeros((len(p), 2, 2))
        G[:, 0, 1] = self.rate
        return G
