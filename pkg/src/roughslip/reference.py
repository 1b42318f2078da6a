"""Fully resolved Stokes flow in the rough periodic channel (ground truth).

The domain ``{w(x) < y < top}`` is mapped to the unit strip by
``eta = (y - w(x)) / (top - w(x))``, and ``eta`` is further stretched towards
the wall through ``eta = g(zeta)`` with ``zeta`` uniform.  The flow is solved in
streamfunction-vorticity form,

    Laplacian psi + omega = 0,   Laplacian omega = 0,

with second-order centred differences on the mapped grid.  No-slip on the
wall is ``psi = psi_eta = 0``; on the top ``psi`` is constant and
``psi_y = g_1``.  Velocities ``u = psi_y, v = -psi_x`` are discretely
divergence free in the conservative mapped form.

The top data is split into Fourier modes ``exp(i k x)``.  When the wall is
periodic with a cell that divides the channel period, each mode is a Bloch
wave ``psi = exp(i k x) phi`` with ``phi`` cell-periodic, so only one cell has
to be resolved per mode.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from roughslip.errors import ConfigError, GeometryError
from roughslip.geometry import ChannelWall


@dataclass(frozen=True)
class MappedGrid:
    """``Nx`` periodic points per cell in x, ``Ny + 1`` stretched points in y."""

    wall: ChannelWall
    cell: float
    Nx: int
    Ny: int
    stretch: float = 2.0
    top: float = 1.0
    xi: np.ndarray = field(init=False, repr=False)
    zeta: np.ndarray = field(init=False, repr=False)
    eta: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.Nx < 4 or self.Ny < 4:
            raise ConfigError("grid too coarse")
        xi = self.cell * np.arange(self.Nx) / self.Nx
        zeta = np.linspace(0.0, 1.0, self.Ny + 1)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "zeta", zeta)
        object.__setattr__(self, "eta", self.g(zeta)[0])
        if np.any(self.h <= 0):
            raise GeometryError("mapping degenerates: wall reaches the top")

    # stretching eta = g(zeta), clustered at the wall
    def g(self, z):
        b = self.stretch
        z = np.asarray(z, dtype=float)
        if b == 0:
            return z, np.ones_like(z), np.zeros_like(z)
        u = b * (1.0 - z)
        tb = np.tanh(b)
        sech2 = 1.0 / np.cosh(u) ** 2
        return 1.0 - np.tanh(u) / tb, b * sech2 / tb, 2 * b * b * sech2 * np.tanh(u) / tb

    def g_inverse(self, eta):
        b = self.stretch
        eta = np.asarray(eta, dtype=float)
        if b == 0:
            return eta
        return 1.0 - np.arctanh(np.clip((1.0 - eta) * np.tanh(b), -1 + 1e-16, 1 - 1e-16)) / b

    @property
    def wall_values(self):
        return self.wall(self.xi)

    @property
    def h(self) -> np.ndarray:
        return self.top - self.wall_values[0]

    @property
    def shape(self):
        return self.Nx, self.Ny + 1

    def metrics(self):
        """``(eta_x, eta_xx, eta_y)`` on the grid, each (Nx, Ny + 1)."""
        w, wx, wxx = self.wall_values
        h = (self.top - w)[:, None]
        e = self.eta[None, :] - 1.0
        eta_x = wx[:, None] * e / h
        eta_xx = e * (wxx[:, None] / h + 2 * wx[:, None] ** 2 / h**2)
        eta_y = np.broadcast_to(1.0 / h, eta_x.shape)
        return eta_x, eta_xx, eta_y

    def jacobian(self) -> np.ndarray:
        """``dy/deta`` times ``deta/dzeta``; positive on a valid grid."""
        return self.h[:, None] * self.g(self.zeta)[1][None, :]


def _periodic_diff(n: int, dx: float):
    e = np.ones(n)
    D1 = sp.diags([-e[1:], e[1:]], [-1, 1], shape=(n, n), format="lil")
    D1[0, n - 1] = -1.0
    D1[n - 1, 0] = 1.0
    D2 = sp.diags([e[1:], -2 * e, e[1:]], [-1, 0, 1], shape=(n, n), format="lil")
    D2[0, n - 1] = 1.0
    D2[n - 1, 0] = 1.0
    return D1.tocsr() / (2 * dx), D2.tocsr() / dx**2


def _wall_normal_diff(m: int, dz: float):
    """Centred first/second differences; first-derivative end rows one-sided, second order."""
    D1 = sp.lil_matrix((m, m))
    D2 = sp.lil_matrix((m, m))
    for j in range(1, m - 1):
        D1[j, j - 1], D1[j, j + 1] = -0.5, 0.5
        D2[j, j - 1], D2[j, j], D2[j, j + 1] = 1.0, -2.0, 1.0
    D1[0, 0:3] = [-1.5, 2.0, -0.5]
    D1[m - 1, m - 3 : m] = [0.5, -2.0, 1.5]
    return D1.tocsr() / dz, D2.tocsr() / dz**2


@dataclass
class _Operators:
    A: sp.csr_matrix  # (d_xi + i k), cell periodic
    Deta: sp.csr_matrix
    lap: sp.csr_matrix
    eta_x: np.ndarray
    h: np.ndarray  # (N,)


def _operators(grid: MappedGrid, k: float) -> _Operators:
    Nx, M = grid.shape
    dxi = grid.cell / Nx
    dz = 1.0 / grid.Ny
    Dx1, Dx2 = _periodic_diff(Nx, dxi)
    Dz1, Dz2 = _wall_normal_diff(M, dz)
    Ix, Iz = sp.identity(Nx, format="csr"), sp.identity(M, format="csr")
    _, g1, g2 = grid.g(grid.zeta)
    eta_x, eta_xx, eta_y = grid.metrics()
    G1 = np.broadcast_to(g1[None, :], eta_x.shape)
    G2 = np.broadcast_to(g2[None, :], eta_x.shape)
    Z1 = sp.kron(Ix, Dz1, format="csr")
    Z2 = sp.kron(Ix, Dz2, format="csr")
    X1 = sp.kron(Dx1, Iz, format="csr")
    X2 = sp.kron(Dx2, Iz, format="csr")
    XZ = sp.kron(Dx1, Dz1, format="csr")
    I = sp.identity(Nx * M, format="csr")
    diag = lambda a: sp.diags(np.ascontiguousarray(a).ravel())  # noqa: E731
    gsq = eta_x**2 + eta_y**2
    lap = (
        X2
        + 2j * k * X1
        - k * k * I
        + diag(2 * eta_x / G1) @ (XZ + 1j * k * Z1)
        + diag(gsq / G1**2) @ Z2
        + diag(-gsq * G2 / G1**3 + eta_xx / G1) @ Z1
    )
    A = X1 + 1j * k * I
    Deta = diag(1.0 / G1) @ Z1
    h = np.repeat(grid.h, M)
    return _Operators(A.tocsr(), Deta.tocsr(), lap.tocsr(), eta_x.ravel(), h)


@dataclass
class BlochMode:
    k: float
    weight: float  # 1 for the mean mode, 2 for a conjugate pair
    phi: np.ndarray  # (Nx, M) complex
    omega: np.ndarray
    Q: complex = 0.0


def solve_mode(grid: MappedGrid, k: float, top_u: complex, pressure_gradient: float = 0.0) -> BlochMode:
    """One Bloch mode ``psi = exp(i k x) phi`` with ``u(x, top) = top_u exp(i k x)``."""
    Nx, M = grid.shape
    N = Nx * M
    op = _operators(grid, k)
    mean_mode = k == 0.0
    n = 2 * N + (1 if mean_mode else 0)
    Lap = op.lap.tolil()
    I = sp.identity(N, format="lil")
    Zero = sp.lil_matrix((N, N))
    top_rows = np.arange(Nx) * M + (M - 1)
    wall_rows = np.arange(Nx) * M
    bnd = np.concatenate([wall_rows, top_rows])
    # psi rows: Laplacian psi + omega = 0 ; omega rows: Laplacian omega = 0
    Apsi = sp.hstack([Lap, I]).tolil()
    Aom = sp.hstack([Zero, Lap]).tolil()
    Z1 = op.Deta.tolil()
    rhs = np.zeros(n, dtype=complex)
    for r in bnd:
        Apsi.rows[r], Apsi.data[r] = [], []
        Aom.rows[r], Aom.data[r] = [], []
    for i, r in enumerate(wall_rows):
        Apsi[r, r] = 1.0
        row = Z1.getrow(r)
        for c, v in zip(row.indices, row.data):
            Aom[r, c] = v
    for i, r in enumerate(top_rows):
        Apsi[r, r] = 1.0
        row = Z1.getrow(r)
        for c, v in zip(row.indices, row.data):
            Aom[r, c] = v
        rhs[N + r] = grid.h[i] * top_u
    blocks = [Apsi.tocsr(), Aom.tocsr()]
    if mean_mode:
        # psi = Q on the top; zero mean of p_x = -omega_y along the top
        col = sp.lil_matrix((2 * N, 1))
        for r in top_rows:
            col[r, 0] = -1.0
        last = sp.lil_matrix((1, 2 * N))
        for i, r in enumerate(top_rows):
            row = Z1.getrow(r)
            for c, v in zip(row.indices, row.data):
                last[0, N + c] += -v / (grid.h[i] * Nx)
        rhs[-1] = pressure_gradient
        A = sp.vstack([sp.hstack([sp.vstack(blocks), col]), sp.hstack([last, sp.csr_matrix((1, 1))])]).tocsc()
    else:
        A = sp.vstack(blocks).tocsc()
    sol = spsolve(sp.csc_matrix(A, dtype=complex), rhs)
    phi = sol[:N].reshape(Nx, M)
    om = sol[N : 2 * N].reshape(Nx, M)
    return BlochMode(k, 1.0 if mean_mode else 2.0, phi, om, sol[-1] if mean_mode else 0.0)


@dataclass
class ReferenceSolution:
    grid: MappedGrid
    modes: list
    period: float

    def _mode_velocity(self, mode: BlochMode):
        op = _operators(self.grid, mode.k)
        phi = mode.phi.ravel()
        pe = op.Deta @ phi
        u = pe / op.h
        v = -(op.A @ phi + op.eta_x * pe)
        return u.reshape(self.grid.shape), v.reshape(self.grid.shape)

    def divergence(self) -> float:
        """Max of the conservative mapped divergence ``(d_xi (h u) + d_eta(h U^eta)) / h``."""
        worst = 0.0
        for mode in self.modes:
            op = _operators(self.grid, mode.k)
            phi = mode.phi.ravel()
            flux_x = op.Deta @ phi  # h u
            flux_eta = -(op.A @ phi)  # h (u eta_x + v eta_y)
            div = (op.A @ flux_x + op.Deta @ flux_eta) / op.h
            interior = np.ones(self.grid.shape, dtype=bool)
            interior[:, [0, -1]] = False
            worst = max(worst, float(np.max(np.abs(div[interior.ravel()]))))
        return worst

    def velocity(self, points) -> np.ndarray:
        """Bilinear sampling of the velocity at channel points (P, 2)."""
        p = np.atleast_2d(np.asarray(points, dtype=float))
        grid = self.grid
        x = p[:, 0]
        w = grid.wall(x)[0]
        eta = (p[:, 1] - w) / (grid.top - w)
        if np.any(eta < -1e-12) or np.any(eta > 1 + 1e-12):
            raise GeometryError("sample point outside the fluid domain")
        z = grid.g_inverse(np.clip(eta, 0.0, 1.0)) * grid.Ny
        j = np.clip(np.floor(z).astype(int), 0, grid.Ny - 1)
        fz = z - j
        s = np.mod(x, grid.cell) / grid.cell * grid.Nx
        i = np.floor(s).astype(int) % grid.Nx
        fx = s - np.floor(s)
        i1 = (i + 1) % grid.Nx
        out = np.zeros((len(p), 2))
        for mode in self.modes:
            for comp, F in enumerate(self._mode_velocity(mode)):
                val = (
                    (1 - fx) * (1 - fz) * F[i, j]
                    + fx * (1 - fz) * F[i1, j]
                    + (1 - fx) * fz * F[i, j + 1]
                    + fx * fz * F[i1, j + 1]
                )
                out[:, comp] += mode.weight * np.real(np.exp(1j * mode.k * x) * val)
        return out

    def grid_velocity(self):
        """Velocity on the grid of the first cell, summed over modes; (u, v) each (Nx, M)."""
        x = self.grid.xi[:, None]
        U = np.zeros(self.grid.shape)
        V = np.zeros(self.grid.shape)
        for mode in self.modes:
            u, v = self._mode_velocity(mode)
            U += mode.weight * np.real(np.exp(1j * mode.k * x) * u)
            V += mode.weight * np.real(np.exp(1j * mode.k * x) * v)
        return U, V


def top_modes(g, period: float, samples: int = 64, tol: float = 1e-13):
    """Fourier modes ``(m, amplitude)`` (m >= 0) of the tangential top data."""
    x = period * np.arange(samples) / samples
    vals = np.asarray(g(x), dtype=float)
    if np.max(np.abs(vals[:, 1])) > tol * max(1.0, np.max(np.abs(vals))):
        raise ConfigError("reference solver supports tangential top data only")
    c = np.fft.rfft(vals[:, 0]) / samples
    keep = np.abs(c) > tol * max(np.max(np.abs(c)), 1e-300)
    return [(m, c[m]) for m in range(len(c)) if keep[m] and m < samples // 2]


def solve_full(
    wall: ChannelWall,
    g,
    cell: float,
    Nx: int = 64,
    Ny: int = 256,
    stretch: float = 2.0,
    top: float = 1.0,
    pressure_gradient: float = 0.0,
) -> ReferenceSolution:
    """Resolved solution driven by the top data ``g`` (tangential, period ``wall.period``).

    ``cell`` is the x-period of the wall geometry used for the Bloch cells;
    it must divide the channel period.
    """
    period = wall.period
    ratio = period / cell
    if abs(ratio - round(ratio)) > 1e-9:
        raise ConfigError("cell must divide the channel period")
    grid = MappedGrid(wall, cell, Nx, Ny, stretch, top)
    modes = []
    for m, amp in top_modes(g, period):
        k = 2 * np.pi * m / period
        modes.append(solve_mode(grid, k, amp, pressure_gradient if m == 0 else 0.0))
    return ReferenceSolution(grid, modes, period)


def lowpass(values: np.ndarray, period: float, cutoff: float, axis: int = -1) -> np.ndarray:
    """Sharp Fourier cutoff: keep only modes with wavelength strictly above ``cutoff``."""
    values = np.asarray(values, dtype=float)
    n = values.shape[axis]
    c = np.fft.rfft(values, axis=axis)
    m = np.arange(c.shape[axis])
    keep = m * cutoff < period * (1 - 1e-12)
    shape = [1] * values.ndim
    shape[axis] = -1
    return np.fft.irfft(c * keep.reshape(shape), n=n, axis=axis)


def level_set_points(y0: float, delta: float, period: float = 1.0, n: int = 400) -> np.ndarray:
    """Points of ``M_delta = {y = y0 + delta}`` (flat macro boundary), uniform in x."""
    x = period * np.arange(n) / n
    return np.stack([x, np.full(n, y0 + delta)], axis=1)
