"""Micro-domain boundaries: rough walls, rounded boxes and their discretization.

A boundary is described by a closed map ``phi: [0, 2pi) -> R^2`` traversed
counter-clockwise.  :func:`discretize_parametric` samples it at ``J`` uniform
parameter nodes and returns a :class:`Curve` holding everything the boundary
integral code needs (normals, curvature, trapezoid weights).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.interpolate import CubicSpline

from roughslip.errors import ConfigError, GeometryError

TWO_PI = 2.0 * np.pi


@dataclass(frozen=True)
class Curve:
    """A closed boundary sampled at ``J`` uniform parameter nodes."""

    t: np.ndarray
    x: np.ndarray
    dx: np.ndarray
    ddx: np.ndarray
    normal: np.ndarray
    tangent: np.ndarray
    kappa: np.ndarray
    w: np.ndarray

    @property
    def J(self) -> int:
        return self.t.shape[0]

    @property
    def speed(self) -> np.ndarray:
        return np.linalg.norm(self.dx, axis=1)

    @property
    def spacing(self) -> float:
        """Largest node spacing measured as parameter step times speed."""
        return float(np.max(self.w))

    @property
    def arclength(self) -> float:
        return float(np.sum(self.w))

    def transformed(self, rotation: np.ndarray, shift=(0.0, 0.0)) -> "Curve":
        """Rigidly move the curve: ``x -> R x + shift``."""
        R = np.asarray(rotation, dtype=float)
        return Curve(
            t=self.t,
            x=self.x @ R.T + np.asarray(shift, dtype=float),
            dx=self.dx @ R.T,
            ddx=self.ddx @ R.T,
            normal=self.normal @ R.T,
            tangent=self.tangent @ R.T,
            kappa=self.kappa,
            w=self.w,
        )


@dataclass(frozen=True)
class LineSegment:
    """Straight evaluation segment from ``a`` to ``b``.

    The normal is the tangent rotated clockwise, so a left-to-right segment
    has its normal pointing down, towards the wall.
    """

    a: np.ndarray
    b: np.ndarray
    nq: int = 64

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if not np.linalg.norm(b - a) > 0:
            raise GeometryError("line segment has zero length")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.b - self.a))

    @property
    def tangent(self) -> np.ndarray:
        return (self.b - self.a) / self.length

    @property
    def normal(self) -> np.ndarray:
        t = self.tangent
        return np.array([t[1], -t[0]])

    def quadrature(self, nq: int | None = None):
        """Gauss-Legendre nodes (nq, 2) and weights (nq,) on the segment."""
        nq = self.nq if nq is None else nq
        s, ws = np.polynomial.legendre.leggauss(nq)
        s = 0.5 * (s + 1.0)
        pts = self.a[None, :] + s[:, None] * (self.b - self.a)[None, :]
        return pts, 0.5 * ws * self.length

    def transformed(self, rotation: np.ndarray, shift=(0.0, 0.0)) -> "LineSegment":
        R = np.asarray(rotation, dtype=float)
        s = np.asarray(shift, dtype=float)
        return LineSegment(R @ self.a + s, R @ self.b + s, self.nq)


@dataclass(frozen=True)
class GpConfig:
    """Stationary Gaussian process with exponential kernel on [0, 1]."""

    variance: float = 0.04**2
    corr_len: float = 0.2
    n_points: int = 16
    curvature_bound: float = 60.0
    seed: int = 0

    def __post_init__(self):
        if self.variance < 0:
            raise ConfigError(f"variance must be >= 0, got {self.variance}")
        if not self.corr_len > 0:
            raise ConfigError(f"corr_len must be > 0, got {self.corr_len}")
        if self.n_points < 4:
            raise ConfigError("need at least 4 wall samples")


@dataclass(frozen=True)
class MicroDomainSpec:
    """Box ``[0, width] x [wall(x), height]`` with an evaluation line.

    ``line_offset`` is measured from the wall mean (y = 0).  The evaluation
    segment is inset by ``segment_margin`` from each side.
    """

    width: float = 1.0
    height: float = 1.0
    line_offset: float = 0.25
    corner_radius: float = 0.1
    gp: GpConfig = field(default_factory=GpConfig)
    segment_margin: float = 0.1

    def __post_init__(self):
        if not 0 < self.line_offset < self.height:
            raise ConfigError("need 0 < line_offset < height")
        if not self.corner_radius > 0:
            raise ConfigError("corner_radius must be positive")
        if not 0 <= self.segment_margin < 0.5 * self.width:
            raise ConfigError("segment_margin must lie in [0, width/2)")


def sample_rough_wall(cfg: GpConfig) -> np.ndarray:
    """Sample ``cfg.n_points`` values of the wall process on a uniform grid of [0, 1].

    Covariance ``variance * exp(-|dx| / corr_len)``, drawn by Cholesky
    factorization with a 1e-12 diagonal jitter.
    """
    n = cfg.n_points
    if cfg.variance == 0:
        return np.zeros(n)
    xs = np.linspace(0.0, 1.0, n)
    cov = cfg.variance * np.exp(-np.abs(xs[:, None] - xs[None, :]) / cfg.corr_len)
    L = np.linalg.cholesky(cov + 1e-12 * np.eye(n))
    rng = np.random.default_rng(cfg.seed)
    return L @ rng.standard_normal(n)


def spectral_derivative(values: np.ndarray, order: int = 1) -> np.ndarray:
    """Derivative in t of samples at t_j = 2 pi j / J along axis 0."""
    J = values.shape[0]
    k = np.fft.fftfreq(J, 1.0 / J)
    if J % 2 == 0 and order % 2 == 1:
        k[J // 2] = 0.0
    mult = (1j * k) ** order
    shape = (J,) + (1,) * (values.ndim - 1)
    return np.real(np.fft.ifft(mult.reshape(shape) * np.fft.fft(values, axis=0), axis=0))


def _segments_intersect(p: np.ndarray) -> bool:
    """True if the closed polyline through ``p`` has two crossing edges."""
    q = np.roll(p, -1, axis=0)
    J = p.shape[0]

    def orient(a, b, c):
        return (b[..., 0] - a[..., 0]) * (c[..., 1] - a[..., 1]) - (b[..., 1] - a[..., 1]) * (
            c[..., 0] - a[..., 0]
        )

    i, j = np.triu_indices(J, k=2)
    keep = ~((i == 0) & (j == J - 1))
    i, j = i[keep], j[keep]
    a, b, c, d = p[i], q[i], p[j], q[j]
    d1 = orient(c, d, a)
    d2 = orient(c, d, b)
    d3 = orient(a, b, c)
    d4 = orient(a, b, d)
    return bool(np.any((d1 * d2 < 0) & (d3 * d4 < 0)))


def discretize_parametric(
    phi: Callable[[np.ndarray], np.ndarray],
    J: int,
    dphi: Callable[[np.ndarray], np.ndarray] | None = None,
    ddphi: Callable[[np.ndarray], np.ndarray] | None = None,
    check: bool = True,
) -> Curve:
    """Sample a closed counter-clockwise map at ``t_j = 2 pi j / J``.

    Derivatives come from ``dphi``/``ddphi`` when given, otherwise from
    spectral differentiation of the samples.
    """
    if J < 3:
        raise GeometryError("need at least 3 nodes")
    t = TWO_PI * np.arange(J) / J
    x = np.asarray(phi(t), dtype=float)
    dx = np.asarray(dphi(t), dtype=float) if dphi is not None else spectral_derivative(x, 1)
    ddx = np.asarray(ddphi(t), dtype=float) if ddphi is not None else spectral_derivative(x, 2)
    speed = np.linalg.norm(dx, axis=1)
    if np.any(speed <= 0):
        raise GeometryError("parameterization has vanishing speed")
    tangent = dx / speed[:, None]
    normal = np.stack([tangent[:, 1], -tangent[:, 0]], axis=1)
    kappa = (dx[:, 0] * ddx[:, 1] - dx[:, 1] * ddx[:, 0]) / speed**3
    w = (TWO_PI / J) * speed
    if check:
        if np.any(np.linalg.norm(np.diff(np.vstack([x, x[:1]]), axis=0), axis=1) == 0):
            raise GeometryError("repeated boundary nodes")
        if _segments_intersect(x):
            raise GeometryError("discretized boundary self-intersects")
    return Curve(t=t, x=x, dx=dx, ddx=ddx, normal=normal, tangent=tangent, kappa=kappa, w=w)


def _quintic_matrix() -> np.ndarray:
    # rows: p(0), p'(0), p''(0), p(1), p'(1), p''(1) for p(s) = sum c_k s^k
    M = np.zeros((6, 6))
    M[0, 0] = 1.0
    M[1, 1] = 1.0
    M[2, 2] = 2.0
    for k in range(6):
        M[3, k] = 1.0
        M[4, k] = k
        M[5, k] = k * (k - 1)
    return M


_QUINTIC_INV = np.linalg.inv(_quintic_matrix())


class _Piece:
    """One smooth piece of a boundary in the length-like parameter tau."""

    def __init__(self, length, fn):
        self.length = float(length)
        self.fn = fn  # tau (local, in [0, length]) -> (phi, phi', phi'')


def _line_piece(p0, p1):
    p0 = np.asarray(p0, dtype=float)
    p1 = np.asarray(p1, dtype=float)
    length = np.linalg.norm(p1 - p0)
    if not length > 0:
        raise GeometryError("box side collapsed; reduce corner_radius or enlarge box")
    d = (p1 - p0) / length

    def fn(tau):
        pos = p0[None, :] + tau[:, None] * d[None, :]
        return pos, np.broadcast_to(d, pos.shape).copy(), np.zeros_like(pos)

    return _Piece(length, fn)


def _quintic_piece(length, start, end):
    """Quintic Hermite patch matching value, first and second tau-derivatives."""
    h = float(length)
    rhs = np.stack(
        [start[0], h * start[1], h * h * start[2], end[0], h * end[1], h * h * end[2]]
    )
    coef = _QUINTIC_INV @ rhs  # (6, 2)
    k = np.arange(6)

    def fn(tau):
        s = np.clip(tau / h, 0.0, 1.0)
        pw = s[:, None] ** k[None, :]
        d1 = np.zeros_like(pw)
        d2 = np.zeros_like(pw)
        d1[:, 1:] = k[1:] * s[:, None] ** (k[1:] - 1)
        d2[:, 2:] = k[2:] * (k[2:] - 1) * s[:, None] ** (k[2:] - 2)
        return pw @ coef, (d1 @ coef) / h, (d2 @ coef) / (h * h)

    return _Piece(h, fn)


class RoughBox:
    """Analytic C^2 parameterization of a rounded box with a rough bottom.

    The bottom is the graph of ``wall`` on ``[0, width]``, the top is the line
    ``y = height``; the four corners are replaced by quintic patches that
    match position, first and second derivatives at both joints.
    """

    def __init__(self, wall, dwall, ddwall, width: float, height: float, corner_radius: float,
                 wall_by_arclength: bool = False):
        W, H, r = float(width), float(height), float(corner_radius)
        if not 0 < 2 * r < W:
            raise GeometryError("corner_radius too large for the box width")
        self.width, self.height, self.corner_radius = W, H, r
        self.wall, self.dwall, self.ddwall = wall, dwall, ddwall
        f = lambda x: float(wall(np.array([x]))[0])  # noqa: E731
        span = W - 2 * r
        wall_len = span
        if wall_by_arclength:
            # give the wall a share of the parameter proportional to its arc
            # length; x stays linear in the parameter
            s, ws = np.polynomial.legendre.leggauss(200)
            xs = r + 0.5 * span * (s + 1.0)
            wall_len = float(0.5 * span * ws @ np.sqrt(1.0 + dwall(xs) ** 2))
        c = span / wall_len

        def wall_fn(tau):
            xs = r + c * tau
            fx = wall(xs)
            pos = np.stack([xs, fx], axis=1)
            d1 = c * np.stack([np.ones_like(xs), dwall(xs)], axis=1)
            d2 = c * c * np.stack([np.zeros_like(xs), ddwall(xs)], axis=1)
            return pos, d1, d2

        arc = 0.5 * np.pi * r
        wall_piece = _Piece(wall_len, wall_fn)
        right = _line_piece((W, f(W) + r), (W, H - r))
        top = _line_piece((W - r, H), (r, H))
        left = _line_piece((0.0, H - r), (0.0, f(0.0) + r))

        def end_state(piece):
            p, d1, d2 = piece.fn(np.array([piece.length]))
            return p[0], d1[0], d2[0]

        def start_state(piece):
            p, d1, d2 = piece.fn(np.array([0.0]))
            return p[0], d1[0], d2[0]

        def corner(a, b):
            length = arc
            if wall_by_arclength:
                # a steep wall can leave a corner much longer than r
                length = max(arc, 1.1 * float(np.linalg.norm(b[0] - a[0])))
            return _quintic_piece(length, a, b)

        c_br = corner(end_state(wall_piece), start_state(right))
        c_tr = corner(end_state(right), start_state(top))
        c_tl = corner(end_state(top), start_state(left))
        c_bl = corner(end_state(left), start_state(wall_piece))
        self.pieces = [wall_piece, c_br, right, c_tr, top, c_tl, left, c_bl]
        self.names = ["wall", "corner_br", "right", "corner_tr", "top", "corner_tl", "left", "corner_bl"]
        self.breaks = np.concatenate([[0.0], np.cumsum([p.length for p in self.pieces])])
        self.total = float(self.breaks[-1])

    def piece_interval(self, name: str) -> tuple[float, float]:
        """Parameter interval ``[t0, t1]`` (in [0, 2 pi]) of a named piece."""
        i = self.names.index(name)
        s = TWO_PI / self.total
        return float(self.breaks[i] * s), float(self.breaks[i + 1] * s)

    def evaluate(self, t):
        """Return ``phi(t), phi'(t), phi''(t)`` as (n, 2) arrays."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        tau = np.mod(t, TWO_PI) * self.total / TWO_PI
        idx = np.clip(np.searchsorted(self.breaks, tau, side="right") - 1, 0, len(self.pieces) - 1)
        pos = np.empty((t.size, 2))
        d1 = np.empty_like(pos)
        d2 = np.empty_like(pos)
        for i, piece in enumerate(self.pieces):
            m = idx == i
            if np.any(m):
                p, q, r = piece.fn(tau[m] - self.breaks[i])
                pos[m], d1[m], d2[m] = p, q, r
        scale = self.total / TWO_PI
        return pos, d1 * scale, d2 * scale**2

    def phi(self, t):
        return self.evaluate(t)[0]

    def dphi(self, t):
        return self.evaluate(t)[1]

    def ddphi(self, t):
        return self.evaluate(t)[2]

    def curvature(self, t) -> np.ndarray:
        _, d1, d2 = self.evaluate(t)
        return (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]) / np.linalg.norm(d1, axis=1) ** 3

    def max_curvature(self, names=None, samples: int = 400) -> float:
        names = self.names if names is None else names
        out = 0.0
        for name in names:
            t0, t1 = self.piece_interval(name)
            ts = np.linspace(t0, t1, samples)
            out = max(out, float(np.max(np.abs(self.curvature(ts)))))
        return out

    def joint_jumps(self) -> float:
        """Largest jump in phi, phi' or phi'' across the piece joints."""
        scale = self.total / TWO_PI
        worst = 0.0
        n = len(self.pieces)
        for i in range(n):
            left, right = self.pieces[i], self.pieces[(i + 1) % n]
            pl = left.fn(np.array([left.length]))
            pr = right.fn(np.array([0.0]))
            for k, (a, b) in enumerate(zip(pl, pr)):
                worst = max(worst, float(np.max(np.abs(a - b))) * scale**k)
        return worst

    def discretize(self, J: int, check: bool = True) -> Curve:
        return discretize_parametric(self.phi, J, self.dphi, self.ddphi, check=check)


def wall_from_samples(samples: np.ndarray, width: float):
    """Clamped cubic spline through samples placed uniformly on [0, width]."""
    xs = np.linspace(0.0, width, len(samples))
    spline = CubicSpline(xs, np.asarray(samples, dtype=float), bc_type="clamped")
    return spline, spline.derivative(1), spline.derivative(2)


def micro_box(spec: MicroDomainSpec, wall_samples: np.ndarray) -> RoughBox:
    """Assemble the rounded rough box for ``spec`` and validate its curvature."""
    wall_samples = np.asarray(wall_samples, dtype=float)
    amp = float(np.max(np.abs(wall_samples))) if wall_samples.size else 0.0
    f, df, ddf = wall_from_samples(wall_samples, spec.width)
    xs = np.linspace(0.0, spec.width, 2001)
    amp = max(amp, float(np.max(np.abs(f(xs)))))
    if amp >= spec.line_offset:
        raise GeometryError(f"wall amplitude {amp:.4g} reaches the evaluation line at {spec.line_offset:.4g}")
    return box_with_wall(f, df, ddf, spec.width, spec.height, spec.corner_radius, spec.gp.curvature_bound)


def box_with_wall(f, df, ddf, width, height, corner_radius, curvature_bound=np.inf) -> RoughBox:
    box = RoughBox(f, df, ddf, width, height, corner_radius)
    kmax = box.max_curvature()
    if kmax > curvature_bound:
        raise GeometryError(f"boundary curvature {kmax:.4g} exceeds bound {curvature_bound:.4g}")
    return box


def evaluation_segment(spec: MicroDomainSpec, nq: int = 64) -> LineSegment:
    m = spec.segment_margin
    return LineSegment(np.array([m, spec.line_offset]), np.array([spec.width - m, spec.line_offset]), nq)


def build_micro_domain(spec: MicroDomainSpec, wall_samples: np.ndarray, J: int = 128):
    """Discretized micro boundary and its evaluation segment."""
    box = micro_box(spec, wall_samples)
    return box.discretize(J), evaluation_segment(spec)


def circle(J: int, radius: float = 1.0, center=(0.0, 0.0)) -> Curve:
    c = np.asarray(center, dtype=float)
    return discretize_parametric(
        lambda t: c + radius * np.stack([np.cos(t), np.sin(t)], axis=1),
        J,
        lambda t: radius * np.stack([-np.sin(t), np.cos(t)], axis=1),
        lambda t: -radius * np.stack([np.cos(t), np.sin(t)], axis=1),
    )


def ellipse(J: int, a: float = 2.0, b: float = 1.0) -> Curve:
    return discretize_parametric(
        lambda t: np.stack([a * np.cos(t), b * np.sin(t)], axis=1),
        J,
        lambda t: np.stack([-a * np.sin(t), b * np.cos(t)], axis=1),
        lambda t: np.stack([-a * np.cos(t), -b * np.sin(t)], axis=1),
    )


def min_distance_to_boundary(curve: Curve, points: np.ndarray) -> np.ndarray:
    """Distance from each point to the boundary polyline."""
    p = np.atleast_2d(points)
    a = curve.x
    b = np.roll(curve.x, -1, axis=0)
    ab = b - a
    ap = p[:, None, :] - a[None, :, :]
    s = np.clip(np.sum(ap * ab[None], axis=2) / np.sum(ab * ab, axis=1)[None], 0.0, 1.0)
    proj = a[None] + s[..., None] * ab[None]
    return np.min(np.linalg.norm(p[:, None, :] - proj, axis=2), axis=1)


def inside(curve: Curve, points: np.ndarray) -> np.ndarray:
    """Even-odd point-in-polygon test against the node polyline."""
    p = np.atleast_2d(points)
    x0, y0 = curve.x[:, 0], curve.x[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    px, py = p[:, 0:1], p[:, 1:2]
    cond = (y0[None] > py) != (y1[None] > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x0[None] + (py - y0[None]) * (x1 - x0)[None] / (y1 - y0)[None]
    crossing = cond & (px < xint)
    return (np.sum(crossing, axis=1) % 2) == 1


# ---------------------------------------------------------------------------
# channel walls and the micro boxes placed on them


@dataclass(frozen=True)
class ChannelWall:
    """Graph ``y = f(x)`` of a rough channel wall, periodic with ``period``.

    ``f`` returns ``(f, f', f'')`` at an array of x.  ``mean`` and ``crest``
    are the average and the maximum height.
    """

    f: Callable
    mean: float
    crest: float
    period: float = 1.0

    def __call__(self, x):
        return self.f(np.asarray(x, dtype=float))


def sine_wall(eps: float, period: float = 1.0) -> ChannelWall:
    """``y = eps (2 - sin(2 pi x / eps))``."""
    k = TWO_PI / eps

    def f(x):
        s, c = np.sin(k * x), np.cos(k * x)
        return eps * (2.0 - s), -eps * k * c, eps * k * k * s

    return ChannelWall(f, 2.0 * eps, 3.0 * eps, period)


def flat_wall(level: float = 0.0, period: float = 1.0) -> ChannelWall:
    return ChannelWall(lambda x: (np.full_like(x, level), np.zeros_like(x), np.zeros_like(x)), level, level, period)


def fourier_wall(mean: float, coeffs, period: float = 1.0, samples: int = 4096) -> ChannelWall:
    """``y = mean + Re sum_k c_k exp(2 pi i k x / period)`` for k = 1, 2, ..."""
    c = np.asarray(coeffs, dtype=complex)
    k = TWO_PI * np.arange(1, len(c) + 1) / period

    def f(x):
        e = np.exp(1j * np.multiply.outer(x, k))
        return mean + np.real(e @ c), np.real(e @ (1j * k * c)), np.real(e @ (-k * k * c))

    xs = np.linspace(0.0, period, samples, endpoint=False)
    crest = float(np.max(f(xs)[0]))
    return ChannelWall(f, mean, crest, period)


def _side_taper(x, width: float):
    """C^2 window: 0 at both box sides, 1 at distance >= ``width`` inside."""
    x = np.asarray(x, dtype=float)
    if width <= 0:
        return np.ones_like(x), np.zeros_like(x), np.zeros_like(x)
    T, dT, ddT = np.ones_like(x), np.zeros_like(x), np.zeros_like(x)
    for u, sign in ((x / width, 1.0), ((1.0 - x) / width, -1.0)):
        m = u < 1.0
        v = np.clip(u[m], 0.0, 1.0)
        T[m] = v**3 * (10 - 15 * v + 6 * v * v)
        dT[m] = sign * 30 * v * v * (1 - v) ** 2 / width
        ddT[m] = 60 * v * (1 - v) * (1 - 2 * v) / width**2
    return T, dT, ddT


@dataclass(frozen=True)
class Placement:
    """Affine map from box units to channel coordinates: ``X = origin + scale * x``."""

    origin: np.ndarray
    scale: float

    def to_channel(self, pts) -> np.ndarray:
        return self.origin + self.scale * np.asarray(pts)

    def to_box(self, pts) -> np.ndarray:
        return (np.asarray(pts) - self.origin) / self.scale


def channel_box(
    wall: ChannelWall,
    center: float,
    eps: float,
    width: float = 2.0,
    height: float = 2.0,
    line_offset: float = 1.0,
    corner_radius: float = 0.1,
    segment_margin: float = 0.25,
    taper: float = 0.3,
    taper_to_crest: bool = True,
):
    """Micro box of width ``width * eps`` centred at ``center`` on a channel wall.

    The box is rescaled to unit width; its vertical origin is the wall mean.
    Within ``taper`` (box units) of each side the wall is blended smoothly
    to its crest height (or its mean) so the rounded corners stay gentle
    whatever the phase and the side gaps below the macro boundary are short.
    ``height`` and ``line_offset`` are measured in units of ``eps`` above the
    wall crest, so the evaluation line is the macro boundary y0 = crest +
    line_offset * eps.  Returns ``(RoughBox, LineSegment, Placement)``.
    """
    if not 0 < line_offset < height:
        raise ConfigError("need 0 < line_offset < height")
    s = width * eps
    origin = np.array([center - 0.5 * s, wall.mean])
    level = (wall.crest - wall.mean) / s if taper_to_crest else 0.0

    def f(x):
        w, dw, ddw = wall(origin[0] + s * x)
        T, dT, ddT = _side_taper(x, taper)
        g = (w - origin[1]) / s - level
        return level + g * T, dw * T + g * dT, s * ddw * T + 2 * dw * dT + g * ddT

    def fn(x):
        return f(np.asarray(x, dtype=float))[0]

    def dfn(x):
        return f(np.asarray(x, dtype=float))[1]

    def ddfn(x):
        return f(np.asarray(x, dtype=float))[2]

    top = (wall.crest + height * eps - wall.mean) / s
    y_line = (wall.crest + line_offset * eps - wall.mean) / s
    box = RoughBox(fn, dfn, ddfn, 1.0, top, corner_radius, wall_by_arclength=True)
    m = segment_margin
    seg = LineSegment(np.array([m, y_line]), np.array([1.0 - m, y_line]))
    return box, seg, Placement(origin, s)
