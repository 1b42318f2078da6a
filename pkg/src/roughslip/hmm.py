"""Fixed-point HMM coupling of the slip-channel macro model with micro boxes.

Each iteration solves the macro problem with the current slip function,
reconstructs boundary data on every micro box, turns the micro solutions
into local slip values and interpolates them into the next slip function.
Algorithm 1 solves the micro Stokes problems every iteration; Algorithm 2
precomputes the Riesz representors once so that a micro step reduces to two
inner products per site.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from roughslip.errors import ConfigError, DivergenceError, GeometryError, SolverError
from roughslip.geometry import ChannelWall, channel_box, flat_wall, fourier_wall, sine_wall
from roughslip.macro_channel import (
    ChannelGeometry,
    SlipFunction,
    interpolate_slip,
    reconstruct_bc,
    solve_macro,
    top_data,
)
from roughslip.riesz import RieszPair, intermediate_representors, riesz_pair, slip_from_functionals, slip_amount
from roughslip.stokes_bie import assemble, line_average, solve_dirichlet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class HmmConfig:
    """HMM run parameters.  Box sizes are in units of ``epsilon``.

    ``height`` and ``line_offset`` are measured above the wall crest; the
    macro boundary sits on the evaluation line.
    """

    epsilon: float = 0.04
    n_micro: int = 13
    width: float = 2.0
    height: float = 2.0
    line_offset: float = 1.0
    corner_radius: float = 0.1
    segment_margin: float = 0.25
    taper: float = 0.3
    backend: str = "bie"
    J: int = 256
    model: str | None = None
    tol: float = 1e-8
    max_iter: int = 30
    gmres_tol: float = 1e-12
    algorithm: int = 2
    Nx: int = 21
    Ny: int = 21
    period: float = 1.0
    wall: str = "sine"
    wall_seed: int = 0
    wall_modes: int = 0
    alpha0: float | None = None
    anderson: int = 5
    center_on_crest: bool = True

    def __post_init__(self):
        if not self.tol > 0:
            raise ConfigError("tol must be positive")
        if self.n_micro < 1:
            raise ConfigError("need at least one micro site")
        if self.backend not in ("bie", "fno"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.backend == "fno" and not self.model:
            raise ConfigError("fno backend needs a model path")
        if self.algorithm not in (1, 2):
            raise ConfigError("algorithm must be 1 or 2")
        if self.algorithm == 1 and self.backend != "bie":
            raise ConfigError("algorithm 1 needs the bie backend")
        if self.anderson < 0:
            raise ConfigError("anderson memory must be >= 0")
        if self.wall not in ("sine", "flat", "random", "modulated"):
            raise ConfigError(f"unknown wall {self.wall!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def y0(self) -> float:
        return make_wall(self).crest + self.line_offset * self.epsilon

    @property
    def geometry(self) -> ChannelGeometry:
        return ChannelGeometry(self.period, self.y0, 1.0)

    @property
    def sites(self) -> np.ndarray:
        return self.period * np.arange(self.n_micro) / self.n_micro


def random_wall_coeffs(eps: float, period: float, seed: int, modes: int = 0):
    """Random roughness at wavelengths around ``eps``, amplitude ~ ``eps / 2``.

    Fourier coefficients are drawn for wavenumbers within a factor 2 of
    ``period / eps``; ``modes`` (if positive) caps the band width.
    """
    rng = np.random.default_rng(seed)
    k0 = int(round(period / eps))
    lo, hi = max(1, k0 // 2), 2 * k0
    if modes > 0:
        hi = min(hi, lo + modes - 1)
    n = hi - lo + 1
    c = (rng.normal(size=n) + 1j * rng.normal(size=n)) / np.sqrt(2 * n)
    coeffs = np.zeros(hi, dtype=complex)
    coeffs[lo - 1 :] = c
    scale = 0.5 * eps / np.sqrt(0.5 * np.sum(np.abs(c) ** 2))
    return coeffs * scale * 0.5


def modulated_wall(eps: float, period: float, seed: int, modes: int = 0) -> ChannelWall:
    """Random roughness under a Lipschitz envelope ``0.4 + 1.2 |sin(pi x / period)|``.

    The envelope makes the effective slip vary on the macro scale (with a
    kink at ``x = 0``), while the random roughness adds site-to-site
    fluctuations of the local slip estimates.
    """
    r = fourier_wall(0.0, random_wall_coeffs(eps, period, seed, modes), period)
    q = np.pi / period

    def f(x):
        s, c = np.sin(q * x), np.cos(q * x)
        A = 0.4 + 1.2 * np.abs(s)
        dA = 1.2 * q * np.sign(s) * c
        ddA = -1.2 * q * q * np.abs(s)
        w, dw, ddw = r(x)
        return 2 * eps + A * w, dA * w + A * dw, ddA * w + 2 * dA * dw + A * ddw

    xs = np.linspace(0.0, period, 8192, endpoint=False)
    return ChannelWall(f, 2 * eps, float(np.max(f(xs)[0])), period)


def make_wall(cfg: HmmConfig) -> ChannelWall:
    eps = cfg.epsilon
    if cfg.wall == "sine":
        return sine_wall(eps, cfg.period)
    if cfg.wall == "flat":
        return flat_wall(2 * eps, cfg.period)
    if cfg.wall == "modulated":
        return modulated_wall(eps, cfg.period, cfg.wall_seed, cfg.wall_modes)
    return fourier_wall(2 * eps, random_wall_coeffs(eps, cfg.period, cfg.wall_seed, cfg.wall_modes), cfg.period)


@dataclass
class MicroSite:
    x: float
    box: object
    segment: object
    placement: object
    curve: object
    pair: RieszPair | None = None
    system: object = None

    @property
    def scale(self) -> float:
        return self.placement.scale


def crest_near(wall: ChannelWall, x: float, half_width: float, n: int = 401) -> float:
    """Location of the highest wall point in ``[x - half_width, x + half_width]``."""
    xs = x + np.linspace(-half_width, half_width, n)
    i = int(np.argmax(wall(xs)[0]))
    if 0 < i < n - 1:
        # refine with a Newton step on w'
        _, d1, d2 = wall(xs[i])
        if d2 < 0:
            step = -float(d1) / float(d2)
            if abs(step) < xs[1] - xs[0]:
                return float(xs[i] + step)
    return float(xs[i])


def build_sites(cfg: HmmConfig, J: int | None = None) -> list[MicroSite]:
    """Micro boxes for every slip node.

    With ``center_on_crest`` the box is shifted (by at most ``epsilon / 2``)
    to the nearest roughness crest, so that the box sides cut the wall near
    its top and every site sees the roughness at a comparable phase.  The
    slip value is still assigned to the node ``x_n``.
    """
    wall = make_wall(cfg)
    out = []
    for x in cfg.sites:
        xc = crest_near(wall, float(x), 0.5 * cfg.epsilon) if cfg.center_on_crest and cfg.wall != "flat" else float(x)
        box, seg, pl = channel_box(
            wall, xc, cfg.epsilon, cfg.width, cfg.height, cfg.line_offset,
            cfg.corner_radius, cfg.segment_margin, cfg.taper,
        )
        out.append(MicroSite(float(x), box, seg, pl, box.discretize(J or cfg.J)))
    return out


def _load_model(path):
    from roughslip.fno import load_model

    return load_model(path)


def precompute_representors(cfg: HmmConfig, sites=None, model=None) -> list[MicroSite]:
    """Fill in ``site.pair`` for every micro site with the configured backend.

    A failing site aborts the run: the slip interpolation needs every node.
    """
    sites = build_sites(cfg) if sites is None else sites
    if cfg.backend == "fno":
        from roughslip.fno import geo_fno_eval

        model = _load_model(cfg.model) if model is None else model
    for n, site in enumerate(sites):
        try:
            if cfg.backend == "bie":
                site.system = assemble(site.curve)
                site.pair = riesz_pair(site.curve, site.segment, site.system, cfg.gmres_tol)
            else:
                rt1, rt2 = intermediate_representors(site.curve, site.segment)
                r1, r2 = geo_fno_eval(model, site.curve, rt1, rt2)
                site.pair = RieszPair(r1, r2, rt1, rt2, site.curve, site.segment)
        except (GeometryError, SolverError) as exc:
            raise SolverError(f"micro site {n} at x = {site.x:.4f} failed: {exc}") from exc
    return sites


@dataclass
class HmmResult:
    field: object
    slips: list
    alphas: list
    iterations: int
    residuals: list
    timings: dict
    converged: bool
    config: HmmConfig | None = None

    @property
    def slip(self) -> SlipFunction:
        return self.slips[-1]

    def record(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "residuals": [float(r) for r in self.residuals],
            "alphas": [np.asarray(a).tolist() for a in self.alphas],
            "timings": dict(self.timings),
            "Q": float(self.field.Q),
        }


def _micro_slips(cfg: HmmConfig, sites, field) -> np.ndarray:
    out = np.empty(len(sites))
    for n, site in enumerate(sites):
        h = reconstruct_bc(field, site.box, site.curve, site.placement)
        if cfg.algorithm == 2:
            a = slip_amount(site.pair, h)
        else:
            if site.system is None:
                site.system = assemble(site.curve)
            dens = solve_dirichlet(site.system, h, cfg.gmres_tol)
            num, den = line_average(site.curve, dens, site.segment)
            a = slip_from_functionals(num, den, 0.0)
        out[n] = site.scale * a
    return out


def _anderson(X: list, F: list, x: np.ndarray, f: np.ndarray, m: int) -> np.ndarray:
    """Next iterate of Anderson mixing with memory ``m`` (plain Picard for ``m = 0``).

    ``X`` and ``F`` hold the previous iterates and residuals ``G(x) - x``; they
    are updated in place.
    """
    X.append(x.copy())
    F.append(f.copy())
    if m == 0 or len(F) == 1:
        return x + f
    del X[: -(m + 1)], F[: -(m + 1)]
    dF = np.diff(np.array(F), axis=0).T
    dX = np.diff(np.array(X), axis=0).T
    gamma = np.linalg.lstsq(dF, f, rcond=None)[0]
    return x + f - (dX + dF) @ gamma


def run_hmm(cfg: HmmConfig, sites=None, alpha0: float | None = None, g=top_data, model=None) -> HmmResult:
    """Iterate macro solve / reconstruction / micro slip / interpolation to a fixed point."""
    a0 = alpha0 if alpha0 is not None else (cfg.alpha0 if cfg.alpha0 is not None else cfg.epsilon)
    if not a0 > 0:
        raise ConfigError("initial slip must be positive")
    timings = {"precompute": 0.0, "micro": 0.0, "macro": 0.0}
    t0 = time.perf_counter()
    if sites is None:
        sites = build_sites(cfg)
    if cfg.algorithm == 2 and any(s.pair is None for s in sites):
        precompute_representors(cfg, sites, model)
    timings["precompute"] = time.perf_counter() - t0
    geom = cfg.geometry
    x_n = cfg.sites
    slip = interpolate_slip(x_n, np.full(len(x_n), a0), cfg.period)
    slips, alphas, residuals = [slip], [slip.values], []
    growth = 0
    converged = False
    field = None
    X, F = [], []  # Anderson history: iterates and fixed-point residuals
    for it in range(1, cfg.max_iter + 1):
        t = time.perf_counter()
        field = solve_macro(slip, geom, g, cfg.Nx, cfg.Ny)
        timings["macro"] += time.perf_counter() - t
        t = time.perf_counter()
        a = _micro_slips(cfg, sites, field)
        timings["micro"] += time.perf_counter() - t
        x_old = slip.values
        change = float(np.max(np.abs(a - x_old)) / np.max(np.abs(a)))
        residuals.append(change)
        log.info("hmm iteration %d: slip change %.3e", it, change)
        if change <= cfg.tol:
            slip = interpolate_slip(x_n, a, cfg.period)
            slips.append(slip)
            alphas.append(slip.values)
            converged = True
            break
        a_next = _anderson(X, F, x_old, a - x_old, cfg.anderson)
        slip = interpolate_slip(x_n, a_next, cfg.period)
        slips.append(slip)
        alphas.append(slip.values)
        growth = growth + 1 if len(residuals) > 1 and change > residuals[-2] else 0
        if growth >= 3:
            raise DivergenceError(f"slip change grew for 3 iterations (last {change:.3e})", residuals)
    t = time.perf_counter()
    field = solve_macro(slip, geom, g, cfg.Nx, cfg.Ny)
    timings["macro"] += time.perf_counter() - t
    return HmmResult(field, slips, alphas, len(residuals), residuals, timings, converged, cfg)


def naive_solution(cfg: HmmConfig, g=top_data):
    """No-slip macro solution on the smooth channel (the u_0 of the error family)."""
    return solve_macro(None, cfg.geometry, g, cfg.Nx, cfg.Ny, no_slip=True)


def interpolation_study(cfg: HmmConfig, Ns=(4, 8, 13, 26, 52), n_ref: int = 208, ref_modes: int = 6,
                        J_ref: int | None = None, n_eval: int = 2048) -> dict:
    """Sup error of the converged N-site slip function against a dense reference.

    The reference is the converged slip at ``n_ref`` sites, low-passed to
    Fourier modes ``|k| <= ref_modes`` so that it keeps the macro-scale
    slip variation and drops the site-to-site fluctuations.
    """
    ref = run_hmm(replace(cfg, n_micro=n_ref, J=J_ref or cfg.J))
    c = np.fft.rfft(ref.alphas[-1])
    c[ref_modes + 1 :] = 0.0
    smooth = interpolate_slip(ref.config.sites, np.fft.irfft(c, n_ref), cfg.period)
    xs = cfg.period * np.arange(n_eval) / n_eval
    target = smooth(xs)
    errors, iters = [], []
    for N in Ns:
        res = run_hmm(replace(cfg, n_micro=N))
        errors.append(float(np.max(np.abs(res.slip(xs) - target))))
        iters.append(res.iterations)
    return {"N": list(Ns), "error": errors, "iterations": iters,
            "reference_fluctuation": float(np.std(ref.alphas[-1] - smooth(ref.config.sites)))}


def fit_interpolation_model(Ns, errors):
    """Least-squares fit ``e(N) ~ c1 / N + c2 N``; returns ``(c1, c2, relative residual)``."""
    N = np.asarray(Ns, dtype=float)
    e = np.asarray(errors, dtype=float)
    A = np.stack([1.0 / N, N], axis=1) / e[:, None]
    coef, *_ = np.linalg.lstsq(A, np.ones_like(e), rcond=None)
    fit = np.stack([1.0 / N, N], axis=1) @ coef
    return float(coef[0]), float(coef[1]), float(np.max(np.abs(fit - e) / e))
