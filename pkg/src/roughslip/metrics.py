"""Error metrics on wall-distance level sets and Monte-Carlo checks of the slip error bounds.

All velocity errors are normalized L2 errors along a horizontal line
``M_delta = {y = y0 + delta}`` of the periodic channel,

    E(u, v; M) = ||u - v||_M / ||v||_M,

with the periodic trapezoid rule (uniform points, equal weights).  The
family compares the learned HMM (``fno``), the classical HMM (``bie``), the
naive no-slip macro solution (``naive``) and the resolved reference
(``ref``), optionally low-pass filtered in x at wavelength ``epsilon``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from roughslip.errors import MetricError
from roughslip.reference import level_set_points, lowpass
from roughslip.stokes_bie import project_zero_flux, weighted_inner

log = logging.getLogger(__name__)

METRICS = ("e_mdl", "e_cpl", "e_tot", "e_lo", "e_hi")
Z99 = 2.3263478740408408  # one-sided 99% normal quantile


def normalized_error(u, v, weights=None) -> float:
    """``||u - v|| / ||v||`` for samples ``(P,)`` or ``(P, d)`` along a curve.

    ``weights`` are quadrature weights (default: equal, i.e. the periodic
    trapezoid rule on uniform points).
    """
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError(f"shape mismatch {u.shape} vs {v.shape}")
    if u.ndim == 1:
        u, v = u[:, None], v[:, None]
    w = np.ones(len(v)) if weights is None else np.asarray(weights, dtype=float)
    den = float(np.sum(w * np.sum(v * v, axis=1)))
    if not den > 0:
        raise MetricError("reference field vanishes on the evaluation curve")
    num = float(np.sum(w * np.sum((u - v) ** 2, axis=1)))
    return math.sqrt(num / den)


@dataclass
class ErrorReport:
    """Error family per offset; ``None`` marks a metric whose sources were missing."""

    offsets: list
    values: dict
    meta: dict = field(default_factory=dict)

    def get(self, name: str, delta: float):
        return self.values[name][self.offsets.index(delta)]

    @property
    def gaps(self) -> list[str]:
        return [m for m, v in self.values.items() if any(x is None for x in v)]

    def triangle_ok(self, slack: float = 1e-3) -> list[bool]:
        """``e_tot <= e_mdl + e_cpl (1 + e_mdl)`` per offset (sampling slack allowed)."""
        out = []
        for i in range(len(self.offsets)):
            t, m, c = (self.values[k][i] for k in ("e_tot", "e_mdl", "e_cpl"))
            out.append(None if None in (t, m, c) else t <= m + c * (1 + m) + slack)
        return out

    def records(self) -> list[dict]:
        """One record per (metric, offset), for line-delimited output."""
        out = []
        for m, vals in self.values.items():
            for d, v in zip(self.offsets, vals):
                out.append({"metric": m, "delta": d, "value": v, **self.meta})
        return out

    def to_lines(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())

    @classmethod
    def from_lines(cls, text: str) -> "ErrorReport":
        recs = [json.loads(line) for line in text.splitlines() if line.strip()]
        offsets = sorted({r["delta"] for r in recs})
        values: dict = {}
        meta: dict = {}
        for r in recs:
            values.setdefault(r["metric"], [None] * len(offsets))[offsets.index(r["delta"])] = r["value"]
            meta.update({k: v for k, v in r.items() if k not in ("metric", "delta", "value")})
        return cls(offsets, values, meta)


def error_family(sources: dict, offsets, y0: float, epsilon: float, period: float = 1.0,
                 n: int = 512, meta: dict | None = None) -> ErrorReport:
    """Compute ``e_mdl, e_cpl, e_tot, e_lo, e_hi`` on ``M_delta`` for each offset.

    ``sources`` maps ``fno``, ``bie``, ``naive``, ``ref`` (and optionally
    ``ref_lo``) to callables ``points -> (P, 2)`` velocities.  When
    ``ref_lo`` is absent the reference samples are filtered in x only.
    Missing sources leave ``None`` entries instead of failing.
    """
    offsets = [float(d) for d in offsets]
    pairs = {"e_mdl": ("bie", "ref"), "e_cpl": ("fno", "bie"), "e_tot": ("fno", "ref"),
             "e_lo": ("ref_lo", "ref"), "e_hi": ("naive", "ref")}
    values = {m: [] for m in METRICS}
    for d in offsets:
        P = level_set_points(y0, d, period, n)
        cache = {k: np.asarray(f(P), dtype=float) for k, f in sources.items() if f is not None}
        if "ref_lo" not in cache and "ref" in cache:
            cache["ref_lo"] = lowpass(cache["ref"], period, epsilon, axis=0)
        for m in METRICS:
            a, b = pairs[m]
            values[m].append(normalized_error(cache[a], cache[b]) if a in cache and b in cache else None)
    rep = ErrorReport(offsets, values, dict(meta or {}, epsilon=epsilon))
    for d, ok in zip(offsets, rep.triangle_ok()):
        if ok is False:
            log.warning("triangle sanity check failed at delta = %g", d)
    return rep


# ---------------------------------------------------------------------------
# Monte-Carlo checks


@dataclass
class BoundCheck:
    estimate: float
    stderr: float
    bound: float
    trials: int
    extra: dict = field(default_factory=dict)

    @property
    def upper(self) -> float:
        """One-sided 99% upper confidence limit of the estimate."""
        return self.estimate + Z99 * self.stderr

    @property
    def passed(self) -> bool:
        return self.upper <= self.bound

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "stderr": self.stderr, "upper99": self.upper,
                "bound": self.bound, "trials": self.trials, "passed": self.passed, **self.extra}


def check_ratio_lemma(delta1: float = 0.01, delta2: float = 0.01, C: float = 1.0,
                      trials: int = 1_000_000, seed: int = 0, chunk: int = 250_000) -> BoundCheck:
    """Monte-Carlo test of ``E|a1/a2 - b1/b2| < C (d1 + d2 + d1 d2)``.

    ``a2`` is lognormal and ``a1 = a2 C U`` with ``U`` uniform on
    ``[-1, 1]``, so ``|a1 / a2| <= C``.  The perturbed pair carries Gaussian
    relative errors ``e1 = (a1 - b1) / a1``, ``e2 = (b2 - a2) / b2`` of
    standard deviation ``delta1``, ``delta2``.
    """
    rng = np.random.default_rng(seed)
    s = s2 = 0.0
    done = 0
    while done < trials:
        m = min(chunk, trials - done)
        a2 = rng.lognormal(0.0, 1.0, m)
        a1 = a2 * C * rng.uniform(-1.0, 1.0, m)
        e1 = delta1 * rng.standard_normal(m)
        e2 = delta2 * rng.standard_normal(m)
        b1 = a1 * (1.0 - e1)
        b2 = a2 / (1.0 - e2)
        d = np.abs(a1 / a2 - b1 / b2)
        s += float(d.sum())
        s2 += float((d * d).sum())
        done += m
    mean = s / trials
    var = max(s2 / trials - mean * mean, 0.0)
    bound = C * (delta1 + delta2 + delta1 * delta2)
    return BoundCheck(mean, math.sqrt(var / trials), bound, trials, {"delta1": delta1, "delta2": delta2, "C": C})


def couette_like_data(curve, rng, shift_range=(0.05, 0.5), noise: float = 0.05) -> np.ndarray:
    """Shear ``(y + s, 0)`` plus small smooth noise, projected to zero flux."""
    s = rng.uniform(*shift_range)
    h = np.stack([curve.x[:, 1] + s, np.zeros(curve.J)], axis=1)
    k = np.arange(1, 5)
    c = rng.standard_normal((len(k), 2, 2)) / k[:, None, None] ** 2
    h = h + noise * (np.cos(np.outer(curve.t, k)) @ c[:, :, 0] + np.sin(np.outer(curve.t, k)) @ c[:, :, 1])
    return project_zero_flux(curve, h)


def check_slip_error_bound(predict, samples, seed: int = 0, data_per_sample: int = 1,
                           degenerate_tol: float = 1e-12) -> dict:
    """Compare measured slip errors with ``C (delta (1/eta1 + 1/eta2) + delta^2 / (eta1 eta2))``.

    ``predict(sample) -> (r1_hat, r2_hat)`` supplies approximate representors
    for a held-out ``Sample``.  Two forms are checked:

    * the mean form, with ``delta`` the root-mean training-type error, ``eta``
      the smallest observed alignments and ``C`` the largest slip magnitude;
    * the per-sample form, with the sample's own ``delta`` and ``eta``.

    Samples with a vanishing denominator are excluded and counted.
    """
    rng = np.random.default_rng(seed)
    errs, d1s, d2s, eta1s, eta2s, Cs, per = [], [], [], [], [], [], []
    degenerate = 0
    for smp in samples:
        curve = smp.curve
        r1, r2 = smp.r1, smp.r2
        p1, p2 = predict(smp)
        n = lambda f: math.sqrt(weighted_inner(curve, f, f))  # noqa: E731
        d1 = n(p1 - r1) / n(r1)
        d2 = n(p2 - r2) / n(p2)
        for _ in range(data_per_sample):
            h = couette_like_data(curve, rng)
            a1, a2 = weighted_inner(curve, r1, h), weighted_inner(curve, r2, h)
            b1, b2 = weighted_inner(curve, p1, h), weighted_inner(curve, p2, h)
            if min(abs(a2), abs(b2), abs(a1)) < degenerate_tol * n(h):
                degenerate += 1
                continue
            eta1 = abs(a1) / (n(r1) * n(h))
            eta2 = abs(b2) / (n(p2) * n(h))
            C = abs(a1 / a2)
            err = abs(a1 / a2 - b1 / b2)
            dd = max(d1, d2)
            per.append(err <= C * (dd * (1 / eta1 + 1 / eta2) + dd * dd / (eta1 * eta2)) * (1 + 1e-9) + 1e-15)
            errs.append(err)
            d1s.append(d1)
            d2s.append(d2)
            eta1s.append(eta1)
            eta2s.append(eta2)
            Cs.append(C)
    if not errs:
        raise MetricError("every sample was degenerate")
    delta = math.sqrt(max(np.mean(np.square(d1s)), np.mean(np.square(d2s))))
    eta1, eta2, C = min(eta1s), min(eta2s), max(Cs)
    bound = C * (delta * (1 / eta1 + 1 / eta2) + delta**2 / (eta1 * eta2))
    mean_err = float(np.mean(errs))
    frac = float(np.mean(per))
    return {
        "mean_slip_error": mean_err,
        "bound": bound,
        "delta": delta,
        "eta1": eta1,
        "eta2": eta2,
        "C": C,
        "per_sample_fraction": frac,
        "n": len(errs),
        "degenerate": degenerate,
        "passed": bool(mean_err <= bound and frac >= 0.99),
    }


__all__ = [
    "METRICS",
    "normalized_error",
    "ErrorReport",
    "error_family",
    "BoundCheck",
    "check_ratio_lemma",
    "check_slip_error_bound",
    "couette_like_data",
]
