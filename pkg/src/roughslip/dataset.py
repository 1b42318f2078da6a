"""Training corpora of micro domains and their Riesz representors (RWS1 format).

A dataset is a directory with two files:

``manifest.json``
    version tag, sizes, generation config, per-sample metadata (wall
    samples, box height, line offset), normalization statistics, split.
``data.bin``
    little-endian float64 array of shape ``(K, J, 12)`` in sample-major,
    channel-minor order, followed by the CRC-64/XZ of the array bytes as a
    little-endian uint64.

Channel order is :data:`CHANNELS`.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from fastcrc import crc64

from roughslip.errors import ConfigError, DatasetError, GeometryError, SolverError
from roughslip.geometry import (
    Curve,
    GpConfig,
    LineSegment,
    MicroDomainSpec,
    build_micro_domain,
    channel_box,
    sample_rough_wall,
    sine_wall,
)
from roughslip.riesz import riesz_pair
from roughslip.stokes_bie import assemble, line_average, project_zero_flux, solve_dirichlet, weighted_inner

log = logging.getLogger(__name__)

VERSION = "RWS1"
CHANNELS = ("x", "y", "dx", "dy", "rt1x", "rt1y", "rt2x", "rt2y", "r1x", "r1y", "r2x", "r2y")
N_CH = len(CHANNELS)
GEOM = slice(0, 4)
RT = slice(4, 8)
R = slice(8, 12)
MANIFEST = "manifest.json"
DATA = "data.bin"


def checksum(buf) -> int:
    return crc64.xz(bytes(buf))


@dataclass(frozen=True)
class DatasetConfig:
    K: int = 2000
    J: int = 128
    seed: int = 0
    width: float = 1.0
    height_range: tuple = (0.5, 1.0)
    line_offset_range: tuple = (0.15, 0.35)
    corner_radius: float = 0.1
    segment_margin: float = 0.1
    gp: GpConfig = field(default_factory=GpConfig)
    tol: float = 1e-10
    test_fraction: float = 0.1
    max_attempts_factor: int = 4
    family: str = "gp"
    taper: float = 0.3
    center_jitter: float = 0.1

    def __post_init__(self):
        if self.family not in ("gp", "sine"):
            raise ConfigError(f"unknown wall family {self.family!r}")
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.J < 16 or self.J % 2:
            raise ConfigError("J must be even and >= 16")
        lo, hi = self.line_offset_range
        if not 0 < lo <= hi < self.height_range[0] <= self.height_range[1]:
            raise ConfigError("line offsets must lie strictly below the smallest box height")
        if not 0 <= self.test_fraction < 1:
            raise ConfigError("test_fraction must be in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["height_range"] = list(self.height_range)
        d["line_offset_range"] = list(self.line_offset_range)
        return d

    @classmethod
    def sine(cls, **kw) -> "DatasetConfig":
        """Micro boxes cut from the sine channel wall ``2 - sin(2 pi x)`` (one period per unit).

        ``width``, heights and line offsets are in roughness periods, heights
        and offsets measured above the crest, as in the HMM micro boxes.  Box
        centres are crest positions jittered by up to ``center_jitter``.
        """
        base = dict(K=500, width=2.0, height_range=(1.5, 2.5), line_offset_range=(0.5, 1.25),
                    segment_margin=0.25, family="sine")
        base.update(kw)
        return cls(**base)

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetConfig":
        d = dict(d)
        d["gp"] = GpConfig(**d["gp"])
        d["height_range"] = tuple(d["height_range"])
        d["line_offset_range"] = tuple(d["line_offset_range"])
        return cls(**d)


def sample_spec(cfg: DatasetConfig, index: int):
    """Random box spec and wall samples for attempt ``index`` (pure in (seed, index))."""
    rng = np.random.default_rng([cfg.seed, index])
    height = float(rng.uniform(*cfg.height_range))
    offset = float(rng.uniform(*cfg.line_offset_range))
    gp_seed = int(rng.integers(2**63 - 1))
    gp = GpConfig(
        variance=cfg.gp.variance,
        corr_len=cfg.gp.corr_len,
        n_points=cfg.gp.n_points,
        curvature_bound=cfg.gp.curvature_bound,
        seed=gp_seed,
    )
    spec = MicroDomainSpec(
        width=cfg.width,
        height=height,
        line_offset=offset,
        corner_radius=cfg.corner_radius,
        gp=gp,
        segment_margin=cfg.segment_margin,
    )
    return spec, sample_rough_wall(gp)


def spec_from_meta(cfg: DatasetConfig, meta: dict) -> tuple[MicroDomainSpec, np.ndarray]:
    spec = MicroDomainSpec(
        width=cfg.width,
        height=meta["height"],
        line_offset=meta["line_offset"],
        corner_radius=cfg.corner_radius,
        gp=cfg.gp,
        segment_margin=cfg.segment_margin,
    )
    return spec, np.asarray(meta["wall"], dtype=float)


SINE_CREST = 0.75  # crest of 2 - sin(2 pi x) within one period


def draw_geometry(cfg: DatasetConfig, index: int) -> dict:
    """Geometry metadata for attempt ``index`` (pure in (seed, index))."""
    if cfg.family == "gp":
        spec, wall = sample_spec(cfg, index)
        return {"gp_seed": spec.gp.seed, "height": spec.height, "line_offset": spec.line_offset,
                "wall": [float(v) for v in wall]}
    rng = np.random.default_rng([cfg.seed, index])
    height = float(rng.uniform(*cfg.height_range))
    offset = float(rng.uniform(*cfg.line_offset_range))
    center = SINE_CREST + float(rng.uniform(-cfg.center_jitter, cfg.center_jitter))
    return {"center": center, "height": height, "line_offset": offset}


def build_geometry(cfg: DatasetConfig, meta: dict, J: int) -> tuple[Curve, LineSegment]:
    if cfg.family == "gp":
        spec, wall = spec_from_meta(cfg, meta)
        return build_micro_domain(spec, wall, J)
    box, seg, _ = channel_box(sine_wall(1.0, 1.0), meta["center"], 1.0, cfg.width, meta["height"],
                              meta["line_offset"], cfg.corner_radius, cfg.segment_margin, cfg.taper)
    return box.discretize(J), seg


def solve_geometry(curve: Curve, seg: LineSegment, tol: float = 1e-10) -> np.ndarray:
    pair = riesz_pair(curve, seg, assemble(curve), tol)
    return np.concatenate([curve.x, curve.dx, pair.rt1, pair.rt2, pair.r1, pair.r2], axis=1)


def solve_sample(spec: MicroDomainSpec, wall: np.ndarray, J: int, tol: float = 1e-10):
    """Curve, segment and stacked (J, 12) channel array for one micro domain."""
    curve, seg = build_micro_domain(spec, wall, J)
    pair = riesz_pair(curve, seg, assemble(curve), tol)
    row = np.concatenate([curve.x, curve.dx, pair.rt1, pair.rt2, pair.r1, pair.r2], axis=1)
    return curve, seg, row


@dataclass
class Sample:
    """One stored micro domain.  ``curve`` is rebuilt exactly from metadata."""

    data: np.ndarray  # (J, 12)
    meta: dict
    cfg: DatasetConfig
    _curve: Curve | None = field(default=None, repr=False)

    @property
    def curve(self) -> Curve:
        if self._curve is None:
            self._curve, _ = build_geometry(self.cfg, self.meta, self.data.shape[0])
        return self._curve

    @property
    def segment(self) -> LineSegment:
        return LineSegment(np.array(self.meta["a"]), np.array(self.meta["b"]))

    @property
    def weights(self) -> np.ndarray:
        J = self.data.shape[0]
        return (2 * np.pi / J) * np.linalg.norm(self.data[:, 2:4], axis=1)

    def field(self, name: str) -> np.ndarray:
        i = {"rt1": 4, "rt2": 6, "r1": 8, "r2": 10}[name]
        return self.data[:, i : i + 2]

    rt1 = property(lambda self: self.field("rt1"))
    rt2 = property(lambda self: self.field("rt2"))
    r1 = property(lambda self: self.field("r1"))
    r2 = property(lambda self: self.field("r2"))


def channel_stats(arr: np.ndarray, idx) -> tuple[np.ndarray, np.ndarray]:
    sub = arr[np.asarray(idx, dtype=int)].reshape(-1, arr.shape[-1])
    return sub.mean(axis=0), sub.std(axis=0)


def make_split(K: int, test_fraction: float, seed: int):
    perm = np.random.default_rng([seed, 2**31 - 1]).permutation(K)
    n_test = int(round(test_fraction * K))
    if K > 1 and n_test == 0 and test_fraction > 0:
        n_test = 1
    test = np.sort(perm[:n_test])
    train = np.sort(perm[n_test:])
    return train, test


def _write_array(path: Path, arr: np.ndarray) -> int:
    buf = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    crc = checksum(buf)
    with open(path, "wb") as f:
        f.write(buf)
        f.write(np.uint64(crc).astype("<u8").tobytes())
    return crc


def generate_dataset(cfg: DatasetConfig, out, resume: bool = True, progress=None) -> dict:
    """Generate ``cfg.K`` samples into directory ``out`` and return the manifest.

    Attempts run over indices 0, 1, 2, ...; an attempt whose geometry or
    solve fails is skipped and counted.  Accepted rows are appended to
    ``data.part`` with a small progress record so an interrupted run picks
    up at the next attempt index.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    part = out / "data.part"
    prog_path = out / "progress.json"
    metas: list[dict] = []
    skipped: list[int] = []
    next_index = 0
    if resume and part.exists() and prog_path.exists():
        prog = json.loads(prog_path.read_text())
        if prog.get("config") == cfg.to_dict():
            metas, skipped, next_index = prog["samples"], prog["skipped"], prog["next_index"]
            row_bytes = cfg.J * N_CH * 8
            with open(part, "r+b") as f:
                f.truncate(len(metas) * row_bytes)
        else:
            part.unlink()
    elif part.exists():
        part.unlink()
    limit = cfg.max_attempts_factor * cfg.K + 10
    with open(part, "ab") as f:
        while len(metas) < cfg.K:
            if next_index >= limit:
                raise DatasetError(f"too many rejected micro domains ({len(skipped)} skipped)")
            i = next_index
            next_index += 1
            meta = draw_geometry(cfg, i)
            try:
                curve, seg = build_geometry(cfg, meta, cfg.J)
                row = solve_geometry(curve, seg, cfg.tol)
            except (GeometryError, SolverError) as exc:
                log.info("sample attempt %d skipped: %s", i, exc)
                skipped.append(i)
                continue
            f.write(np.ascontiguousarray(row, dtype="<f8").tobytes())
            metas.append({"attempt": i, **meta, "a": seg.a.tolist(), "b": seg.b.tolist()})
            if len(metas) % 50 == 0 or len(metas) == cfg.K:
                f.flush()
                prog_path.write_text(
                    json.dumps({"config": cfg.to_dict(), "samples": metas, "skipped": skipped, "next_index": next_index})
                )
            if progress is not None:
                progress(len(metas), cfg.K)
    arr = np.fromfile(part, dtype="<f8").reshape(cfg.K, cfg.J, N_CH)
    train, test = make_split(cfg.K, cfg.test_fraction, cfg.seed)
    mean, std = channel_stats(arr, train)
    crc = _write_array(out / DATA, arr)
    manifest = {
        "version": VERSION,
        "K": cfg.K,
        "J": cfg.J,
        "channels": list(CHANNELS),
        "dtype": "<f8",
        "layout": "sample-major, node, channel-minor; trailing CRC-64/XZ (uint64 LE)",
        "inner_product": "arclength-weighted: <u,v>_W = sum_j u_j.v_j (2pi/J)|phi'(t_j)|",
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "skipped": len(skipped),
        "skipped_attempts": skipped,
        "samples": metas,
        "stats": {"mean": mean.tolist(), "std": std.tolist()},
        "split": {"train": train.tolist(), "test": test.tolist()},
        "crc64": f"{crc:016x}",
        "data_file": DATA,
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=1))
    part.unlink()
    if prog_path.exists():
        prog_path.unlink()
    return manifest


def read_manifest(path) -> dict:
    path = Path(path)
    mpath = path / MANIFEST if path.is_dir() else path
    try:
        manifest = json.loads(mpath.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read manifest {mpath}: {exc}") from exc
    if manifest.get("version") != VERSION:
        raise DatasetError(f"version mismatch: expected {VERSION}, found {manifest.get('version')!r}")
    return manifest


def load_array(path, manifest: dict | None = None) -> np.ndarray:
    path = Path(path)
    manifest = read_manifest(path) if manifest is None else manifest
    dpath = path / manifest["data_file"] if path.is_dir() else path.parent / manifest["data_file"]
    K, J = manifest["K"], manifest["J"]
    nbytes = K * J * N_CH * 8
    raw = dpath.read_bytes()
    if len(raw) != nbytes + 8:
        raise DatasetError(f"data file has {len(raw)} bytes, expected {nbytes + 8} (truncated or padded)")
    stored = int(np.frombuffer(raw[nbytes:], dtype="<u8")[0])
    actual = checksum(raw[:nbytes])
    if stored != actual or f"{actual:016x}" != manifest["crc64"]:
        raise DatasetError(f"checksum failure: stored {stored:016x}, computed {actual:016x}")
    return np.frombuffer(raw[:nbytes], dtype="<f8").reshape(K, J, N_CH).copy()


def load_dataset(path) -> tuple[list[Sample], dict]:
    manifest = read_manifest(path)
    arr = load_array(path, manifest)
    cfg = DatasetConfig.from_dict(manifest["config"])
    samples = [Sample(arr[k], manifest["samples"][k], cfg) for k in range(manifest["K"])]
    return samples, manifest


def split(manifest: dict, samples=None):
    """Train/test index arrays, or the sample lists when ``samples`` is given."""
    train = np.asarray(manifest["split"]["train"], dtype=int)
    test = np.asarray(manifest["split"]["test"], dtype=int)
    if samples is None:
        return train, test
    return [samples[i] for i in train], [samples[i] for i in test]


def normalize(arr: np.ndarray, manifest: dict) -> np.ndarray:
    mean = np.asarray(manifest["stats"]["mean"])
    std = np.asarray(manifest["stats"]["std"])
    std = np.where(std > 0, std, 1.0)
    return (arr - mean) / std


def dataset_crc(path) -> str:
    return read_manifest(path)["crc64"]


def file_digest(path) -> str:
    """CRC-64 of the raw data file, used to tie models to their corpus."""
    path = Path(path)
    dpath = path / DATA if path.is_dir() else path
    return f"{checksum(dpath.read_bytes()):016x}"


def spot_check(samples, fraction: float = 0.01, seed: int = 0, n_data: int = 3) -> float:
    """Worst relative duality defect on a random subset of samples."""
    rng = np.random.default_rng(seed)
    n = max(1, int(round(fraction * len(samples))))
    worst = 0.0
    for k in rng.choice(len(samples), size=n, replace=False):
        s = samples[k]
        curve = s.curve
        sys = assemble(curve)
        for _ in range(n_data):
            h = random_boundary_data(curve, rng)
            dens = solve_dirichlet(sys, h)
            l1, l2 = line_average(curve, dens, s.segment)
            e1 = abs(weighted_inner(curve, s.r1, h) - l1) / abs(l1)
            e2 = abs(weighted_inner(curve, s.r2, h) - l2) / abs(l2)
            worst = max(worst, e1, e2)
    return worst


def random_boundary_data(curve: Curve, rng, modes: int = 6) -> np.ndarray:
    """Smooth random flux-free boundary data (low Fourier modes in the parameter)."""
    k = np.arange(modes + 1)
    c = rng.standard_normal((modes + 1, 2, 2)) / (1.0 + k[:, None, None]) ** 2
    cos = np.cos(np.outer(curve.t, k))
    sin = np.sin(np.outer(curve.t, k))
    h = cos @ c[:, :, 0] + sin @ c[:, :, 1]
    return project_zero_flux(curve, h)


__all__ = [
    "VERSION",
    "CHANNELS",
    "DatasetConfig",
    "Sample",
    "generate_dataset",
    "load_dataset",
    "split",
    "normalize",
    "spot_check",
    "random_boundary_data",
]
