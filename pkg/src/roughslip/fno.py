"""Fourier neural operator on the unit circle, in numpy, with hand-written gradients.

Signals are arrays of shape ``(B, channels, J)`` sampled at ``t_j = 2 pi j / J``.
Fourier coefficients use the ``norm="forward"`` convention, so a band-limited
function has the same coefficients at every resolution and the network is
discretization invariant.

Network (``L`` blocks, activation between blocks but not after the last)::

    z0 = P x
    a_l = W_l z_{l-1} + irfft(K_l rfft(z_{l-1})) + b_l(t)
    z_l = gelu(a_l)  (l < L),   z_L = a_L
    y = Q z_L

Complex parameters are updated as pairs of reals, and gradients of complex
parameters follow the convention ``dL/dRe + i dL/dIm``.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastcrc import crc64
from scipy.special import erf

from roughslip.errors import ConfigError, DatasetError, NumericalError

log = logging.getLogger(__name__)

MAGIC = b"RSFNO1\n"
D_IN = 8
D_OUT = 4
_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


@dataclass(frozen=True)
class FnoHyper:
    L: int = 4
    d: int = 32
    K_max: int = 16
    d_in: int = D_IN
    d_out: int = D_OUT
    activation: str = "gelu"

    def __post_init__(self):
        if self.L < 1 or self.d < 1 or self.K_max < 1:
            raise ConfigError("L, d and K_max must be positive")
        if self.activation not in ("gelu", "none"):
            raise ConfigError(f"unknown activation {self.activation!r}")


def param_names(hyper: FnoHyper) -> list[str]:
    names = ["P"]
    for l in range(hyper.L):
        names += [f"W{l}", f"K{l}", f"b{l}"]
    return names + ["Q"]


def init_params(hyper: FnoHyper, seed: int = 0) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(seed)
    d, K = hyper.d, hyper.K_max
    p = {"P": rng.standard_normal((d, hyper.d_in)) / np.sqrt(hyper.d_in)}
    for l in range(hyper.L):
        p[f"W{l}"] = rng.standard_normal((d, d)) / np.sqrt(d)
        scale = 1.0 / d
        p[f"K{l}"] = scale * (rng.uniform(-1, 1, (K, d, d)) + 1j * rng.uniform(-1, 1, (K, d, d)))
        p[f"b{l}"] = np.zeros((K, d), dtype=complex)
    p["Q"] = rng.standard_normal((hyper.d_out, d)) / np.sqrt(d)
    return p


def gelu(x):
    return 0.5 * x * (1.0 + erf(x / _SQRT2))


def gelu_grad(x):
    return 0.5 * (1.0 + erf(x / _SQRT2)) + x * _INV_SQRT_2PI * np.exp(-0.5 * x * x)


def _check_resolution(J: int, K: int):
    if J < 2 * K:
        raise ConfigError(f"resolution J={J} cannot carry K_max={K} modes (need J >= 2 K_max)")


def _irfft_modes(Y: np.ndarray, J: int) -> np.ndarray:
    """Real signal from the first few modes ``Y[..., k]`` (norm="forward")."""
    return np.fft.irfft(Y, n=J, axis=-1, norm="forward")


def _irfft_modes_adjoint(g: np.ndarray, K: int) -> np.ndarray:
    """Gradient w.r.t. the modes of :func:`_irfft_modes` given ``g = dL/dy``."""
    G = np.fft.rfft(g, axis=-1)[..., :K]
    G[..., 1:] *= 2.0
    G[..., 0] = G[..., 0].real
    return G


def _rfft_modes_adjoint(G: np.ndarray, J: int) -> np.ndarray:
    """Gradient w.r.t. the signal of ``rfft(z, norm="forward")[:K]``."""
    H = np.array(G, dtype=complex, copy=True)
    H[..., 1:] *= 0.5
    return _irfft_modes(H, J) / J


def spectral_conv(z: np.ndarray, Khat: np.ndarray) -> np.ndarray:
    """``irfft(Khat_k @ rfft(z)_k)`` on modes ``k < K_max``; ``z`` is (..., d, J)."""
    J = z.shape[-1]
    K = Khat.shape[0]
    _check_resolution(J, K)
    zh = np.fft.rfft(z, axis=-1, norm="forward")[..., :K]
    return _irfft_modes(_mode_mult(Khat, zh), J)


def _mode_mult(Khat: np.ndarray, zh: np.ndarray) -> np.ndarray:
    """``Y[..., i, k] = sum_j Khat[k, i, j] zh[..., j, k]`` via batched matmul."""
    zk = np.moveaxis(zh, -1, 0)  # (K, ..., d)
    shp = zk.shape
    zk = zk.reshape(shp[0], -1, shp[-1]).transpose(0, 2, 1)  # (K, d, N)
    Y = (Khat @ zk).transpose(0, 2, 1).reshape(shp)
    return np.moveaxis(Y, 0, -1)


def _pointwise(A: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Apply a channel matrix to (B, d, J) signals."""
    return np.matmul(A, z)


def _outer_sum(g: np.ndarray, z: np.ndarray) -> np.ndarray:
    """``sum_{b,t} g[b,i,t] z[b,j,t]``."""
    return np.tensordot(g, z, axes=([0, 2], [0, 2]))


def bias_field(bhat: np.ndarray, J: int) -> np.ndarray:
    """Bias function (d, J) from its K_max coefficients (K, d)."""
    return _irfft_modes(bhat.T, J)


def forward(params: dict, x: np.ndarray, hyper: FnoHyper, cache: bool = False):
    """Network output (B, d_out, J) for input (B, d_in, J)."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if x.shape[1] != hyper.d_in:
        raise ValueError(f"input has {x.shape[1]} channels, expected {hyper.d_in}")
    J = x.shape[-1]
    _check_resolution(J, hyper.K_max)
    z = _pointwise(params["P"], x)
    tape = []
    for l in range(hyper.L):
        zh = np.fft.rfft(z, axis=-1, norm="forward")[..., : hyper.K_max]
        a = (
            _pointwise(params[f"W{l}"], z)
            + _irfft_modes(_mode_mult(params[f"K{l}"], zh), J)
            + bias_field(params[f"b{l}"], J)[None]
        )
        if l < hyper.L - 1 and hyper.activation == "gelu":
            cdf = 0.5 * (1.0 + erf(a / _SQRT2))
            tape.append((z, zh, a, cdf))
            z = a * cdf
        else:
            tape.append((z, zh, a, None))
            z = a
    y = _pointwise(params["Q"], z)
    if cache:
        return y, (x, tape, z)
    return y


def backward(params: dict, hyper: FnoHyper, state, gy: np.ndarray) -> dict:
    """Gradients of a scalar loss given ``gy = dLoss/dy`` and the forward tape."""
    x, tape, zL = state
    J = x.shape[-1]
    K = hyper.K_max
    grads = {"Q": _outer_sum(gy, zL)}
    gz = _pointwise(params["Q"].T, gy)
    for l in reversed(range(hyper.L)):
        z, zh, a, cdf = tape[l]
        ga = gz if cdf is None else gz * (cdf + a * _INV_SQRT_2PI * np.exp(-0.5 * a * a))
        grads[f"W{l}"] = _outer_sum(ga, z)
        gb = _irfft_modes_adjoint(ga.sum(axis=0), K)  # (d, K)
        grads[f"b{l}"] = gb.T.copy()
        gY = _irfft_modes_adjoint(ga, K)  # (B, d, K)
        grads[f"K{l}"] = gY.transpose(2, 1, 0) @ zh.conj().transpose(2, 0, 1)
        gzh = _mode_mult(params[f"K{l}"].conj().transpose(0, 2, 1), gY)
        gz = _pointwise(params[f"W{l}"].T, ga) + _rfft_modes_adjoint(gzh, J)
    grads["P"] = _outer_sum(gz, x)
    return grads


# ---------------------------------------------------------------------------
# loss


def spectral_derivative(y: np.ndarray) -> np.ndarray:
    """d/dt along the last axis; the Nyquist mode is dropped."""
    J = y.shape[-1]
    k = np.fft.rfftfreq(J, 1.0 / J)
    if J % 2 == 0:
        k[-1] = 0.0
    return np.fft.irfft(1j * k * np.fft.rfft(y, axis=-1), n=J, axis=-1)


def h1_relative_terms(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Per-sample ``|e|^2/|y|^2 + |De|^2/|Dy|^2`` for (B, C, J) arrays."""
    pred = np.asarray(pred, dtype=float)
    target = np.asarray(target, dtype=float)
    if pred.ndim == 2:
        pred, target = pred[None], target[None]
    e = pred - target
    n1 = np.sum(target**2, axis=(1, 2))
    Dt = spectral_derivative(target)
    n2 = np.sum(Dt**2, axis=(1, 2))
    if np.any(n1 <= 0) or np.any(n2 <= 0):
        raise NumericalError("target has zero norm or zero derivative; relative loss undefined")
    De = spectral_derivative(e)
    return np.sum(e**2, axis=(1, 2)) / n1 + np.sum(De**2, axis=(1, 2)) / n2


def h1_relative_loss(pred, target) -> float:
    """Mean over the batch of the two-term relative H1 error."""
    return float(np.mean(h1_relative_terms(pred, target)))


def h1_relative_loss_grad(pred: np.ndarray, target: np.ndarray):
    """Loss and its gradient w.r.t. ``pred``."""
    e = pred - target
    B = pred.shape[0]
    n1 = np.sum(target**2, axis=(1, 2))
    n2 = np.sum(spectral_derivative(target) ** 2, axis=(1, 2))
    if np.any(n1 <= 0) or np.any(n2 <= 0):
        raise NumericalError("target has zero norm or zero derivative; relative loss undefined")
    De = spectral_derivative(e)
    loss = float(np.mean(np.sum(e**2, axis=(1, 2)) / n1 + np.sum(De**2, axis=(1, 2)) / n2))
    # D is skew-adjoint on the grid, so D^T D e = -D D e
    g = 2.0 * e / n1[:, None, None] - 2.0 * spectral_derivative(De) / n2[:, None, None]
    return loss, g / B


# ---------------------------------------------------------------------------
# model with normalization


@dataclass
class FnoModel:
    """Parameters plus the channel statistics used to standardize inputs/outputs."""

    hyper: FnoHyper
    params: dict
    in_mean: np.ndarray = field(default_factory=lambda: np.zeros(D_IN))
    in_std: np.ndarray = field(default_factory=lambda: np.ones(D_IN))
    out_mean: np.ndarray = field(default_factory=lambda: np.zeros(D_OUT))
    out_std: np.ndarray = field(default_factory=lambda: np.ones(D_OUT))
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_stats(cls, hyper: FnoHyper, params: dict, mean, std, meta=None) -> "FnoModel":
        mean = np.asarray(mean, dtype=float)
        std = np.where(np.asarray(std, dtype=float) > 0, std, 1.0)
        return cls(hyper, params, mean[:8].copy(), std[:8].copy(), mean[8:12].copy(), std[8:12].copy(), meta or {})

    def prepare(self, x: np.ndarray) -> np.ndarray:
        return (x - self.in_mean[None, :, None]) / self.in_std[None, :, None]

    def predict(self, x: np.ndarray, cache: bool = False):
        """Physical outputs (B, 4, J) from physical inputs (B, 8, J)."""
        out = forward(self.params, self.prepare(x), self.hyper, cache=cache)
        if cache:
            y, state = out
            return y * self.out_std[None, :, None] + self.out_mean[None, :, None], state
        return out * self.out_std[None, :, None] + self.out_mean[None, :, None]

    def loss_and_grads(self, x: np.ndarray, target: np.ndarray):
        pred, state = self.predict(x, cache=True)
        loss, gp = h1_relative_loss_grad(pred, target)
        gy = gp * self.out_std[None, :, None]
        return loss, backward(self.params, self.hyper, state, gy)

    def loss(self, x: np.ndarray, target: np.ndarray) -> float:
        return h1_relative_loss(self.predict(x), target)


def arrays_to_io(arr: np.ndarray):
    """Split RWS1 rows (K, J, 12) into network inputs (K, 8, J) and targets (K, 4, J)."""
    arr = np.asarray(arr)
    return np.ascontiguousarray(arr[..., :8].transpose(0, 2, 1)), np.ascontiguousarray(
        arr[..., 8:12].transpose(0, 2, 1)
    )


# ---------------------------------------------------------------------------
# optimizer and training


class Adam:
    """Adam on a dict of arrays; complex arrays are treated as real pairs."""

    def __init__(self, params: dict, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros(_real(v).shape) for k, v in params.items()}
        self.v = {k: np.zeros(_real(v).shape) for k, v in params.items()}
        self.step_count = 0

    def step(self, params: dict, grads: dict):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for k, p in params.items():
            g = _real(np.ascontiguousarray(grads[k]))
            m, v = self.m[k], self.v[k]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            _real(p)[...] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _real(a: np.ndarray) -> np.ndarray:
    return a.view(np.float64) if np.iscomplexobj(a) else a


@dataclass
class TrainState:
    model: FnoModel
    optimizer: Adam
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    steps: int = 0
    seconds: float = 0.0


def evaluate_loss(model: FnoModel, x: np.ndarray, y: np.ndarray, batch: int = 256) -> float:
    terms = [
        h1_relative_terms(model.predict(x[i : i + batch]), y[i : i + batch]) for i in range(0, len(x), batch)
    ]
    return float(np.mean(np.concatenate(terms)))


def train(
    x_train: np.ndarray,
    y_train: np.ndarray,
    hyper: FnoHyper = FnoHyper(),
    *,
    mean=None,
    std=None,
    x_test=None,
    y_test=None,
    epochs: int = 200,
    steps: int | None = None,
    batch_size: int = 32,
    lr: float = 1e-3,
    seed: int = 0,
    log_every: int = 1,
    callback=None,
) -> TrainState:
    """Adam training on the relative H1 loss.

    One epoch is a full pass over a fresh permutation of the training set in
    mini-batches.  ``steps`` (if given) caps the number of optimizer steps
    instead, which is how single-sample overfitting runs are expressed.
    ``mean``/``std`` are the 12 channel statistics of the dataset manifest.
    """
    if len(x_train) == 0:
        raise ConfigError("empty training set")
    if mean is None:
        mean = np.zeros(12)
        std = np.ones(12)
    model = FnoModel.from_stats(hyper, init_params(hyper, seed), mean, std, {"seed": seed})
    opt = Adam(model.params, lr=lr)
    state = TrainState(model, opt)
    rng = np.random.default_rng([seed, 1])
    n = len(x_train)
    t0 = time.perf_counter()
    epoch = 0
    while True:
        perm = rng.permutation(n)
        losses = []
        seen = 0
        for i in range(0, n, batch_size):
            idx = perm[i : i + batch_size]
            loss, grads = model.loss_and_grads(x_train[idx], y_train[idx])
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite loss at step {opt.step_count} (epoch {epoch})")
            opt.step(model.params, grads)
            losses.append(loss * len(idx))
            seen += len(idx)
            state.steps = opt.step_count
            if steps is not None and opt.step_count >= steps:
                break
        epoch += 1
        state.train_loss.append(float(np.sum(losses) / seen))
        if x_test is not None and len(x_test):
            state.test_loss.append(evaluate_loss(model, x_test, y_test))
        if log_every and epoch % log_every == 0:
            log.info(
                "epoch %d step %d train %.4e test %s",
                epoch,
                opt.step_count,
                state.train_loss[-1],
                f"{state.test_loss[-1]:.4e}" if state.test_loss else "-",
            )
        if callback is not None:
            callback(state, epoch)
        if steps is not None:
            if opt.step_count >= steps:
                break
        elif epoch >= epochs:
            break
    state.seconds = time.perf_counter() - t0
    return state


# ---------------------------------------------------------------------------
# serialization


def _flatten(model: FnoModel):
    arrays = []
    index = []
    offset = 0
    items = [(k, model.params[k]) for k in param_names(model.hyper)]
    items += [("in_mean", model.in_mean), ("in_std", model.in_std), ("out_mean", model.out_mean), ("out_std", model.out_std)]
    for name, a in items:
        r = np.ascontiguousarray(_real(np.ascontiguousarray(a)), dtype="<f8").ravel()
        index.append({"name": name, "shape": list(a.shape), "complex": bool(np.iscomplexobj(a)), "offset": offset, "size": r.size})
        offset += r.size
        arrays.append(r)
    return np.concatenate(arrays), index


def save_model(model: FnoModel, path) -> str:
    """Write the model file and return its CRC-64 as hex."""
    blob, index = _flatten(model)
    hyper = model.hyper
    header = {
        "format": "RSFNO1",
        "hyper": {"L": hyper.L, "d": hyper.d, "K_max": hyper.K_max, "d_in": hyper.d_in, "d_out": hyper.d_out, "activation": hyper.activation},
        "arrays": index,
        "meta": model.meta,
    }
    hb = json.dumps(header, sort_keys=True).encode()
    body = MAGIC + np.uint64(len(hb)).astype("<u8").tobytes() + hb + blob.tobytes()
    crc = crc64.xz(body)
    Path(path).write_bytes(body + np.uint64(crc).astype("<u8").tobytes())
    return f"{crc:016x}"


def load_model(path) -> FnoModel:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC) or len(raw) < len(MAGIC) + 16:
        raise DatasetError(f"{path} is not a model file")
    body, tail = raw[:-8], raw[-8:]
    if crc64.xz(body) != int(np.frombuffer(tail, dtype="<u8")[0]):
        raise DatasetError(f"checksum failure in model file {path}")
    p = len(MAGIC)
    hlen = int(np.frombuffer(body[p : p + 8], dtype="<u8")[0])
    header = json.loads(body[p + 8 : p + 8 + hlen])
    blob = np.frombuffer(body[p + 8 + hlen :], dtype="<f8")
    hyper = FnoHyper(**header["hyper"])
    arrays = {}
    for e in header["arrays"]:
        a = blob[e["offset"] : e["offset"] + e["size"]].copy()
        if e["complex"]:
            a = a.view(np.complex128)
        arrays[e["name"]] = a.reshape(e["shape"])
    params = {k: arrays[k] for k in param_names(hyper)}
    return FnoModel(hyper, params, arrays["in_mean"], arrays["in_std"], arrays["out_mean"], arrays["out_std"], header["meta"])


def model_crc(path) -> str:
    raw = Path(path).read_bytes()
    return f"{int(np.frombuffer(raw[-8:], dtype='<u8')[0]):016x}"


# ---------------------------------------------------------------------------
# geo-FNO


def geo_fno_eval(model: FnoModel, curve, rt1: np.ndarray, rt2: np.ndarray):
    """Predicted ``(r1, r2)`` at the physical nodes of ``curve``.

    The inputs are the curve samples pulled back to the parameter circle;
    outputs at parameter node ``t_j`` belong to the boundary point ``phi(t_j)``.
    """
    rt1 = np.asarray(rt1, dtype=float)
    rt2 = np.asarray(rt2, dtype=float)
    if rt1.shape != (curve.J, 2) or rt2.shape != (curve.J, 2):
        raise ValueError("intermediate representors must be (J, 2) arrays on the curve nodes")
    x = np.concatenate([curve.x, curve.dx, rt1, rt2], axis=1).T[None]
    y = model.predict(x)[0].T
    return y[:, 0:2].copy(), y[:, 2:4].copy()
