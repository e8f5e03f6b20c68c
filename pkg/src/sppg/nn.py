"""Minimal layer toolkit with hand-written reverse-mode gradients.

Arrays are plain numpy ndarrays; each layer caches its forward pass and
exposes backward() plus named parameters/gradients. float32 is the training
dtype, float64 is used for finite-difference gradient checks.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHECKPOINT_MAGIC = b"SPGW"
CHECKPOINT_VERSION = 1


class DimensionError(ValueError):
    """Input shape incompatible with a layer's configuration."""


class GradientError(FloatingPointError):
    """Non-finite gradient; message names the offending layer."""


class CheckpointError(ValueError):
    """Unreadable checkpoint or architecture fingerprint mismatch."""


def glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, shape, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _check_finite_grads(grads: dict[str, np.ndarray], layer_name: str) -> None:
    for key, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise GradientError(f"non-finite gradient in layer {layer_name} ({key})")


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax along the last axis."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def mean_cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, 1e-38))))


def softmax_ce_grad(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """Gradient of mean cross-entropy wrt the logits: (p - onehot) / batch."""
    grad = probs.copy()
    grad[np.arange(len(labels)), labels] -= 1.0
    return grad / len(labels)


class Conv2D:
    """Same-padded cross-correlation with bias; odd square kernels only."""

    def __init__(self, c_in: int, c_out: int, kernel: tuple[int, int] = (3, 3),
                 name: str = "conv", rng: np.random.Generator | None = None,
                 dtype=np.float32):
        kh, kw = kernel
        if kh % 2 == 0 or kw % 2 == 0:
            raise DimensionError(f"{name}: same padding requires odd kernel dims, got {kernel}")
        rng = rng or np.random.default_rng(0)
        self.name = name
        self.c_in, self.c_out, self.kh, self.kw = c_in, c_out, kh, kw
        fan = c_in * kh * kw, c_out * kh * kw
        self.w = glorot_uniform(rng, fan[0], fan[1], (c_out, c_in, kh, kw), dtype)
        self.b = np.zeros(c_out, dtype=dtype)
        self._cols = None
        self._in_shape = None
        self.grads: dict[str, np.ndarray] = {}

    def params(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.w": self.w, f"{self.name}.b": self.b}

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise DimensionError(f"{self.name}: expected [B, {self.c_in}, H, W], got {x.shape}")
        batch, _, height, width = x.shape
        ph, pw = self.kh // 2, self.kw // 2
        xpad = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
        slices = [
            xpad[:, :, di:di + height, dj:dj + width]
            for di in range(self.kh)
            for dj in range(self.kw)
        ]
        # [B, C, K, H, W] -> [B, H*W, C*K]
        cols = np.stack(slices, axis=2)
        cols = cols.transpose(0, 3, 4, 1, 2).reshape(batch, height * width, self.c_in * self.kh * self.kw)
        wmat = self.w.reshape(self.c_out, -1).T
        out = cols @ wmat + self.b
        self._cols, self._in_shape = cols, x.shape
        return out.reshape(batch, height, width, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        batch, _, height, width = self._in_shape
        doutm = dout.transpose(0, 2, 3, 1).reshape(batch, height * width, self.c_out)
        dw = np.einsum("bik,bio->ko", self._cols, doutm).T.reshape(self.w.shape)
        db = doutm.sum(axis=(0, 1))
        dcols = doutm @ self.w.reshape(self.c_out, -1)
        dcols = dcols.reshape(batch, height, width, self.c_in, self.kh * self.kw).transpose(0, 3, 4, 1, 2)
        ph, pw = self.kh // 2, self.kw // 2
        dxpad = np.zeros((batch, self.c_in, height + 2 * ph, width + 2 * pw), dtype=dout.dtype)
        k = 0
        for di in range(self.kh):
            for dj in range(self.kw):
                dxpad[:, :, di:di + height, dj:dj + width] += dcols[:, :, k]
                k += 1
        self.grads = {f"{self.name}.w": dw, f"{self.name}.b": db}
        _check_finite_grads(self.grads, self.name)
        return dxpad[:, :, ph:ph + height, pw:pw + width]


class GRU:
    """Gated recurrent unit over [B, T, D]; returns the final masked state.

    Recurrence (update gate z, reset gate r, tanh candidate c):
        z_t = sigmoid(x_t Wz + h Uz + bz)
        r_t = sigmoid(x_t Wr + h Ur + br)
        c_t = tanh(x_t Wc + (r_t * h) Uc + bc)
        h_t = (1 - z_t) * h + z_t * c_t
    Steps at or beyond a sequence's true length leave its state untouched.
    """

    def __init__(self, d_in: int, hidden: int, name: str = "gru",
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.name = name
        self.d_in, self.hidden = d_in, hidden
        self.w = {}
        for gate in ("z", "r", "c"):
            self.w[f"w{gate}"] = glorot_uniform(rng, d_in, hidden, (d_in, hidden), dtype)
            self.w[f"u{gate}"] = glorot_uniform(rng, hidden, hidden, (hidden, hidden), dtype)
            self.w[f"b{gate}"] = np.zeros(hidden, dtype=dtype)
        self._cache = None
        self.grads: dict[str, np.ndarray] = {}

    def params(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.{k}": v for k, v in self.w.items()}

    def forward(self, x: np.ndarray, lengths: np.ndarray) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.d_in:
            raise DimensionError(f"{self.name}: expected [B, T, {self.d_in}], got {x.shape}")
        batch, t_max, _ = x.shape
        if t_max == 0 or np.any(lengths < 1):
            raise DimensionError(f"{self.name}: empty sequence")
        w = self.w
        xz = x @ w["wz"] + w["bz"]
        xr = x @ w["wr"] + w["br"]
        xc = x @ w["wc"] + w["bc"]
        h = np.zeros((batch, self.hidden), dtype=x.dtype)
        steps = []
        for t in range(t_max):
            z = sigmoid(xz[:, t] + h @ w["uz"])
            r = sigmoid(xr[:, t] + h @ w["ur"])
            c = np.tanh(xc[:, t] + (r * h) @ w["uc"])
            h_new = (1.0 - z) * h + z * c
            active = (t < lengths)[:, None]
            steps.append((h, z, r, c, active))
            h = np.where(active, h_new, h)
        self._cache = (x, lengths, steps)
        return h

    def backward(self, dh: np.ndarray) -> np.ndarray:
        x, lengths, steps = self._cache
        batch, t_max, _ = x.shape
        w = self.w
        dxz = np.zeros((batch, t_max, self.hidden), dtype=dh.dtype)
        dxr = np.zeros_like(dxz)
        dxc = np.zeros_like(dxz)
        acc = {k: np.zeros_like(v) for k, v in w.items() if k.startswith("u")}
        dh = dh.copy()
        for t in range(t_max - 1, -1, -1):
            h_prev, z, r, c, active = steps[t]
            d_new = np.where(active, dh, 0.0)
            d_pass = np.where(active, 0.0, dh)
            dz = d_new * (c - h_prev) * z * (1.0 - z)
            dc = d_new * z * (1.0 - c * c)
            dh_prev = d_new * (1.0 - z)
            dxc[:, t] = dc
            acc["uc"] += (r * h_prev).T @ dc
            d_rh = dc @ w["uc"].T
            dr = d_rh * h_prev * r * (1.0 - r)
            dh_prev += d_rh * r
            dxz[:, t] = dz
            acc["uz"] += h_prev.T @ dz
            dh_prev += dz @ w["uz"].T
            dxr[:, t] = dr
            acc["ur"] += h_prev.T @ dr
            dh_prev += dr @ w["ur"].T
            dh = dh_prev + d_pass
        grads = {
            "wz": np.einsum("btd,bth->dh", x, dxz),
            "wr": np.einsum("btd,bth->dh", x, dxr),
            "wc": np.einsum("btd,bth->dh", x, dxc),
            "bz": dxz.sum(axis=(0, 1)),
            "br": dxr.sum(axis=(0, 1)),
            "bc": dxc.sum(axis=(0, 1)),
            **acc,
        }
        self.grads = {f"{self.name}.{k}": v for k, v in grads.items()}
        _check_finite_grads(self.grads, self.name)
        return dxz @ w["wz"].T + dxr @ w["wr"].T + dxc @ w["wc"].T


class Dense:
    def __init__(self, d_in: int, d_out: int, name: str = "dense",
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.name = name
        self.d_in, self.d_out = d_in, d_out
        self.w = glorot_uniform(rng, d_in, d_out, (d_in, d_out), dtype)
        self.b = np.zeros(d_out, dtype=dtype)
        self._x = None
        self.grads: dict[str, np.ndarray] = {}

    def params(self) -> dict[str, np.ndarray]:
        return {f"{self.name}.w": self.w, f"{self.name}.b": self.b}

    def forward(self, x: np.ndarray) -> np.ndarray:
        if x.shape[-1] != self.d_in:
            raise DimensionError(f"{self.name}: expected trailing dim {self.d_in}, got {x.shape}")
        self._x = x
        return x @ self.w + self.b

    def backward(self, dout: np.ndarray) -> np.ndarray:
        self.grads = {f"{self.name}.w": self._x.T @ dout, f"{self.name}.b": dout.sum(axis=0)}
        _check_finite_grads(self.grads, self.name)
        return dout @ self.w.T


class ReLU:
    def __init__(self, name: str = "relu"):
        self.name = name
        self._mask = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dout: np.ndarray) -> np.ndarray:
        return np.where(self._mask, dout, 0.0)


class Dropout:
    """Inverted dropout: train mode scales kept units by 1/(1-rate)."""

    def __init__(self, rate: float, name: str = "dropout"):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.name = name
        self._mask = None

    def forward(self, x: np.ndarray, train: bool, rng: np.random.Generator | None = None) -> np.ndarray:
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError(f"{self.name}: train-mode dropout needs an rng")
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) >= self.rate).astype(x.dtype) / keep
        return x * self._mask

    def backward(self, dout: np.ndarray) -> np.ndarray:
        if self._mask is None:
            return dout
        return dout * self._mask


@dataclass
class AdamState:
    """Adam moments; m/v are keyed like the parameter dict."""

    learning_rate: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], state: AdamState) -> AdamState:
    """One bias-corrected Adam update, in place on the parameter arrays."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name].astype(p.dtype)
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        state.m[name] = b1 * state.m[name] + (1.0 - b1) * g
        state.v[name] = b2 * state.v[name] + (1.0 - b2) * g * g
        m_hat = state.m[name] / (1.0 - b1 ** state.t)
        v_hat = state.v[name] / (1.0 - b2 ** state.t)
        p -= (state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)
    return state


def architecture_fingerprint(spec: str) -> str:
    return hashlib.sha256(spec.encode("utf-8")).hexdigest()


def save_params(path: str | Path, params: dict[str, np.ndarray], fingerprint: str) -> None:
    """Checkpoint layout: magic, version, fingerprint, then named f32 blobs."""
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fp = fingerprint.encode("ascii")
        fh.write(struct.pack("<I", len(fp)))
        fh.write(fp)
        fh.write(struct.pack("<I", len(params)))
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f4")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<I", len(nb)))
            fh.write(nb)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_params(path: str | Path, expected_fingerprint: str | None = None) -> tuple[dict[str, np.ndarray], str]:
    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise CheckpointError(f"{path}: not a parameter checkpoint (bad magic)")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
        (fp_len,) = struct.unpack("<I", fh.read(4))
        fingerprint = fh.read(fp_len).decode("ascii")
        if expected_fingerprint is not None and fingerprint != expected_fingerprint:
            raise CheckpointError(
                f"{path}: architecture fingerprint mismatch "
                f"(checkpoint {fingerprint[:12]}…, expected {expected_fingerprint[:12]}…)"
            )
        (n_params,) = struct.unpack("<I", fh.read(4))
        params: dict[str, np.ndarray] = {}
        for _ in range(n_params):
            (name_len,) = struct.unpack("<I", fh.read(4))
            name = fh.read(name_len).decode("utf-8")
            (ndim,) = struct.unpack("<I", fh.read(4))
            shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim))
            count = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(fh.read(4 * count), dtype="<f4")
            if data.size != count:
                raise CheckpointError(f"{path}: truncated blob for {name}")
            params[name] = data.reshape(shape).astype(np.float32)
    return params, fingerprint


def numerical_gradient(loss_fn, array: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central finite differences of a scalar loss wrt one array, in place."""
    grad = np.zeros_like(array, dtype=np.float64)
    flat = array.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = loss_fn()
        flat[i] = orig - step
        lo = loss_fn()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2.0 * step)
    return grad


def gradient_gap(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Max relative disagreement, with the scale floored at 1e-4 so
    finite-difference noise on near-zero entries does not register."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-4)
    rel = np.abs(analytic - numeric) / scale
    return float(rel.max()) if rel.size else 0.0
