"""Differentiable-computation substrate for the learned components.

Tensors and reverse-mode gradients are provided by torch (CPU); this module
pins down the exact op semantics the models rely on, a named parameter store,
a manual bias-corrected Adam, and the binary checkpoint format.  All ops are
dtype-agnostic: float32 is the working precision, float64 is used by the
gradient-check test mode.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

LAYER_NORM_EPS = 1e-5

_debug_checks = False


def set_debug_checks(enabled: bool) -> None:
    """When enabled, every op asserts its output is finite."""
    global _debug_checks
    _debug_checks = enabled


def _checked(x: torch.Tensor) -> torch.Tensor:
    if _debug_checks and not torch.isfinite(x).all():
        raise FloatingPointError("non-finite values produced by an op")
    return x


class ParamStore:
    """Named parameters with gradient slots; names are unique."""

    def __init__(self) -> None:
        self._params: dict[str, torch.nn.Parameter] = {}

    def add(self, name: str, value: torch.Tensor | np.ndarray) -> torch.nn.Parameter:
        if name in self._params:
            raise KeyError(f"duplicate parameter name '{name}'")
        tensor = torch.as_tensor(value)
        param = torch.nn.Parameter(tensor.clone().detach(), requires_grad=True)
        self._params[name] = param
        return param

    def __getitem__(self, name: str) -> torch.nn.Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def parameters(self) -> list[torch.nn.Parameter]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            if p.grad is not None:
                p.grad.detach_()
                p.grad.zero_()

    def n_scalars(self) -> int:
        return sum(p.numel() for p in self._params.values())

    def checksum(self) -> str:
        """SHA-256 over names and float32 parameter bytes, order-independent."""
        h = hashlib.sha256()
        for name in sorted(self._params):
            h.update(name.encode())
            h.update(self._params[name].detach().to(torch.float32).numpy().tobytes())
        return h.hexdigest()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.detach().to(torch.float32).numpy().copy()
                for name, p in self._params.items()}

    def load_arrays(self, arrays: dict[str, np.ndarray], strict: bool = True) -> None:
        for name, p in self._params.items():
            if name not in arrays:
                if strict:
                    raise KeyError(f"checkpoint is missing parameter '{name}'")
                continue
            value = torch.as_tensor(arrays[name], dtype=p.dtype)
            if value.shape != p.shape:
                raise ValueError(f"shape mismatch for '{name}': "
                                 f"{tuple(value.shape)} vs {tuple(p.shape)}")
            with torch.no_grad():
                p.copy_(value)


# ------------------------------------------------------------------ ops

def linear(x: torch.Tensor, w: torch.Tensor, b: torch.Tensor | None = None) -> torch.Tensor:
    """y = x @ w.T + b with w shaped (out_features, in_features)."""
    if x.shape[-1] != w.shape[-1]:
        raise ValueError(f"linear: x last dim {x.shape[-1]} != w in dim {w.shape[-1]}")
    return _checked(torch.nn.functional.linear(x, w, b))


def layer_norm(x: torch.Tensor, g: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Normalization over the last dimension with eps 1e-5, then scale/shift."""
    if g.shape[-1] != x.shape[-1] or b.shape[-1] != x.shape[-1]:
        raise ValueError("layer_norm: gain/bias must match the last dimension")
    return _checked(torch.nn.functional.layer_norm(
        x, (x.shape[-1],), weight=g, bias=b, eps=LAYER_NORM_EPS))


def gelu(x: torch.Tensor) -> torch.Tensor:
    """Exact (erf) GELU."""
    return _checked(torch.nn.functional.gelu(x, approximate="none"))


def relu(x: torch.Tensor) -> torch.Tensor:
    return _checked(torch.nn.functional.relu(x))


def softmax_lastdim(x: torch.Tensor) -> torch.Tensor:
    return _checked(torch.nn.functional.softmax(x, dim=-1))


def multi_head_self_attention(x: torch.Tensor, params: dict[str, torch.Tensor],
                              n_heads: int) -> torch.Tensor:
    """Full bidirectional self-attention over (..., seq, width).

    ``params`` holds the in/out projections wq, wk, wv, wo (each width x width)
    and biases bq, bk, bv, bo; scaling is 1/sqrt(width / n_heads).
    """
    width = x.shape[-1]
    if width % n_heads != 0:
        raise ValueError(f"width {width} not divisible by {n_heads} heads")
    head = width // n_heads
    squeeze = x.dim() == 2
    if squeeze:
        x = x.unsqueeze(0)
    batch, seq, _ = x.shape
    q = linear(x, params["wq"], params["bq"])
    k = linear(x, params["wk"], params["bk"])
    v = linear(x, params["wv"], params["bv"])
    q = q.reshape(batch, seq, n_heads, head).transpose(1, 2)
    k = k.reshape(batch, seq, n_heads, head).transpose(1, 2)
    v = v.reshape(batch, seq, n_heads, head).transpose(1, 2)
    att = softmax_lastdim(q @ k.transpose(-1, -2) / math.sqrt(head))
    out = (att @ v).transpose(1, 2).reshape(batch, seq, width)
    out = linear(out, params["wo"], params["bo"])
    return _checked(out.squeeze(0) if squeeze else out)


def sinusoidal_embedding(t: int | torch.Tensor, width: int,
                         dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Standard sin/cos frequency embedding of a non-negative index.

    Scalar input yields (width,); a tensor of indices yields (..., width).
    """
    if width % 2 != 0:
        raise ValueError(f"embedding width must be even, got {width}")
    half = width // 2
    if not torch.is_tensor(t):
        if t < 0:
            raise ValueError(f"index must be >= 0, got {t}")
        t = torch.tensor(float(t))
    t = t.to(dtype)
    freqs = torch.exp(torch.arange(half, dtype=dtype)
                      * -(math.log(10000.0) / max(half - 1, 1)))
    angles = t.unsqueeze(-1) * freqs
    return _checked(torch.cat([torch.sin(angles), torch.cos(angles)], dim=-1))


def dropout(x: torch.Tensor, p: float, generator: torch.Generator | None,
            training: bool) -> torch.Tensor:
    """Inverted dropout driven by an explicit generator for determinism."""
    if not training or p <= 0.0:
        return x
    keep = (torch.rand(x.shape, generator=generator, dtype=x.dtype) >= p).to(x.dtype)
    return _checked(x * keep / (1.0 - p))


def backward(loss: torch.Tensor) -> None:
    """Reverse-mode gradients into every parameter's grad slot (accumulating)."""
    if loss.numel() != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {tuple(loss.shape)}")
    loss.backward()


# ------------------------------------------------------------------ Adam

@dataclass
class AdamState:
    """Bias-corrected Adam moments, one slot per parameter."""

    lr: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, torch.Tensor] = field(default_factory=dict)
    v: dict[str, torch.Tensor] = field(default_factory=dict)

    @classmethod
    def for_store(cls, store: ParamStore, lr: float = 3e-4) -> "AdamState":
        state = cls(lr=lr)
        for name, p in store.items():
            state.m[name] = torch.zeros_like(p, requires_grad=False)
            state.v[name] = torch.zeros_like(p, requires_grad=False)
        return state


def adam_step(store: ParamStore, state: AdamState) -> None:
    """One Adam update over every parameter with a gradient."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.step
    bc2 = 1.0 - b2 ** state.step
    with torch.no_grad():
        for name, p in store.items():
            if p.grad is None:
                continue
            g = p.grad
            m = state.m[name]
            v = state.v[name]
            m.mul_(b1).add_(g, alpha=1.0 - b1)
            v.mul_(b2).addcmul_(g, g, value=1.0 - b2)
            p.addcdiv_(m / bc1, (v / bc2).sqrt().add_(state.eps), value=-state.lr)


# ------------------------------------------------------------------ checkpoints

MAGIC = b"RDCK"
VERSION = 1


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray]) -> None:
    """Write named float32 arrays: magic, version u32, count u32, then entries
    of (name_len u16, name, ndim u8, dims u32 x ndim, f32 data), little-endian."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<I", len(arrays)))
        for name, value in arrays.items():
            raw = name.encode()
            value = np.ascontiguousarray(value, dtype="<f4")
            f.write(struct.pack("<H", len(raw)))
            f.write(raw)
            f.write(struct.pack("<B", value.ndim))
            for dim in value.shape:
                f.write(struct.pack("<I", dim))
            f.write(value.tobytes())


def load_checkpoint(path: str | Path) -> dict[str, np.ndarray]:
    blob = memoryview(Path(path).read_bytes())
    if bytes(blob[:4]) != MAGIC:
        raise ValueError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (count,) = struct.unpack_from("<I", blob, 8)
    offset = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        name = bytes(blob[offset:offset + name_len]).decode()
        offset += name_len
        (ndim,) = struct.unpack_from("<B", blob, offset)
        offset += 1
        dims = struct.unpack_from(f"<{ndim}I", blob, offset) if ndim else ()
        offset += 4 * ndim
        n = int(np.prod(dims)) if ndim else 1
        data = np.frombuffer(blob, dtype="<f4", count=n, offset=offset).copy()
        offset += 4 * n
        out[name] = data.reshape(dims)
    if offset != len(blob):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return out


def digest_to_array(digest_hex: str) -> np.ndarray:
    """Pack a hex digest into a float32 array for storage as a checkpoint entry."""
    raw = bytes.fromhex(digest_hex)
    return np.frombuffer(raw, dtype="<f4").copy()


def array_to_digest(arr: np.ndarray) -> str:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes().hex()
