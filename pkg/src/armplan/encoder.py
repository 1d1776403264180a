"""Obstacle point-cloud compression autoencoder.

A plain MLP autoencoder over flattened clouds learns the latent condition
code consumed by the trajectory generator.  After pretraining the model is
frozen: a parameter checksum is recorded and downstream training must leave
it untouched.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import nncore
from .nncore import AdamState, ParamStore, adam_step, backward, relu
from .world import ObstaclePointCloud


@dataclass
class CaeConfig:
    input_dim: int = 4200
    hidden: tuple[int, ...] = (786, 512, 256)
    latent_dim: int = 60
    lambda_reg: float = 1e-3
    epochs: int = 30
    batch: int = 64
    lr: float = 3e-4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.input_dim % 3 != 0:
            raise ValueError(f"input_dim must be 3*K, got {self.input_dim}")
        if self.latent_dim < 1:
            raise ValueError(f"latent_dim must be >= 1, got {self.latent_dim}")

    @property
    def k_points(self) -> int:
        return self.input_dim // 3


class FrozenModelError(RuntimeError):
    """Attempt to modify a frozen encoder."""


class CaeModel:
    """Encoder/decoder MLP pair with ReLU hiddens and a freeze contract."""

    def __init__(self, config: CaeConfig):
        self.config = config
        self.store = ParamStore()
        self.frozen = False
        self._frozen_checksum: str | None = None
        gen = torch.Generator().manual_seed(config.seed)
        enc_dims = [config.input_dim, *config.hidden, config.latent_dim]
        dec_dims = enc_dims[::-1]
        self._enc_names = self._build_mlp("enc", enc_dims, gen)
        self._dec_names = self._build_mlp("dec", dec_dims, gen)

    def _build_mlp(self, prefix: str, dims: list[int], gen: torch.Generator) -> list[str]:
        names = []
        for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            scale = math.sqrt(2.0 / d_in)
            w = torch.randn((d_out, d_in), generator=gen) * scale
            self.store.add(f"{prefix}/{i}/w", w)
            self.store.add(f"{prefix}/{i}/b", torch.zeros(d_out))
            names.append(f"{prefix}/{i}")
        return names

    def _mlp(self, names: list[str], x: torch.Tensor) -> torch.Tensor:
        for i, name in enumerate(names):
            x = nncore.linear(x, self.store[f"{name}/w"], self.store[f"{name}/b"])
            if i < len(names) - 1:
                x = relu(x)
        return x

    def encode_tensor(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] != self.config.input_dim:
            raise ValueError(f"expected flattened clouds of size {self.config.input_dim}, "
                             f"got {x.shape[-1]}")
        return self._mlp(self._enc_names, x)

    def decode_tensor(self, z: torch.Tensor) -> torch.Tensor:
        return self._mlp(self._dec_names, z)

    def encoder_sq_norm(self) -> torch.Tensor:
        total = None
        for name in self._enc_names:
            for suffix in ("w", "b"):
                sq = (self.store[f"{name}/{suffix}"] ** 2).sum()
                total = sq if total is None else total + sq
        return total

    def encode(self, cloud: ObstaclePointCloud | np.ndarray) -> np.ndarray:
        """Latent code of one cloud; pure and deterministic once frozen."""
        flat = cloud.flat() if isinstance(cloud, ObstaclePointCloud) else np.asarray(cloud)
        flat = flat.reshape(-1)
        if flat.size != self.config.input_dim:
            raise ValueError(f"cloud has {flat.size} values, expected {self.config.input_dim}")
        with torch.no_grad():
            z = self.encode_tensor(torch.as_tensor(flat, dtype=torch.float32))
        return z.numpy().copy()

    def encode_batch(self, flats: np.ndarray) -> np.ndarray:
        flats = np.asarray(flats, dtype=np.float32)
        with torch.no_grad():
            return self.encode_tensor(torch.from_numpy(flats)).numpy().copy()

    def freeze(self) -> None:
        self.frozen = True
        for p in self.store.parameters():
            p.requires_grad_(False)
        self._frozen_checksum = self.store.checksum()

    @property
    def checksum(self) -> str | None:
        return self._frozen_checksum

    def verify_frozen(self) -> bool:
        """True when the parameters still match the freeze-time checksum."""
        return self.frozen and self.store.checksum() == self._frozen_checksum

    # ------------------------------------------------------------ persistence

    def save(self, path: str | Path) -> None:
        arrays = {f"cae/{name}": value for name, value in self.store.state_arrays().items()}
        if self.frozen:
            arrays["cae/_checksum"] = nncore.digest_to_array(self._frozen_checksum)
        nncore.save_checkpoint(path, arrays)
        sidecar = Path(str(path) + ".json")
        sidecar.write_text(json.dumps({
            "input_dim": self.config.input_dim,
            "hidden": list(self.config.hidden),
            "latent_dim": self.config.latent_dim,
            "lambda_reg": self.config.lambda_reg,
            "seed": self.config.seed,
        }, indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "CaeModel":
        arrays = nncore.load_checkpoint(path)
        sidecar = Path(str(path) + ".json")
        meta = json.loads(sidecar.read_text())
        config = CaeConfig(input_dim=meta["input_dim"], hidden=tuple(meta["hidden"]),
                           latent_dim=meta["latent_dim"],
                           lambda_reg=meta.get("lambda_reg", 1e-3),
                           seed=meta.get("seed", 0))
        model = cls(config)
        params = {name[len("cae/"):]: value for name, value in arrays.items()
                  if name.startswith("cae/") and not name.startswith("cae/_")}
        model.store.load_arrays(params)
        if "cae/_checksum" in arrays:
            stored = nncore.array_to_digest(arrays["cae/_checksum"])
            model.frozen = True
            model._frozen_checksum = stored
            for p in model.store.parameters():
                p.requires_grad_(False)
            if model.store.checksum() != stored:
                raise ValueError(f"{path}: frozen checksum does not match parameters")
        return model


def cae_loss(model: CaeModel, batch: torch.Tensor | np.ndarray) -> torch.Tensor:
    """Ordered-point reconstruction MSE plus encoder weight regularization.

    Per cloud: (1/K) * sum of squared point errors; the batch is averaged.
    """
    x = torch.as_tensor(batch, dtype=torch.float32)
    if x.dim() == 1:
        x = x.unsqueeze(0)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    recon = model.decode_tensor(model.encode_tensor(x))
    per_cloud = ((recon - x) ** 2).sum(dim=-1) / model.config.k_points
    loss = per_cloud.mean()
    if model.config.lambda_reg > 0:
        loss = loss + model.config.lambda_reg * model.encoder_sq_norm()
    return loss


def reconstruction_mse(model: CaeModel, flats: np.ndarray) -> float:
    """Mean over clouds of per-point squared reconstruction error (m^2)."""
    x = torch.as_tensor(np.asarray(flats, dtype=np.float32))
    if x.dim() == 1:
        x = x.unsqueeze(0)
    with torch.no_grad():
        recon = model.decode_tensor(model.encode_tensor(x))
        per_cloud = ((recon - x) ** 2).sum(dim=-1) / model.config.k_points
    return float(per_cloud.mean())


def train_cae(config: CaeConfig, clouds: np.ndarray, steps: int | None = None,
              target_mse: float | None = None, log_every: int = 0) -> CaeModel:
    """Train on flattened clouds (N, input_dim) and return the frozen model.

    ``steps`` overrides the epoch count with an absolute step budget;
    ``target_mse`` stops early (checked every 100 steps) once the full-set
    reconstruction error falls below it.
    """
    clouds = np.asarray(clouds, dtype=np.float32)
    if clouds.ndim == 1:
        clouds = clouds[None, :]
    if clouds.shape[0] < 1:
        raise ValueError("training needs at least one cloud")
    model = CaeModel(config)
    state = AdamState.for_store(model.store, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    n = clouds.shape[0]
    batch = min(config.batch, n)
    total_steps = steps if steps is not None else config.epochs * max(1, n // batch)
    data = torch.from_numpy(clouds)
    for step in range(total_steps):
        idx = rng.integers(0, n, size=batch)
        model.store.zero_grad()
        loss = cae_loss(model, data[torch.from_numpy(idx)])
        backward(loss)
        adam_step(model.store, state)
        if log_every and (step + 1) % log_every == 0:
            print(f"  cae step {step + 1}/{total_steps} loss {float(loss.detach()):.6f}",
                  flush=True)
        if target_mse is not None and (step + 1) % 100 == 0 \
                and reconstruction_mse(model, clouds) < target_mse:
            break
    model.freeze()
    return model
