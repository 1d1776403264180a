"""Conditional trajectory diffusion: DDPM schedule, an encoder-only
transformer that predicts the clean trajectory, composite joint/workspace/
collision training losses, and guided sampling.

Conditioning is a single token built from the diffusion step embedding plus a
projection of (scene latent, start config, goal config); classifier-free
masking swaps that projection for a learned null embedding.  Sampling blends
conditional/unconditional predictions, nudges the prediction out of the
obstacle safety band through the FK Jacobian, and pins the first/last frames
by renoising them to the current step (noise interpolation), so generated
trajectories start and end exactly on the task endpoints.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import nncore
from .encoder import CaeModel
from .kinematics import RobotModel, fk_points, fk_points_jacobian
from .nncore import AdamState, ParamStore, adam_step, backward
from .world import Scene

CLOUD_SEED = 0      # fixed observation seed: the condition is a function of the scene
CLOUD_POINTS = 1400


# ------------------------------------------------------------------ schedule

@dataclass(frozen=True)
class NoiseSchedule:
    """DDPM schedule; index convention is 1-based (t in [1, T])."""

    betas: np.ndarray
    beta_start: float
    beta_end: float

    def __post_init__(self) -> None:
        betas = np.asarray(self.betas, dtype=float)
        object.__setattr__(self, "betas", betas)
        if betas.ndim != 1 or betas.size < 1:
            raise ValueError("betas must be a non-empty vector")
        if not (np.all(betas > 0) and np.all(betas < 1)):
            raise ValueError("betas must lie in (0, 1)")
        if np.any(np.diff(betas) < 0):
            raise ValueError("betas must be non-decreasing")
        object.__setattr__(self, "alphas", 1.0 - betas)
        object.__setattr__(self, "alpha_bars", np.cumprod(1.0 - betas))

    @classmethod
    def linear(cls, t_steps: int = 200, beta_start: float = 1e-4,
               beta_end: float = 0.02) -> "NoiseSchedule":
        return cls(betas=np.linspace(beta_start, beta_end, t_steps),
                   beta_start=beta_start, beta_end=beta_end)

    @property
    def t_steps(self) -> int:
        return self.betas.size

    def beta(self, t: int) -> float:
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha(self, t: int) -> float:
        self._check_t(t)
        return float(self.alphas[t - 1])

    def alpha_bar(self, t: int) -> float:
        """Cumulative product up to step t; alpha_bar(0) == 1 exactly."""
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.alpha_bars[t - 1])

    def _check_t(self, t: int) -> None:
        if not 1 <= t <= self.t_steps:
            raise ValueError(f"step t={t} outside [1, {self.t_steps}]")

    def to_dict(self) -> dict:
        return {"t_steps": self.t_steps, "beta_start": self.beta_start,
                "beta_end": self.beta_end}

    @classmethod
    def from_dict(cls, raw: dict) -> "NoiseSchedule":
        return cls.linear(raw["t_steps"], raw["beta_start"], raw["beta_end"])


def q_sample(x0: np.ndarray, t: int, eps: np.ndarray,
             schedule: NoiseSchedule) -> np.ndarray:
    """Forward diffusion draw: sqrt(abar_t) x0 + sqrt(1 - abar_t) eps."""
    schedule._check_t(t)
    x0 = np.asarray(x0, dtype=float)
    eps = np.asarray(eps, dtype=float)
    if eps.shape != x0.shape:
        raise ValueError(f"noise shape {eps.shape} != sample shape {x0.shape}")
    ab = schedule.alpha_bar(t)
    return math.sqrt(ab) * x0 + math.sqrt(1.0 - ab) * eps


def posterior_moments(x_t: np.ndarray, x0_hat: np.ndarray, t: int,
                      schedule: NoiseSchedule) -> tuple[np.ndarray, float]:
    """Closed-form mean and variance of q(x_{t-1} | x_t, x0_hat)."""
    schedule._check_t(t)
    ab_t = schedule.alpha_bar(t)
    ab_prev = schedule.alpha_bar(t - 1)
    beta_t = schedule.beta(t)
    alpha_t = schedule.alpha(t)
    coef_x0 = math.sqrt(ab_prev) * beta_t / (1.0 - ab_t)
    coef_xt = math.sqrt(alpha_t) * (1.0 - ab_prev) / (1.0 - ab_t)
    mean = coef_x0 * np.asarray(x0_hat, dtype=float) + coef_xt * np.asarray(x_t, dtype=float)
    var = (1.0 - ab_prev) / (1.0 - ab_t) * beta_t
    return mean, var


def posterior_step(x_t: np.ndarray, x0_hat: np.ndarray, t: int,
                   rng: np.random.Generator, schedule: NoiseSchedule) -> np.ndarray:
    """One reverse step: sample q(x_{t-1} | x_t, x0_hat); t=1 returns the mean."""
    mean, var = posterior_moments(x_t, x0_hat, t, schedule)
    if t == 1:
        return mean
    return mean + math.sqrt(var) * rng.standard_normal(mean.shape)


# ------------------------------------------------------------------ model

@dataclass
class DenoiserConfig:
    layers: int = 8
    width: int = 512
    heads: int = 8
    frames: int = 50
    dof: int = 7
    dropout: float = 0.1
    latent_dim: int = 60
    ffn_mult: int = 4

    def __post_init__(self) -> None:
        if self.width % self.heads != 0:
            raise ValueError(f"width {self.width} not divisible by heads {self.heads}")
        if self.frames < 2:
            raise ValueError(f"frames must be >= 2, got {self.frames}")

    @property
    def cond_dim(self) -> int:
        return self.latent_dim + 2 * self.dof

    def to_dict(self) -> dict:
        return {"layers": self.layers, "width": self.width, "heads": self.heads,
                "frames": self.frames, "dof": self.dof, "dropout": self.dropout,
                "latent_dim": self.latent_dim, "ffn_mult": self.ffn_mult}

    @classmethod
    def from_dict(cls, raw: dict) -> "DenoiserConfig":
        return cls(**raw)


@dataclass
class LossWeights:
    lambda_joint: float = 1.0
    lambda_point: float = 1.0
    lambda_collision: float = 0.5

    def __post_init__(self) -> None:
        if min(self.lambda_joint, self.lambda_point, self.lambda_collision) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_joint == self.lambda_point == self.lambda_collision == 0:
            raise ValueError("at least one loss weight must be positive")

    def to_dict(self) -> dict:
        return {"lambda_joint": self.lambda_joint, "lambda_point": self.lambda_point,
                "lambda_collision": self.lambda_collision}


@dataclass
class GuidanceConfig:
    cfg_scale: float = 2.0          # w: classifier-free blend
    collision_step: float = 0.1     # eta: gradient step on the safety penalty
    safe_distance: float = 0.05
    inpaint_prefix: int = 1
    inpaint_suffix: int = 1
    eta_decay_frac: float = 0.2     # eta ramps to 0 over the last fraction of steps
    # frames over which the residual endpoint correction is distributed, so
    # pinned endpoints connect smoothly to the generated interior (0 disables)
    endpoint_blend: int = 8

    def __post_init__(self) -> None:
        if self.cfg_scale < 0 or self.collision_step < 0:
            raise ValueError("guidance scales must be >= 0")
        if self.inpaint_prefix < 0 or self.inpaint_suffix < 0:
            raise ValueError("inpaint frame counts must be >= 0")
        if self.endpoint_blend < 0:
            raise ValueError("endpoint_blend must be >= 0")


@dataclass
class Condition:
    """Task descriptor: scene latent plus start/goal configs.

    ``null_flag`` replaces the whole descriptor with the learned null
    embedding at token construction (classifier-free masking).
    """

    z: np.ndarray
    q_init: np.ndarray
    q_goal: np.ndarray
    null_flag: bool = False

    def vector(self) -> np.ndarray:
        return np.concatenate([np.asarray(self.z, dtype=float),
                               np.asarray(self.q_init, dtype=float),
                               np.asarray(self.q_goal, dtype=float)])


class Denoiser:
    """Encoder-only transformer predicting the clean trajectory.

    Token 0 carries the step + condition information; tokens 1..N are the
    per-frame projections of the noisy trajectory plus positional encodings.
    """

    def __init__(self, config: DenoiserConfig, seed: int = 0):
        self.config = config
        self.store = ParamStore()
        gen = torch.Generator().manual_seed(seed)
        w = config.width

        def init(name: str, shape: tuple[int, ...], fan_in: int) -> None:
            scale = 1.0 / math.sqrt(fan_in)
            self.store.add(name, torch.randn(shape, generator=gen) * scale)

        init("in_proj/w", (w, config.dof), config.dof)
        self.store.add("in_proj/b", torch.zeros(w))
        init("cond_proj/w", (w, config.cond_dim), config.cond_dim)
        self.store.add("cond_proj/b", torch.zeros(w))
        self.store.add("null_embed", torch.randn((w,), generator=gen) * 0.02)
        init("tok_proj/w", (w, w), w)
        self.store.add("tok_proj/b", torch.zeros(w))
        for layer in range(config.layers):
            p = f"layer{layer}"
            self.store.add(f"{p}/ln1/g", torch.ones(w))
            self.store.add(f"{p}/ln1/b", torch.zeros(w))
            for name in ("wq", "wk", "wv", "wo"):
                init(f"{p}/attn/{name}", (w, w), w)
            for name in ("bq", "bk", "bv", "bo"):
                self.store.add(f"{p}/attn/{name}", torch.zeros(w))
            self.store.add(f"{p}/ln2/g", torch.ones(w))
            self.store.add(f"{p}/ln2/b", torch.zeros(w))
            hidden = config.ffn_mult * w
            init(f"{p}/ffn/w1", (hidden, w), w)
            self.store.add(f"{p}/ffn/b1", torch.zeros(hidden))
            init(f"{p}/ffn/w2", (w, hidden), hidden)
            self.store.add(f"{p}/ffn/b2", torch.zeros(w))
        self.store.add("final_ln/g", torch.ones(w))
        self.store.add("final_ln/b", torch.zeros(w))
        init("out_proj/w", (config.dof, w), w)
        self.store.add("out_proj/b", torch.zeros(config.dof))

        tail = sinusoid_table(config.frames, w)
        self._pos = torch.from_numpy(tail).to(torch.float32)

    def forward(self, x_t: torch.Tensor, t: torch.Tensor, cond_vec: torch.Tensor,
                null_mask: torch.Tensor, training: bool = False,
                gen: torch.Generator | None = None) -> torch.Tensor:
        """x_t (B, N, D) at steps t (B,) with condition vectors (B, cond_dim)."""
        cfg = self.config
        if x_t.dim() != 3 or x_t.shape[1] != cfg.frames or x_t.shape[2] != cfg.dof:
            raise ValueError(f"expected (B, {cfg.frames}, {cfg.dof}) input, "
                             f"got {tuple(x_t.shape)}")
        store = self.store
        dtype = x_t.dtype
        t_emb = nncore.sinusoidal_embedding(t.to(dtype), cfg.width, dtype=dtype)
        cond_emb = nncore.linear(cond_vec.to(dtype), store["cond_proj/w"].to(dtype),
                                 store["cond_proj/b"].to(dtype))
        null_embed = store["null_embed"].to(dtype)
        mask = null_mask.to(dtype).unsqueeze(-1)
        cond_emb = mask * null_embed + (1.0 - mask) * cond_emb
        z_tk = nncore.linear(t_emb + cond_emb, store["tok_proj/w"].to(dtype),
                             store["tok_proj/b"].to(dtype))

        frames = nncore.linear(x_t, store["in_proj/w"].to(dtype),
                               store["in_proj/b"].to(dtype))
        frames = frames + self._pos.to(dtype)
        h = torch.cat([z_tk.unsqueeze(1), frames], dim=1)

        for layer in range(cfg.layers):
            p = f"layer{layer}"
            attn_params = {name: store[f"{p}/attn/{name}"].to(dtype)
                           for name in ("wq", "wk", "wv", "wo", "bq", "bk", "bv", "bo")}
            normed = nncore.layer_norm(h, store[f"{p}/ln1/g"].to(dtype),
                                       store[f"{p}/ln1/b"].to(dtype))
            att = nncore.multi_head_self_attention(normed, attn_params, cfg.heads)
            h = h + nncore.dropout(att, cfg.dropout, gen, training)
            normed = nncore.layer_norm(h, store[f"{p}/ln2/g"].to(dtype),
                                       store[f"{p}/ln2/b"].to(dtype))
            ff = nncore.linear(normed, store[f"{p}/ffn/w1"].to(dtype),
                               store[f"{p}/ffn/b1"].to(dtype))
            ff = nncore.linear(nncore.gelu(ff), store[f"{p}/ffn/w2"].to(dtype),
                               store[f"{p}/ffn/b2"].to(dtype))
            h = h + nncore.dropout(ff, cfg.dropout, gen, training)

        h = nncore.layer_norm(h, store["final_ln/g"].to(dtype),
                              store["final_ln/b"].to(dtype))
        return nncore.linear(h[:, 1:], store["out_proj/w"].to(dtype),
                             store["out_proj/b"].to(dtype))


def sinusoid_table(n: int, width: int) -> np.ndarray:
    table = np.stack([
        nncore.sinusoidal_embedding(i, width).numpy() for i in range(n)
    ])
    return table


# ------------------------------------------------------------------ FK bridge

class _FkPointsBridge(torch.autograd.Function):
    """fk_points as an autograd node: analytic Jacobian in the backward pass."""

    @staticmethod
    def forward(ctx, q: torch.Tensor, model: RobotModel):
        q_np = q.detach().cpu().numpy().astype(float)
        pts = fk_points(model, q_np)
        jac = fk_points_jacobian(model, q_np)
        ctx.jac = torch.from_numpy(jac).to(q.dtype)
        return torch.from_numpy(pts).to(q.dtype)

    @staticmethod
    def backward(ctx, grad_out: torch.Tensor):
        flat = grad_out.reshape(grad_out.shape[0], -1)
        grad_q = torch.einsum("mkd,mk->md", ctx.jac, flat)
        return grad_q, None


def fk_points_torch(q: torch.Tensor, model: RobotModel) -> torch.Tensor:
    """Differentiable workspace points of a batch of configurations (M, D)."""
    return _FkPointsBridge.apply(q, model)


def hinge_torch(points: torch.Tensor, scene: Scene, safe: float) -> torch.Tensor:
    """Mean safety hinge over point sets (..., K, 3) against sphere obstacles."""
    if not scene.spheres:
        return points.sum() * 0.0
    centers = torch.as_tensor(scene.centers, dtype=points.dtype)
    radii = torch.as_tensor(scene.radii, dtype=points.dtype)
    diff = points.unsqueeze(-2) - centers
    dist = torch.linalg.vector_norm(diff, dim=-1) - radii
    d_min = dist.amin(dim=-1)
    return torch.clamp(safe - d_min, min=0.0).mean(dim=-1)


def _padded_spheres(scenes: list[Scene], dtype: torch.dtype) -> tuple[torch.Tensor, torch.Tensor]:
    """Per-sample sphere tensors padded with far-away dummies (never active)."""
    s_max = max(len(s.spheres) for s in scenes)
    b = len(scenes)
    centers = np.full((b, s_max, 3), 1e6)
    radii = np.ones((b, s_max))
    for i, scene in enumerate(scenes):
        m = len(scene.spheres)
        if m:
            centers[i, :m] = scene.centers
            radii[i, :m] = scene.radii
    return (torch.as_tensor(centers, dtype=dtype),
            torch.as_tensor(radii, dtype=dtype))


# ------------------------------------------------------------------ planner-facing model

@dataclass
class TrainExample:
    trajectory: np.ndarray     # (N, D)
    condition: Condition
    scene: Scene


@dataclass
class SampleResult:
    trajectory: np.ndarray
    clamp_violations: int
    max_clamp: float
    erratic_risk: bool


class TrajectoryDiffusion:
    """Denoiser + schedule + joint-range normalization, with persistence."""

    def __init__(self, denoiser: Denoiser, schedule: NoiseSchedule,
                 robot: RobotModel, weights: LossWeights | None = None,
                 p_mask: float = 0.1, cae_checksum: str | None = None):
        self.denoiser = denoiser
        self.schedule = schedule
        self.robot = robot
        self.weights = weights or LossWeights()
        self.p_mask = p_mask
        self.cae_checksum = cae_checksum
        lo, hi = robot.limits_lo, robot.limits_hi
        self.norm_center = (lo + hi) / 2.0
        self.norm_half = (hi - lo) / 2.0

    def normalize(self, q: np.ndarray) -> np.ndarray:
        return (np.asarray(q, dtype=float) - self.norm_center) / self.norm_half

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) * self.norm_half + self.norm_center

    # -------------------------------------------------------------- training

    def cond_vector(self, cond: Condition) -> np.ndarray:
        """Condition input with endpoints expressed in normalized joint units."""
        return np.concatenate([np.asarray(cond.z, dtype=float),
                               self.normalize(cond.q_init),
                               self.normalize(cond.q_goal)])

    def predict_x0(self, x_t: np.ndarray, t: int, cond: Condition) -> np.ndarray:
        """Clean-trajectory prediction for one noisy trajectory (joint units)."""
        xt = torch.as_tensor(self.normalize(x_t), dtype=torch.float32).unsqueeze(0)
        tv = torch.tensor([float(t)])
        cv = torch.as_tensor(self.cond_vector(cond), dtype=torch.float32).unsqueeze(0)
        nm = torch.tensor([1.0 if cond.null_flag else 0.0])
        with torch.no_grad():
            out = self.denoiser.forward(xt, tv, cv, nm, training=False)
        return self.denormalize(out[0].numpy())

    def training_loss(self, batch: list[TrainExample], rng: np.random.Generator,
                      training: bool = True, gen: torch.Generator | None = None,
                      dtype: torch.dtype = torch.float32) -> torch.Tensor:
        """Composite weighted loss over a batch, noised at uniform random steps."""
        cfg = self.denoiser.config
        b = len(batch)
        x0_q = np.stack([ex.trajectory for ex in batch])
        x0 = torch.as_tensor(self.normalize(x0_q), dtype=dtype)
        t_np = rng.integers(1, self.schedule.t_steps + 1, size=b)
        eps = torch.as_tensor(rng.standard_normal(x0.shape), dtype=dtype)
        ab = torch.as_tensor(self.schedule.alpha_bars[t_np - 1], dtype=dtype)
        x_t = (torch.sqrt(ab)[:, None, None] * x0
               + torch.sqrt(1.0 - ab)[:, None, None] * eps)
        cond_vec = torch.as_tensor(
            np.stack([self.cond_vector(ex.condition) for ex in batch]), dtype=dtype)
        null_mask = torch.as_tensor(
            np.array([1.0 if ex.condition.null_flag else 0.0 for ex in batch]),
            dtype=dtype)
        t_t = torch.as_tensor(t_np.astype(float), dtype=dtype)

        x0_hat = self.denoiser.forward(x_t, t_t, cond_vec, null_mask,
                                       training=training, gen=gen)
        w = self.weights
        loss = x0_hat.sum() * 0.0
        # configuration-space term: per-frame squared error, frame-averaged
        if w.lambda_joint > 0:
            joint = ((x0_hat - x0) ** 2).sum(dim=-1).mean(dim=-1).mean()
            loss = loss + w.lambda_joint * joint
        if w.lambda_point > 0 or w.lambda_collision > 0:
            q_hat = x0_hat * torch.as_tensor(self.norm_half, dtype=dtype) \
                + torch.as_tensor(self.norm_center, dtype=dtype)
            pts_hat = fk_points_torch(q_hat.reshape(b * cfg.frames, cfg.dof),
                                      self.robot)
            pts_hat = pts_hat.reshape(b, cfg.frames, -1, 3)
            if w.lambda_point > 0:
                pts_true = fk_points(self.robot, x0_q.reshape(b * cfg.frames, cfg.dof))
                pts_true = torch.as_tensor(pts_true, dtype=dtype).reshape(pts_hat.shape)
                point = ((pts_hat - pts_true) ** 2).sum(dim=(-1, -2)).mean(dim=-1).mean()
                loss = loss + w.lambda_point * point
            if w.lambda_collision > 0:
                safe = GuidanceConfig().safe_distance
                if any(ex.scene.spheres for ex in batch):
                    centers, radii = _padded_spheres([ex.scene for ex in batch], dtype)
                    diff = pts_hat.unsqueeze(-2) - centers[:, None, None, :, :]
                    dist = torch.linalg.vector_norm(diff, dim=-1) - radii[:, None, None, :]
                    d_min = dist.amin(dim=-1)
                    hinge = torch.clamp(safe - d_min, min=0.0)
                    loss = loss + w.lambda_collision * hinge.mean(dim=-1).mean(dim=-1).mean()
        return loss

    # -------------------------------------------------------------- sampling

    def collision_grad(self, q_frames: np.ndarray, scene: Scene,
                       safe: float) -> np.ndarray:
        """Gradient w.r.t. joint frames of the summed per-frame safety hinge."""
        if not scene.spheres:
            return np.zeros_like(q_frames)
        n = q_frames.shape[0]
        pts = fk_points(self.robot, q_frames)            # (N, K, 3)
        k = pts.shape[1]
        diff = pts[:, :, None, :] - scene.centers[None, None, :, :]
        dist_c = np.linalg.norm(diff, axis=3)
        d = dist_c - scene.radii[None, None, :]
        nearest = np.argmin(d, axis=2)
        take = np.take_along_axis
        d_min = take(d, nearest[:, :, None], axis=2)[:, :, 0]
        active = d_min <= safe
        vec = take(diff, nearest[:, :, None, None], axis=2)[:, :, 0, :]
        norm = take(dist_c, nearest[:, :, None], axis=2)[:, :, 0]
        unit = np.where((norm > 1e-12)[:, :, None], vec / np.maximum(norm, 1e-300)[:, :, None], 0.0)
        grad_pts = np.where(active[:, :, None], -unit / k, 0.0)  # mean over points
        jac = fk_points_jacobian(self.robot, q_frames)   # (N, 3K, D)
        return np.einsum("nkd,nk->nd", jac, grad_pts.reshape(n, -1))

    def sample(self, cond: Condition, guidance: GuidanceConfig, seed: int,
               scene: Scene | None = None,
               inspect_hook=None) -> SampleResult:
        """Generate one trajectory; deterministic per seed.

        The scene drives collision guidance; omit it (or set collision_step=0)
        for unguided generation.
        """
        cfg = self.denoiser.config
        sched = self.schedule
        n, d = cfg.frames, cfg.dof
        if guidance.inpaint_prefix + guidance.inpaint_suffix >= n:
            raise ValueError("inpaint prefix+suffix must leave free frames")
        rng = np.random.default_rng(seed)
        pre, suf = guidance.inpaint_prefix, guidance.inpaint_suffix
        ref_pre = np.tile(self.normalize(cond.q_init), (pre, 1))
        ref_suf = np.tile(self.normalize(cond.q_goal), (suf, 1))
        last_eps = {"pre": None, "suf": None}

        def inpaint(x: np.ndarray, t: int) -> np.ndarray:
            if pre:
                if t > 0:
                    last_eps["pre"] = rng.standard_normal(ref_pre.shape)
                    x[:pre] = q_sample(ref_pre, t, last_eps["pre"], sched)
                else:
                    last_eps["pre"] = np.zeros_like(ref_pre)
                    x[:pre] = ref_pre
            if suf:
                if t > 0:
                    last_eps["suf"] = rng.standard_normal(ref_suf.shape)
                    x[n - suf:] = q_sample(ref_suf, t, last_eps["suf"], sched)
                else:
                    last_eps["suf"] = np.zeros_like(ref_suf)
                    x[n - suf:] = ref_suf
            return x

        x = rng.standard_normal((n, d))
        x = inpaint(x, sched.t_steps)
        cv = self.cond_vector(cond)
        cond_vec = torch.as_tensor(np.stack([cv, cv]), dtype=torch.float32)
        null_mask = torch.tensor([0.0, 1.0])
        decay_span = max(1, int(round(guidance.eta_decay_frac * sched.t_steps)))

        for t in range(sched.t_steps, 0, -1):
            if inspect_hook is not None:
                inspect_hook(t, x.copy(),
                             (ref_pre.copy(), last_eps["pre"].copy()) if pre else None,
                             (ref_suf.copy(), last_eps["suf"].copy()) if suf else None)
            xt_t = torch.as_tensor(np.stack([x, x]), dtype=torch.float32)
            t_t = torch.tensor([float(t), float(t)])
            with torch.no_grad():
                out = self.denoiser.forward(xt_t, t_t, cond_vec, null_mask,
                                            training=False).numpy().astype(float)
            x0_cond, x0_null = out[0], out[1]
            x0_hat = x0_null + guidance.cfg_scale * (x0_cond - x0_null)

            if guidance.collision_step > 0 and scene is not None and scene.spheres:
                eta = guidance.collision_step * min(1.0, (t - 1) / decay_span)
                if eta > 0:
                    q_hat = self.denormalize(x0_hat)
                    grad_q = self.collision_grad(q_hat, scene, guidance.safe_distance)
                    q_hat = q_hat - eta * grad_q
                    x0_hat = self.normalize(q_hat)
            if not np.all(np.isfinite(x0_hat)):
                raise FloatingPointError("guided prediction produced non-finite values")

            x = posterior_step(x, x0_hat, t, rng, sched)
            x = inpaint(x, t - 1)

        traj = self.denormalize(x)
        # distribute the residual endpoint correction over a short window so
        # the exact endpoints connect smoothly to the generated interior
        blend = min(guidance.endpoint_blend, (n - 1) // 2)
        if pre and blend:
            delta = np.asarray(cond.q_init, dtype=float) - traj[0]
            ramp = (blend - np.arange(blend)) / blend
            traj[:blend] += ramp[:, None] * delta[None, :]
        if suf and blend:
            delta = np.asarray(cond.q_goal, dtype=float) - traj[-1]
            ramp = (blend - np.arange(blend)) / blend
            traj[n - blend:] += ramp[::-1, None] * delta[None, :]
        if pre:
            traj[0] = np.asarray(cond.q_init, dtype=float)
        if suf:
            traj[-1] = np.asarray(cond.q_goal, dtype=float)
        clamped = np.clip(traj, self.robot.limits_lo, self.robot.limits_hi)
        deltas = np.abs(clamped - traj)
        violations = int(np.count_nonzero(deltas > 0))
        max_clamp = float(deltas.max()) if violations else 0.0
        return SampleResult(trajectory=clamped, clamp_violations=violations,
                            max_clamp=max_clamp, erratic_risk=max_clamp > 1e-3)

    # -------------------------------------------------------------- persistence

    def save(self, path: str | Path, robot_file: str | None = None) -> None:
        arrays = {f"diff/{name}": value
                  for name, value in self.denoiser.store.state_arrays().items()}
        nncore.save_checkpoint(path, arrays)
        sidecar = Path(str(path) + ".json")
        sidecar.write_text(json.dumps({
            "schedule": self.schedule.to_dict(),
            "denoiser": self.denoiser.config.to_dict(),
            "loss_weights": self.weights.to_dict(),
            "p_mask": self.p_mask,
            "robot_name": self.robot.name,
            "robot_file": robot_file,
            "cae_checksum": self.cae_checksum,
        }, indent=1))

    @classmethod
    def load(cls, path: str | Path, robot: RobotModel) -> "TrajectoryDiffusion":
        arrays = nncore.load_checkpoint(path)
        meta = json.loads(Path(str(path) + ".json").read_text())
        if meta["robot_name"] != robot.name:
            raise ValueError(f"checkpoint was trained for robot '{meta['robot_name']}', "
                             f"got '{robot.name}'")
        denoiser = Denoiser(DenoiserConfig.from_dict(meta["denoiser"]))
        params = {name[len("diff/"):]: value for name, value in arrays.items()
                  if name.startswith("diff/")}
        denoiser.store.load_arrays(params)
        model = cls(denoiser, NoiseSchedule.from_dict(meta["schedule"]), robot,
                    LossWeights(**meta["loss_weights"]), meta["p_mask"],
                    meta.get("cae_checksum"))
        return model


# ------------------------------------------------------------------ training


@dataclass
class TrainConfig:
    steps: int = 25000
    batch: int = 64
    lr: float = 3e-4
    seed: int = 0
    log_every: int = 500


class UnfrozenEncoderError(RuntimeError):
    """Diffusion training requires a frozen point-cloud encoder."""


def build_examples(records, cae: CaeModel, cloud_seed: int = CLOUD_SEED,
                   k_points: int = CLOUD_POINTS) -> list[TrainExample]:
    """Dataset records -> training examples with precomputed scene latents."""
    from .world import sample_point_cloud

    flats = np.stack([
        sample_point_cloud(rec.scene, k_points, seed=cloud_seed).flat()
        for rec in records
    ])
    latents = cae.encode_batch(flats)
    return [
        TrainExample(trajectory=rec.trajectory,
                     condition=Condition(z=latents[i], q_init=rec.q_init,
                                         q_goal=rec.q_goal),
                     scene=rec.scene)
        for i, rec in enumerate(records)
    ]


def train(config: TrainConfig, examples: list[TrainExample], cae: CaeModel,
          robot: RobotModel, schedule: NoiseSchedule, weights: LossWeights,
          p_mask: float, denoiser_config: DenoiserConfig,
          out_path: str | Path | None = None) -> tuple[TrajectoryDiffusion, dict]:
    """Train the denoiser; returns the model and a training log.

    Refuses to run unless the encoder is frozen, and verifies its checksum
    afterwards: condition embedding must not drift during this phase.
    """
    if not examples:
        raise ValueError("training needs at least one example")
    if not cae.frozen:
        raise UnfrozenEncoderError("the point-cloud encoder must be frozen "
                                   "before diffusion training")
    cae_sum_before = cae.store.checksum()
    denoiser = Denoiser(denoiser_config, seed=config.seed)
    model = TrajectoryDiffusion(denoiser, schedule, robot, weights, p_mask,
                                cae_checksum=cae.checksum)
    state = AdamState.for_store(denoiser.store, lr=config.lr)
    rng = np.random.default_rng(config.seed)
    drop_gen = torch.Generator().manual_seed(config.seed + 1)
    n = len(examples)
    losses: list[float] = []
    masked = 0
    for step in range(config.steps):
        idx = rng.integers(0, n, size=min(config.batch, n))
        flags = rng.random(idx.size) < p_mask
        masked += int(flags.sum())
        batch = []
        for j, flag in zip(idx, flags):
            ex = examples[j]
            batch.append(TrainExample(
                trajectory=ex.trajectory,
                condition=Condition(ex.condition.z, ex.condition.q_init,
                                    ex.condition.q_goal, null_flag=bool(flag)),
                scene=ex.scene))
        denoiser.store.zero_grad()
        loss = model.training_loss(batch, rng, training=True, gen=drop_gen)
        backward(loss)
        adam_step(denoiser.store, state)
        losses.append(float(loss.detach()))
        if config.log_every and (step + 1) % config.log_every == 0:
            recent = float(np.mean(losses[-config.log_every:]))
            print(f"  diffusion step {step + 1}/{config.steps} "
                  f"loss {recent:.5f}", flush=True)
    if cae.store.checksum() != cae_sum_before:
        raise UnfrozenEncoderError("encoder parameters changed during diffusion "
                                   "training; freeze contract violated")
    log = {"losses": losses, "masked_conditions": masked,
           "total_conditions": config.steps * min(config.batch, n)}
    if out_path is not None:
        model.save(out_path)
    return model, log
