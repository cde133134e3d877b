"""Loss, optimizer, augmentation and evaluation metrics.

The regression loss is the outlier-robust piecewise-linear penalty applied
per coordinate in the normalized frame (where its 0.01 knee corresponds to
1.5 mm), summed over every supervised stage and joint.  Training uses a
decoupled-weight-decay adaptive optimizer with bias correction and an
optional step decay of the learning rate at a configured epoch.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import ContractError
from .model import PoseModel, normalize_targets
from .points import PointCloud, depth_to_points
from .tensor import Parameter, Tensor, astensor

SMOOTH_KNEE = 0.01


def smooth_l1(x):
    """0.5|x| below the 0.01 knee, |x| - 0.005 beyond; continuous at the knee."""
    x = astensor(x)
    a = T.tabs(x)
    return T.where(a.data < SMOOTH_KNEE, T.mul(a, 0.5), T.sub(a, SMOOTH_KNEE / 2))


def total_loss(stage_outputs: list[Tensor], gt, per_joint_norm: bool = False,
               expected_stages: int | None = None) -> Tensor:
    """Sum the robust penalty over all stages, joints and coordinates.

    ``per_joint_norm`` applies the penalty to each joint's Euclidean error
    instead of per coordinate (config variant).
    """
    if expected_stages is not None and len(stage_outputs) != expected_stages:
        raise ContractError(f"expected {expected_stages} supervised stages, "
                            f"got {len(stage_outputs)}")
    if not stage_outputs:
        raise ContractError("no stage outputs to supervise")
    gt = astensor(gt)
    acc = None
    for out in stage_outputs:
        residual = T.sub(out, gt)
        if per_joint_norm:
            sq = T.tsum(T.mul(residual, residual), axis=1)
            term = T.tsum(smooth_l1(T.tsqrt(T.add(sq, 1e-12))))
        else:
            term = T.tsum(smooth_l1(residual))
        acc = term if acc is None else T.add(acc, term)
    return acc


@dataclass
class OptimizerState:
    """Decoupled-weight-decay adaptive optimizer over named parameters."""

    params: list[Parameter]
    lr: float = 0.001
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)

    def __post_init__(self):
        for p in self.params:
            self.m[p.name] = np.zeros_like(p.value.data)
            self.v[p.name] = np.zeros_like(p.value.data)

    def zero_grad(self) -> None:
        for p in self.params:
            p.value.zero_grad()

    def step(self) -> None:
        """Apply one update from the accumulated gradients."""
        self.step_count += 1
        t = self.step_count
        self.skipped = []
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for p in self.params:
            g = p.value.grad
            if g is None:
                self.skipped.append(p.name)
                continue
            buf_m, buf_v = self.m[p.name], self.v[p.name]
            buf_m *= self.beta1
            buf_m += (1.0 - self.beta1) * g
            buf_v *= self.beta2
            buf_v += (1.0 - self.beta2) * g * g
            if self.weight_decay:
                p.value.data -= self.lr * self.weight_decay * p.value.data
            p.value.data -= self.lr * (buf_m / bc1) / (np.sqrt(buf_v / bc2) + self.eps)

    def decay_lr(self, factor: float = 0.1) -> None:
        self.lr *= factor


@dataclass
class AugmentationConfig:
    """Rotation about the camera z-axis, isotropic scale, 3D translation."""

    rotation_deg: tuple[float, float] = (-180.0, 180.0)
    scale: tuple[float, float] = (0.9, 1.1)
    translation_mm: tuple[float, float] = (-10.0, 10.0)
    seed: int = 0

    def __post_init__(self):
        for lo, hi in (self.rotation_deg, self.scale, self.translation_mm):
            if lo > hi:
                raise ContractError("augmentation range is not well-ordered")


def augment_cloud(coords: np.ndarray, joints: np.ndarray,
                  cfg: AugmentationConfig, rng: np.random.Generator):
    """One similarity transform applied identically to points and joints.

    The rotation axis is the camera z direction through the cloud centroid
    (keeps the hand inside the frustum); scaling is about the same centroid.
    """
    angle = np.deg2rad(rng.uniform(*cfg.rotation_deg))
    scale = rng.uniform(*cfg.scale)
    shift = rng.uniform(cfg.translation_mm[0], cfg.translation_mm[1], 3) / 1000.0
    c, s = np.cos(angle), np.sin(angle)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    center = coords.mean(axis=0)

    def apply(pts):
        return (pts - center) @ rot.T * scale + center + shift

    return apply(np.asarray(coords, dtype=np.float64)), \
        apply(np.asarray(joints, dtype=np.float64))


def augment_sample(cloud: PointCloud, gt_joints: np.ndarray,
                   cfg: AugmentationConfig, rng: np.random.Generator):
    """PointCloud-level wrapper around augment_cloud."""
    coords, joints = augment_cloud(cloud.coords, gt_joints, cfg, rng)
    return PointCloud(coords), joints


@dataclass
class EvalReport:
    mean_error_mm: float
    per_joint_mm: np.ndarray
    sample_count: int

    def lines(self) -> list[str]:
        out = [f"samples: {self.sample_count}",
               f"mean_keypoint_error_mm: {self.mean_error_mm:.6f}"]
        out += [f"joint_{j:02d}_mm: {e:.6f}"
                for j, e in enumerate(self.per_joint_mm)]
        return out


def mean_keypoint_error(pred_mm: np.ndarray, gt_mm: np.ndarray) -> EvalReport:
    """Mean Euclidean joint error in millimeters over [S x J x 3] arrays."""
    pred_mm = np.asarray(pred_mm, dtype=np.float64)
    gt_mm = np.asarray(gt_mm, dtype=np.float64)
    if pred_mm.shape != gt_mm.shape:
        raise ContractError(f"prediction shape {pred_mm.shape} != "
                            f"ground truth {gt_mm.shape}")
    dist = np.linalg.norm(pred_mm - gt_mm, axis=2)
    return EvalReport(mean_error_mm=float(dist.mean()),
                      per_joint_mm=dist.mean(axis=0),
                      sample_count=pred_mm.shape[0])


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 8
    lr: float = 0.001
    beta1: float = 0.5
    beta2: float = 0.999
    weight_decay: float = 0.01
    lr_decay_epoch: int = -1    # -1 disables the step decay
    lr_decay_factor: float = 0.1
    augment: bool = True
    aug: AugmentationConfig = field(default_factory=AugmentationConfig)
    per_joint_norm_loss: bool = False
    max_steps: int = -1         # -1: no cap
    target_mke_mm: float = -1.0  # early stop once training MKE drops below
    seed: int = 0


def sample_point_seed(master_seed: int, sample_id: str) -> int:
    return T.param_seed(master_seed, f"points/{sample_id}")


def train(model: PoseModel, samples: list, cfg: TrainConfig,
          log_fn=None, eval_every: int = 0):
    """Deterministic full training loop; returns (optimizer, history).

    Per-sample losses accumulate in index order within a batch.  ``log_fn``
    receives `(epoch, step, loss, lr, wall_ms)` after every optimizer step.
    """
    opt = OptimizerState(model.parameters(), lr=cfg.lr, beta1=cfg.beta1,
                         beta2=cfg.beta2, weight_decay=cfg.weight_decay)
    order_rng = np.random.default_rng(T.param_seed(cfg.seed, "epoch_order"))
    aug_rng = np.random.default_rng(T.param_seed(cfg.seed, "augment"))
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        if epoch == cfg.lr_decay_epoch:
            opt.decay_lr(cfg.lr_decay_factor)
        order = order_rng.permutation(len(samples))
        for start in range(0, len(order), cfg.batch_size):
            t0 = time.perf_counter()
            batch = order[start:start + cfg.batch_size]
            opt.zero_grad()
            batch_loss = None
            for si in batch:
                sample = samples[si]
                cloud = depth_to_points(sample.depth, sample.intrinsics,
                                        n=model.cfg.num_points,
                                        seed=sample_point_seed(cfg.seed, sample.id))
                joints = sample.gt_joints
                if cfg.augment:
                    cloud, joints = augment_sample(cloud, joints, cfg.aug, aug_rng)
                rgb = sample.rgb if model.cfg.use_rgb else None
                result = model.forward_cloud(cloud, sample.depth, rgb,
                                             sample.intrinsics)
                gt_n = normalize_targets(joints, result.centroid)
                loss = total_loss(result.stage_positions, Tensor(gt_n),
                                  per_joint_norm=cfg.per_joint_norm_loss,
                                  expected_stages=model.cfg.stacks + 1)
                batch_loss = loss if batch_loss is None else T.add(batch_loss, loss)
            batch_loss = T.mul(batch_loss, 1.0 / len(batch))
            batch_loss.backward()
            opt.step()
            step += 1
            wall_ms = (time.perf_counter() - t0) * 1e3
            history.append((epoch, step, float(batch_loss.data), opt.lr, wall_ms))
            if log_fn is not None:
                log_fn(epoch, step, float(batch_loss.data), opt.lr, wall_ms)
            if cfg.max_steps > 0 and step >= cfg.max_steps:
                return opt, history
        if cfg.target_mke_mm > 0 and eval_every and (epoch + 1) % eval_every == 0:
            report = evaluate(model, samples, seed=cfg.seed)
            if report.mean_error_mm < cfg.target_mke_mm:
                return opt, history
    return opt, history


def evaluate(model: PoseModel, samples: list, seed: int = 0,
             collect_joints: bool = False):
    """Inference + de-normalized metric evaluation over a sample list."""
    preds, gts = [], []
    with T.no_grad():
        for sample in samples:
            result = model.forward_sample(
                sample, point_seed=sample_point_seed(seed, sample.id))
            preds.append(result.positions_mm())
            gts.append(sample.gt_joints * 1000.0)
    report = mean_keypoint_error(np.stack(preds), np.stack(gts))
    if collect_joints:
        return report, np.stack(preds)
    return report
