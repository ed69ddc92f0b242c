"""Loss, optimizer, sampling, the training loop and hyperparameter search.

The per-example loss is the sum over both classes of the binary
cross-entropies of the local, global and fusion heads, plus an L1
penalty on the saliency maps weighted by reg_weight; batches are
averaged. Training samples class-balanced epochs (every positive exam
plus as many negatives), augments images with random translate+scale,
rotates ROI patches by quarter turns, and keeps the checkpoint from
the epoch with the best validation malignant AUC.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import tensor as T
from .augment import augment, standardize
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Split
from .errors import ConfigError, MetricError, NumericError
from .evaluate import predict_split, breast_level_scores
from .metrics import auc
from .model import GMIC, ModelOutputs
from .networks import NetworkConfig
from .saliency import l1_regularizer
from .seeding import rng_for
from .tensor import Tensor

BCE_CLAMP = 1e-7

METRICS_COLUMNS = ("epoch", "train_loss", "val_auc_malignant", "val_auc_benign")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters and random-search ranges."""

    learning_rate: float = 3e-4
    reg_weight: float = 3e-5
    pool_fraction: float = 0.03
    epochs: int = 30
    batch_size: int = 8
    seed: int = 0
    early_stop_patience: int = 10
    aug_translate: float = 0.06
    aug_scale: float = 0.05
    tta_runs: int = 10
    lr_log_range: tuple[float, float] = (-5.5, -4.0)
    reg_log_range: tuple[float, float] = (-5.5, -3.5)
    pool_choices: tuple[float, ...] = (0.01, 0.03, 0.05, 0.10, 0.20)

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.reg_weight < 0:
            raise ConfigError(f"reg_weight must be >= 0, got {self.reg_weight}")
        if not 0.0 < self.pool_fraction <= 1.0:
            raise ConfigError(f"pool_fraction must lie in (0, 1], got {self.pool_fraction}")
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ConfigError(f"batch_size must be >= 2 (batch statistics), got {self.batch_size}")
        if self.seed < 0:
            raise ConfigError(f"seed must be >= 0, got {self.seed}")
        if not 0.0 <= self.aug_translate < 0.5:
            raise ConfigError(f"aug_translate must lie in [0, 0.5), got {self.aug_translate}")
        if not 0.0 <= self.aug_scale < 1.0:
            raise ConfigError(f"aug_scale must lie in [0, 1), got {self.aug_scale}")
        if self.tta_runs < 1:
            raise ConfigError(f"tta_runs must be >= 1, got {self.tta_runs}")


# -- loss ---------------------------------------------------------------------


def bce(predictions: Tensor, targets) -> Tensor:
    """Elementwise binary cross-entropy -[y ln p + (1-y) ln(1-p)].

    Predictions are clamped to [1e-7, 1-1e-7] so endpoint labels cannot
    produce infinities."""
    y = np.asarray(targets, dtype=predictions.dtype)
    p = T.clamp(predictions, BCE_CLAMP, 1.0 - BCE_CLAMP)
    term = T.add(T.mul(T.log(p), y), T.mul(T.log(1.0 - p), 1.0 - y))
    return T.mul(term, -1.0)


def total_loss(outputs: ModelOutputs, targets, reg_weight: float) -> Tensor:
    """Batch-mean training loss over the three heads plus saliency L1."""
    y = np.asarray(targets)
    n = 1 if y.ndim == 1 else y.shape[0]
    heads = T.add(T.add(bce(outputs.y_local, y), bce(outputs.y_global, y)), bce(outputs.y_fusion, y))
    loss = T.add(T.sum_all(heads), T.mul(l1_regularizer(outputs.saliency), reg_weight))
    return T.mul(loss, 1.0 / n)


# -- optimizer -----------------------------------------------------------------


class Adam:
    """Standard bias-corrected Adam over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"opt/m/{k}": v for k, v in self.m.items()}
        out.update({f"opt/v/{k}": v for k, v in self.v.items()})
        out["opt/step"] = np.array([float(self.step_count)])
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for key, value in arrays.items():
            if key == "opt/step":
                self.step_count = int(value[0])
            elif key.startswith("opt/m/"):
                self.m[key[len("opt/m/"):]][...] = value
            elif key.startswith("opt/v/"):
                self.v[key[len("opt/v/"):]][...] = value


# -- sampling --------------------------------------------------------------------


def balanced_epoch_sampler(positive_flags, rng: np.random.Generator) -> np.ndarray:
    """All positive exam indices plus an equal number of negatives
    (without replacement unless negatives are scarcer), shuffled."""
    flags = np.asarray(positive_flags, dtype=bool)
    pos = np.flatnonzero(flags)
    neg = np.flatnonzero(~flags)
    if len(pos) == 0 or len(neg) == 0:
        raise ConfigError("balanced sampling requires at least one positive and one negative exam")
    sampled_neg = rng.choice(neg, size=len(pos), replace=len(neg) < len(pos))
    order = np.concatenate([pos, sampled_neg])
    rng.shuffle(order)
    return order


# -- training loop -------------------------------------------------------------------


@dataclass
class TrainResult:
    rows: list[dict]
    best_epoch: int
    best_val_auc: float
    best_checkpoint: Path
    last_checkpoint: Path
    stopped_early: bool = False


def _write_metrics_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=METRICS_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in METRICS_COLUMNS})


def _batch_arrays(split: Split, units: list[tuple[int, int]], cfg: TrainConfig, epoch: int):
    """Standardized, augmented image stack [B,1,H,W] plus labels [B,2]."""
    images = []
    labels = []
    for exam_idx, view_idx in units:
        exam = split.exams[exam_idx]
        view = exam.views[view_idx]
        rng = rng_for(cfg.seed, "augment", epoch, exam_idx, view_idx)
        img = augment(view.image, None, rng, cfg.aug_translate, cfg.aug_scale)
        images.append(standardize(img))
        labels.append((exam.y_benign, exam.y_malignant))
    x = np.stack(images)[:, None, :, :]
    return x, np.asarray(labels, dtype=np.float64)


def validation_auc(model: GMIC, val_split: Split) -> tuple[float, float]:
    """Breast-level fusion AUC (malignant, benign); nan when the val
    split lacks one of the classes (tiny smoke configs)."""
    records = predict_split(model, val_split)
    _, labels, scores = breast_level_scores(records, head="fusion")
    out = []
    for cls in (1, 0):
        try:
            out.append(auc(scores[:, cls], labels[:, cls]))
        except MetricError:
            out.append(float("nan"))
    return out[0], out[1]


def train(
    train_split: Split,
    val_split: Split,
    net_cfg: NetworkConfig,
    cfg: TrainConfig,
    out_dir: Path,
    resume: Path | None = None,
    log=None,
) -> TrainResult:
    """Full training run; writes metrics.csv, best.ckpt and last.ckpt."""
    cfg.validate()
    net_cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    say = log if log is not None else (lambda msg: None)

    model = GMIC(net_cfg, cfg.pool_fraction, seed=cfg.seed)
    params = model.parameters()
    opt = Adam(params, cfg.learning_rate)
    start_epoch = 0
    rows: list[dict] = []
    if resume is not None:
        meta, arrays = load_checkpoint(resume)
        model.load_state({k: v for k, v in arrays.items() if not k.startswith("opt/")})
        opt.load_state_arrays({k: v for k, v in arrays.items() if k.startswith("opt/")})
        start_epoch = int(meta.get("epoch", -1)) + 1
        rows = list(meta.get("history", []))
        say(f"resumed from {resume} at epoch {start_epoch}")

    flags = train_split.positive_flags()
    best_auc = -1.0
    best_epoch = -1
    for row in rows:
        if row["val_auc_malignant"] > best_auc:
            best_auc = row["val_auc_malignant"]
            best_epoch = row["epoch"]
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"
    stopped_early = False

    def checkpoint_meta(epoch: int) -> dict:
        return {
            "network": asdict(net_cfg),
            "train": asdict(cfg),
            "pool_fraction": cfg.pool_fraction,
            "epoch": epoch,
            "history": rows,
        }

    for epoch in range(start_epoch, cfg.epochs):
        order = balanced_epoch_sampler(flags, rng_for(cfg.seed, "sampler", epoch))
        units = [(int(e), v) for e in order for v in range(len(train_split.exams[int(e)].views))]
        rng_for(cfg.seed, "unit-shuffle", epoch).shuffle(units)
        loss_sum = 0.0
        n_seen = 0
        for step, lo in enumerate(range(0, len(units), cfg.batch_size)):
            batch = units[lo : lo + cfg.batch_size]
            if len(batch) < 2:
                continue  # batch statistics need >= 2 images
            x, y = _batch_arrays(train_split, batch, cfg, epoch)
            outputs = model.forward(x, training=True, rot_rng=rng_for(cfg.seed, "rot", epoch, step))
            loss = total_loss(outputs, y, cfg.reg_weight)
            value = loss.item()
            if not math.isfinite(value):
                raise NumericError(
                    f"non-finite loss {value} at epoch {epoch} step {step} "
                    f"(lr={cfg.learning_rate}, reg_weight={cfg.reg_weight})"
                )
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += value * len(batch)
            n_seen += len(batch)
        auc_m, auc_b = validation_auc(model, val_split)
        rows.append({
            "epoch": epoch,
            "train_loss": loss_sum / max(n_seen, 1),
            "val_auc_malignant": auc_m,
            "val_auc_benign": auc_b,
        })
        _write_metrics_csv(out_dir / "metrics.csv", rows)
        say(f"epoch {epoch}: loss {rows[-1]['train_loss']:.4f} val AUC m {auc_m:.4f} b {auc_b:.4f}")
        if auc_m > best_auc:
            best_auc = auc_m
            best_epoch = epoch
            save_checkpoint(best_path, checkpoint_meta(epoch), model.state())
        save_checkpoint(last_path, checkpoint_meta(epoch), {**model.state(), **opt.state_arrays()})
        if epoch - best_epoch >= cfg.early_stop_patience:
            stopped_early = True
            say(f"early stop at epoch {epoch} (best {best_epoch})")
            break
    if not best_path.exists():  # degenerate runs still leave a checkpoint
        save_checkpoint(best_path, checkpoint_meta(start_epoch), model.state())
    return TrainResult(rows, best_epoch, best_auc, best_path, last_path, stopped_early)


# -- hyperparameter random search -------------------------------------------------------


def sample_trial_config(base: TrainConfig, rng: np.random.Generator) -> TrainConfig:
    """One draw from the search space: log-uniform learning rate and
    regularization weight, uniform choice of pooling fraction."""
    lr = float(10.0 ** rng.uniform(*base.lr_log_range))
    reg = float(10.0 ** rng.uniform(*base.reg_log_range))
    t = float(base.pool_choices[int(rng.integers(len(base.pool_choices)))])
    return replace(base, learning_rate=lr, reg_weight=reg, pool_fraction=t)


def random_search(
    train_split: Split,
    val_split: Split,
    net_cfg: NetworkConfig,
    base_cfg: TrainConfig,
    n_trials: int,
    out_dir: Path,
    top_k: int = 5,
    log=None,
) -> list[dict]:
    """Train n_trials models with sampled hyperparameters; rank by
    validation malignant AUC (ties by trial index); keep the top k."""
    if n_trials < 1:
        raise ConfigError(f"n_trials must be >= 1, got {n_trials}")
    out_dir = Path(out_dir)
    trials = []
    for i in range(n_trials):
        trial_cfg = sample_trial_config(base_cfg, rng_for(base_cfg.seed, "trial", i))
        trial_cfg = replace(trial_cfg, seed=int(rng_for(base_cfg.seed, "trial-seed", i).integers(2**31)))
        result = train(train_split, val_split, net_cfg, trial_cfg, out_dir / f"trial_{i:03d}", log=log)
        trials.append({
            "trial_id": i,
            "learning_rate": trial_cfg.learning_rate,
            "reg_weight": trial_cfg.reg_weight,
            "pool_fraction": trial_cfg.pool_fraction,
            "val_auc": result.best_val_auc,
            "checkpoint": str(result.best_checkpoint),
        })
    ranked = sorted(trials, key=lambda tr: (-tr["val_auc"], tr["trial_id"]))
    for rank, tr in enumerate(ranked):
        tr["rank"] = rank
        tr["selected"] = rank < top_k
    return ranked
