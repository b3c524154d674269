"""Single-fold training with weighted cross-entropy and early stopping.

The loss weights each sample by its true class's weight and divides by the
sum of applied weights, so uniform weights reduce exactly to plain mean
cross-entropy and loss magnitudes stay comparable across weightings.
Validation MAE drives early stopping: training stops once it has not
strictly improved for `early_stop_patience` consecutive epochs, and the
returned checkpoint is restored to the best epoch's parameters.

Class weights are always computed from the training partition only;
deriving them from validation or test labels would leak.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
import torch

from painpipe.dataset import ClassWeightTable, DatasetIndex, Fold, compute_class_weights
from painpipe.evaluation import MetricValues, compute_metrics, derive_seed
from painpipe.models import ModelSpec, build
from painpipe.preprocess import DetectionStats, PreprocessConfig, preprocess_frame

CHECKPOINT_FORMAT_VERSION = 1

OPTIMIZER_CHOICES = ("adam",)
WEIGHTING_CHOICES = ("eq2_weights", "uniform")


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite; carries the history up to the last finite epoch."""

    def __init__(self, message: str, history: tuple["EpochRecord", ...]):
        super().__init__(message)
        self.history = history


@dataclass(frozen=True)
class TrainingConfig:
    optimizer: str = "adam"
    learning_rate: float = 0.001
    max_epochs: int = 100
    batch_size: int = 256
    early_stop_patience: int = 20
    seed: int = 0
    loss_weighting: str = "eq2_weights"

    def __post_init__(self) -> None:
        if self.optimizer not in OPTIMIZER_CHOICES:
            raise ValueError(f"optimizer must be one of {OPTIMIZER_CHOICES}, got {self.optimizer!r}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.max_epochs < 1:
            raise ValueError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 1 <= self.early_stop_patience <= self.max_epochs:
            raise ValueError(
                f"early_stop_patience must be in 1..max_epochs, got {self.early_stop_patience} (max_epochs={self.max_epochs})"
            )
        if self.loss_weighting not in WEIGHTING_CHOICES:
            raise ValueError(f"loss_weighting must be one of {WEIGHTING_CHOICES}, got {self.loss_weighting!r}")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int  # 1-based
    train_loss: float
    val_mae: float
    val_mse: float
    val_accuracy: float


@dataclass(frozen=True)
class Checkpoint:
    """Best-validation snapshot of one fold's training run."""

    spec: ModelSpec
    parameters: dict[str, torch.Tensor]
    best_epoch: int
    history: tuple[EpochRecord, ...]
    fold_id: int
    config: TrainingConfig

    def __post_init__(self) -> None:
        maes = [r.val_mae for r in self.history]
        expected = int(np.argmin(maes)) + 1  # first occurrence on ties
        if self.best_epoch != expected:
            raise ValueError(f"best_epoch {self.best_epoch} is not the first val-MAE minimum (epoch {expected})")


class EarlyStopping:
    """Stop after `patience` consecutive epochs without strict improvement."""

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError(f"patience must be >= 1, got {patience}")
        self.patience = patience
        self.best = math.inf
        self.best_epoch = 0
        self.epochs_since_improvement = 0

    def update(self, epoch: int, val_mae: float) -> bool:
        """Record one epoch's validation MAE; True means stop now."""
        if val_mae < self.best:
            self.best = val_mae
            self.best_epoch = epoch
            self.epochs_since_improvement = 0
        else:
            self.epochs_since_improvement += 1
        return self.epochs_since_improvement >= self.patience


def _weight_tensor(weights: ClassWeightTable | Sequence[float] | torch.Tensor, n_classes: int) -> torch.Tensor:
    if isinstance(weights, ClassWeightTable):
        arr = weights.as_array()
    elif isinstance(weights, torch.Tensor):
        arr = weights.detach().cpu().numpy()
    else:
        arr = np.asarray(weights, dtype=np.float64)
    if arr.shape != (n_classes,):
        raise ValueError(f"weights must cover all {n_classes} classes, got shape {arr.shape}")
    return torch.as_tensor(arr)


def weighted_cross_entropy(
    logits: torch.Tensor,
    targets: torch.Tensor,
    weights: ClassWeightTable | Sequence[float] | torch.Tensor,
) -> torch.Tensor:
    """Weighted-mean cross-entropy.

    loss = sum_i w[y_i] * (-log softmax(logits_i)[y_i]) / sum_i w[y_i]
    """
    if logits.ndim != 2:
        raise ValueError(f"logits must be (batch, n_classes), got shape {tuple(logits.shape)}")
    if not torch.isfinite(logits).all():
        raise ValueError("logits contain non-finite values")
    n_classes = logits.shape[1]
    if targets.ndim != 1 or targets.shape[0] != logits.shape[0]:
        raise ValueError(f"targets shape {tuple(targets.shape)} does not match logits batch {logits.shape[0]}")
    if int(targets.min()) < 0 or int(targets.max()) >= n_classes:
        raise ValueError(f"target class outside 0..{n_classes - 1}")
    w = _weight_tensor(weights, n_classes).to(dtype=logits.dtype, device=logits.device)
    log_probs = torch.log_softmax(logits, dim=1)
    per_sample = -log_probs.gather(1, targets.view(-1, 1)).squeeze(1)
    applied = w[targets]
    denom = applied.sum()
    if float(denom) <= 0:
        raise ValueError("the weights applied to this batch sum to zero")
    return (applied * per_sample).sum() / denom


def _load_split_tensors(
    index: DatasetIndex,
    pconfig: PreprocessConfig,
    stats: Optional[DetectionStats] = None,
) -> tuple[torch.Tensor, torch.Tensor]:
    arrays = [
        preprocess_frame(r.image_path, pconfig, metadata_box=r.face_box, stats=stats) for r in index.records
    ]
    x = torch.from_numpy(np.stack(arrays))
    y = torch.from_numpy(index.labels())
    return x, y


def _predict_classes_tensor(net: torch.nn.Module, x: torch.Tensor, batch_size: int = 256) -> np.ndarray:
    was_training = net.training
    net.eval()
    preds = []
    with torch.no_grad():
        for start in range(0, x.shape[0], batch_size):
            logits = net(x[start : start + batch_size])
            preds.append(torch.argmax(logits, dim=1))
    net.train(was_training)
    return torch.cat(preds).numpy()


def train_fold(
    data: DatasetIndex,
    fold: Fold,
    spec: ModelSpec,
    config: TrainingConfig,
    preprocess_config: Optional[PreprocessConfig] = None,
    fold_id: int = 0,
    log_fn: Optional[Callable[[str], None]] = None,
) -> Checkpoint:
    """Train one fold and return the checkpoint restored to the best epoch.

    Emits one JSON line per epoch through log_fn when given. Raises
    TrainingDivergedError if the loss goes non-finite, with the finite
    history attached.
    """
    if data.n_classes != spec.n_classes:
        raise ValueError(f"dataset has {data.n_classes} classes but the model spec expects {spec.n_classes}")
    pconfig = preprocess_config or PreprocessConfig(target_size=spec.input_size)
    if pconfig.target_size != spec.input_size:
        raise ValueError(f"preprocess target_size {pconfig.target_size} != model input_size {spec.input_size}")
    if not fold.train or not fold.val:
        raise ValueError("fold has an empty train or val subject set")
    train_index = data.subset(fold.train)
    val_index = data.subset(fold.val)

    if config.loss_weighting == "eq2_weights":
        weights = compute_class_weights(train_index)
    else:
        weights = ClassWeightTable.uniform(data.n_classes, total_samples=len(train_index))
    weight_tensor = _weight_tensor(weights, data.n_classes).to(torch.float32)

    x_train, y_train = _load_split_tensors(train_index, pconfig)
    x_val, y_val = _load_split_tensors(val_index, pconfig)
    y_val_np = y_val.numpy()

    torch.manual_seed(derive_seed(config.seed, "torch", fold_id))
    net = build(spec, seed=config.seed)
    optimizer = torch.optim.Adam(net.parameters(), lr=config.learning_rate)  # standard betas/eps
    rng = np.random.default_rng(derive_seed(config.seed, "shuffle", fold_id))
    stopper = EarlyStopping(config.early_stop_patience)

    history: list[EpochRecord] = []
    best_state: Optional[dict[str, torch.Tensor]] = None
    n = x_train.shape[0]
    for epoch in range(1, config.max_epochs + 1):
        perm = rng.permutation(n)
        flips = rng.random(n) < pconfig.hflip_probability
        net.train()
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            xb = x_train[idx].clone()
            flip_rows = np.nonzero(flips[idx])[0]
            if flip_rows.size:
                rows = torch.from_numpy(flip_rows)
                xb[rows] = torch.flip(xb[rows], dims=[3])
            yb = y_train[idx]
            logits = net(xb)
            if not torch.isfinite(logits).all():
                raise TrainingDivergedError(
                    f"non-finite logits at epoch {epoch}; stopping (last finite epoch {epoch - 1})",
                    history=tuple(history),
                )
            loss = weighted_cross_entropy(logits, yb, weight_tensor)
            if not torch.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}; stopping (last finite epoch {epoch - 1})",
                    history=tuple(history),
                )
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            batch_losses.append(float(loss))

        val_pred = _predict_classes_tensor(net, x_val, batch_size=config.batch_size)
        val_metrics = compute_metrics(val_pred, y_val_np)
        record = EpochRecord(
            epoch=epoch,
            train_loss=float(np.mean(batch_losses)),
            val_mae=val_metrics.mae,
            val_mse=val_metrics.mse,
            val_accuracy=val_metrics.accuracy,
        )
        history.append(record)
        if log_fn is not None:
            log_fn(json.dumps({"fold": fold_id, **asdict(record)}))

        stop = stopper.update(epoch, record.val_mae)
        if stopper.best_epoch == epoch:
            best_state = copy.deepcopy(net.state_dict())
        if stop:
            break

    assert best_state is not None
    return Checkpoint(
        spec=spec,
        parameters=best_state,
        best_epoch=stopper.best_epoch,
        history=tuple(history),
        fold_id=fold_id,
        config=config,
    )


class NetworkPredictor:
    """Runs a restored checkpoint over dataset records."""

    def __init__(self, checkpoint: Checkpoint, preprocess_config: Optional[PreprocessConfig] = None):
        self.checkpoint = checkpoint
        self.pconfig = preprocess_config or PreprocessConfig(target_size=checkpoint.spec.input_size)
        self.net = restore_network(checkpoint)

    def predict_classes(self, index: DatasetIndex) -> np.ndarray:
        x, _ = _load_split_tensors(index, self.pconfig)
        return _predict_classes_tensor(self.net, x, batch_size=self.checkpoint.config.batch_size)


def restore_network(checkpoint: Checkpoint) -> torch.nn.Module:
    net = build(checkpoint.spec, seed=checkpoint.config.seed)
    net.load_state_dict(checkpoint.parameters)
    net.eval()
    return net


def save_checkpoint(checkpoint: Checkpoint, path: Path | str) -> Path:
    """Self-describing, versioned checkpoint container."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "spec": asdict(checkpoint.spec),
        "seed": checkpoint.config.seed,
        "parameters": checkpoint.parameters,
        "best_epoch": checkpoint.best_epoch,
        "history": [asdict(r) for r in checkpoint.history],
        "fold_id": checkpoint.fold_id,
        "config": asdict(checkpoint.config),
    }
    torch.save(payload, path)
    return path


def load_checkpoint(path: Path | str) -> Checkpoint:
    payload = torch.load(Path(path), weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format version {version!r}")
    return Checkpoint(
        spec=ModelSpec(**payload["spec"]),
        parameters=payload["parameters"],
        best_epoch=payload["best_epoch"],
        history=tuple(EpochRecord(**r) for r in payload["history"]),
        fold_id=payload["fold_id"],
        config=TrainingConfig(**payload["config"]),
    )


def gradient_check(
    net: torch.nn.Module,
    batch: tuple[torch.Tensor, torch.Tensor],
    weights: ClassWeightTable | Sequence[float] | torch.Tensor,
    max_samples: int = 256,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Finite differences are the independent oracle for the loss/backprop
    path; the network must be small (<= 5,000 parameters) and everything
    runs in double precision.
    """
    net = copy.deepcopy(net).double()
    n_params = sum(p.numel() for p in net.parameters() if p.requires_grad)
    if n_params > 5000:
        raise ValueError(f"gradient_check needs a network with <= 5000 parameters, got {n_params}")
    x = batch[0].double()
    y = batch[1]
    net.eval()  # keep batch-norm statistics frozen so the loss is a fixed function

    params = [p for p in net.parameters() if p.requires_grad]
    loss = weighted_cross_entropy(net(x), y, weights)
    analytic = torch.autograd.grad(loss, params)
    flat_analytic = torch.cat([g.reshape(-1) for g in analytic])

    rng = np.random.default_rng(seed)
    coords = np.arange(n_params) if n_params <= max_samples else rng.choice(n_params, size=max_samples, replace=False)

    offsets = np.cumsum([0] + [p.numel() for p in params])

    def _locate(flat_index: int) -> tuple[torch.Tensor, int]:
        which = int(np.searchsorted(offsets, flat_index, side="right") - 1)
        return params[which], flat_index - offsets[which]

    max_rel = 0.0
    with torch.no_grad():
        for flat_index in coords:
            tensor, inner = _locate(int(flat_index))
            view = tensor.reshape(-1)
            original = float(view[inner])
            view[inner] = original + step
            loss_plus = float(weighted_cross_entropy(net(x), y, weights))
            view[inner] = original - step
            loss_minus = float(weighted_cross_entropy(net(x), y, weights))
            view[inner] = original
            fd = (loss_plus - loss_minus) / (2 * step)
            an = float(flat_analytic[flat_index])
            rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
            max_rel = max(max_rel, rel)
    return max_rel
