"""Training and fine-tuning recipe at desk scale.

Training uses RMSProp with momentum folded as a velocity term, a staircase
learning-rate decay, weight decay restricted to convolution weights and the
proxy shift/scale parameters, label smoothing, an exponential moving
average of weights taken once per epoch, and optional Mixup/CutMix batch
augmentation. Fine-tuning starts from the averaged weights and runs plain
SGD under a cosine schedule on the last one, two or three network segments
only. Every run is a pure function of (seed, recipe, data order).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .layers import decay_param_names
from .model import EfficientNet, ModelConfig, config_from_dict, config_to_dict
from .tensor import make_rng

LR_EXPONENT = -14  # base_lr = B * 2^-14, and rmsprop_decay = 1 - B * 2^-14
FINETUNE_SCOPES = ("last-1", "last-2", "last-3")


@dataclass(frozen=True)
class TrainRecipe:
    global_batch: int
    epochs: int = 1
    base_lr: float | None = None  # None derives global_batch * 2^-14
    rmsprop_momentum: float = 0.9
    rmsprop_decay: float | None = None  # None derives 1 - global_batch * 2^-14
    rmsprop_delta: float = 1e-3
    weight_decay: float = 1e-5
    label_smoothing: float = 0.1
    lr_decay_factor: float = 0.97
    lr_decay_epochs: float = 2.4
    ema_decay: float = 0.97
    mixup_alpha: float = 0.2
    cutmix_alpha: float = 0.2
    augment: bool = False

    def __post_init__(self):
        if self.global_batch < 1:
            raise ValueError(f"global_batch must be positive, got {self.global_batch}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be positive, got {self.epochs}")
        unit = self.global_batch * 2.0**LR_EXPONENT
        if self.base_lr is None:
            object.__setattr__(self, "base_lr", unit)
        if self.rmsprop_decay is None:
            object.__setattr__(self, "rmsprop_decay", 1.0 - unit)
        if not 0.0 < self.rmsprop_decay < 1.0:
            raise ValueError(f"rmsprop_decay must lie in (0, 1), got {self.rmsprop_decay}")
        for name in ("base_lr", "lr_decay_factor", "lr_decay_epochs", "ema_decay"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("weight_decay", "label_smoothing", "mixup_alpha", "cutmix_alpha"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class FinetuneRecipe:
    scope: str = "last-1"
    epochs: int = 2
    batch: int = 512
    initial_lr: float = 0.25

    def __post_init__(self):
        if self.scope not in FINETUNE_SCOPES:
            raise ValueError(f"scope must be one of {FINETUNE_SCOPES}, got {self.scope!r}")
        if self.epochs < 1 or self.batch < 1 or self.initial_lr <= 0:
            raise ValueError(f"invalid fine-tune recipe: {self}")

    @property
    def last_k(self) -> int:
        return int(self.scope.split("-")[1])

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------------------
# Schedules and parameter updates
# ---------------------------------------------------------------------------


def lr_at(recipe: TrainRecipe, epoch: float) -> float:
    """Staircase decay: one multiplicative factor per full decay period."""
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    return recipe.base_lr * recipe.lr_decay_factor ** math.floor(epoch / recipe.lr_decay_epochs)


def cosine_lr(step: int, total_steps: int, initial_lr: float) -> float:
    if not 0 <= step <= total_steps or total_steps < 1:
        raise ValueError(f"step {step} outside schedule of {total_steps}")
    return initial_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


def init_rmsprop_state(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    state = {}
    for name, p in params.items():
        state[f"acc/{name}"] = np.zeros_like(p)
        state[f"vel/{name}"] = np.zeros_like(p)
    return state


def rmsprop_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: dict[str, np.ndarray],
    recipe: TrainRecipe,
    lr: float,
    decay_names: frozenset | set = frozenset(),
) -> None:
    """One in-place update. Weight decay is added to the gradient for the
    names in ``decay_names`` only; the accumulator tracks the squared
    (decayed) gradient and the velocity folds in momentum."""
    rho = recipe.rmsprop_decay
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        if name in decay_names:
            g = g + recipe.weight_decay * p
        acc = state[f"acc/{name}"]
        vel = state[f"vel/{name}"]
        acc *= rho
        acc += (1.0 - rho) * g * g
        vel *= recipe.rmsprop_momentum
        vel += lr * g / np.sqrt(acc + recipe.rmsprop_delta)
        p -= vel


def sgd_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    lr: float,
    names,
) -> None:
    """Plain SGD on the named subset; everything else is left untouched."""
    for name in names:
        p = params[name]
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"{name}: grad shape {g.shape} != param shape {p.shape}")
        p -= lr * g


def ema_update(
    shadow: dict[str, np.ndarray],
    params: dict[str, np.ndarray],
    decay: float = 0.97,
) -> dict[str, np.ndarray]:
    """shadow <- decay*shadow + (1-decay)*params; a first call (empty
    shadow) copies the parameters."""
    if not shadow:
        return {name: p.copy() for name, p in params.items()}
    for name, p in params.items():
        s = shadow[name]
        if s.shape != p.shape:
            raise ValueError(f"{name}: shadow shape {s.shape} != param shape {p.shape}")
        s *= decay
        s += (1.0 - decay) * p
    return shadow


# ---------------------------------------------------------------------------
# Loss and batch augmentation
# ---------------------------------------------------------------------------


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.min() < 0 or labels.max() >= num_classes:
        raise ValueError("labels out of range")
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _as_distribution(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 1:
        return one_hot(labels, num_classes)
    if labels.shape[1] != num_classes:
        raise ValueError(f"target distribution width {labels.shape[1]} != {num_classes}")
    return np.asarray(labels, dtype=np.float64)


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def smoothed_targets(labels, num_classes: int, smoothing: float) -> np.ndarray:
    """(1 - s) on the target distribution plus s/K spread over every class."""
    dist = _as_distribution(labels, num_classes)
    return (1.0 - smoothing) * dist + smoothing / num_classes


def smoothed_cross_entropy(logits: np.ndarray, labels, smoothing: float = 0.1) -> float:
    target = smoothed_targets(labels, logits.shape[1], smoothing)
    return float(-(target * _log_softmax(logits)).sum(axis=1).mean())


def smoothed_cross_entropy_grad(logits: np.ndarray, labels, smoothing: float = 0.1) -> np.ndarray:
    """d(mean loss)/d(logits) = (softmax - smoothed targets) / batch."""
    target = smoothed_targets(labels, logits.shape[1], smoothing)
    probs = np.exp(_log_softmax(logits))
    return (probs - target) / logits.shape[0]


def mixup(x1, y1, x2, y2, lam: float):
    """Convex combination of two samples (or batches) and their targets."""
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    x = lam * x1 + (1.0 - lam) * x2
    y = lam * y1 + (1.0 - lam) * y2
    return x, y


def cutmix(x1, y1, x2, y2, box: tuple[int, int, int, int]):
    """Paste the box region of x2 into x1; target weights follow the pasted
    area fraction. Box is (top, left, height, width) in pixels."""
    top, left, height, width = box
    h, w = x1.shape[-2], x1.shape[-1]
    if top < 0 or left < 0 or height < 0 or width < 0 or top + height > h or left + width > w:
        raise ValueError(f"box {box} outside {h}x{w} image")
    x = np.array(x1, copy=True)
    x[..., top : top + height, left : left + width] = x2[..., top : top + height, left : left + width]
    frac = (height * width) / (h * w)
    y = (1.0 - frac) * y1 + frac * y2
    return x, y


def sample_cut_box(rng: np.random.Generator, size_hw: tuple[int, int], lam: float):
    """Random box whose area is the (1 - lam) fraction, clipped at borders."""
    h, w = size_hw
    cut = math.sqrt(max(0.0, 1.0 - lam))
    ch, cw = int(round(h * cut)), int(round(w * cut))
    top = int(rng.integers(0, h - ch + 1))
    left = int(rng.integers(0, w - cw + 1))
    return top, left, ch, cw


def augment_batch(x, targets, rng: np.random.Generator, recipe: TrainRecipe):
    """Pair each batch with a shuffled copy of itself and apply Mixup or
    CutMix, the method chosen uniformly per batch."""
    perm = rng.permutation(x.shape[0])
    x2, y2 = x[perm], targets[perm]
    if rng.random() < 0.5:
        lam = float(rng.beta(recipe.mixup_alpha, recipe.mixup_alpha))
        return mixup(x, targets, x2, y2, lam)
    lam = float(rng.beta(recipe.cutmix_alpha, recipe.cutmix_alpha))
    box = sample_cut_box(rng, x.shape[-2:], lam)
    return cutmix(x, targets, x2, y2, box)


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    state: dict[str, np.ndarray]  # parameters plus buffers
    opt_state: dict[str, np.ndarray]
    ema: dict[str, np.ndarray]
    epoch: int
    fingerprint: str
    model_config: dict = field(default_factory=dict)

    def save(self, path) -> None:
        arrays = {}
        arrays.update({f"state/{k}": v for k, v in self.state.items()})
        arrays.update({f"opt/{k}": v for k, v in self.opt_state.items()})
        arrays.update({f"ema/{k}": v for k, v in self.ema.items()})
        meta = {
            "epoch": self.epoch,
            "fingerprint": self.fingerprint,
            "model_config": self.model_config,
        }
        save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "Checkpoint":
        arrays, meta = load_checkpoint(path)
        groups = {"state": {}, "opt": {}, "ema": {}}
        for name, arr in arrays.items():
            prefix, _, rest = name.partition("/")
            if prefix not in groups:
                raise ValueError(f"unknown checkpoint entry {name!r}")
            groups[prefix][rest] = arr
        return cls(
            state=groups["state"],
            opt_state=groups["opt"],
            ema=groups["ema"],
            epoch=int(meta["epoch"]),
            fingerprint=meta["fingerprint"],
            model_config=meta.get("model_config", {}),
        )

    def build_model(self, rng: np.random.Generator) -> EfficientNet:
        model = EfficientNet(config_from_dict(self.model_config), rng)
        model.load_state(self.state)
        return model


# ---------------------------------------------------------------------------
# Loops
# ---------------------------------------------------------------------------


def _run_batch(model, x, targets, smoothing, micro_batch_size=None):
    """Forward/backward over one logical batch, accumulating gradients.

    With a micro-batch size the batch is processed in chunks whose loss
    gradients are scaled by chunk/total so the accumulated gradients equal
    the single large-batch pass exactly (batch-independent layers).
    """
    total = x.shape[0]
    size = total if micro_batch_size is None else micro_batch_size
    loss_sum = 0.0
    correct = 0
    for start in range(0, total, size):
        xs = x[start : start + size]
        ts = targets[start : start + size]
        logits = model.forward(xs, train=True)
        losses = -(smoothed_targets(ts, logits.shape[1], smoothing) * _log_softmax(logits)).sum(axis=1)
        loss_sum += float(losses.sum())
        correct += int((logits.argmax(axis=1) == ts.argmax(axis=1)).sum())
        dlogits = smoothed_cross_entropy_grad(logits, ts, smoothing) * (xs.shape[0] / total)
        model.backward(dlogits)
    return loss_sum / total, correct / total


def train_loop(
    model: EfficientNet,
    data,
    recipe: TrainRecipe,
    seed: int,
    max_steps: int | None = None,
    micro_batch_size: int | None = None,
    log_path=None,
) -> Checkpoint:
    """Run the recipe over ``data`` (a sequence of (images, labels) batches
    forming one epoch, iterated ``recipe.epochs`` times) and return the
    final checkpoint. Deterministic for fixed (seed, recipe, data order).
    """
    data = list(data)
    if not data:
        raise ValueError("no training batches")
    rng = make_rng(seed)
    params = model.params()
    state = init_rmsprop_state(params)
    decay_names = frozenset(decay_param_names(model))
    ema: dict[str, np.ndarray] = {}
    num_classes = model.config.num_classes
    log_rows = []
    step = 0
    steps_per_epoch = len(data)
    done = False
    for epoch in range(recipe.epochs):
        for x, y in data:
            lr = lr_at(recipe, step / steps_per_epoch)
            targets = _as_distribution(y, num_classes)
            if recipe.augment:
                x, targets = augment_batch(x, targets, rng, recipe)
            model.zero_grads()
            loss, acc = _run_batch(model, x, targets, recipe.label_smoothing, micro_batch_size)
            rmsprop_step(params, model.grads(), state, recipe, lr, decay_names)
            log_rows.append((epoch, step, lr, loss, acc))
            step += 1
            if max_steps is not None and step >= max_steps:
                done = True
                break
        ema = ema_update(ema, params, recipe.ema_decay)
        if done:
            break
    if log_path is not None:
        _write_log(log_path, log_rows)
    return Checkpoint(
        state={k: v.copy() for k, v in model.state().items()},
        opt_state={k: v.copy() for k, v in state.items()},
        ema=ema,
        epoch=min(recipe.epochs, math.ceil(step / steps_per_epoch)),
        fingerprint=recipe.fingerprint(),
        model_config=config_to_dict(model.config),
    )


def finetune(
    model: EfficientNet,
    ckpt: Checkpoint,
    recipe: FinetuneRecipe,
    data,
    log_path=None,
) -> Checkpoint:
    """Fine-tune the last ``recipe.scope`` segments with cosine SGD,
    starting from the checkpoint's averaged weights. Parameters outside the
    scope are bit-identical afterwards."""
    data = list(data)
    if not data:
        raise ValueError("no fine-tuning batches")
    model.load_state(ckpt.state)
    params = model.params()
    for name, arr in params.items():
        arr[...] = ckpt.ema[name]
    scoped = sorted(model.scope_param_names(recipe.last_k))
    num_classes = model.config.num_classes
    total_steps = recipe.epochs * len(data)
    log_rows = []
    step = 0
    for epoch in range(recipe.epochs):
        for x, y in data:
            lr = cosine_lr(step, total_steps, recipe.initial_lr)
            targets = _as_distribution(y, num_classes)
            model.zero_grads()
            loss, acc = _run_batch(model, x, targets, smoothing=0.0)
            sgd_step(params, model.grads(), lr, scoped)
            log_rows.append((epoch, step, lr, loss, acc))
            step += 1
    if log_path is not None:
        _write_log(log_path, log_rows)
    return Checkpoint(
        state={k: v.copy() for k, v in model.state().items()},
        opt_state={},
        ema={k: v.copy() for k, v in params.items()},
        epoch=ckpt.epoch + recipe.epochs,
        fingerprint=recipe.fingerprint(),
        model_config=config_to_dict(model.config),
    )


def _write_log(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "step", "lr", "loss", "train_acc"])
        writer.writerows(rows)
