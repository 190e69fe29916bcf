"""Alternating bi-channel training and the comparison baselines.

Each mini-batch first updates the restoration network on the gray-scale
mapping target (``pretext_step``), then updates the classifier and both
transfer branches on ``alpha * Loss_CT + Loss_BCE`` (``downstream_step``)
with the restoration encoder held fixed.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Iterator, Optional

import numpy as np
import torch

from .datasets import Dataset, FoldSplit, stratified_kfold
from .errors import ConfigError, DivergenceError
from .gsim import DEFAULT_SHIFT
from .metrics import CVReport, MetricsReport, aggregate_folds, evaluate_scores
from .losses import (DEFAULT_ALPHA, DEFAULT_POS_WEIGHT, downstream_loss, restoration_loss,
                     transfer_loss, weighted_bce_with_logits)
from .nets import VARIANTS, ArchConfig, ModelBundle, build_baseline_models, build_models

BASELINES = ("plain", "finetune_ssl", "multitask")
METHODS = ("tsbn",) + BASELINES
SCHEDULES = ("per_batch_alternation",)


@dataclass
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 5e-4
    batch_size: int = 4
    epochs: int = 20
    d: float = DEFAULT_SHIFT
    alpha: float = DEFAULT_ALPHA
    w: float = DEFAULT_POS_WEIGHT
    K: int = 64
    seed: int = 0
    variant: str = "unet_small"
    schedule: str = "per_batch_alternation"
    height: int = 96
    width: int = 48
    pretrain_epochs: int = 5
    arch: ArchConfig = field(default_factory=ArchConfig)

    def validate(self):
        for name in ("lr", "weight_decay", "d", "alpha"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ConfigError(f"{name} must be finite and >= 0, got {value}")
        if not (math.isfinite(self.w) and self.w > 0):
            raise ConfigError(f"w must be > 0, got {self.w}")
        for name in ("batch_size", "K", "height", "width"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("epochs", "pretrain_epochs"):
            if int(getattr(self, name)) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.schedule not in SCHEDULES:
            raise ConfigError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        self.arch.validate()
        m = self.arch.downsample_factor
        if self.height % m or self.width % m:
            raise ConfigError(f"input size {self.height}x{self.width} must be divisible by {m}")
        return self

    def arch_config(self) -> ArchConfig:
        return replace(self.arch, embed_dim=self.K)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["arch"] = self.arch.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        if "arch" in data and not isinstance(data["arch"], ArchConfig):
            data["arch"] = ArchConfig.from_dict(data["arch"])
        return cls(**data)


@dataclass
class TrainHistory:
    columns: tuple[str, ...]
    rows: list[dict[str, float]] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def series(self, name: str) -> np.ndarray:
        return np.array([r[name] for r in self.rows], dtype=np.float64)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("epoch",) + self.columns)
        for epoch, row in enumerate(self.rows):
            writer.writerow([epoch] + [repr(float(row[c])) for c in self.columns])
        return buf.getvalue()


@dataclass
class TrainedOutput:
    bundle: ModelBundle
    history: TrainHistory
    config: TrainConfig
    method: str
    seconds: float
    pretrain_history: Optional[TrainHistory] = None

    @property
    def classifier(self):
        return self.bundle.classifier


class PartitionViolation(AssertionError):
    pass


def param_checksum(*modules) -> str:
    """SHA-256 over the raw bytes of every parameter, in registration order."""
    h = hashlib.sha256()
    for module in modules:
        if module is None:
            continue
        for name, p in module.named_parameters():
            h.update(name.encode())
            h.update(p.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def restoration_params(bundle: ModelBundle):
    return list(bundle.restoration.parameters())


def downstream_params(bundle: ModelBundle):
    return (list(bundle.classifier.parameters()) + list(bundle.branch_d.parameters())
            + list(bundle.branch_p.parameters()))


def make_optimizer(params, config: TrainConfig) -> torch.optim.Adam:
    return torch.optim.Adam(params, lr=config.lr, weight_decay=config.weight_decay)


@dataclass
class Batch:
    images: torch.Tensor
    labels: torch.Tensor
    targets: torch.Tensor


def make_batch(images: np.ndarray, labels: np.ndarray, d: float) -> Batch:
    """Tensors for one mini-batch; the restoration target is the gray-scale mapping."""
    x = torch.from_numpy(np.ascontiguousarray(images, dtype=np.float32)).unsqueeze(1)
    y = torch.from_numpy(np.asarray(labels, dtype=np.float32))
    shift = (y * 2.0 - 1.0) * (d / 2.0)
    return Batch(x, y, x + shift.view(-1, 1, 1, 1))


def _batch_from_samples(samples, d: float) -> Batch:
    return make_batch(np.stack([s.image for s in samples]), [s.label for s in samples], d)


def _check_finite(value: torch.Tensor, what: str, where=None):
    if not torch.isfinite(value).all():
        raise DivergenceError(f"{what} is not finite ({float(value.detach())})", **(where or {}))


def pretext_step(bundle: ModelBundle, batch, config: TrainConfig, optimizer=None, where=None) -> float:
    """One restoration update on the gray-scale mapping target. Returns Loss_MSE.

    ``batch`` is a :class:`Batch` or a sequence of ``LabeledSample``.
    """
    if not isinstance(batch, Batch):
        batch = _batch_from_samples(batch, config.d)
    if optimizer is None:
        optimizer = make_optimizer(restoration_params(bundle), config)
    restored, _ = bundle.restoration(batch.images)
    loss = restoration_loss(restored, batch.targets)
    _check_finite(loss, "Loss_MSE", where)
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    optimizer.step()
    return float(loss.detach())


def downstream_step(bundle: ModelBundle, batch, config: TrainConfig, optimizer=None,
                    where=None) -> tuple[float, float, float, float]:
    """One classifier + transfer-branch update on ``alpha * Loss_CT + Loss_BCE``.

    The restoration encoder runs without gradient tracking, so its parameters
    only ever change in :func:`pretext_step`. Returns
    ``(loss_ct, loss_bce, loss_d, batch_accuracy)``.
    """
    if not isinstance(batch, Batch):
        batch = _batch_from_samples(batch, config.d)
    if optimizer is None:
        optimizer = make_optimizer(downstream_params(bundle), config)
    with torch.no_grad():
        feats = bundle.restoration.encode_tap(batch.images)
    logits, pooled = bundle.classifier(batch.images)
    ct = transfer_loss(bundle.branch_p(feats), bundle.branch_d(pooled))
    bce = weighted_bce_with_logits(logits, batch.labels, config.w)
    total = downstream_loss(ct, bce, config.alpha)
    _check_finite(total, "Loss_D", where)
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()
    acc = float(((logits.detach() >= 0).float() == batch.labels).float().mean())
    return float(ct.detach()), float(bce.detach()), float(total.detach()), acc


def iterate_batches(dataset: Dataset, batch_size: int, rng: np.random.Generator, d: float) -> Iterator[Batch]:
    images = dataset.images
    labels = dataset.labels
    order = rng.permutation(len(dataset))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield make_batch(images[idx], labels[idx], d)


class _EpochMeter:
    def __init__(self, columns):
        self.columns = columns
        self.sums = dict.fromkeys(columns, 0.0)
        self.count = 0

    def add(self, n: int, **values):
        for k, v in values.items():
            self.sums[k] += v * n
        self.count += n

    def row(self) -> dict[str, float]:
        return {k: self.sums[k] / self.count for k in self.columns}


def _prepare(dataset: Dataset, config: TrainConfig):
    config.validate()
    dataset.check_trainable()
    shape = dataset.samples[0].image.shape
    if shape != (config.height, config.width):
        raise ConfigError(f"dataset images are {shape[0]}x{shape[1]}, config expects "
                          f"{config.height}x{config.width}")
    return np.random.default_rng(config.seed)


def train_tsbn(dataset: Dataset, config: TrainConfig, check_partition: bool = False) -> TrainedOutput:
    """Per-batch alternation: a pretext update then a downstream update on the same batch.

    With ``check_partition=True`` parameter checksums are taken around every
    step and :class:`PartitionViolation` is raised if a step touches the other
    channel's parameters.
    """
    rng = _prepare(dataset, config)
    start = time.perf_counter()
    bundle = build_models(config.variant, config.arch_config(), seed=config.seed)
    opt_pre = make_optimizer(restoration_params(bundle), config)
    opt_down = make_optimizer(downstream_params(bundle), config)
    columns = ("loss_mse", "loss_ct", "loss_bce", "loss_d", "train_acc")
    history = TrainHistory(columns)
    down_modules = (bundle.classifier, bundle.branch_p, bundle.branch_d)

    for epoch in range(config.epochs):
        meter = _EpochMeter(columns)
        for b, batch in enumerate(iterate_batches(dataset, config.batch_size, rng, config.d)):
            if check_partition:
                before = param_checksum(*down_modules)
            mse = pretext_step(bundle, batch, config, opt_pre, where=dict(epoch=epoch, batch=b))
            if check_partition:
                if param_checksum(*down_modules) != before:
                    raise PartitionViolation(f"pretext step changed downstream parameters (epoch {epoch}, batch {b})")
                before = param_checksum(bundle.restoration)
            ct, bce, total, acc = downstream_step(bundle, batch, config, opt_down, where=dict(epoch=epoch, batch=b))
            if check_partition and param_checksum(bundle.restoration) != before:
                raise PartitionViolation(f"downstream step changed restoration parameters (epoch {epoch}, batch {b})")
            meter.add(len(batch.labels), loss_mse=mse, loss_ct=ct, loss_bce=bce, loss_d=total, train_acc=acc)
        history.rows.append(meter.row())
    return TrainedOutput(bundle, history, config, "tsbn", time.perf_counter() - start)


def _classifier_update(bundle, batch, config, optimizer, aux_weight: float = 0.0, where=None):
    """BCE update on the classifier; with ``aux_weight > 0`` the auxiliary restoration
    head on the shared encoder is trained jointly (hard parameter sharing)."""
    clf = bundle.classifier
    z = clf.encoder(batch.images)
    logits = clf.fc(z.mean(dim=(2, 3))).squeeze(1)
    bce = weighted_bce_with_logits(logits, batch.labels, config.w)
    mse = None
    total = bce
    if aux_weight:
        mse = restoration_loss(bundle.aux_decoder(z), batch.targets)
        total = bce + aux_weight * mse
    _check_finite(total, "loss", where)
    optimizer.zero_grad(set_to_none=True)
    total.backward()
    optimizer.step()
    acc = float(((logits.detach() >= 0).float() == batch.labels).float().mean())
    return float(bce.detach()), (None if mse is None else float(mse.detach())), acc


def _pretrain_encoder(bundle, dataset, config, rng) -> TrainHistory:
    params = list(bundle.classifier.encoder.parameters()) + list(bundle.aux_decoder.parameters())
    opt = make_optimizer(params, config)
    history = TrainHistory(("loss_mse",))
    for epoch in range(config.pretrain_epochs):
        meter = _EpochMeter(history.columns)
        for b, batch in enumerate(iterate_batches(dataset, config.batch_size, rng, config.d)):
            restored = bundle.aux_decoder(bundle.classifier.encoder(batch.images))
            loss = restoration_loss(restored, batch.targets)
            _check_finite(loss, "Loss_MSE (pretraining)", where=dict(epoch=epoch, batch=b))
            opt.zero_grad(set_to_none=True)
            loss.backward()
            opt.step()
            meter.add(len(batch.labels), loss_mse=float(loss.detach()))
        history.rows.append(meter.row())
    return history


def train_baseline(kind: str, dataset: Dataset, config: TrainConfig) -> TrainedOutput:
    """Comparison trainers sharing the classifier architecture.

    ``plain``: weighted BCE only. ``finetune_ssl``: the classifier encoder plus a
    light decoder is first trained on the gray-scale mapping task for
    ``pretrain_epochs``, the decoder is dropped and the classifier fine-tuned
    on BCE. ``multitask``: one shared encoder with restoration and
    classification heads trained together on ``Loss_MSE + Loss_BCE``.
    """
    if kind not in BASELINES:
        raise ConfigError(f"unknown baseline {kind!r}; expected one of {BASELINES}")
    rng = _prepare(dataset, config)
    start = time.perf_counter()
    bundle = build_baseline_models(kind, config.arch_config(), seed=config.seed)

    pretrain_history = None
    if kind == "finetune_ssl":
        pretrain_history = _pretrain_encoder(bundle, dataset, config, rng)
        bundle.aux_decoder = None

    if kind == "multitask":
        columns = ("loss_mse", "loss_bce", "loss_total", "train_acc")
        params = list(bundle.parameters())
    else:
        columns = ("loss_bce", "train_acc")
        params = list(bundle.classifier.parameters())
    opt = make_optimizer(params, config)
    history = TrainHistory(columns)
    aux_weight = 1.0 if kind == "multitask" else 0.0
    for epoch in range(config.epochs):
        meter = _EpochMeter(columns)
        for b, batch in enumerate(iterate_batches(dataset, config.batch_size, rng, config.d)):
            bce, mse, acc = _classifier_update(bundle, batch, config, opt, aux_weight, where=dict(epoch=epoch, batch=b))
            values = {"loss_bce": bce, "train_acc": acc}
            if kind == "multitask":
                values.update(loss_mse=mse, loss_total=bce + mse)
            meter.add(len(batch.labels), **values)
        history.rows.append(meter.row())
    return TrainedOutput(bundle, history, config, kind, time.perf_counter() - start, pretrain_history)


def train(method: str, dataset: Dataset, config: TrainConfig) -> TrainedOutput:
    if method == "tsbn":
        return train_tsbn(dataset, config)
    if method in BASELINES:
        return train_baseline(method, dataset, config)
    raise ConfigError(f"unknown method {method!r}; expected one of {METHODS}")


@torch.no_grad()
def predict_proba(classifier, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    """Malignancy probabilities for a stack of (N, H, W) images."""
    images = np.asarray(images, dtype=np.float32)
    out = []
    for start in range(0, len(images), batch_size):
        x = torch.from_numpy(np.ascontiguousarray(images[start:start + batch_size])).unsqueeze(1)
        logits, _ = classifier(x)
        out.append(torch.sigmoid(logits.double()).numpy())
    return np.concatenate(out) if out else np.zeros(0)


def smoothed_tail(series, window: int = 5) -> float:
    """Mean of the last ``window`` entries."""
    series = np.asarray(series, dtype=np.float64)
    return float(series[-window:].mean())


def evaluate(trained: TrainedOutput, dataset: Dataset, threshold: float = 0.5) -> MetricsReport:
    return evaluate_scores(predict_proba(trained.classifier, dataset.images), dataset.labels, threshold)


@dataclass
class CVResult:
    method: str
    split: FoldSplit
    report: CVReport
    outputs: list[TrainedOutput]


def cross_validate(method: str, dataset: Dataset, config: TrainConfig, k: int = 5,
                   split_seed: int = 0, threshold: float = 0.5) -> CVResult:
    """Stratified k-fold evaluation. ``split_seed`` is independent of ``config.seed``
    so that different methods can be compared on identical folds."""
    split = stratified_kfold(dataset, k, split_seed)
    reports = []
    outputs = []
    for train_ids, test_ids in split.folds:
        trained = train(method, dataset.subset(train_ids), config)
        reports.append(evaluate(trained, dataset.subset(test_ids), threshold))
        outputs.append(trained)
    return CVResult(method, split, aggregate_folds(reports), outputs)
