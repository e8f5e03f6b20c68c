"""CNN -> GRU -> dense segment classifier: training, evaluation, posterior output."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import nn
from .corpus import PhoneInventory, SegmentDataset, SegmentFeatureSequence

SPPG_PROB_DECIMALS = 6
# 6-decimal printing perturbs each entry by <=5e-7; budget scales with P.
SPPG_FILE_SUM_TOL = 5e-5


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_conv_layers: int = 3
    conv_channels: int = 64
    kernel: tuple[int, int] = (3, 3)
    gru_hidden: int = 128
    n_dense: int = 3
    dense_units: int = 512
    dropout_rate: float = 0.2
    n_coeffs: int = 13
    inventory_size: int = 48

    def __post_init__(self):
        for name in ("n_conv_layers", "conv_channels", "gru_hidden", "n_dense", "dense_units",
                     "n_coeffs", "inventory_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")

    def fingerprint(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True)
        return nn.architecture_fingerprint(blob)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    batch_size: int = 32
    max_epochs: int = 50
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        if min(self.learning_rate, self.batch_size, self.max_epochs, self.patience) <= 0:
            raise ValueError("learning_rate, batch_size, max_epochs, patience must be positive")


# Validation share of the training data, fixed by the training protocol.
VALIDATION_FRACTION = 0.1


@dataclass(frozen=True)
class Sppg:
    segment_id: str
    probs: np.ndarray
    predicted: int

    def __post_init__(self):
        if np.any(self.probs < 0):
            raise ValueError("posterior entries must be non-negative")
        total = float(self.probs.sum())
        if abs(total - 1.0) > SPPG_FILE_SUM_TOL:
            raise ValueError(f"posterior sums to {total}, expected 1")
        if self.predicted != int(np.argmax(self.probs)):
            raise ValueError("predicted must be the posterior argmax")


class SegmentClassifier:
    """Conv stack over [1, S, n_coeffs], per-step channel flatten into a GRU,
    dense stack with dropout, softmax over the inventory."""

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float32,
                 params: dict[str, np.ndarray] | None = None):
        self.cfg = cfg
        self.dtype = dtype
        rng = np.random.default_rng([seed, 0])
        self.convs = []
        self.conv_relus = []
        for i in range(cfg.n_conv_layers):
            c_in = 1 if i == 0 else cfg.conv_channels
            self.convs.append(nn.Conv2D(c_in, cfg.conv_channels, cfg.kernel,
                                        name=f"conv{i}", rng=rng, dtype=dtype))
            self.conv_relus.append(nn.ReLU(name=f"conv{i}.relu"))
        self.gru = nn.GRU(cfg.conv_channels * cfg.n_coeffs, cfg.gru_hidden,
                          name="gru", rng=rng, dtype=dtype)
        self.dense = []
        self.dense_relus = []
        self.dropouts = []
        width = cfg.gru_hidden
        for i in range(cfg.n_dense):
            self.dense.append(nn.Dense(width, cfg.dense_units, name=f"dense{i}", rng=rng, dtype=dtype))
            self.dense_relus.append(nn.ReLU(name=f"dense{i}.relu"))
            self.dropouts.append(nn.Dropout(cfg.dropout_rate, name=f"dense{i}.dropout"))
            width = cfg.dense_units
        self.out = nn.Dense(width, cfg.inventory_size, name="out", rng=rng, dtype=dtype)
        self._time_mask = None
        if params is not None:
            self.set_params(params)

    # -- parameters ----------------------------------------------------

    def layers_with_params(self):
        return [*self.convs, self.gru, *self.dense, self.out]

    def params(self) -> dict[str, np.ndarray]:
        merged: dict[str, np.ndarray] = {}
        for layer in self.layers_with_params():
            merged.update(layer.params())
        return merged

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        own = self.params()
        if set(own) != set(params):
            missing = set(own) ^ set(params)
            raise nn.CheckpointError(f"parameter names do not match architecture: {sorted(missing)}")
        for name, arr in own.items():
            arr[...] = params[name].astype(self.dtype)

    def grads(self) -> dict[str, np.ndarray]:
        merged: dict[str, np.ndarray] = {}
        for layer in self.layers_with_params():
            merged.update(layer.grads)
        return merged

    def save(self, path: str | Path) -> None:
        nn.save_params(path, self.params(), self.cfg.fingerprint())

    @classmethod
    def from_checkpoint(cls, path: str | Path, cfg: ModelConfig) -> "SegmentClassifier":
        params, _ = nn.load_params(path, expected_fingerprint=cfg.fingerprint())
        return cls(cfg, params=params)

    # -- forward / backward ---------------------------------------------

    def forward_batch(self, x: np.ndarray, lengths: np.ndarray, train: bool = False,
                      rng: np.random.Generator | None = None) -> np.ndarray:
        """x: [B, S_max, n_coeffs] zero-padded; returns posteriors [B, P]."""
        if x.ndim != 3 or x.shape[2] != self.cfg.n_coeffs:
            raise nn.DimensionError(
                f"expected [B, S, {self.cfg.n_coeffs}] segment frames, got {x.shape}")
        batch, s_max, width = x.shape
        x = x.astype(self.dtype)
        # Zeroing padded steps after every conv keeps the stacked convolution
        # identical to running each segment unpadded.
        mask = (np.arange(s_max)[None, :] < lengths[:, None])[:, None, :, None].astype(self.dtype)
        h = x[:, None, :, :] * mask
        for conv, relu in zip(self.convs, self.conv_relus):
            h = relu.forward(conv.forward(h)) * mask
        gru_in = h.transpose(0, 2, 1, 3).reshape(batch, s_max, -1)
        state = self.gru.forward(gru_in, lengths)
        for dense, relu, drop in zip(self.dense, self.dense_relus, self.dropouts):
            state = drop.forward(relu.forward(dense.forward(state)), train, rng)
        logits = self.out.forward(state)
        self._time_mask = mask
        return nn.softmax(logits)

    def backward(self, probs: np.ndarray, labels: np.ndarray) -> None:
        """Populate layer gradients for the mean cross-entropy loss."""
        d = nn.softmax_ce_grad(probs, labels).astype(self.dtype)
        d = self.out.backward(d)
        for dense, relu, drop in zip(reversed(self.dense), reversed(self.dense_relus),
                                     reversed(self.dropouts)):
            d = dense.backward(relu.backward(drop.backward(d)))
        d = self.gru.backward(d)
        batch, s_max, _ = d.shape
        d = d.reshape(batch, s_max, self.cfg.conv_channels, self.cfg.n_coeffs).transpose(0, 2, 1, 3)
        for conv, relu in zip(reversed(self.convs), reversed(self.conv_relus)):
            d = conv.backward(relu.backward(d * self._time_mask))

    def sppg(self, seg: SegmentFeatureSequence) -> Sppg:
        probs = self.forward_batch(seg.frames[None, :, :], np.array([len(seg)]))[0]
        probs = probs.astype(np.float64)
        return Sppg(segment_id=seg.segment_id, probs=probs, predicted=int(np.argmax(probs)))


# -- batching ----------------------------------------------------------


def _pad_batch(items: list[SegmentFeatureSequence], dtype) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lengths = np.array([len(s) for s in items], dtype=np.int64)
    s_max = int(lengths.max())
    width = items[0].frames.shape[1]
    x = np.zeros((len(items), s_max, width), dtype=dtype)
    for i, seg in enumerate(items):
        x[i, : len(seg)] = seg.frames
    labels = np.array([s.label for s in items], dtype=np.int64)
    return x, lengths, labels


def _length_bucketed_batches(items: list[SegmentFeatureSequence], order: np.ndarray,
                             batch_size: int) -> list[np.ndarray]:
    lengths = np.array([len(items[i]) for i in order])
    by_length = order[np.argsort(lengths, kind="stable")]
    return [by_length[i: i + batch_size] for i in range(0, len(by_length), batch_size)]


# -- training ----------------------------------------------------------


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    train_accuracy: float
    valid_loss: float
    valid_accuracy: float


@dataclass
class TrainingLog:
    epochs: list[EpochStats] = field(default_factory=list)
    best_epoch: int = -1

    def to_json(self) -> str:
        payload = {"best_epoch": self.best_epoch, "epochs": [asdict(e) for e in self.epochs]}
        return json.dumps(payload, sort_keys=True, indent=1)


def _dataset_metrics(clf: SegmentClassifier, ds: SegmentDataset, batch_size: int) -> tuple[float, float]:
    order = np.arange(len(ds.items))
    total_loss = 0.0
    correct = 0
    for batch_idx in _length_bucketed_batches(ds.items, order, batch_size):
        items = [ds.items[i] for i in batch_idx]
        x, lengths, labels = _pad_batch(items, clf.dtype)
        probs = clf.forward_batch(x, lengths, train=False)
        total_loss += nn.mean_cross_entropy(probs, labels) * len(items)
        correct += int((probs.argmax(axis=1) == labels).sum())
    n = len(ds.items)
    return total_loss / n, correct / n


def train(train_ds: SegmentDataset, valid_ds: SegmentDataset, mcfg: ModelConfig,
          tcfg: TrainConfig) -> tuple[SegmentClassifier, TrainingLog]:
    """Minimize mean cross-entropy with Adam; keep the best-validation epoch."""
    for name, ds in (("train", train_ds), ("validation", valid_ds)):
        if not ds.items:
            raise ValueError(f"{name} dataset is empty")
        bad = [s.segment_id for s in ds.items if s.label >= mcfg.inventory_size]
        if bad:
            raise ValueError(f"{name} labels out of inventory range: {bad[:3]}")

    clf = SegmentClassifier(mcfg, seed=tcfg.seed)
    adam = nn.AdamState(learning_rate=tcfg.learning_rate)
    rng_dropout = np.random.default_rng([tcfg.seed, 1])
    rng_shuffle = np.random.default_rng([tcfg.seed, 2])

    log = TrainingLog()
    best_params: dict[str, np.ndarray] | None = None
    best_acc = -1.0
    stale = 0
    for epoch in range(tcfg.max_epochs):
        order = rng_shuffle.permutation(len(train_ds.items))
        batches = _length_bucketed_batches(train_ds.items, order, tcfg.batch_size)
        batch_order = rng_shuffle.permutation(len(batches))
        total_loss = 0.0
        correct = 0
        for bi in batch_order:
            items = [train_ds.items[i] for i in batches[bi]]
            x, lengths, labels = _pad_batch(items, clf.dtype)
            probs = clf.forward_batch(x, lengths, train=True, rng=rng_dropout)
            loss = nn.mean_cross_entropy(probs, labels)
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, batch {int(bi)}")
            clf.backward(probs, labels)
            nn.adam_step(clf.params(), clf.grads(), adam)
            total_loss += loss * len(items)
            correct += int((probs.argmax(axis=1) == labels).sum())
        valid_loss, valid_acc = _dataset_metrics(clf, valid_ds, tcfg.batch_size)
        log.epochs.append(EpochStats(
            epoch=epoch,
            train_loss=total_loss / len(train_ds.items),
            train_accuracy=correct / len(train_ds.items),
            valid_loss=valid_loss,
            valid_accuracy=valid_acc,
        ))
        if valid_acc > best_acc:
            best_acc = valid_acc
            best_params = {k: v.copy() for k, v in clf.params().items()}
            log.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if stale >= tcfg.patience:
                break
    clf.set_params(best_params)
    return clf, log


# -- evaluation and posterior emission ----------------------------------


@dataclass(frozen=True)
class EvalReport:
    training_set: str
    rows: tuple[tuple[str, int, float], ...]  # (corpus_tag, n, recognition_rate)

    @property
    def overall(self) -> float:
        n = sum(r[1] for r in self.rows)
        return sum(r[1] * r[2] for r in self.rows) / n

    def to_tsv(self) -> str:
        lines = ["training_set\teval_set\tn_segments\trecognition_rate"]
        for tag, n, rate in self.rows:
            lines.append(f"{self.training_set}\t{tag}\t{n}\t{rate:.4f}")
        return "\n".join(lines) + "\n"


def evaluate(clf: SegmentClassifier, datasets: list[SegmentDataset],
             training_set: str = "l1+l2", batch_size: int = 64) -> EvalReport:
    """Fraction of segments whose posterior argmax equals the label, per corpus."""
    rows = []
    for ds in datasets:
        if not ds.items:
            raise ValueError(f"evaluation dataset {ds.corpus_tag!r} is empty")
        _, acc = _dataset_metrics(clf, ds, batch_size)
        rows.append((ds.corpus_tag, len(ds.items), acc))
    return EvalReport(training_set=training_set, rows=tuple(rows))


def batch_sppg(clf: SegmentClassifier, ds: SegmentDataset, batch_size: int = 64) -> list[Sppg]:
    """Evaluation-mode posteriors, one record per segment, dataset order."""
    out: list[Sppg | None] = [None] * len(ds.items)
    order = np.arange(len(ds.items))
    for batch_idx in _length_bucketed_batches(ds.items, order, batch_size):
        items = [ds.items[i] for i in batch_idx]
        x, lengths, _ = _pad_batch(items, clf.dtype)
        probs = clf.forward_batch(x, lengths, train=False).astype(np.float64)
        for row, i in enumerate(batch_idx):
            out[i] = Sppg(segment_id=items[row].segment_id, probs=probs[row],
                          predicted=int(np.argmax(probs[row])))
    return out  # type: ignore[return-value]


# -- SPPG file format ---------------------------------------------------


@dataclass(frozen=True)
class SppgFileRecord:
    segment_id: str
    label: str
    probs: np.ndarray

    @property
    def predicted(self) -> int:
        return int(np.argmax(self.probs))


def write_sppg_file(path: str | Path, sppgs: list[Sppg], labels: list[str],
                    inventory: PhoneInventory) -> None:
    """One record per line: `segment_id<TAB>label<TAB>p_0,...,p_{P-1}` at 6 decimals."""
    if len(sppgs) != len(labels):
        raise ValueError("sppgs and labels must align")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("#inventory: " + ",".join(inventory.symbols) + "\n")
        for sppg, label in zip(sppgs, labels):
            probs = ",".join(f"{p:.{SPPG_PROB_DECIMALS}f}" for p in sppg.probs)
            fh.write(f"{sppg.segment_id}\t{label}\t{probs}\n")


def read_sppg_file(path: str | Path) -> tuple[PhoneInventory, list[SppgFileRecord]]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n")
        if not header.startswith("#inventory: "):
            raise ValueError(f"{path}: missing #inventory header")
        inventory = PhoneInventory(tuple(header[len("#inventory: "):].split(",")))
        records = []
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}: line {lineno}: expected 3 columns")
            probs = np.array([float(p) for p in parts[2].split(",")], dtype=np.float64)
            if len(probs) != len(inventory):
                raise ValueError(f"{path}: line {lineno}: {len(probs)} probs for "
                                 f"{len(inventory)} inventory symbols")
            records.append(SppgFileRecord(segment_id=parts[0], label=parts[1], probs=probs))
    return inventory, records
