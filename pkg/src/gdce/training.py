"""Training loops: classifier pretraining and task-oriented curve training.

The curve trainer composes, per batch: predicted coefficients -> iterative
curve -> frozen classifier (cross-entropy against the task label) and
-> frozen feature extractor (L1 against the features of a randomly drawn
reference-scanner image). The two terms add with no weighting. Gradients
flow through the curve into the predictor only; the classifier and extractor
are frozen and their hashes are asserted unchanged after training.

Determinism: every epoch draws its shuffle and reference picks from a stream
seeded by (seed, epoch), so an interrupted run resumed from a state file
follows the exact trajectory of an uninterrupted one.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .curve import apply_curve_batch, curve_backward_batch
from .errors import DataError, NumericalError
from .image import (
    NUM_FOLDS,
    DatasetManifest,
    load_image,
    normalize_full_range,
    normalize_window,
    normalize_zscore,
)
from .metrics import confusion_matrix, per_class_accuracy
from .models import (
    GdceConfig,
    PerceptualExtractor,
    build_discriminator,
    build_gdce,
)
from .nn import Adam, Network, l1_loss, read_container, softmax_cross_entropy, write_container
from .synth import REFERENCE_SCANNER

STATE_FORMAT = "gdce-train-state"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 12
    epochs: int = 50
    seed: int = 0
    image_size: int = 64
    n_iterations: int = 8
    num_blocks: int = 4
    conv_channels: int = 16
    val_fold: int = NUM_FOLDS - 1
    perceptual_reduction: str = "mean"
    early_stop_target: Optional[float] = None

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("lr, batch_size, and epochs must be positive")
        if not 0 <= self.val_fold < NUM_FOLDS:
            raise ValueError(f"val_fold must be in [0, {NUM_FOLDS})")
        if self.perceptual_reduction not in ("mean", "sum"):
            raise ValueError(f"unknown reduction {self.perceptual_reduction!r}")
        if self.image_size < 4 or self.n_iterations < 1 or self.num_blocks < 1:
            raise ValueError("image_size, n_iterations, num_blocks must be positive")


@dataclass(frozen=True)
class LossTerms:
    ce: float
    perceptual: float
    total: float

    def __post_init__(self):
        if self.ce < 0 or self.perceptual < 0:
            raise ValueError("loss terms cannot be negative")
        if self.total != self.ce + self.perceptual:
            raise ValueError("total must equal ce + perceptual exactly")

    @classmethod
    def of(cls, ce: float, perceptual: float) -> "LossTerms":
        return cls(ce=ce, perceptual=perceptual, total=ce + perceptual)


# ---------------------------------------------------------------------------
# Data plumbing


@dataclass
class ArrayDataset:
    x: np.ndarray  # (M, 1, H, W) float32 in [0, 1]
    y: np.ndarray  # (M,) int64
    folds: np.ndarray  # (M,) int64
    class_names: list[str]

    def __post_init__(self):
        if self.x.ndim != 4 or len(self.x) != len(self.y) or len(self.y) != len(self.folds):
            raise ValueError("inconsistent dataset arrays")
        if len(self.x) == 0:
            raise DataError("dataset is empty")

    def __len__(self) -> int:
        return len(self.x)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def subset(self, mask: np.ndarray) -> "ArrayDataset":
        return ArrayDataset(self.x[mask], self.y[mask], self.folds[mask],
                            list(self.class_names))

    def split_fold(self, fold: int) -> tuple["ArrayDataset", "ArrayDataset"]:
        """(everything else, the held-out fold)."""
        held = self.folds == fold
        if not held.any():
            raise DataError(f"fold {fold} has no samples")
        if held.all():
            raise DataError(f"fold {fold} holds every sample; nothing to train on")
        return self.subset(~held), self.subset(held)


def load_dataset(manifest: DatasetManifest, mode: str = "minmax") -> ArrayDataset:
    """Manifest -> float32 arrays under the chosen normalization.

    minmax and bitdepth land in [0, 1]; window applies the stored display
    window; zscore standardizes per image (unbounded, baseline use only).
    """
    xs, ys, fs = [], [], []
    for e in manifest.entries:
        raw = load_image(manifest.image_path(e))
        if mode == "zscore":
            values = normalize_zscore(raw)
        elif mode == "window":
            values = normalize_window(raw).values
        else:
            values = normalize_full_range(raw, mode=mode).values
        xs.append(values.astype(np.float32))
        ys.append(e.label)
        fs.append(e.fold)
    x = np.stack(xs)[:, None]
    return ArrayDataset(x, np.asarray(ys, dtype=np.int64),
                        np.asarray(fs, dtype=np.int64), list(manifest.class_names))


class ReferencePool:
    """Reference-scanner images the perceptual term can draw from."""

    def __init__(self, images: np.ndarray):
        if len(images) == 0:
            raise DataError("reference pool is empty")
        if images.ndim != 4:
            raise ValueError(f"pool must be (M, 1, H, W), got {images.shape}")
        self.images = images

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest,
                      scanner_id: str = REFERENCE_SCANNER,
                      mode: str = "minmax") -> "ReferencePool":
        wrong = [e.path for e in manifest.entries if e.scanner_id != scanner_id]
        if wrong:
            raise DataError(
                f"reference pool must come from scanner {scanner_id!r}; "
                f"{len(wrong)} entries differ (first: {wrong[0]})"
            )
        return cls(load_dataset(manifest, mode=mode).x)

    def __len__(self) -> int:
        return len(self.images)

    def draw(self, rng: np.random.Generator, k: int) -> np.ndarray:
        idx = rng.integers(0, len(self.images), size=k)
        return self.images[idx]


def _as_arrays(data: Union[DatasetManifest, ArrayDataset]) -> ArrayDataset:
    if isinstance(data, DatasetManifest):
        return load_dataset(data)
    return data


# ---------------------------------------------------------------------------
# Inference helpers


def predict_logits(net: Network, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    outs = [net.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)]
    return np.concatenate(outs, axis=0)


def enhance_batch(gdce: Network, x: np.ndarray, batch_size: int = 64) -> np.ndarray:
    outs = []
    for i in range(0, len(x), batch_size):
        chunk = x[i : i + batch_size]
        alphas = gdce.forward(chunk)
        outs.append(apply_curve_batch(chunk, alphas)[0])
    return np.concatenate(outs, axis=0)


def evaluate_worst_group(net: Network, x: np.ndarray, y: np.ndarray,
                         num_classes: int, gdce: Optional[Network] = None) -> dict:
    """Accuracy / per-class / worst-group of a classifier, optionally on
    curve-enhanced inputs."""
    if gdce is not None:
        x = enhance_batch(gdce, x)
    preds = predict_logits(net, x).argmax(axis=1)
    cm = confusion_matrix(y, preds, num_classes)
    per_class = per_class_accuracy(cm)
    present = [a for a in per_class if a is not None]
    return {
        "accuracy": float((preds == y).mean()),
        "worst_group": min(present),
        "per_class": per_class,
    }


# ---------------------------------------------------------------------------
# Discriminator pretraining


@dataclass
class TrainResult:
    net: Network
    best_epoch: int
    best_metric: float
    history: list[dict] = field(repr=False, default_factory=list)


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch]))


def _snapshot(net: Network) -> list[np.ndarray]:
    return [p.data.copy() for p in net.params()]


def _restore(net: Network, snap: list[np.ndarray]) -> None:
    for p, s in zip(net.params(), snap):
        p.data = s.copy()


def train_discriminator(data: Union[DatasetManifest, ArrayDataset],
                        config: TrainConfig, state_path: Optional[Path] = None,
                        stop_after: Optional[int] = None, log=None) -> TrainResult:
    """Cross-entropy training of the task classifier on reference images.

    One fold is held out; the epoch whose worst-group accuracy on that fold
    is highest wins. The returned network carries the best weights and is
    marked frozen, ready to act as the fixed domain discriminator. State
    handling matches train_gdce: an existing state_path resumes, stop_after
    induces an interruption.
    """
    ds = _as_arrays(data)
    if len(np.unique(ds.y)) < 2:
        raise DataError("classifier training needs at least 2 classes present")
    train, val = ds.split_fold(config.val_fold)
    net = build_discriminator(ds.num_classes, config.image_size, seed=config.seed)
    opt = Adam(net.params(), lr=config.lr)
    start_epoch, best_epoch, best_metric = 0, -1, -1.0
    best_snap, history = _snapshot(net), []
    if state_path is not None and Path(state_path).exists():
        start_epoch, best_epoch, best_metric, best_snap, history = _load_train_state(
            Path(state_path), net, opt, config)
    for epoch in range(start_epoch, config.epochs):
        rng = _epoch_rng(config.seed, epoch)
        perm = rng.permutation(len(train))
        loss_sum = 0.0
        try:
            for i in range(0, len(perm), config.batch_size):
                sel = perm[i : i + config.batch_size]
                logits = net.forward(train.x[sel])
                loss, glogits = softmax_cross_entropy(logits, train.y[sel])
                net.backward(glogits)
                opt.step()
                loss_sum += loss * len(sel)
        except NumericalError as e:
            raise NumericalError(f"classifier training diverged at epoch {epoch}: {e}") from e
        val_stats = evaluate_worst_group(net, val.x, val.y, ds.num_classes)
        row = {"epoch": epoch, "loss": loss_sum / len(train), **val_stats}
        history.append(row)
        if log:
            log(f"epoch {epoch:3d}  loss {row['loss']:.4f}  "
                f"val worst-group {row['worst_group']:.4f}")
        if row["worst_group"] > best_metric:
            best_metric, best_epoch, best_snap = row["worst_group"], epoch, _snapshot(net)
        if state_path is not None:
            _save_train_state(Path(state_path), net, opt, epoch + 1, best_epoch,
                              best_metric, best_snap, history, config)
        if config.early_stop_target is not None and best_metric >= config.early_stop_target:
            break
        if stop_after is not None and epoch - start_epoch + 1 >= stop_after:
            break
    _restore(net, best_snap)
    net.frozen = True
    return TrainResult(net, best_epoch, best_metric, history)


# ---------------------------------------------------------------------------
# Curve training


def gdce_loss_on_refs(batch: np.ndarray, labels: np.ndarray, gdce: Network,
                      discriminator: Network, extractor: PerceptualExtractor,
                      refs: np.ndarray, reduction: str = "mean") -> LossTerms:
    """Composite loss for given reference images; fills gdce parameter grads."""
    if not discriminator.frozen:
        raise ValueError("discriminator must be frozen before curve training")
    if not extractor.frozen:
        raise ValueError("extractor must be frozen before curve training")
    alphas = gdce.forward(batch)
    out, states = apply_curve_batch(batch, alphas)

    logits = discriminator.forward(out)
    ce, glogits = softmax_cross_entropy(logits, labels)
    grad_ce = discriminator.backward(glogits)

    # reference features first: the extractor's backward cache must belong
    # to the enhanced batch, not to the references
    ref_feats = extractor.features(refs)
    feats = extractor.features(out)
    perceptual, gfeats = l1_loss(feats, ref_feats, reduction)
    grad_perc = extractor.features_backward(gfeats)

    grad_alpha, _ = curve_backward_batch(grad_ce + grad_perc, alphas, states)
    gdce.backward(grad_alpha)
    return LossTerms.of(ce, perceptual)


def gdce_loss(batch: np.ndarray, labels: np.ndarray, gdce: Network,
              discriminator: Network, extractor: PerceptualExtractor,
              ref_pool: ReferencePool, rng: np.random.Generator,
              reduction: str = "mean") -> LossTerms:
    refs = ref_pool.draw(rng, len(batch))
    return gdce_loss_on_refs(batch, labels, gdce, discriminator, extractor,
                             refs, reduction)


def _save_train_state(path: Path, net: Network, opt: Adam, next_epoch: int,
                      best_epoch: int, best_metric: float,
                      best_snap: list[np.ndarray], history: list[dict],
                      config: TrainConfig) -> None:
    arrays = [(f"param.{i}", p.data) for i, p in enumerate(net.params())]
    arrays += list(opt.state_arrays().items())
    arrays += [(f"best.{i}", s) for i, s in enumerate(best_snap)]
    header = {
        "format": STATE_FORMAT,
        "epoch": next_epoch,
        "adam_t": opt.t,
        "best_epoch": best_epoch,
        "best_metric": best_metric,
        "history": history,
        "config": asdict(config),
    }
    write_container(path, header, arrays)


def _load_train_state(path: Path, net: Network, opt: Adam,
                      config: TrainConfig) -> tuple[int, int, float, list, list]:
    header, arrays = read_container(path, STATE_FORMAT)
    if header["config"] != asdict(config):
        raise DataError(f"{path}: saved training config differs from the current one")
    params = net.params()
    for i, p in enumerate(params):
        data = arrays[f"param.{i}"]
        if data.shape != p.data.shape:
            raise DataError(f"{path}: parameter {i} shape mismatch")
        p.data = data
    opt.load_state_arrays(arrays, header["adam_t"])
    best_snap = [arrays[f"best.{i}"] for i in range(len(params))]
    return (int(header["epoch"]), int(header["best_epoch"]),
            float(header["best_metric"]), best_snap, list(header["history"]))


def train_gdce(data: Union[DatasetManifest, ArrayDataset], ref_pool: ReferencePool,
               discriminator: Network, extractor: PerceptualExtractor,
               config: TrainConfig, state_path: Optional[Path] = None,
               stop_after: Optional[int] = None, log=None) -> TrainResult:
    """Train the curve predictor on shifted images against frozen nets.

    Per-epoch validation enhances the held-out fold and scores it with the
    frozen discriminator; the best epoch by worst-group accuracy wins. If
    state_path exists, training resumes from it; the state is rewritten at
    every epoch boundary. stop_after caps the epochs run in this invocation
    (an induced interruption), leaving the state file ready to resume.
    """
    if not discriminator.frozen:
        raise ValueError("discriminator must be frozen before curve training")
    if not extractor.frozen:
        raise ValueError("extractor must be frozen before curve training")
    ds = _as_arrays(data)
    train, val = ds.split_fold(config.val_fold)
    disc_hash = discriminator.weight_hash()
    ext_hash = extractor.weight_hash()

    cfg = GdceConfig(num_blocks=config.num_blocks, conv_channels=config.conv_channels,
                     n_iterations=config.n_iterations, image_size=config.image_size)
    gdce = build_gdce(cfg, seed=config.seed)
    opt = Adam(gdce.params(), lr=config.lr)
    start_epoch, best_epoch, best_metric = 0, -1, -1.0
    best_snap, history = _snapshot(gdce), []
    if state_path is not None and Path(state_path).exists():
        start_epoch, best_epoch, best_metric, best_snap, history = _load_train_state(
            Path(state_path), gdce, opt, config)

    num_classes = ds.num_classes
    for epoch in range(start_epoch, config.epochs):
        rng = _epoch_rng(config.seed, epoch)
        perm = rng.permutation(len(train))
        ce_sum, perc_sum = 0.0, 0.0
        try:
            for i in range(0, len(perm), config.batch_size):
                sel = perm[i : i + config.batch_size]
                terms = gdce_loss(train.x[sel], train.y[sel], gdce, discriminator,
                                  extractor, ref_pool, rng,
                                  reduction=config.perceptual_reduction)
                opt.step()
                ce_sum += terms.ce * len(sel)
                perc_sum += terms.perceptual * len(sel)
        except NumericalError as e:
            raise NumericalError(f"curve training diverged at epoch {epoch}: {e}") from e
        val_stats = evaluate_worst_group(discriminator, val.x, val.y,
                                         num_classes, gdce=gdce)
        mean_ce, mean_perc = ce_sum / len(train), perc_sum / len(train)
        row = {"epoch": epoch, "ce": mean_ce, "perceptual": mean_perc,
               "total": mean_ce + mean_perc, **val_stats}
        history.append(row)
        if log:
            log(f"epoch {epoch:3d}  ce {mean_ce:.4f}  perc {mean_perc:.4f}  "
                f"val worst-group {row['worst_group']:.4f}")
        if row["worst_group"] > best_metric:
            best_metric, best_epoch, best_snap = row["worst_group"], epoch, _snapshot(gdce)
        if state_path is not None:
            _save_train_state(Path(state_path), gdce, opt, epoch + 1, best_epoch,
                              best_metric, best_snap, history, config)
        if config.early_stop_target is not None and best_metric >= config.early_stop_target:
            break
        if stop_after is not None and epoch - start_epoch + 1 >= stop_after:
            break

    if discriminator.weight_hash() != disc_hash:
        raise RuntimeError("freeze contract violated: discriminator weights moved")
    if extractor.weight_hash() != ext_hash:
        raise RuntimeError("freeze contract violated: extractor weights moved")
    _restore(gdce, best_snap)
    return TrainResult(gdce, best_epoch, best_metric, history)


# ---------------------------------------------------------------------------
# Orchestration


def crossval_run(data: Union[DatasetManifest, ArrayDataset], config: TrainConfig,
                 runner) -> dict:
    """Rotate the held-out fold through all assignments and average.

    runner(train_ds, test_ds, fold, config) -> dict of scalar metrics; the
    per-fold dicts and their arithmetic mean come back together.
    """
    ds = _as_arrays(data)
    present = set(int(f) for f in np.unique(ds.folds))
    missing = sorted(set(range(NUM_FOLDS)) - present)
    if missing:
        raise DataError(f"cross-validation needs all {NUM_FOLDS} folds; missing {missing}")
    rows = []
    for fold in range(NUM_FOLDS):
        train, test = ds.split_fold(fold)
        metrics = runner(train, test, fold, config)
        rows.append({"fold": fold, **metrics})
    keys = [k for k in rows[0] if k != "fold"]
    mean = {k: float(np.mean([r[k] for r in rows])) for k in keys}
    return {"folds": rows, "mean": mean}


def _cell_seed(base_seed: int, num_blocks: int, n_iterations: int) -> int:
    return int(np.random.SeedSequence(
        [base_seed, num_blocks, n_iterations]).generate_state(1)[0])


def ablation_grid(data: Union[DatasetManifest, ArrayDataset], ref_pool: ReferencePool,
                  discriminator: Network, extractor: PerceptualExtractor,
                  layer_counts: list[int], iteration_counts: list[int],
                  config: TrainConfig,
                  test: Optional[ArrayDataset] = None, log=None) -> dict:
    """Train one curve predictor per (depth, iterations) cell.

    Each cell reseeds from (seed, L, N), so cells are independent of
    execution order. Returns {"cells": {(L, N): {...}}, sorted axes}.
    """
    ds = _as_arrays(data)
    cells = {}
    for L in layer_counts:
        for N in iteration_counts:
            cfg = replace(config, num_blocks=L, n_iterations=N,
                          seed=_cell_seed(config.seed, L, N))
            result = train_gdce(ds, ref_pool, discriminator, extractor, cfg)
            cell = {"val_worst_group": result.best_metric,
                    "best_epoch": result.best_epoch}
            if test is not None:
                stats = evaluate_worst_group(discriminator, test.x, test.y,
                                             ds.num_classes, gdce=result.net)
                cell["test_worst_group"] = stats["worst_group"]
            cells[(L, N)] = cell
            if log:
                log(f"L={L} N={N}: " + "  ".join(f"{k}={v:.4f}" if isinstance(v, float)
                                                 else f"{k}={v}" for k, v in cell.items()))
    return {"cells": cells, "layer_counts": list(layer_counts),
            "iteration_counts": list(iteration_counts)}


def render_ablation_grid(grid: dict, metric: str = "val_worst_group") -> str:
    """Plain-text heat table, depth down, iterations across."""
    ls, ns = grid["layer_counts"], grid["iteration_counts"]
    lines = [f"{metric} (rows: depth L, cols: iterations N)"]
    lines.append("L\\N " + "".join(f"{n:>9}" for n in ns))
    for L in ls:
        row = "".join(f"{grid['cells'][(L, n)][metric]:>9.4f}" for n in ns)
        lines.append(f"{L:<4}" + row)
    return "\n".join(lines) + "\n"
