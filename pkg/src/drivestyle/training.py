"""Training loop, segment/trajectory prediction and the feature-subset harness."""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .features import EncodedSegments, EncodingConfig, encode_many, encode_trajectory
from .model import ArchitectureConfig, DCRNN
from .nn.layers import NumericError, softmax
from .nn.optim import OptimizerConfig, rmsprop_step
from .sampling import DatasetManifest, assign_splits
from .trajectory import Trajectory

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 256
    epochs: int = 150
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    train_fraction: float = 0.85
    seed: int = 0
    features: tuple = ("speed", "accel", "rpm")
    eval_every: int = 0  # 0 disables per-epoch test evaluation

    def __post_init__(self):
        object.__setattr__(self, "features", tuple(self.features))
        if not 0 < self.train_fraction < 1:
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.batch_size < 2:
            raise ValueError("batch_size must be at least 2")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")


@dataclass
class TrainResult:
    model: DCRNN
    drivers: list
    history: list  # dicts: epoch, loss, seg_accuracy, traj_accuracy


def split_manifest(manifest: DatasetManifest, train_fraction: float, seed: int) -> DatasetManifest:
    """Re-split by trajectory within each driver; ceil rounding favors train."""
    if not 0 < train_fraction < 1:
        raise ValueError("train_fraction must lie in (0, 1)")
    selection = {d: manifest.trajectories(d) for d in manifest.drivers()}
    entries = assign_splits(selection, train_fraction, seed)
    return DatasetManifest(manifest.name, manifest.strategy, dict(manifest.params), manifest.seed, entries,
                           dict(manifest.stats))


def driver_index(manifest: DatasetManifest) -> dict:
    return {d: i for i, d in enumerate(sorted(manifest.drivers()))}


def _gather(manifest: DatasetManifest, segments: EncodedSegments, split: str):
    by_traj = segments.by_trajectory()
    idx = driver_index(manifest)
    maps, labels, owners = [], [], []
    for e in manifest.entries:
        if e["split"] != split:
            continue
        m = by_traj.get(e["trajectory_id"])
        if m is None or len(m) == 0:
            continue
        maps.append(m)
        labels.extend([idx[e["driver_id"]]] * len(m))
        owners.extend([e["trajectory_id"]] * len(m))
    if not maps:
        return np.zeros((0,) + segments.maps.shape[1:]), np.zeros(0, dtype=int), []
    return np.concatenate(maps), np.array(labels), owners


def _batches(perm: np.ndarray, batch_size: int) -> list:
    n_batches = max(1, math.ceil(len(perm) / batch_size))
    return np.array_split(perm, n_batches)


def build_model(n_features: int, n_drivers: int, time_len: int, seed: int, ablation: bool = False, **overrides) -> DCRNN:
    cfg = ArchitectureConfig(
        feature_count=n_features,
        num_drivers=n_drivers,
        time_len=time_len,
        ablation_no_bn_residual=ablation,
        **overrides,
    )
    return DCRNN(cfg, seed=seed)


def train(
    model: DCRNN,
    manifest: DatasetManifest,
    segments: EncodedSegments,
    cfg: TrainConfig,
) -> TrainResult:
    """Mini-batch RMSProp on the train split; deterministic given ``cfg.seed``."""
    drivers = sorted(manifest.drivers())
    if model.cfg.num_drivers != len(drivers):
        raise ValueError(f"model has {model.cfg.num_drivers} outputs but manifest has {len(drivers)} drivers")
    x, y, _ = _gather(manifest, segments, "train")
    if len(x) == 0:
        raise ValueError("empty training set")
    model.fit_input_scaling(x)
    rng = np.random.default_rng(cfg.seed)
    history = []
    for epoch in range(1, cfg.epochs + 1):
        total, count = 0.0, 0
        for batch in _batches(rng.permutation(len(x)), cfg.batch_size):
            model.params.zero_grad()
            trace = model.forward(x[batch], train=True, seed=int(rng.integers(2**63)))
            loss = model.backward(trace, y[batch])
            if not math.isfinite(loss):
                raise NumericError(f"non-finite loss at epoch {epoch}")
            rmsprop_step(model.params, cfg.optimizer)
            total += loss * len(batch)
            count += len(batch)
        row = {"epoch": epoch, "loss": total / count, "seg_accuracy": None, "traj_accuracy": None}
        if cfg.eval_every and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
            ev = evaluate(model, manifest, segments, "test")
            row["seg_accuracy"], row["traj_accuracy"] = ev["seg_accuracy"], ev["traj_accuracy"]
        log.info("epoch %d loss %.4f traj_acc %s", epoch, row["loss"], row["traj_accuracy"])
        history.append(row)
    return TrainResult(model, drivers, history)


def predict_segment(model: DCRNN, segment_map: np.ndarray) -> np.ndarray:
    """Driver probability vector for one aggregate map."""
    logits = model.forward(np.asarray(segment_map)[None], train=False).logits
    return softmax(logits)[0]


def average_probabilities(prob_vectors: np.ndarray) -> np.ndarray:
    """Component-wise mean of segment probability vectors (k x m)."""
    p = np.asarray(prob_vectors, dtype=np.float64)
    if p.ndim != 2 or len(p) == 0:
        raise ValueError("need at least one segment probability vector")
    return p.mean(axis=0)


def predict_trajectory(model: DCRNN, trajectory: Trajectory | np.ndarray, cfg: EncodingConfig | None = None):
    """Returns (driver index, averaged probability vector); ties go to the lowest index.

    ``trajectory`` is a Trajectory (encoded with ``cfg``) or its k x R x T maps.
    """
    maps = encode_trajectory(trajectory, cfg) if isinstance(trajectory, Trajectory) else np.asarray(trajectory)
    if len(maps) == 0:
        raise ValueError("trajectory yields no segments")
    logits, _ = model.infer(maps)
    avg = average_probabilities(softmax(logits))
    return int(np.argmax(avg)), avg


def accuracy(predictions: Sequence, truth: Sequence) -> float:
    predictions, truth = list(predictions), list(truth)
    if len(predictions) != len(truth):
        raise ValueError(f"{len(predictions)} predictions for {len(truth)} labels")
    if not truth:
        raise ValueError("accuracy of an empty set")
    return sum(p == t for p, t in zip(predictions, truth)) / len(truth)


def evaluate(model: DCRNN, manifest: DatasetManifest, segments: EncodedSegments, split: str = "test") -> dict:
    x, y, owners = _gather(manifest, segments, split)
    if len(x) == 0:
        raise ValueError(f"no encoded segments in split {split!r}")
    logits, _ = model.infer(x)
    probs = softmax(logits)
    seg_pred = np.argmax(probs, axis=1)
    groups: dict = {}
    for i, tid in enumerate(owners):
        groups.setdefault(tid, []).append(i)
    traj_pred, traj_true = [], []
    for tid, idx in groups.items():
        traj_pred.append(int(np.argmax(average_probabilities(probs[idx]))))
        traj_true.append(int(y[idx[0]]))
    return {
        "seg_accuracy": accuracy(seg_pred.tolist(), y.tolist()),
        "traj_accuracy": accuracy(traj_pred, traj_true),
        "n_segments": int(len(x)),
        "n_trajectories": len(groups),
    }


def train_and_evaluate(
    trajectories: Iterable[Trajectory],
    manifest: DatasetManifest,
    train_cfg: TrainConfig,
    enc_cfg: EncodingConfig | None = None,
    ablation: bool = False,
    model_seed: int | None = None,
    **arch_overrides,
) -> tuple[TrainResult, dict]:
    """Encode the manifest's trajectories, train a fresh model, evaluate on test."""
    enc_cfg = enc_cfg or EncodingConfig(features=train_cfg.features)
    wanted = set(manifest.driver_of())
    segments = encode_many((t for t in trajectories if t.trajectory_id in wanted), enc_cfg)
    model = build_model(
        len(enc_cfg.features),
        len(manifest.drivers()),
        enc_cfg.time_len,
        seed=train_cfg.seed if model_seed is None else model_seed,
        ablation=ablation,
        **arch_overrides,
    )
    result = train(model, manifest, segments, train_cfg)
    return result, evaluate(model, manifest, segments, "test")


def feature_subset_experiment(
    trajectories: Sequence[Trajectory],
    manifest: DatasetManifest,
    subsets: Sequence[Sequence[str]],
    cfg: TrainConfig,
    enc_cfg: EncodingConfig | None = None,
    repeats: int = 1,
    **arch_overrides,
) -> list[dict]:
    """One model per feature subset on identical splits and seeds."""
    base = enc_cfg or EncodingConfig()
    rows = []
    for subset in subsets:
        accs = []
        for r in range(repeats):
            run_cfg = replace(cfg, features=tuple(subset), seed=cfg.seed + r)
            _, ev = train_and_evaluate(trajectories, manifest, run_cfg, replace(base, features=tuple(subset)),
                                       **arch_overrides)
            accs.append(ev["traj_accuracy"])
        rows.append({"features": "+".join(subset), "accuracy": float(np.mean(accs)), "runs": repeats})
    return rows


def subset_report_csv(rows: Sequence[Mapping], dataset_name: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["features", dataset_name])
    for r in rows:
        w.writerow([r["features"], f"{100 * r['accuracy']:.2f}%"])
    return buf.getvalue()
