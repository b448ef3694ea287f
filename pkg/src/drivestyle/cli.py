"""Command-line pipeline: one subcommand per stage, each writing artifacts plus provenance.

Seeds: every stage draws from ``SeedSequence([root_seed, crc32(stage_name)])``,
so stages can be re-run independently and still reproduce.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import sys
import zlib
from dataclasses import asdict
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .features import EncodingConfig, encode_many, read_segments, write_segments
from .model import DCRNN
from .nn.layers import NumericError
from .nn.optim import OptimizerConfig
from .nn.params import save_checkpoint
from .resolution import latent_trajectory, latents_csv, resolution_experiment
from .sampling import STRATEGIES, DatasetManifest, SamplingParams, sample
from .similarity import MatchThreshold, SimilarityMatrix, pairwise_similarity
from .synth import SynthConfig, generate_dataset
from .trajectory import PreprocessConfig, group_by_driver, parse_trajectories, preprocess, serialize_trajectories
from .training import (
    TrainConfig,
    build_model,
    evaluate,
    feature_subset_experiment,
    subset_report_csv,
    train,
)

log = logging.getLogger("drivestyle")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
PROVENANCE = "provenance.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


_ENC = {"l1": (int, 256), "l2": (int, 4), "features": (str, "speed,accel,rpm")}
_OPT = {"epochs": (int, 150), "batch_size": (int, 256), "learning_rate": (float, 5e-5)}

# stage -> option -> (type, default); None default with str type marks a required path
STAGES: dict[str, dict] = {
    "synth": {
        "drivers": (int, 10), "trajectories": (int, 40), "separation": (float, 1.0),
        "min_duration": (int, 900), "max_duration": (int, 1200),
    },
    "ingest": {"input": (str, None)},
    "preprocess": {
        "input": (str, None), "trim_seconds": (int, 120), "min_duration": (int, 600), "max_duration": (int, 1800),
    },
    "similarity": {"input": (str, None), "tau": (float, 100.0)},
    "sample": {
        "input": (str, None), "similarity": (str, None), "strategy": (str, "threshold"), "nu": (float, 0.2),
        "thresholds": (str, "0.2,0.25,0.3"), "n_drivers": (int, 50), "n_trajectories": (int, 50),
        "train_fraction": (float, 0.85),
    },
    "encode": {"input": (str, None), "manifest": (str, None), **_ENC},
    "train": {"segments": (str, None), "manifest": (str, None), **_OPT, "ablation": (bool, False), "eval_every": (int, 0)},
    "eval": {"model": (str, None), "segments": (str, None), "manifest": (str, None), "split": (str, "test")},
    "feature-grid": {
        "input": (str, None), "manifest": (str, None), "subsets": (str, "speed,accel,rpm;speed,accel;rpm"),
        "repeats": (int, 1), **_ENC, **_OPT,
    },
    "resolve": {
        "model": (str, None), "segments": (str, None), "manifest": (str, None), "split": (str, "test"),
        "subsets": (int, 100), "drivers_per_subset": (int, 10), "damping": (float, 0.5),
        "preference": (float, None), "max_iter": (int, 200), "convergence_window": (int, 15),
    },
    "export-latents": {"model": (str, None), "segments": (str, None), "manifest": (str, None), "split": (str, "test")},
}
_PATH_KEYS = {"input", "similarity", "manifest", "segments", "model"}


def stage_seed(root_seed: int, stage: str) -> int:
    ss = np.random.SeedSequence([int(root_seed), zlib.crc32(stage.encode("utf-8"))])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _input_files(path: Path) -> list[Path]:
    return sorted(p for p in path.iterdir() if p.is_file() and p.name != PROVENANCE) if path.is_dir() else [path]


def verify_inputs(paths: list[Path]) -> dict:
    """Hash inputs; where a producing stage's provenance exists, insist on a match."""
    hashes = {}
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(f"missing input: {p}")
        for f in _input_files(p):
            digest = sha256_file(f)
            prov = f.parent / PROVENANCE
            if prov.exists():
                recorded = json.loads(prov.read_text(encoding="utf-8")).get("outputs", {})
                if f.name in recorded and recorded[f.name] != digest:
                    raise ValueError(f"hash mismatch for {f}: provenance records {recorded[f.name][:12]}...")
            hashes[str(f)] = digest
    return hashes


def _write(out: Path, name: str, data: str | bytes, written: dict) -> None:
    path = out / name
    if isinstance(data, str):
        data = data.encode("utf-8")
    path.write_bytes(data)
    written[name] = hashlib.sha256(data).hexdigest()


def _features(text: str) -> tuple:
    return tuple(f.strip() for f in text.split(",") if f.strip())


def _enc_cfg(c: dict) -> EncodingConfig:
    return EncodingConfig(l1=c["l1"], l2=c["l2"], features=_features(c["features"]))


def _train_cfg(c: dict, seed: int, features=()) -> TrainConfig:
    return TrainConfig(
        batch_size=c["batch_size"], epochs=c["epochs"], seed=seed, features=features,
        optimizer=OptimizerConfig(learning_rate=c["learning_rate"]), eval_every=c.get("eval_every", 0),
    )


def _read_trajs(path: str):
    with open(path, "rb") as fh:
        return parse_trajectories(fh)


def _read_manifest(path: str) -> DatasetManifest:
    return DatasetManifest.from_json(Path(path).read_text(encoding="utf-8"))


def _read_segs(path: str):
    with open(path, "rb") as fh:
        return read_segments(fh)


def _load_model(path: str) -> DCRNN:
    d = Path(path)
    return DCRNN.load(d / "model.ckpt", d / "model.json")


def _split_subset(manifest: DatasetManifest, split: str) -> DatasetManifest:
    entries = [e for e in manifest.entries if split == "all" or e["split"] == split]
    return DatasetManifest(manifest.name, manifest.strategy, manifest.params, manifest.seed, entries, manifest.stats)


def similarity_csv(matrices: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["driver_id", "trajectory_a", "trajectory_b", "score"])
    for d in sorted(matrices):
        m = matrices[d]
        for i in range(len(m.trajectory_ids)):
            for j in range(i + 1, len(m.trajectory_ids)):
                w.writerow([d, m.trajectory_ids[i], m.trajectory_ids[j], repr(float(m.scores[i, j]))])
    return buf.getvalue()


def read_similarity_csv(text: str, by_driver: dict) -> dict:
    """Rebuild per-driver matrices, ordered as the drivers' trajectories."""
    pos = {d: {t.trajectory_id: i for i, t in enumerate(ts)} for d, ts in by_driver.items()}
    scores = {d: np.eye(len(ts)) for d, ts in by_driver.items() if len(ts) >= 2}
    seen = {d: 0 for d in scores}
    for row in csv.DictReader(io.StringIO(text)):
        d = row["driver_id"]
        if d not in scores:
            raise ValueError(f"similarity rows for unknown driver {d!r}")
        i, j = pos[d][row["trajectory_a"]], pos[d][row["trajectory_b"]]
        scores[d][i, j] = scores[d][j, i] = float(row["score"])
        seen[d] += 1
    out = {}
    for d, s in scores.items():
        n = len(s)
        if seen[d] != n * (n - 1) // 2:
            raise ValueError(f"similarity for driver {d!r} has {seen[d]} of {n * (n - 1) // 2} pairs")
        out[d] = SimilarityMatrix([t.trajectory_id for t in by_driver[d]], s)
    return out


# ---- stages: each returns {output name: content}

def run_synth(c, seed, threads):
    cfg = SynthConfig(c["drivers"], c["trajectories"], c["min_duration"], c["max_duration"], c["separation"], seed)
    ds = generate_dataset(cfg)
    return {"trajectories.csv": serialize_trajectories(ds.trajectories), "profiles.json": ds.profiles_json()}


def run_ingest(c, seed, threads):
    trajs = _read_trajs(c["input"])
    report = {"trajectories": len(trajs), "drivers": len(group_by_driver(trajs)), "points": sum(map(len, trajs))}
    return {"trajectories.csv": serialize_trajectories(trajs), "ingest.json": json.dumps(report, indent=2) + "\n"}


def run_preprocess(c, seed, threads):
    cfg = PreprocessConfig(c["trim_seconds"], c["min_duration"], c["max_duration"])
    trajs = _read_trajs(c["input"])
    kept = [p for p in (preprocess(t, cfg) for t in trajs) if p is not None]
    report = {"input": len(trajs), "kept": len(kept), "dropped": len(trajs) - len(kept), "config": asdict(cfg)}
    return {"trajectories.csv": serialize_trajectories(kept), "preprocess.json": json.dumps(report, indent=2) + "\n"}


def run_similarity(c, seed, threads):
    by_driver = group_by_driver(_read_trajs(c["input"]))
    thr = MatchThreshold(c["tau"])
    matrices = {d: pairwise_similarity(ts, thr, threads) for d, ts in by_driver.items() if len(ts) >= 2}
    return {"similarity.csv": similarity_csv(matrices)}


def run_sample(c, seed, threads):
    by_driver = group_by_driver(_read_trajs(c["input"]))
    matrices = read_similarity_csv(Path(c["similarity"]).read_text(encoding="utf-8"), by_driver)
    params = SamplingParams(
        nu=c["nu"], thresholds=tuple(float(v) for v in c["thresholds"].split(",")), n_trajectories=c["n_trajectories"],
        n_drivers=c["n_drivers"], seed=seed, train_fraction=c["train_fraction"],
    )
    if c["strategy"] not in STRATEGIES:
        raise UsageError(f"--strategy must be one of {', '.join(STRATEGIES)}")
    return {"manifest.json": sample(c["strategy"], by_driver, params, matrices).to_json()}


def run_encode(c, seed, threads):
    cfg = _enc_cfg(c)
    wanted = set(_read_manifest(c["manifest"]).driver_of())
    segs = encode_many((t for t in _read_trajs(c["input"]) if t.trajectory_id in wanted), cfg)
    buf = io.BytesIO()
    write_segments(segs, buf)
    meta = {"l1": cfg.l1, "l2": cfg.l2, "features": list(cfg.features), "segments": len(segs.maps)}
    return {"segments.dpfm": buf.getvalue(), "encoding.json": json.dumps(meta, indent=2) + "\n"}


def _history_csv(history) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, ["epoch", "loss", "seg_accuracy", "traj_accuracy"], lineterminator="\n")
    w.writeheader()
    for row in history:
        w.writerow({k: ("" if v is None else repr(v)) for k, v in row.items()})
    return buf.getvalue()


def run_train(c, seed, threads):
    manifest = _read_manifest(c["manifest"])
    segs = _read_segs(c["segments"])
    tcfg = _train_cfg(c, seed, segs.features)
    model = build_model(len(segs.features), len(manifest.drivers()), segs.maps.shape[2], seed, ablation=c["ablation"])
    result = train(model, manifest, segs, tcfg)
    buf = io.BytesIO()
    save_checkpoint(model.params, buf)
    meta = {"drivers": result.drivers, "features": list(segs.features)}
    return {
        "model.ckpt": buf.getvalue(),
        "model.json": model.cfg.to_json() + "\n",
        "drivers.json": json.dumps(meta, indent=2) + "\n",
        "history.csv": _history_csv(result.history),
    }


def run_eval(c, seed, threads):
    report = evaluate(_load_model(c["model"]), _read_manifest(c["manifest"]), _read_segs(c["segments"]), c["split"])
    return {"eval.json": json.dumps(report, indent=2, sort_keys=True) + "\n"}


def run_feature_grid(c, seed, threads):
    subsets = [_features(s) for s in c["subsets"].split(";") if s.strip()]
    manifest = _read_manifest(c["manifest"])
    rows = feature_subset_experiment(
        _read_trajs(c["input"]), manifest, subsets, _train_cfg(c, seed), _enc_cfg(c), repeats=c["repeats"]
    )
    return {"feature_grid.csv": subset_report_csv(rows, manifest.name)}


def _latents(c):
    model = _load_model(c["model"])
    manifest = _split_subset(_read_manifest(c["manifest"]), c["split"])
    by_traj = _read_segs(c["segments"]).by_trajectory()
    labels = manifest.driver_of()
    lat = {tid: latent_trajectory(model, by_traj[tid]) for tid in sorted(labels) if len(by_traj.get(tid, ())) > 0}
    return lat, labels


def run_resolve(c, seed, threads):
    lat, labels = _latents(c)
    report = resolution_experiment(
        lat, labels, c["subsets"], c["drivers_per_subset"], seed, c["damping"], c["preference"],
        c["max_iter"], c["convergence_window"], threads,
    )
    return {"resolution.json": report.to_json()}


def run_export_latents(c, seed, threads):
    lat, labels = _latents(c)
    return {"latents.csv": latents_csv(lat, labels)}


RUNNERS = {
    "synth": run_synth, "ingest": run_ingest, "preprocess": run_preprocess, "similarity": run_similarity,
    "sample": run_sample, "encode": run_encode, "train": run_train, "eval": run_eval,
    "feature-grid": run_feature_grid, "resolve": run_resolve, "export-latents": run_export_latents,
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="drivestyle", description="Driver identification pipeline")
    p.add_argument("--version", action="version", version=__version__)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML or JSON file; flags override it")
    common.add_argument("--seed", type=int, help="root seed (default 0)")
    common.add_argument("--threads", type=int, help="worker processes (default 1)")
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="stage", required=True, parser_class=_Parser)
    for stage, opts in STAGES.items():
        sp = sub.add_parser(stage, parents=[common])
        for name, (typ, default) in opts.items():
            flag = "--" + name.replace("_", "-")
            if typ is bool:
                sp.add_argument(flag, action="store_const", const=True, default=None)
            else:
                sp.add_argument(flag, type=typ, default=None, help=f"default: {default}")
    return p


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    text = Path(path).read_text(encoding="utf-8")
    data = json.loads(text) if path.endswith(".json") else yaml.safe_load(text)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise UsageError("config file must hold a mapping")
    return data


def resolve_config(stage: str, args: argparse.Namespace, file_cfg: dict) -> tuple[dict, int, int]:
    """Defaults < config file (top level + stage section) < flags."""
    opts = STAGES[stage]
    known = set(STAGES) | {"seed", "threads"}
    unknown = set(file_cfg) - known
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    section = file_cfg.get(stage) or {}
    if not isinstance(section, dict):
        raise UsageError(f"config section {stage!r} must be a mapping")
    bad = {k.replace("-", "_") for k in section} - set(opts)
    if bad:
        raise UsageError(f"unknown keys in config section {stage!r}: {', '.join(sorted(bad))}")
    merged = {k: d for k, (_, d) in opts.items()}
    merged.update({k.replace("-", "_"): v for k, v in section.items()})
    for k in opts:
        v = getattr(args, k)
        if v is not None:
            merged[k] = v
    missing = [k for k, (t, d) in opts.items() if k in _PATH_KEYS and merged[k] is None]
    if missing:
        raise UsageError(f"{stage}: missing required --{', --'.join(m.replace('_', '-') for m in missing)}")
    seed = args.seed if args.seed is not None else int(file_cfg.get("seed", 0))
    threads = args.threads if args.threads is not None else int(file_cfg.get("threads", 1))
    if seed < 0 or threads < 1:
        raise UsageError("--seed must be non-negative and --threads positive")
    return merged, seed, threads


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
        merged, root_seed, threads = resolve_config(args.stage, args, _load_config(args.config))
        inputs = verify_inputs([Path(merged[k]) for k in sorted(_PATH_KEYS & set(merged)) if merged[k]])
        seed = stage_seed(root_seed, args.stage)
        artifacts = RUNNERS[args.stage](merged, seed, threads)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        written: dict = {}
        for name in sorted(artifacts):
            _write(out, name, artifacts[name], written)
        prov = {
            "stage": args.stage,
            "version": __version__,
            "config": merged,
            "root_seed": root_seed,
            "stage_seed": seed,
            "threads": threads,
            "inputs": inputs,
            "outputs": written,
        }
        (out / PROVENANCE).write_text(json.dumps(prov, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return EXIT_OK
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericError, FloatingPointError) as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())
