"""Command-line entry point: synth / train / report.

``synth`` generates the two-cluster noisy-label problem, trains on it, and
writes the run artifacts; ``train`` does the same for CSV datasets; and
``report`` post-processes a run directory's weights into threshold-sweep
and separation tables.  Configuration comes from an optional JSON file with
command-line flags taking precedence; every artifact is a headed CSV (or a
JSON checkpoint) and is byte-reproducible for a fixed config and seed.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .analysis import separation_metrics, threshold_sweep
from .data import LabeledDataset, load_csv, make_synthetic_2d, save_csv
from .errors import ConfigError, CsvFormatError, NumericalError, ShapeError
from .model import ArchDescriptor
from .trainer import (
    RunRecord,
    TrainerConfig,
    TrainingState,
    load_checkpoint,
    run_training,
    save_checkpoint,
)

DEFAULT_THRESHOLDS = [i / 20 for i in range(20)]

# Defaults reproduce the two-cluster noisy-label experiment: 500 source
# points with 20% flipped labels, 50 clean targets, 100 epochs, shared head.
SYNTH_DEFAULTS = {
    "arch": {
        "input_dim": 2,
        "hidden_sizes": [8],
        "activation": "tanh",
        "n_classes_source": 2,
        "n_classes_target": 2,
    },
    "trainer": {
        "lambda_p": 0.5,
        "lambda_alpha": 500.0,
        "source_batch": 32,
        "target_batch": 50,
        "epochs": 100,
        "mode": "shared_classifier",
        "alpha_init": 1.0,
        "rng_seed": 0,
        "weight_path": "clip",
    },
    "synth": {"n_source": 500, "n_target": 50, "noise_frac": 0.2, "data_seed": 0},
}


@dataclass
class SynthSpec:
    n_source: int = 500
    n_target: int = 50
    noise_frac: float = 0.2
    data_seed: int = 0


@dataclass
class CsvSpec:
    source_csv: str
    target_csv: str
    n_classes_source: int
    n_classes_target: int
    label_column: str = "label"
    feature_columns: list[str] | None = None


@dataclass
class ExperimentConfig:
    arch: ArchDescriptor
    trainer: TrainerConfig
    output_dir: Path
    synth: SynthSpec = field(default_factory=SynthSpec)
    csv_data: CsvSpec | None = None
    thresholds: list[float] = field(default_factory=lambda: list(DEFAULT_THRESHOLDS))
    snapshot_alpha: bool = False
    export_data: bool = False
    checkpoint_every: int = 0
    resume_from: str | None = None


def _merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _flag_overrides(args: argparse.Namespace) -> dict:
    """Map set flags onto the config document; flags win over the file."""
    doc: dict = {"arch": {}, "trainer": {}, "synth": {}, "report": {}}
    flag_map = {
        "lambda_p": ("trainer", "lambda_p"),
        "lambda_alpha": ("trainer", "lambda_alpha"),
        "source_batch": ("trainer", "source_batch"),
        "target_batch": ("trainer", "target_batch"),
        "epochs": ("trainer", "epochs"),
        "mode": ("trainer", "mode"),
        "alpha_init": ("trainer", "alpha_init"),
        "weight_path": ("trainer", "weight_path"),
        "hidden": ("arch", "hidden_sizes"),
        "activation": ("arch", "activation"),
        "n_source": ("synth", "n_source"),
        "n_target": ("synth", "n_target"),
        "noise_frac": ("synth", "noise_frac"),
        "thresholds": ("report", "thresholds"),
    }
    for flag, (section, key) in flag_map.items():
        value = getattr(args, flag, None)
        if value is not None:
            doc[section][key] = value
    if getattr(args, "seed", None) is not None:
        # One knob seeds both the generator and the trainer.
        doc["trainer"]["rng_seed"] = args.seed
        doc["synth"]["data_seed"] = args.seed
    if getattr(args, "snapshot_alpha", False):
        doc["report"]["snapshot_alpha"] = True
    if getattr(args, "export_data", False):
        doc["export_data"] = True
    if getattr(args, "checkpoint_every", None) is not None:
        doc["checkpoint_every"] = args.checkpoint_every
    if getattr(args, "resume", None) is not None:
        doc["resume_from"] = args.resume
    if getattr(args, "out", None) is not None:
        doc["output_dir"] = args.out
    return doc


def _build_config(args: argparse.Namespace, defaults: dict | None = None) -> ExperimentConfig:
    doc: dict = dict(defaults) if defaults else {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            doc = _merge(doc, json.loads(path.read_text()))
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    doc = _merge(doc, _flag_overrides(args))

    if "output_dir" not in doc:
        raise ConfigError("an output directory is required (--out or config output_dir)")
    if "arch" not in doc or "trainer" not in doc:
        raise ConfigError("config must define 'arch' and 'trainer' sections")

    arch_doc = doc["arch"]
    if "hidden_sizes" in arch_doc:
        arch_doc["hidden_sizes"] = list(arch_doc["hidden_sizes"])
    arch = ArchDescriptor.from_dict({
        "input_dim": arch_doc.get("input_dim", 2),
        "hidden_sizes": arch_doc.get("hidden_sizes", []),
        "activation": arch_doc.get("activation", "tanh"),
        "n_classes_source": arch_doc.get("n_classes_source", 2),
        "n_classes_target": arch_doc.get("n_classes_target", 2),
    })
    trainer = TrainerConfig.from_dict(doc["trainer"])
    synth_doc = doc.get("synth", {})
    synth = SynthSpec(
        n_source=int(synth_doc.get("n_source", 500)),
        n_target=int(synth_doc.get("n_target", 50)),
        noise_frac=float(synth_doc.get("noise_frac", 0.2)),
        data_seed=int(synth_doc.get("data_seed", 0)),
    )
    csv_data = None
    if "data" in doc:
        d = doc["data"]
        try:
            csv_data = CsvSpec(
                source_csv=d["source_csv"],
                target_csv=d["target_csv"],
                n_classes_source=int(d["n_classes_source"]),
                n_classes_target=int(d["n_classes_target"]),
                label_column=d.get("label_column", "label"),
                feature_columns=d.get("feature_columns"),
            )
        except KeyError as e:
            raise ConfigError(f"data section is missing required key {e}") from None
    report_doc = doc.get("report", {})
    thresholds = [float(t) for t in report_doc.get("thresholds", DEFAULT_THRESHOLDS)]
    return ExperimentConfig(
        arch=arch,
        trainer=trainer,
        output_dir=Path(doc["output_dir"]),
        synth=synth,
        csv_data=csv_data,
        thresholds=thresholds,
        snapshot_alpha=bool(report_doc.get("snapshot_alpha", False)),
        export_data=bool(doc.get("export_data", False)),
        checkpoint_every=int(doc.get("checkpoint_every", 0)),
        resume_from=doc.get("resume_from"),
    )


def _write_weights_csv(path: Path, alpha: np.ndarray, mask: np.ndarray | None) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        header = ["index", "alpha"] + (["corrupted"] if mask is not None else [])
        writer.writerow(header)
        for i, a in enumerate(alpha):
            row = [i, repr(float(a))]
            if mask is not None:
                row.append(str(int(mask[i])))
            writer.writerow(row)


def _read_weights_csv(path: Path) -> tuple[np.ndarray, np.ndarray | None]:
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        alpha, mask = [], []
        has_mask = reader.fieldnames is not None and "corrupted" in reader.fieldnames
        for row in reader:
            alpha.append(float(row["alpha"]))
            if has_mask:
                mask.append(bool(int(row["corrupted"])))
    return np.array(alpha), (np.array(mask, dtype=bool) if has_mask else None)


def _write_alpha_epochs_csv(path: Path, snapshots: list[tuple[int, np.ndarray]]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "index", "alpha"])
        for epoch, alpha in snapshots:
            for i, a in enumerate(alpha):
                writer.writerow([epoch, i, repr(float(a))])


def _write_separation_csv(path: Path, rows: list[tuple[str, float, float, float]]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "mean_alpha_clean", "mean_alpha_noisy", "auc"])
        for label, mc, mn, auc in rows:
            writer.writerow([label, repr(mc), repr(mn), repr(auc)])


def _echo_config(cfg: ExperimentConfig, path: Path) -> None:
    doc = {
        "arch": cfg.arch.to_dict(),
        "trainer": cfg.trainer.to_dict(),
        "synth": vars(cfg.synth),
        "thresholds": cfg.thresholds,
        "snapshot_alpha": cfg.snapshot_alpha,
        "output_dir": str(cfg.output_dir),
    }
    if cfg.csv_data is not None:
        doc["data"] = vars(cfg.csv_data)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def _run_and_write(cfg: ExperimentConfig, source: LabeledDataset, target: LabeledDataset) -> None:
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    resume = load_checkpoint(cfg.resume_from) if cfg.resume_from else None
    record = run_training(
        source, target, cfg.trainer, cfg.arch,
        resume=resume,
        snapshot_alpha=cfg.snapshot_alpha,
        checkpoint_path=out / "checkpoint.json" if cfg.checkpoint_every else None,
        checkpoint_every=cfg.checkpoint_every,
    )
    record.write_csv(out / "run.csv")
    mask = source.corruption_mask
    _write_weights_csv(out / "weights.csv", record.final_alpha, mask)
    if mask is not None:
        sweep = threshold_sweep(record.final_alpha, mask, cfg.thresholds)
        sweep.write_csv(out / "sweep.csv")
    if cfg.snapshot_alpha and record.alpha_snapshots:
        _write_alpha_epochs_csv(out / "alpha_epochs.csv", record.alpha_snapshots)
    total_iters = record.stats[-1].iteration if record.stats else 0
    save_checkpoint(
        TrainingState(record.final_params, record.final_alpha, total_iters),
        out / "checkpoint.json",
    )
    _echo_config(cfg, out / "resolved_config.json")
    if cfg.export_data:
        save_csv(source, out / "source.csv")
        save_csv(target, out / "target.csv")


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = _build_config(args, defaults=SYNTH_DEFAULTS)
    source, target = make_synthetic_2d(
        cfg.synth.n_source, cfg.synth.n_target, cfg.synth.noise_frac, cfg.synth.data_seed
    )
    _run_and_write(cfg, source, target)
    print(f"wrote run artifacts to {cfg.output_dir}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    if cfg.csv_data is None:
        raise ConfigError("train requires a 'data' config section with source/target CSV paths")
    d = cfg.csv_data
    source = load_csv(d.source_csv, d.n_classes_source, d.label_column, d.feature_columns)
    target = load_csv(d.target_csv, d.n_classes_target, d.label_column, d.feature_columns)
    _run_and_write(cfg, source, target)
    print(f"wrote run artifacts to {cfg.output_dir}")
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir)
    weights_path = run_dir / "weights.csv"
    if not weights_path.exists():
        raise FileNotFoundError(f"no weights.csv in {run_dir}")
    alpha, mask = _read_weights_csv(weights_path)
    if mask is None:
        raise ConfigError(
            "weights.csv has no 'corrupted' column; reports need a corruption mask"
        )
    thresholds = args.thresholds if args.thresholds is not None else list(DEFAULT_THRESHOLDS)
    sweep = threshold_sweep(alpha, mask, thresholds)
    sweep.write_csv(run_dir / "effective_noise.csv")

    rows = []
    epochs_path = run_dir / "alpha_epochs.csv"
    if epochs_path.exists():
        per_epoch: dict[int, list[float]] = {}
        with epochs_path.open(newline="") as fh:
            for row in csv.DictReader(fh):
                per_epoch.setdefault(int(row["epoch"]), []).append(float(row["alpha"]))
        for epoch in sorted(per_epoch):
            m = separation_metrics(np.array(per_epoch[epoch]), mask)
            rows.append((str(epoch), m.mean_alpha_clean, m.mean_alpha_noisy, m.auc))
    final = separation_metrics(alpha, mask)
    rows.append(("final", final.mean_alpha_clean, final.mean_alpha_noisy, final.auc))
    _write_separation_csv(run_dir / "separation.csv", rows)
    print(f"wrote effective_noise.csv and separation.csv to {run_dir}")
    return 0


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="soseleto",
        description="Bilevel per-sample-weighted source/target training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_flags(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.add_argument("--out", help="output directory for run artifacts")
        p.add_argument("--seed", type=int, help="seed for both data generation and training")
        p.add_argument("--epochs", type=int)
        p.add_argument("--lambda-p", dest="lambda_p", type=float)
        p.add_argument("--lambda-alpha", dest="lambda_alpha", type=float)
        p.add_argument("--source-batch", dest="source_batch", type=int)
        p.add_argument("--target-batch", dest="target_batch", type=int)
        p.add_argument("--mode", choices=["transfer", "shared_classifier"])
        p.add_argument("--alpha-init", dest="alpha_init", type=float)
        p.add_argument("--weight-path", dest="weight_path", choices=["clip", "beta"])
        p.add_argument("--hidden", type=_int_list, help="comma-separated hidden sizes")
        p.add_argument("--activation", choices=["tanh", "relu"])
        p.add_argument("--thresholds", type=_float_list, help="comma-separated sweep grid")
        p.add_argument("--snapshot-alpha", dest="snapshot_alpha", action="store_true",
                       help="record the weight vector at the end of every epoch")
        p.add_argument("--export-data", dest="export_data", action="store_true",
                       help="also write the datasets as source.csv/target.csv")
        p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int,
                       help="write checkpoint.json every N iterations")
        p.add_argument("--resume", help="checkpoint file to resume from")

    p_synth = sub.add_parser("synth", help="generate the 2-D noisy-label problem and train on it")
    add_run_flags(p_synth)
    p_synth.add_argument("--n-source", dest="n_source", type=int)
    p_synth.add_argument("--n-target", dest="n_target", type=int)
    p_synth.add_argument("--noise-frac", dest="noise_frac", type=float)
    p_synth.set_defaults(func=cmd_synth)

    p_train = sub.add_parser("train", help="train on CSV source/target datasets")
    add_run_flags(p_train)
    p_train.set_defaults(func=cmd_train)

    p_report = sub.add_parser("report", help="post-process a run directory's weights")
    p_report.add_argument("run_dir")
    p_report.add_argument("--thresholds", type=_float_list)
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, CsvFormatError, ShapeError, NumericalError,
            FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
