"""Config-driven command-line surface.

One YAML/JSON config file describes an experiment (dataset, noise,
trainer, rounds, fit); each command runs one stage and writes its outputs
into the config's output directory. All randomness is seeded from the
config, outputs contain no timestamps, and the resolved config is copied
next to the results, so re-running a command overwrites its outputs with
byte-identical content and any artifact is reproducible from its output
directory alone.

Exit codes: 0 success, 2 configuration error, 3 data/log format error,
4 numerical failure (mixture collapse without a fallback).
"""

from __future__ import annotations

import argparse
import concurrent.futures
import csv
import io
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import evaluation, logio, selection
from .errors import (
    ConfigError,
    LogFormatError,
    MixtureFitError,
    TrainerCommandError,
)
from .dynamics import score_sequences
from .mixture import FitConfig, MixtureFit, WeibullParams
from .selection import RoundConfig
from .trainer import (
    DynamicsModel,
    SGDTrainer,
    ToyDataset,
    TrainerConfig,
    circular_class_map,
    inject_asymmetric_noise,
    inject_symmetric_noise,
    make_blobs,
    simulate_dynamics,
)

DEFAULT_BINS = 40


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    """Validated view of one experiment config file."""

    raw: dict
    output_dir: Path
    dataset: dict | None = None
    noise: dict | None = None
    trainer: dict | None = None
    round_config: RoundConfig = field(default_factory=RoundConfig)
    fit_config: FitConfig = field(default_factory=FitConfig)
    simulate: dict | None = None

    @classmethod
    def from_dict(cls, raw: dict, output_dir: str | None = None) -> "ExperimentConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config root must be a mapping")
        out = output_dir or raw.get("output_dir")
        if not out:
            raise ConfigError("output_dir is required (config key or --output-dir)")
        cfg = cls(raw=raw, output_dir=Path(out))
        cfg.dataset = _validate_dataset(raw.get("dataset"))
        cfg.noise = _validate_noise(raw.get("noise"))
        cfg.trainer = _validate_trainer(raw.get("trainer"))
        cfg.round_config = _build_round(raw.get("round", {}))
        cfg.fit_config = _build_fit(raw.get("fit", {}))
        cfg.simulate = raw.get("simulate")
        return cfg

    def require(self, *sections: str) -> None:
        for name in sections:
            if getattr(self, name if name != "round" else "round_config") is None:
                raise ConfigError(f"config section {name!r} is required for this command")


def _reject_unknown(section: dict, allowed: set, where: str) -> None:
    unknown = set(section) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")


def _validate_dataset(section):
    if section is None:
        return None
    _reject_unknown(section, {"blobs", "csv"}, "dataset")
    sources = [k for k in ("blobs", "csv") if section.get(k) is not None]
    if len(sources) != 1:
        raise ConfigError("dataset must name exactly one source: blobs or csv")
    if "blobs" in sources:
        blobs = section["blobs"]
        _reject_unknown(
            blobs,
            {"n_classes", "per_class", "dim", "spread", "seed", "test_per_class"},
            "dataset.blobs",
        )
        for key in ("n_classes", "per_class", "dim", "spread", "seed"):
            if key not in blobs:
                raise ConfigError(f"dataset.blobs.{key} is required (seeds are explicit)")
    return section


def _validate_noise(section):
    if section is None:
        return None
    _reject_unknown(section, {"type", "ratio", "seed", "class_map"}, "noise")
    kind = section.get("type", "none")
    if kind not in ("none", "symmetric", "asymmetric"):
        raise ConfigError(f"noise.type must be none|symmetric|asymmetric, got {kind!r}")
    if kind != "none":
        if "ratio" not in section:
            raise ConfigError("noise.ratio is required")
        if "seed" not in section:
            raise ConfigError("noise.seed is required (seeds are explicit)")
    if kind == "asymmetric" and "class_map" not in section:
        raise ConfigError("noise.class_map is required for asymmetric noise")
    return section


def _validate_trainer(section):
    if section is None:
        return None
    kind = section.get("kind", "sgd")
    if kind == "sgd":
        _reject_unknown(
            section,
            {"kind", "learning_rate", "momentum", "batch_size", "schedule",
             "arch", "hidden", "seed"},
            "trainer",
        )
        if "seed" not in section:
            raise ConfigError("trainer.seed is required (seeds are explicit)")
    elif kind == "external":
        _reject_unknown(section, {"kind", "command", "seed"}, "trainer")
        if not section.get("command"):
            raise ConfigError("trainer.command is required for an external trainer")
    else:
        raise ConfigError(f"trainer.kind must be sgd or external, got {kind!r}")
    return section


def _build_round(section) -> RoundConfig:
    _reject_unknown(
        section,
        {"epochs", "rounds", "lambda", "metric", "strategy", "ratio",
         "reset_model_per_round", "small_loss_epoch", "small_loss_best_validation"},
        "round",
    )
    try:
        return RoundConfig(
            epochs=section.get("epochs", 30),
            rounds=section.get("rounds", 1),
            lam=section.get("lambda", 1.0),
            metric_kind=section.get("metric", "simplified"),
            strategy=section.get("strategy", "mixture_threshold"),
            ratio=section.get("ratio", 0.9),
            reset_model_per_round=section.get("reset_model_per_round", False),
            small_loss_epoch=section.get("small_loss_epoch"),
            small_loss_best_validation=section.get("small_loss_best_validation", False),
        )
    except ValueError as exc:
        raise ConfigError(f"round: {exc}")


def _build_fit(section) -> FitConfig:
    _reject_unknown(
        section,
        {"tol", "max_iters", "shift_epsilon", "seed", "newton_tol",
         "newton_max_iters", "threshold_rule", "dequantize"},
        "fit",
    )
    try:
        return FitConfig(
            tol=section.get("tol", 1e-6),
            max_iters=section.get("max_iters", 500),
            shift_epsilon=section.get("shift_epsilon", 1e-3),
            seed=section.get("seed", 0),
            newton_tol=section.get("newton_tol", 1e-10),
            newton_max_iters=section.get("newton_max_iters", 100),
            threshold_rule=section.get("threshold_rule", "scale"),
            dequantize=section.get("dequantize", True),
        )
    except ValueError as exc:
        raise ConfigError(f"fit: {exc}")


def load_config(path, overrides=(), output_dir=None) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}")
    for item in overrides:
        raw = _apply_override(raw, item)
    return ExperimentConfig.from_dict(raw, output_dir=output_dir)


def _apply_override(raw: dict, item: str) -> dict:
    if "=" not in item:
        raise ConfigError(f"--set expects key.path=value, got {item!r}")
    dotted, text = item.split("=", 1)
    keys = dotted.strip().split(".")
    try:
        value = yaml.safe_load(text)
    except yaml.YAMLError:
        value = text
    node = raw
    for key in keys[:-1]:
        node = node.setdefault(key, {})
        if not isinstance(node, dict):
            raise ConfigError(f"--set path {dotted!r} crosses a non-mapping node")
    node[keys[-1]] = value
    return raw


# ---------------------------------------------------------------------------
# builders


def build_dataset(cfg: ExperimentConfig) -> ToyDataset:
    section = cfg.dataset
    if section is None:
        raise ConfigError("config section 'dataset' is required for this command")
    if section.get("csv"):
        return logio.read_dataset_csv(section["csv"])
    blobs = section["blobs"]
    return make_blobs(
        n_classes=blobs["n_classes"],
        per_class=blobs["per_class"],
        dim=blobs["dim"],
        spread=blobs["spread"],
        seed=blobs["seed"],
        test_per_class=blobs.get("test_per_class", 0),
    )


def apply_noise(ds: ToyDataset, cfg: ExperimentConfig) -> ToyDataset:
    section = cfg.noise
    if section is None or section.get("type", "none") == "none":
        return ds
    if section["type"] == "symmetric":
        return inject_symmetric_noise(ds, section["ratio"], section["seed"])
    class_map = section["class_map"]
    if class_map == "circular":
        class_map = circular_class_map(ds.n_classes)
    else:
        class_map = {int(k): int(v) for k, v in class_map.items()}
    return inject_asymmetric_noise(ds, section["ratio"], class_map, section["seed"])


def build_trainer(cfg: ExperimentConfig, ds: ToyDataset, workdir: Path):
    section = cfg.trainer
    if section is None:
        raise ConfigError("config section 'trainer' is required for this command")
    if section.get("kind", "sgd") == "external":
        dataset_file = workdir / "dataset.csv"
        return logio.ExternalTrainer(
            section["command"], dataset_file, workdir / "external",
            seed=section.get("seed", 0),
        )
    try:
        tcfg = TrainerConfig(
            learning_rate=section.get("learning_rate", 0.01),
            momentum=section.get("momentum", 0.9),
            batch_size=section.get("batch_size", 128),
            schedule=section.get("schedule", "cosine"),
            arch=section.get("arch", "softmax_linear"),
            hidden=section.get("hidden", 64),
            seed=section["seed"],
        )
    except ValueError as exc:
        raise ConfigError(f"trainer: {exc}")
    return SGDTrainer(ds.features.shape[1], ds.n_classes, tcfg)


def build_dynamics_model(cfg: ExperimentConfig) -> tuple[DynamicsModel, dict]:
    section = cfg.simulate
    if section is None:
        raise ConfigError("config section 'simulate' is required for this command")
    _reject_unknown(
        section,
        {"n_clean", "n_noisy", "epochs", "seed", "ramp", "p_memorize_clean",
         "p_forget_clean", "p_memorize_noisy", "p_forget_noisy"},
        "simulate",
    )
    for key in ("n_clean", "n_noisy", "epochs", "seed"):
        if key not in section:
            raise ConfigError(f"simulate.{key} is required")
    try:
        model = DynamicsModel(
            p_memorize_clean=section.get("p_memorize_clean", 0.35),
            p_forget_clean=section.get("p_forget_clean", 0.02),
            p_memorize_noisy=section.get("p_memorize_noisy", 0.08),
            p_forget_noisy=section.get("p_forget_noisy", 0.30),
            ramp=section.get("ramp"),
        )
    except ValueError as exc:
        raise ConfigError(f"simulate: {exc}")
    return model, section


# ---------------------------------------------------------------------------
# deterministic writers


def write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def capture_config(cfg: ExperimentConfig, outdir: Path) -> None:
    write_json(outdir / "config_used.json", cfg.raw)


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(value).lower()
    if isinstance(value, float):
        return f"{value:.6f}"
    return str(value)


def write_stats_csv(path: Path, rows) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["round", "kept", "precision", "recall", "test_accuracy",
             "threshold", "converged"]
        )
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def write_scores_csv(path: Path, scores: dict) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "score"])
        for i in sorted(scores):
            writer.writerow([i, repr(float(scores[i]))])


def read_scores_csv(path: Path) -> dict:
    scores = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["id", "score"]:
            raise LogFormatError("expected header id,score", path=path, line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                key = int(row[0]) if row[0].lstrip("-").isdigit() else row[0]
                scores[key] = float(row[1])
            except (IndexError, ValueError) as exc:
                raise LogFormatError(str(exc), path=path, line=lineno)
    return scores


def mixture_from_json(doc: dict) -> MixtureFit:
    return MixtureFit(
        k_clean=doc["k_clean"],
        k_noisy=doc["k_noisy"],
        clean=WeibullParams(**doc["clean"]),
        noisy=WeibullParams(**doc["noisy"]),
        shift=doc["shift"],
        epsilon=doc.get("epsilon", 0.0),
        loglik_trace=doc.get("loglik_trace", []),
        iterations=doc.get("iterations", 0),
        converged=doc.get("converged", True),
        degenerate=doc.get("degenerate", False),
    )


def save_model(trainer: SGDTrainer, outdir: Path) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    for idx, param in enumerate(trainer.net.params):
        np.save(outdir / f"param_{idx}.npy", param)
    for idx, vel in enumerate(trainer.velocity):
        np.save(outdir / f"velocity_{idx}.npy", vel)
    write_json(
        outdir / "meta.json",
        {"config": asdict(trainer.config), "dim": trainer.dim,
         "n_classes": trainer.n_classes,
         "rng_state": _jsonable(trainer.rng.bit_generator.state)},
    )


def load_model(outdir: Path) -> SGDTrainer:
    meta = json.loads((outdir / "meta.json").read_text())
    trainer = SGDTrainer(meta["dim"], meta["n_classes"], TrainerConfig(**meta["config"]))
    for idx, param in enumerate(trainer.net.params):
        param[...] = np.load(outdir / f"param_{idx}.npy")
    for idx, vel in enumerate(trainer.velocity):
        vel[...] = np.load(outdir / f"velocity_{idx}.npy")
    trainer.rng.bit_generator.state = meta["rng_state"]
    return trainer


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, np.integer):
        return int(value)
    return value


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: ExperimentConfig) -> int:
    model, section = build_dynamics_model(cfg)
    sequences, clean_mask = simulate_dynamics(
        section["n_clean"], section["n_noisy"], model,
        epochs=section["epochs"], seed=section["seed"],
    )
    outdir = cfg.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    records = logio.simulated_records(sequences, clean_mask)
    logio.write_prediction_log(outdir / "simulated_log.jsonl", records)
    write_json(outdir / "clean_mask.json", {str(k): v for k, v in clean_mask.items()})
    capture_config(cfg, outdir)
    print(f"wrote {len(records)} records to {outdir / 'simulated_log.jsonl'}")
    return 0


def cmd_inject_noise(cfg: ExperimentConfig) -> int:
    cfg.require("dataset")
    ds = apply_noise(build_dataset(cfg), cfg)
    outdir = cfg.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    logio.write_dataset_csv(outdir / "dataset.csv", ds)
    capture_config(cfg, outdir)
    print(
        f"wrote {len(ds.ids)} rows ({ds.noise_ratio():.1%} train noise) "
        f"to {outdir / 'dataset.csv'}"
    )
    return 0


def _round_log_records(ds: ToyDataset, log) -> list:
    pos = ds.positions_of(log.ids)
    records = []
    for row, i in enumerate(log.ids):
        records.append(
            logio.LogRecord(
                id=str(i),
                label=int(ds.observed_labels[pos[row]]),
                true_label=int(ds.true_labels[pos[row]]),
                seq=[int(b) for b in log.sequences[i]],
                losses=None if log.losses is None else [float(v) for v in log.losses[i]],
            )
        )
    return records


def _stats_row(result) -> list:
    st = result.stats
    return [
        result.round_index,
        len(result.selected_ids),
        None if st is None else st.precision,
        None if st is None else st.recall,
        result.test_accuracy,
        result.threshold,
        None if result.fit is None else result.fit.converged,
    ]


def run_pipeline(cfg: ExperimentConfig, outdir: Path, resume: bool = False) -> list:
    """One full multi-round pipeline with per-round artifacts and checkpoints.

    Returns the stats rows (one per completed round).
    """
    cfg.require("dataset", "trainer")
    outdir.mkdir(parents=True, exist_ok=True)
    ds = apply_noise(build_dataset(cfg), cfg)
    logio.write_dataset_csv(outdir / "dataset.csv", ds)
    capture_config(cfg, outdir)

    state_path = outdir / "state.json"
    round_cfg = cfg.round_config
    start_round = 1
    current_ids = sorted(ds.train_ids)
    stats_rows: list = []
    trainer = None
    if resume and state_path.exists():
        state = json.loads(state_path.read_text())
        if state.get("config") != cfg.raw:
            raise ConfigError(
                "state.json belongs to a different config; rerun without --resume"
            )
        start_round = state["completed_rounds"] + 1
        current_ids = [
            int(i) if isinstance(i, str) and i.lstrip("-").isdigit() else i
            for i in state["current_ids"]
        ]
        stats_rows = state["stats_rows"]
        model_dir = outdir / f"model_round{state['completed_rounds']}"
        if model_dir.exists():
            trainer = load_model(model_dir)
    if trainer is None:
        trainer = build_trainer(cfg, ds, outdir)

    clean_mask = ds.clean_mask()
    truncated = False
    for round_index in range(start_round, round_cfg.rounds + 1):
        if round_cfg.reset_model_per_round and round_index > 1 and hasattr(trainer, "reset"):
            trainer.reset()
        log = trainer.fit_round(ds, current_ids, round_cfg.epochs)
        logio.write_prediction_log(
            outdir / f"log_round{round_index}.jsonl", _round_log_records(ds, log)
        )
        scores = score_sequences(log.sequences, round_cfg.metric_kind, round_cfg.lam)
        result = selection._apply_strategy(
            scores, log, round_cfg, cfg.fit_config, round_index
        )
        result.stats = evaluation.selection_precision_recall(
            result.selected_ids, clean_mask, round_index=round_index
        )
        if hasattr(trainer, "predict") and len(ds.test_positions):
            result.test_accuracy = evaluation.test_accuracy(
                trainer, ds.features[ds.test_positions],
                ds.true_labels[ds.test_positions],
            )

        write_scores_csv(outdir / f"scores_round{round_index}.csv", scores)
        logio.write_ids(outdir / f"selected_ids_round{round_index}.txt",
                        result.selected_ids)
        if result.fit is not None:
            doc = result.fit.to_json_dict()
            doc["epsilon"] = result.fit.epsilon
            write_json(outdir / f"mixture_round{round_index}.json", doc)
        stats_rows.append(_stats_row(result))
        write_stats_csv(outdir / "stats.csv", stats_rows)
        if isinstance(trainer, SGDTrainer):
            save_model(trainer, outdir / f"model_round{round_index}")
        write_json(
            state_path,
            {
                "completed_rounds": round_index,
                "current_ids": [str(i) for i in result.selected_ids],
                "stats_rows": stats_rows,
                "truncated": not result.selected_ids,
                "config": cfg.raw,
            },
        )
        if result.warning:
            print(f"round {round_index}: {result.warning}")
        if not result.selected_ids:
            truncated = True
            break
        current_ids = result.selected_ids

    logio.write_ids(outdir / "selected_ids_final.txt", current_ids)
    if isinstance(trainer, SGDTrainer):
        save_model(trainer, outdir / "model_final")
    if truncated:
        print("selection emptied; stopped early")
    return stats_rows


def cmd_run(cfg: ExperimentConfig, trials: int = 1, resume: bool = False) -> int:
    if trials <= 1:
        rows = run_pipeline(cfg, cfg.output_dir, resume=resume)
        for row in rows:
            print(
                f"round {row[0]}: kept={row[1]} precision={_fmt(row[2]) or 'n/a'} "
                f"recall={_fmt(row[3]) or 'n/a'} accuracy={_fmt(row[4]) or 'n/a'}"
            )
        return 0
    return _run_trials(cfg, trials)


def _trial_payload(cfg: ExperimentConfig, trial: int) -> dict:
    raw = json.loads(json.dumps(cfg.raw))  # deep copy
    for section, key in (("noise", "seed"), ("trainer", "seed"), ("fit", "seed")):
        if raw.get(section, {}).get(key) is not None:
            raw[section][key] = raw[section][key] + trial
    raw["output_dir"] = str(cfg.output_dir / f"trial_{trial:02d}")
    return raw


def _trial_worker(raw: dict) -> list:
    cfg = ExperimentConfig.from_dict(raw)
    return run_pipeline(cfg, cfg.output_dir)


def _run_trials(cfg: ExperimentConfig, trials: int) -> int:
    payloads = [_trial_payload(cfg, t) for t in range(trials)]
    with concurrent.futures.ProcessPoolExecutor(max_workers=min(trials, 4)) as pool:
        results = list(pool.map(_trial_worker, payloads))
    finals = [rows[-1] for rows in results if rows]
    metrics = {"precision": 2, "recall": 3, "test_accuracy": 4}
    outdir = cfg.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    with (outdir / "aggregate.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["metric", "mean", "stddev", "trials"])
        for name, col in metrics.items():
            values = [row[col] for row in finals if row[col] is not None]
            if not values:
                writer.writerow([name, "", "", 0])
                continue
            writer.writerow(
                [name, _fmt(float(np.mean(values))), _fmt(float(np.std(values))),
                 len(values)]
            )
    capture_config(cfg, outdir)
    print(f"aggregated {trials} trials into {outdir / 'aggregate.csv'}")
    return 0


def cmd_select(cfg: ExperimentConfig, log_path) -> int:
    records = logio.read_prediction_log(log_path)
    if not records:
        raise LogFormatError("log has no records", path=log_path)
    log = logio.records_to_round_log(records)
    round_cfg = cfg.round_config
    scores = score_sequences(log.sequences, round_cfg.metric_kind, round_cfg.lam)
    result = selection._apply_strategy(scores, log, round_cfg, cfg.fit_config, 1)

    outdir = cfg.output_dir
    outdir.mkdir(parents=True, exist_ok=True)
    write_scores_csv(outdir / "scores.csv", scores)
    logio.write_ids(outdir / "selected_ids.txt", result.selected_ids)
    if result.fit is not None:
        doc = result.fit.to_json_dict()
        doc["epsilon"] = result.fit.epsilon
        write_json(outdir / "mixture.json", doc)
    clean_mask = logio.clean_mask_from_records(records)
    if clean_mask is not None:
        write_json(outdir / "clean_mask.json", {str(k): v for k, v in clean_mask.items()})
        stats = evaluation.selection_precision_recall(result.selected_ids, clean_mask, 1)
        write_stats_csv(
            outdir / "stats.csv",
            [[1, stats.kept, stats.precision, stats.recall, None, result.threshold,
              None if result.fit is None else result.fit.converged]],
        )
        print(
            f"selected {stats.kept}/{len(scores)} "
            f"(precision={_fmt(stats.precision) or 'n/a'} recall={_fmt(stats.recall) or 'n/a'})"
        )
    else:
        print(f"selected {len(result.selected_ids)}/{len(scores)}")
    if result.warning:
        print(result.warning)
    capture_config(cfg, outdir)
    return 0


def _load_clean_mask(outputs: Path) -> dict:
    dataset_csv = outputs / "dataset.csv"
    if dataset_csv.exists():
        return logio.read_dataset_csv(dataset_csv).clean_mask()
    mask_json = outputs / "clean_mask.json"
    if mask_json.exists():
        return {k: bool(v) for k, v in json.loads(mask_json.read_text()).items()}
    raise LogFormatError(
        "no ground truth in outputs dir (need dataset.csv or clean_mask.json)",
        path=outputs,
    )


def _discover_rounds(outputs: Path) -> list[tuple[int, Path]]:
    rounds = []
    for path in sorted(outputs.glob("scores_round*.csv")):
        rounds.append((int(path.stem.replace("scores_round", "")), path))
    if not rounds and (outputs / "scores.csv").exists():
        rounds.append((1, outputs / "scores.csv"))
    if not rounds:
        raise LogFormatError("no score files found in outputs dir", path=outputs)
    return sorted(rounds)


def cmd_eval(cfg: ExperimentConfig, outputs: Path | None, bins: int) -> int:
    outputs = Path(outputs) if outputs else cfg.output_dir
    mask = _load_clean_mask(outputs)
    rows = []
    for round_index, scores_path in _discover_rounds(outputs):
        scores = read_scores_csv(scores_path)
        suffix = f"_round{round_index}" if scores_path.stem != "scores" else ""
        ids_path = outputs / f"selected_ids{suffix or '_round1'}.txt"
        if not ids_path.exists():
            ids_path = outputs / "selected_ids.txt"
        selected = logio.read_ids(ids_path)
        stats = evaluation.selection_precision_recall(selected, mask, round_index)
        rows.append([round_index, stats.kept, stats.precision, stats.recall,
                     None, None, None])
        fit = None
        fit_path = outputs / f"mixture{suffix or '_round' + str(round_index)}.json"
        if not fit_path.exists():
            fit_path = outputs / "mixture.json"
        if fit_path.exists():
            fit = mixture_from_json(json.loads(fit_path.read_text()))
        # mask keys may be strings (clean_mask.json) while score ids are ints
        if not set(scores) <= set(mask):
            scores = {str(k): v for k, v in scores.items()}
        hist_csv, overlay = evaluation.histogram_export(scores, mask, bins, fit)
        (outputs / f"histogram_round{round_index}.csv").write_text(hist_csv)
        if overlay is not None:
            write_json(outputs / f"overlay_round{round_index}.json", overlay)
    write_stats_csv(outputs / "eval_stats.csv", rows)
    print(f"evaluated {len(rows)} round(s) into {outputs / 'eval_stats.csv'}")
    return 0


def _read_stats_csv(path: Path) -> list[dict]:
    if not path.exists():
        raise LogFormatError("stats.csv not found; run the pipeline first", path=path)
    rows = []
    with path.open(newline="") as fh:
        for row in csv.DictReader(fh):
            rows.append(row)
    return rows


def cmd_report(cfg: ExperimentConfig, outputs: Path | None, compare: bool) -> int:
    outputs = Path(outputs) if outputs else cfg.output_dir
    outputs.mkdir(parents=True, exist_ok=True)
    if compare:
        return _write_comparison(cfg, outputs)
    stats_rows = _read_stats_csv(outputs / "stats.csv")
    trend = io.StringIO()
    writer = csv.writer(trend)
    writer.writerow(["round", "precision", "recall", "accuracy"])
    dataset_csv = outputs / "dataset.csv"
    if dataset_csv.exists():
        # round 0: the untouched training set (select-all baseline)
        ds = logio.read_dataset_csv(dataset_csv)
        writer.writerow([0, _fmt(1.0 - ds.noise_ratio()), _fmt(1.0), ""])
    for row in stats_rows:
        writer.writerow(
            [row["round"], row["precision"], row["recall"], row["test_accuracy"]]
        )
    (outputs / "trend.csv").write_text(trend.getvalue())
    print(f"wrote {outputs / 'trend.csv'}")
    return 0


def _write_comparison(cfg: ExperimentConfig, outputs: Path) -> int:
    cfg.require("dataset", "trainer")
    if cfg.trainer.get("kind", "sgd") != "sgd":
        raise ConfigError("report --compare needs the built-in sgd trainer")
    ds = apply_noise(build_dataset(cfg), cfg)
    rows = selection.compare_strategies(
        ds,
        lambda: build_trainer(cfg, ds, outputs),
        cfg.round_config,
        cfg.fit_config,
    )
    with (outputs / "comparison.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy", "kept", "precision", "recall", "accuracy"])
        for row in rows:
            writer.writerow(
                [row["strategy"], row["kept"], _fmt(row["precision"]),
                 _fmt(row["recall"]), _fmt(row["accuracy"])]
            )
    capture_config(cfg, outputs)
    print(f"wrote {outputs / 'comparison.csv'}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mfselect",
        description="Clean-sample selection via memorization/forgetting dynamics",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", "-c", required=True, help="YAML/JSON config file")
        p.add_argument("--output-dir", "-o", help="overrides the config's output_dir")
        p.add_argument(
            "--set", dest="overrides", action="append", default=[],
            metavar="KEY.PATH=VALUE", help="override a config value",
        )

    common(sub.add_parser("simulate", help="generate synthetic dynamics and a log"))
    common(sub.add_parser("inject-noise", help="build a dataset CSV with label noise"))

    run_p = sub.add_parser("run", help="multi-round training and selection")
    common(run_p)
    run_p.add_argument("--trials", type=int, default=1,
                       help="seed-varied repetitions, aggregated mean/stddev")
    run_p.add_argument("--resume", action="store_true",
                       help="continue from the last completed round's checkpoint")

    select_p = sub.add_parser("select", help="offline selection from a prediction log")
    common(select_p)
    select_p.add_argument("--log", required=True, help="prediction log (jsonl)")

    eval_p = sub.add_parser("eval", help="score selections against ground truth")
    common(eval_p)
    eval_p.add_argument("--dir", help="outputs dir (defaults to output_dir)")
    eval_p.add_argument("--bins", type=int, default=DEFAULT_BINS)

    report_p = sub.add_parser("report", help="trend table or strategy comparison")
    common(report_p)
    report_p.add_argument("--dir", help="outputs dir (defaults to output_dir)")
    report_p.add_argument("--compare", action="store_true",
                          help="run all strategies and tabulate them")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, overrides=args.overrides,
                          output_dir=args.output_dir)
        if args.command == "simulate":
            return cmd_simulate(cfg)
        if args.command == "inject-noise":
            return cmd_inject_noise(cfg)
        if args.command == "run":
            return cmd_run(cfg, trials=args.trials, resume=args.resume)
        if args.command == "select":
            return cmd_select(cfg, args.log)
        if args.command == "eval":
            return cmd_eval(cfg, args.dir, args.bins)
        if args.command == "report":
            return cmd_report(cfg, args.dir, args.compare)
        raise ConfigError(f"unknown command {args.command!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (LogFormatError, TrainerCommandError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except MixtureFitError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
