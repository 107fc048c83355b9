"""Command-line entry point wiring the toolkit into reproducible experiments.

Subcommands: ``synth`` (generate a synthetic dataset), ``train`` (fit the
fusion model), ``eval`` (score a protocol with a checkpoint), ``hist``
(histogram CSV from a score CSV), ``ensemble`` (average score CSVs, with
optional top-k selection), ``selftest`` (built-in gradient and metric
checks).

Runs are driven by a UTF-8 ``key = value`` config file with ``[section]``
headers (sections: synth, model, train, paths). Unknown sections or keys are
rejected. The environment variable ``SASV_FUSE_SEED`` overrides every seed
in the config. Exit codes: 0 success, 2 config error, 3 data/format error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from dataclasses import dataclass, field, fields
from pathlib import Path

from .dataio import (SynthSpec, assemble_features, generate_synthetic,
                     parse_enrollment_map, parse_protocol, read_embeddings,
                     write_embeddings, write_enrollment_map, write_protocol)
from .ensemble import (SystemScores, ensemble_mean, read_score_csv,
                       select_top_k, write_score_csv)
from .errors import ConfigError, DataError, SasvFuseError
from .fusion import (CM_LABEL_SCHEMES, ModelConfig, load_checkpoint,
                     save_checkpoint)
from .metrics import (eval_report, format_report_csv, histogram,
                      write_histogram_csv, write_report_csv)
from .pooling import POOL_MODES, PoolConfig
from .trainer import TrainConfig, evaluate_scores, train, write_train_log

SEED_ENV_VAR = "SASV_FUSE_SEED"

_SPLITS = ("train", "dev", "eval")


@dataclass
class ModelSettings:
    embed_dim: int = 128
    attn_dim: int = 16
    pool: str = "tap"
    cm_block_dims: list[int] = field(default_factory=lambda: [128])
    predictor_dims: list[int] = field(default_factory=lambda: [128])
    cm_loss_weight: float = 1.0
    pred_loss_weight: float = 1.0
    cm_label_scheme: str = "target-vs-rest"


@dataclass
class RunPaths:
    out_dir: Path
    overrides: dict[str, str] = field(default_factory=dict)

    def file(self, key: str, default_name: str) -> Path:
        if key in self.overrides:
            return Path(self.overrides[key])
        return self.out_dir / default_name

    def protocol(self, split: str) -> Path:
        return self.file(f"{split}_protocol", f"{split}.trl")


@dataclass
class RunConfig:
    synth: SynthSpec
    model: ModelSettings
    train: TrainConfig
    paths: RunPaths


# ---------------------------------------------------------------------------
# config file parsing


def _parse_int(section: str, key: str, text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected an integer, got {text!r}") from None


def _parse_float(section: str, key: str, text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a number, got {text!r}") from None


def _parse_bool(section: str, key: str, text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "on", "1"):
        return True
    if lowered in ("false", "no", "off", "0"):
        return False
    raise ConfigError(f"[{section}] {key}: expected a boolean, got {text!r}")


def _parse_int_list(section: str, key: str, text: str) -> list[int]:
    if not text.strip():
        return []
    return [_parse_int(section, key, tok.strip()) for tok in text.split(",")]


_SYNTH_PARSERS = {
    "n_speakers": _parse_int,
    "utts_per_speaker": _parse_int,
    "asv_dims": _parse_int_list,
    "cm_dims": _parse_int_list,
    "speaker_separation": _parse_float,
    "spoof_cm_separation": _parse_float,
    "spoof_mimics_target": _parse_bool,
    "seed": _parse_int,
}

_MODEL_PARSERS = {
    "embed_dim": _parse_int,
    "attn_dim": _parse_int,
    "pool": lambda s, k, t: t.strip(),
    "cm_block_dims": _parse_int_list,
    "predictor_dims": _parse_int_list,
    "cm_loss_weight": _parse_float,
    "pred_loss_weight": _parse_float,
    "cm_label_scheme": lambda s, k, t: t.strip(),
}

_TRAIN_PARSERS = {
    "batch_size": _parse_int,
    "epochs": _parse_int,
    "lr": _parse_float,
    "seed": _parse_int,
    "shuffle": _parse_bool,
}

_PATH_KEYS = ("out_dir", "train_protocol", "dev_protocol", "eval_protocol",
              "enrollment_map", "checkpoint", "train_log",
              "asv_embeddings", "cm_embeddings")


def _parse_section(cp, section: str, parsers: dict) -> dict:
    values = {}
    if not cp.has_section(section):
        return values
    for key, text in cp.items(section):
        if key not in parsers:
            raise ConfigError(f"[{section}]: unknown key {key!r}")
        values[key] = parsers[key](section, key, text)
    return values


def load_run_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None

    known_sections = {"synth", "model", "train", "paths"}
    unknown = set(cp.sections()) - known_sections
    if unknown:
        raise ConfigError(f"{path}: unknown sections {sorted(unknown)}")

    synth_kwargs = _parse_section(cp, "synth", _SYNTH_PARSERS)
    if "asv_dims" in synth_kwargs:
        synth_kwargs["asv_dims"] = tuple(synth_kwargs["asv_dims"])
    if "cm_dims" in synth_kwargs:
        synth_kwargs["cm_dims"] = tuple(synth_kwargs["cm_dims"])
    synth = SynthSpec(**synth_kwargs)

    model = ModelSettings(**_parse_section(cp, "model", _MODEL_PARSERS))
    if model.pool not in POOL_MODES:
        raise ConfigError(f"[model] pool: unknown mode {model.pool!r}")
    if model.cm_label_scheme not in CM_LABEL_SCHEMES:
        raise ConfigError(
            f"[model] cm_label_scheme: unknown scheme {model.cm_label_scheme!r}")

    train_cfg = TrainConfig(**_parse_section(cp, "train", _TRAIN_PARSERS))

    path_values = {}
    if cp.has_section("paths"):
        for key, text in cp.items("paths"):
            if key not in _PATH_KEYS:
                raise ConfigError(f"[paths]: unknown key {key!r}")
            path_values[key] = text.strip()
    if "out_dir" not in path_values:
        raise ConfigError(f"{path}: [paths] out_dir is required")
    out_dir = Path(path_values.pop("out_dir"))
    paths = RunPaths(out_dir=out_dir, overrides=path_values)

    seed_override = os.environ.get(SEED_ENV_VAR)
    if seed_override is not None:
        try:
            seed = int(seed_override)
        except ValueError:
            raise ConfigError(
                f"{SEED_ENV_VAR}: expected an integer, got {seed_override!r}") from None
        synth.seed = seed
        train_cfg.seed = seed

    return RunConfig(synth=synth, model=model, train=train_cfg, paths=paths)


# ---------------------------------------------------------------------------
# shared loading helpers


def _embedding_paths(cfg: RunConfig, kind: str) -> list[Path]:
    """File list for 'asv' or 'cm' embeddings: explicit override or the
    generated names derived from the synth spec."""
    override = cfg.paths.overrides.get(f"{kind}_embeddings")
    if override:
        return [Path(tok.strip()) for tok in override.split(",") if tok.strip()]
    dims = cfg.synth.asv_dims if kind == "asv" else cfg.synth.cm_dims
    return [cfg.paths.out_dir / f"{kind}_{i:02d}.emb" for i in range(len(dims))]


def _load_stores(cfg: RunConfig):
    asv = [read_embeddings(p, model_id=p.stem) for p in _embedding_paths(cfg, "asv")]
    cm = [read_embeddings(p, model_id=p.stem) for p in _embedding_paths(cfg, "cm")]
    return asv, cm


def _load_split(cfg: RunConfig, split: str, asv_stores, cm_stores):
    trials = parse_protocol(cfg.paths.protocol(split))
    enroll = parse_enrollment_map(cfg.paths.file("enrollment_map", "enroll.map"))
    return assemble_features(trials, asv_stores, cm_stores, enroll)


def _model_config(cfg: RunConfig, asv_stores, cm_stores) -> ModelConfig:
    pool = PoolConfig(mode=cfg.model.pool, embed_dim=cfg.model.embed_dim,
                      attn_dim=cfg.model.attn_dim)
    return ModelConfig(
        n_asv=len(asv_stores),
        cm_input_dims=[s.dim for s in cm_stores],
        pool=pool,
        cm_block_dims=list(cfg.model.cm_block_dims),
        predictor_dims=list(cfg.model.predictor_dims),
        cm_loss_weight=cfg.model.cm_loss_weight,
        pred_loss_weight=cfg.model.pred_loss_weight,
        cm_label_scheme=cfg.model.cm_label_scheme)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args) -> int:
    cfg = load_run_config(args.config)
    data = generate_synthetic(cfg.synth)
    out = cfg.paths.out_dir
    out.mkdir(parents=True, exist_ok=True)

    written = []
    for split in _SPLITS:
        p = cfg.paths.protocol(split)
        write_protocol(data.trials[split], p)
        written.append(p)
    enroll_path = cfg.paths.file("enrollment_map", "enroll.map")
    write_enrollment_map(data.enrollment_map, enroll_path)
    written.append(enroll_path)
    for kind, stores in (("asv", data.asv_stores), ("cm", data.cm_stores)):
        for i, store in enumerate(stores):
            p = out / f"{kind}_{i:02d}.emb"
            write_embeddings(store, p)
            written.append(p)
    for p in written:
        print(f"wrote {p}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    asv_stores, cm_stores = _load_stores(cfg)
    train_features = _load_split(cfg, "train", asv_stores, cm_stores)
    dev_features = _load_split(cfg, "dev", asv_stores, cm_stores)
    model_cfg = _model_config(cfg, asv_stores, cm_stores)

    def progress(stats):
        print(f"epoch {stats.epoch:3d}  loss {stats.loss:.6f}  "
              f"dev sasv-eer {stats.sasv_eer:.4f}")

    params, log = train(train_features, dev_features, model_cfg, cfg.train,
                        threads=args.threads,
                        progress=progress if args.verbose else None)

    cfg.paths.out_dir.mkdir(parents=True, exist_ok=True)
    ckpt_path = cfg.paths.file("checkpoint", "model.ckpt")
    save_checkpoint(ckpt_path, params, model_cfg)
    log_path = cfg.paths.file("train_log", "train_log.csv")
    write_train_log(log, log_path)
    best = log.entries[log.best_epoch - 1]
    print(f"best epoch {log.best_epoch} (dev sasv-eer {best.sasv_eer:.4f})")
    print(f"wrote {ckpt_path}")
    print(f"wrote {log_path}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_run_config(args.config)
    ckpt_path = Path(args.checkpoint) if args.checkpoint else cfg.paths.file(
        "checkpoint", "model.ckpt")
    params, model_cfg = load_checkpoint(ckpt_path)
    asv_stores, cm_stores = _load_stores(cfg)
    if len(asv_stores) != model_cfg.n_asv:
        raise ConfigError(
            f"checkpoint expects {model_cfg.n_asv} ASV models, "
            f"found {len(asv_stores)} embedding files")
    store_dims = [s.dim for s in cm_stores]
    if store_dims != model_cfg.cm_input_dims:
        raise ConfigError(
            f"checkpoint expects CM dims {model_cfg.cm_input_dims}, "
            f"embedding files have {store_dims}")

    features = _load_split(cfg, args.split, asv_stores, cm_stores)
    scored = evaluate_scores(features, params, model_cfg, threads=args.threads)
    system = SystemScores.from_entries(f"eval-{args.split}", scored)

    cfg.paths.out_dir.mkdir(parents=True, exist_ok=True)
    scores_path = cfg.paths.out_dir / f"scores_{args.split}.csv"
    report_path = cfg.paths.out_dir / f"report_{args.split}.csv"
    write_score_csv(system, scores_path)
    report = eval_report(system.scores, system.labels)
    write_report_csv(report, report_path)
    print(format_report_csv(report), end="")
    print(f"wrote {scores_path}")
    print(f"wrote {report_path}")
    return 0


def cmd_hist(args) -> int:
    system = read_score_csv(args.scores)
    hist = histogram(system.scores, system.labels, n_bins=args.bins)
    out = Path(args.out) if args.out else Path(args.scores).with_suffix(".hist.csv")
    write_histogram_csv(hist, out)
    print(f"wrote {out}")
    return 0


def cmd_ensemble(args) -> int:
    systems = [read_score_csv(p) for p in args.scores]
    if args.top_k is not None:
        rank_paths = args.rank_on if args.rank_on else args.scores
        if len(rank_paths) != len(systems):
            raise ConfigError(
                f"--rank-on lists {len(rank_paths)} files, expected {len(systems)}")
        reports = []
        for system, rank_path in zip(systems, rank_paths):
            ranked = read_score_csv(rank_path, system_id=system.system_id)
            reports.append((system.system_id, eval_report(ranked.scores, ranked.labels)))
        keep = set(select_top_k(reports, args.top_k))
        systems = [s for s in systems if s.system_id in keep]
    combined = ensemble_mean(systems)

    out_dir = Path(args.out_dir) if args.out_dir else Path(args.scores[0]).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    scores_path = out_dir / "ensemble_scores.csv"
    report_path = out_dir / "ensemble_report.csv"
    write_score_csv(combined, scores_path)
    report = eval_report(combined.scores, combined.labels)
    write_report_csv(report, report_path)
    print(format_report_csv(report), end="")
    print(f"wrote {scores_path}")
    print(f"wrote {report_path}")
    return 0


def cmd_selftest(args) -> int:
    from .selftest import run_selftest
    results = run_selftest()
    failed = 0
    for name, passed, detail in results:
        status = "ok" if passed else "FAIL"
        print(f"{status:4s} {name}: {detail}")
        failed += 0 if passed else 1
    if failed:
        print(f"{failed} of {len(results)} checks failed")
        return 4
    print(f"all {len(results)} checks passed")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sasv-fuse",
        description="Multi-model, multi-level fusion for spoofing-aware "
                    "speaker verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_threads(p):
        p.add_argument("--threads", type=int, default=1,
                       help="cap on internal parallelism (default 1; results "
                            "are identical for any value)")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", required=True, help="run config file (INI)")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train the fusion model")
    p.add_argument("--config", required=True, help="run config file (INI)")
    p.add_argument("--verbose", action="store_true", help="print per-epoch stats")
    add_threads(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a protocol with a checkpoint")
    p.add_argument("--config", required=True, help="run config file (INI)")
    p.add_argument("--split", choices=_SPLITS, default="eval",
                   help="protocol split to score (default eval)")
    p.add_argument("--checkpoint", help="checkpoint path (default from config)")
    add_threads(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("hist", help="emit histogram CSV from a score CSV")
    p.add_argument("scores", help="score CSV (trial_index,score,label)")
    p.add_argument("--bins", type=int, default=30, help="number of bins (default 30)")
    p.add_argument("--out", help="output CSV path")
    p.set_defaults(func=cmd_hist)

    p = sub.add_parser("ensemble", help="average several score CSVs")
    p.add_argument("scores", nargs="+", help="score CSVs to combine")
    p.add_argument("--top-k", type=int, help="keep only the k best systems by SASV-EER")
    p.add_argument("--rank-on", nargs="+",
                   help="score CSVs used for top-k ranking (e.g. dev scores), "
                        "parallel to the main list; default ranks on the "
                        "inputs themselves")
    p.add_argument("--out-dir", help="output directory (default: first input's)")
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("selftest", help="run built-in gradient and metric checks")
    p.set_defaults(func=cmd_selftest)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SasvFuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DataError.exit_code


if __name__ == "__main__":
    sys.exit(main())
