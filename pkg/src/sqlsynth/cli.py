"""Command-line entry points binding the pipeline into reproducible runs.

Subcommands: train-components, synthesize, train-student, analyze,
evaluate. One JSON config file drives a run; a single seed fans out to one
derived seed per component, every artifact records the hash of the config
that produced it, and re-running an identical config yields byte-identical
artifacts (single-threaded torch keeps training bitwise reproducible).
"""

from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, field
from pathlib import Path

import torch

from .analysis import dataset_stats, render_stats_table, stats_csv_rows
from .errors import ConfigError, DataParseError, SqlSynthError
from .generator import GeneratorModel, GeneratorTrainConfig, train_generator
from .parser import (
    ExecEnvironment,
    ParserModel,
    ParserTrainConfig,
    evaluate_em,
    train_parser,
)
from .pipeline import (
    SynthesisConfig,
    SynthesisReport,
    load_synthesized,
    save_synthesized,
    synthesize,
)
from .sampler import (
    SamplerModel,
    SamplerTrainConfig,
    empirical_length_distribution,
    sample_random_entities,
    train_sampler,
)
from .schema import extract_entity_sequence, format_generator_input, load_examples, load_schemas
from .training import TrainingMixtureConfig, build_training_mixture, train_student
from .util import (
    config_hash,
    derive_seed,
    file_sha256,
    load_checkpoint,
    read_json,
    save_checkpoint,
    write_json,
)

_MODE_MAP = {"train": "train-domains", "dev": "zero-shot-domains", "train+dev": "both"}


@dataclass
class RunConfig:
    """One experiment: data paths, component settings, and the master seed."""

    schemas: Path
    train: Path
    out: Path
    eval: Path | None = None
    databases: Path | None = None
    seed: int = 13
    sampler: dict = field(default_factory=dict)
    generator: dict = field(default_factory=dict)
    parser: dict = field(default_factory=dict)
    synthesis: dict = field(default_factory=dict)
    mixture: dict = field(default_factory=dict)
    alpha_sweep: list | None = None
    sampler_mode: str = "learned"
    exec_timeout_s: float = 5.0
    raw_paths: dict = field(default_factory=dict)  # paths exactly as written

    @classmethod
    def from_file(cls, path: str | Path) -> "RunConfig":
        try:
            raw = read_json(path)
        except Exception as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        paths = raw.get("paths", {})
        base = Path(path).parent
        need = {}
        for key in ("schemas", "train", "out"):
            if key not in paths:
                raise ConfigError(f"config is missing paths.{key}")
            need[key] = (base / paths[key]).resolve()
        cfg = cls(
            schemas=need["schemas"],
            train=need["train"],
            out=need["out"],
            eval=(base / paths["eval"]).resolve() if "eval" in paths else None,
            databases=(base / paths["databases"]).resolve() if "databases" in paths else None,
            seed=raw.get("seed", 13),
            sampler=raw.get("sampler", {}),
            generator=raw.get("generator", {}),
            parser=raw.get("parser", {}),
            synthesis=raw.get("synthesis", {}),
            mixture=raw.get("mixture", {}),
            alpha_sweep=raw.get("alpha_sweep"),
            sampler_mode=raw.get("sampler_mode", "learned"),
            exec_timeout_s=raw.get("exec_timeout_s", 5.0),
            raw_paths={k: v for k, v in paths.items() if k != "out"},
        )
        if cfg.sampler_mode not in ("learned", "random"):
            raise ConfigError("sampler_mode must be 'learned' or 'random'")
        return cfg

    def validate_inputs(self, need_eval: bool = False) -> None:
        for name, p in (("schemas", self.schemas), ("train", self.train)):
            if not p.exists():
                raise ConfigError(f"paths.{name} does not exist: {p}")
        if need_eval:
            if self.eval is None or not self.eval.exists():
                raise ConfigError("paths.eval is required for this command")
        if self.databases is not None and not self.databases.exists():
            raise ConfigError(f"paths.databases does not exist: {self.databases}")

    # hashes identify the computation: paths as written in the config file
    # (location independent), with the output directory excluded
    def _canonical(self, keys: list[str]) -> dict:
        full = {
            "seed": self.seed,
            "data": self.raw_paths,
            "sampler": self.sampler,
            "generator": self.generator,
            "parser": self.parser,
            "synthesis": self.synthesis,
            "mixture": self.mixture,
            "alpha_sweep": self.alpha_sweep,
            "sampler_mode": self.sampler_mode,
            "exec_timeout_s": self.exec_timeout_s,
        }
        return {k: full[k] for k in keys}

    def full_hash(self) -> str:
        return config_hash(
            self._canonical(
                ["seed", "data", "sampler", "generator", "parser", "synthesis",
                 "mixture", "alpha_sweep", "sampler_mode", "exec_timeout_s"]
            )
        )

    def components_hash(self) -> str:
        """Hash of everything the component checkpoints depend on."""
        return config_hash(self._canonical(["seed", "data", "sampler", "generator", "parser"]))


def _component_seed(cfg: RunConfig, name: str) -> int:
    return derive_seed(cfg.seed, name)


def _load_data(cfg: RunConfig):
    schemas = load_schemas(cfg.schemas)
    train = load_examples(cfg.train, schemas)
    return schemas, train


def _train_corpora(schemas, train):
    by_id = {s.db_id: s for s in schemas}
    sequences = [extract_entity_sequence(p.sql, by_id[p.db_id]) for p in train]
    gen_pairs = [
        (format_generator_input(seq, by_id[p.db_id]), p.question)
        for p, seq in zip(train, sequences)
        if seq.entities
    ]
    return sequences, gen_pairs


def cmd_train_components(cfg: RunConfig) -> int:
    cfg.validate_inputs()
    torch.set_num_threads(1)
    schemas, train = _load_data(cfg)
    train_dbs = sorted({p.db_id for p in train})
    train_schemas = [s for s in schemas if s.db_id in train_dbs]
    sequences, gen_pairs = _train_corpora(schemas, train)
    out = cfg.out
    out.mkdir(parents=True, exist_ok=True)

    stamp = {"config_hash": cfg.full_hash()}
    sampler_cfg = SamplerTrainConfig(**{**cfg.sampler, "seed": _component_seed(cfg, "sampler")})
    sampler = train_sampler(train_schemas, sequences, sampler_cfg)
    save_checkpoint(out / "sampler.ckpt", {**sampler.to_checkpoint(), **stamp})
    print(f"sampler: nll {sampler.train_log[0]:.4f} -> {sampler.train_log[-1]:.4f}")

    gen_cfg = GeneratorTrainConfig(**{**cfg.generator, "seed": _component_seed(cfg, "generator")})
    generator = train_generator(gen_pairs, gen_cfg)
    save_checkpoint(out / "generator.ckpt", {**generator.to_checkpoint(), **stamp})
    print(f"generator: loss {generator.train_log[0]:.4f} -> {generator.train_log[-1]:.4f}")

    parser_cfg = ParserTrainConfig(**{**cfg.parser, "seed": _component_seed(cfg, "parser")})
    teacher = train_parser(train, schemas, parser_cfg)
    save_checkpoint(out / "teacher.ckpt", {**teacher.to_checkpoint(), **stamp})
    print(f"teacher: loss {teacher.train_log[0]:.4f} -> {teacher.train_log[-1]:.4f}")

    write_json(
        out / "training_log.json",
        {
            **stamp,
            "sampler_nll": sampler.train_log,
            "generator_loss": generator.train_log,
            "teacher_loss": teacher.train_log,
        },
    )
    manifest = {
        "config_hash": cfg.full_hash(),
        "components_hash": cfg.components_hash(),
        "seed": cfg.seed,
        "data_hashes": {
            "schemas": file_sha256(cfg.schemas),
            "train": file_sha256(cfg.train),
        },
        "checkpoints": {
            name: file_sha256(out / f"{name}.ckpt")
            for name in ("sampler", "generator", "teacher")
        },
    }
    write_json(out / "components_manifest.json", manifest)
    print(f"wrote 3 checkpoints + manifest to {out}")
    return 0


class _RandomSamplerAdapter:
    """Uniform-random ablation baseline behind the sampler surface."""

    def __init__(self, length_dist):
        self.length_dist = length_dist

    def sample(self, schema, n, temperature=1.0, seed=0):
        lengths = [l for l in self.length_dist if l <= len(schema.columns)] or None
        return sample_random_entities(schema, n, length_dist=lengths, seed=seed)


def cmd_synthesize(cfg: RunConfig, mode: str) -> int:
    cfg.validate_inputs()
    torch.set_num_threads(1)
    if mode not in _MODE_MAP:
        raise ConfigError(f"mode must be one of {sorted(_MODE_MAP)}")
    manifest_path = cfg.out / "components_manifest.json"
    if not manifest_path.exists():
        raise ConfigError("component checkpoints not found; run train-components first")
    manifest = read_json(manifest_path)
    if manifest.get("components_hash") != cfg.components_hash():
        raise ConfigError(
            "checkpoint mismatch: component config or data changed since train-components"
        )
    schemas, train = _load_data(cfg)
    generator = GeneratorModel.from_checkpoint(load_checkpoint(cfg.out / "generator.ckpt"))
    teacher = ParserModel.from_checkpoint(load_checkpoint(cfg.out / "teacher.ckpt"))
    if cfg.sampler_mode == "random":
        by_id = {s.db_id: s for s in schemas}
        sequences = [extract_entity_sequence(p.sql, by_id[p.db_id]) for p in train]
        sampler = _RandomSamplerAdapter(empirical_length_distribution(sequences))
    else:
        sampler = SamplerModel.from_checkpoint(load_checkpoint(cfg.out / "sampler.ckpt"))
    env = ExecEnvironment(schemas, db_dir=cfg.databases, timeout_s=cfg.exec_timeout_s)
    syn_cfg = SynthesisConfig(**{**cfg.synthesis, "seed": _component_seed(cfg, "synthesis")})
    report = SynthesisReport()
    examples = synthesize(
        schemas, train, _MODE_MAP[mode], sampler, generator, teacher, env, syn_cfg, report
    )
    save_synthesized(examples, cfg.out / "augmented.json")
    write_json(
        cfg.out / "synthesis_report.json",
        {
            "config_hash": cfg.full_hash(),
            "mode": mode,
            "n_examples": len(examples),
            "attrition": report.to_dict(),
            "augmented_sha256": file_sha256(cfg.out / "augmented.json"),
        },
    )
    totals = report.totals()
    print(
        f"synthesized {len(examples)} examples "
        f"(beam {totals['after_beam']} -> pred {totals['after_pred']} "
        f"-> dedup {totals['after_dedup']} -> no-para {totals['after_nopara']})"
    )
    return 0


def _split_augmented(examples, train_dbs):
    aug_train = [e for e in examples if e.db_id in train_dbs]
    aug_new = [e for e in examples if e.db_id not in train_dbs]
    return aug_train, aug_new


def cmd_train_student(cfg: RunConfig) -> int:
    cfg.validate_inputs(need_eval=True)
    torch.set_num_threads(1)
    aug_path = cfg.out / "augmented.json"
    if not aug_path.exists():
        raise ConfigError("augmented.json not found; run synthesize first")
    schemas, train = _load_data(cfg)
    eval_pairs = load_examples(cfg.eval, schemas)
    augmented = load_synthesized(aug_path, schemas)
    train_dbs = {p.db_id for p in train}
    aug_train, aug_new = _split_augmented(augmented, train_dbs)
    teacher = ParserModel.from_checkpoint(load_checkpoint(cfg.out / "teacher.ckpt"))
    parser_cfg = ParserTrainConfig(**{**cfg.parser, "seed": _component_seed(cfg, "student")})
    teacher_em = evaluate_em(teacher, eval_pairs, schemas, beam=1)

    sweep = cfg.alpha_sweep or [
        [cfg.mixture.get("alpha_train", 0.3), cfg.mixture.get("alpha_new", 0.1)]
    ]
    rows = []
    student = None
    for alpha_train, alpha_new in sweep:
        mix_cfg = TrainingMixtureConfig(
            **{**cfg.mixture, "alpha_train": alpha_train, "alpha_new": alpha_new}
        )
        if student is None:  # manifest for the mixture the saved student uses
            mixture = build_training_mixture(train, aug_train, aug_new, mix_cfg)
            sources = (
                ["train"] * len(train)
                + ["aug_train"] * len(aug_train)
                + ["aug_new"] * len(aug_new)
            )
            write_json(
                cfg.out / "mixture_manifest.json",
                {
                    "config_hash": cfg.full_hash(),
                    "examples": [
                        {"id": i, "source": src, "weight": w.weight, "tagged": w.tagged}
                        for i, (src, w) in enumerate(zip(sources, mixture))
                    ],
                },
            )
        model = train_student(
            train, aug_train, aug_new, schemas,
            mixture_config=mix_cfg, parser_config=parser_cfg,
        )
        em = evaluate_em(model, eval_pairs, schemas, beam=1)
        rows.append(
            {
                "alpha_train": alpha_train,
                "alpha_new": alpha_new,
                "mode": mix_cfg.mode,
                "student_em": em,
                "teacher_em": teacher_em,
                "delta": em - teacher_em,
            }
        )
        print(
            f"alpha_train={alpha_train} alpha_new={alpha_new}: "
            f"student EM {em:.4f} vs teacher {teacher_em:.4f} ({em - teacher_em:+.4f})"
        )
        if student is None:
            student = model
    save_checkpoint(
        cfg.out / "student.ckpt", {**student.to_checkpoint(), "config_hash": cfg.full_hash()}
    )
    write_json(
        cfg.out / "student_report.json",
        {
            "config_hash": cfg.full_hash(),
            "n_train": len(train),
            "n_aug_train": len(aug_train),
            "n_aug_new": len(aug_new),
            "student_curve": student.train_log,
            "rows": rows,
        },
    )
    return 0


def cmd_analyze(cfg: RunConfig, data_paths: list[str]) -> int:
    cfg.validate_inputs()
    schemas, train = _load_data(cfg)
    stats_by_name: dict = {}
    failures = []
    targets = data_paths or [str(cfg.train)]
    for path in targets:
        name = Path(path).stem
        try:
            pairs = load_examples(path, schemas)
            stats_by_name[name] = dataset_stats(pairs, schemas)
        except (SqlSynthError, ValueError, OSError) as exc:
            failures.append({"path": str(path), "error": str(exc)})
            print(f"analyze: skipping {path}: {exc}", file=sys.stderr)
    if not stats_by_name:
        raise ConfigError("no analyzable dataset among the inputs")
    table = render_stats_table(stats_by_name)
    print(table)
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_json(
        cfg.out / "stats.json",
        {
            "config_hash": cfg.full_hash(),
            "datasets": {n: s.to_dict() for n, s in stats_by_name.items()},
            "failures": failures,
        },
    )
    (cfg.out / "stats.txt").write_text(table + "\n", encoding="utf-8")
    with open(cfg.out / "stats.csv", "w", newline="", encoding="utf-8") as f:
        csv.writer(f).writerows(stats_csv_rows(stats_by_name))
    return 0


def cmd_evaluate(cfg: RunConfig, checkpoint: str, data_path: str | None) -> int:
    cfg.validate_inputs()
    torch.set_num_threads(1)
    ckpt_path = Path(checkpoint)
    if not ckpt_path.exists():
        ckpt_path = cfg.out / f"{checkpoint}.ckpt"
    if not ckpt_path.exists():
        raise ConfigError(f"checkpoint not found: {checkpoint}")
    schemas, train = _load_data(cfg)
    pairs = load_examples(data_path, schemas) if data_path else (
        load_examples(cfg.eval, schemas) if cfg.eval else train
    )
    model = ParserModel.from_checkpoint(load_checkpoint(ckpt_path))
    em = evaluate_em(model, pairs, schemas, beam=1)
    print(f"exact match: {em:.4f} over {len(pairs)} examples")
    cfg.out.mkdir(parents=True, exist_ok=True)
    write_json(
        cfg.out / "evaluation.json",
        {
            "config_hash": cfg.full_hash(),
            "checkpoint": str(ckpt_path),
            "n_examples": len(pairs),
            "exact_match": em,
        },
    )
    return 0


def _add_override_flags(p: argparse.ArgumentParser) -> None:
    """Config-file overrides; changed values change the config hash too."""
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--s1", type=int, default=None)
    p.add_argument("--s2", type=int, default=None)
    p.add_argument("--beam-size", type=int, default=None, help="generator beam")
    p.add_argument("--parser-beam", type=int, default=None)
    p.add_argument("--alpha-train", type=float, default=None)
    p.add_argument("--alpha-new", type=float, default=None)
    p.add_argument("--timeout", type=float, default=None, help="statement timeout seconds")


def apply_overrides(cfg: RunConfig, args: argparse.Namespace) -> RunConfig:
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    for key, target in (("s1", "s1"), ("s2", "s2"),
                        ("beam_size", "beam_size"), ("parser_beam", "parser_beam")):
        value = getattr(args, key, None)
        if value is not None:
            cfg.synthesis[target] = value
    for key, target in (("alpha_train", "alpha_train"), ("alpha_new", "alpha_new")):
        value = getattr(args, key, None)
        if value is not None:
            cfg.mixture[target] = value
    if getattr(args, "timeout", None) is not None:
        cfg.exec_timeout_s = args.timeout
    return cfg


def build_arg_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sqlsynth",
        description="Schema-to-question-to-SQL data synthesis and diagnostics",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-components", help="train sampler, generator, and teacher parser")
    p.add_argument("--config", required=True)
    _add_override_flags(p)

    p = sub.add_parser("synthesize", help="run the synthesis pipeline")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=sorted(_MODE_MAP), default="train")
    _add_override_flags(p)

    p = sub.add_parser("train-student", help="train the student on the augmented mixture")
    p.add_argument("--config", required=True)
    _add_override_flags(p)

    p = sub.add_parser("analyze", help="dataset diagnostics report")
    p.add_argument("--config", required=True)
    p.add_argument("data", nargs="*", help="example files to analyze (default: train)")
    _add_override_flags(p)

    p = sub.add_parser("evaluate", help="exact-match evaluation of a parser checkpoint")
    p.add_argument("--config", required=True)
    p.add_argument("--checkpoint", default="teacher", help="name under out/ or a path")
    p.add_argument("--data", default=None)
    _add_override_flags(p)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_arg_parser().parse_args(argv)
    stage = args.command
    try:
        cfg = apply_overrides(RunConfig.from_file(args.config), args)
        if args.command == "train-components":
            return cmd_train_components(cfg)
        if args.command == "synthesize":
            return cmd_synthesize(cfg, args.mode)
        if args.command == "train-student":
            return cmd_train_student(cfg)
        if args.command == "analyze":
            return cmd_analyze(cfg, args.data)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.checkpoint, args.data)
        raise ConfigError(f"unknown command {args.command!r}")
    except SqlSynthError as exc:
        print(f"[{stage}] error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, DataParseError) as exc:
        print(f"[{stage}] error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
