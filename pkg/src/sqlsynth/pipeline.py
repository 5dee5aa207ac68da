"""End-to-end synthesis: sample entities, generate questions, self-label,
filter, and collect the augmented dataset.

Per domain: draw entity sequences from the sampler, beam-decode questions
for each, keep each question's best executable parse (PRED), drop duplicate
questions within the batch and against the reference data with a per-
sequence cap (DEDUP), and keep one question per distinct logical form
(NO-PARA). Domains with no reference pairs are the zero-shot case: the
same pipeline with an empty reference set.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataParseError
from .parser import ExecEnvironment, pred
from .schema import AnnotatedPair, Entity, EntitySequence, SchemaGraph, format_generator_input
from .sqltext import canonical_sql
from .util import derive_seed

MODES = ("train-domains", "zero-shot-domains", "both")


@dataclass
class SynthesisConfig:
    s1: int = 80  # entity sequences per domain
    s2: int = 20  # retained examples per entity sequence
    beam_size: int | None = None  # generator beam; defaults to s2
    temperature: float = 1.0
    parser_beam: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.s1 < 1 or self.s2 < 1:
            raise ValueError("s1 and s2 must be >= 1")
        if self.beam_size is None:
            self.beam_size = self.s2
        if self.beam_size < self.s2:
            raise ValueError("generator beam size must be >= s2")


@dataclass(frozen=True)
class SynthesizedExample:
    question: str
    sql: str
    db_id: str
    entity_sequence: EntitySequence
    generator_score: float
    parser_score: float
    aug: bool = True


@dataclass
class DomainReport:
    db_id: str
    n_sequences: int = 0
    after_beam: int = 0
    after_pred: int = 0
    after_dedup: int = 0
    after_nopara: int = 0


@dataclass
class SynthesisReport:
    domains: list[DomainReport] = field(default_factory=list)

    def totals(self) -> dict:
        keys = ("n_sequences", "after_beam", "after_pred", "after_dedup", "after_nopara")
        return {k: sum(getattr(d, k) for d in self.domains) for k in keys}

    def to_dict(self) -> dict:
        return {
            "domains": [vars(d) for d in self.domains],
            "totals": self.totals(),
        }


def normalize_question(question: str) -> str:
    """Dedup key: case-folded, whitespace collapsed, trailing punctuation cut."""
    out = " ".join(question.casefold().split())
    return re.sub(r"[\s.?!]+$", "", out)


def dedup(
    candidates: list[SynthesizedExample],
    reference: list[AnnotatedPair],
    cap: int,
) -> list[SynthesizedExample]:
    """Drop duplicate questions, questions seen in the reference data, and
    everything beyond ``cap`` per entity sequence (best generator score
    first)."""
    ref_norm = {normalize_question(p.question) for p in reference}
    ranked = sorted(
        candidates, key=lambda c: (-c.generator_score, normalize_question(c.question), c.sql)
    )
    seen: set[str] = set()
    per_seq: dict[tuple, int] = {}
    kept = []
    for cand in ranked:
        norm = normalize_question(cand.question)
        if norm in seen or norm in ref_norm:
            continue
        key = cand.entity_sequence.key()
        if per_seq.get(key, 0) >= cap:
            continue
        seen.add(norm)
        per_seq[key] = per_seq.get(key, 0) + 1
        kept.append(cand)
    return kept


def no_para(candidates: list[SynthesizedExample]) -> list[SynthesizedExample]:
    """One question per (domain, canonical SQL): highest generator score wins,
    ties broken by lexicographic question order. Input order is preserved."""
    best: dict[tuple[str, str], SynthesizedExample] = {}
    for cand in candidates:
        key = (cand.db_id, canonical_sql(cand.sql))
        cur = best.get(key)
        if cur is None or (-cand.generator_score, cand.question) < (-cur.generator_score, cur.question):
            best[key] = cand
    winners = set(map(id, best.values()))
    return [c for c in candidates if id(c) in winners]


def synthesize_domain(
    schema: SchemaGraph,
    env: ExecEnvironment,
    sampler,
    generator,
    parser,
    reference: list[AnnotatedPair],
    config: SynthesisConfig,
    report: SynthesisReport | None = None,
) -> list[SynthesizedExample]:
    """Run the full sample -> generate -> label -> filter chain for one domain."""
    stats = DomainReport(db_id=schema.db_id)
    seed = derive_seed(config.seed, f"sample:{schema.db_id}")
    sequences = sampler.sample(schema, config.s1, temperature=config.temperature, seed=seed)
    sequences = [s for s in sequences if s.entities]
    stats.n_sequences = len(sequences)

    inputs = [format_generator_input(seq, schema) for seq in sequences]
    beams = generator.beam_questions(inputs, config.beam_size) if inputs else []
    candidates: list[SynthesizedExample] = []
    for seq, beam in zip(sequences, beams):
        stats.after_beam += len(beam)
        questions = [q for q, _ in beam]
        gen_scores = dict(beam)
        for question, sql, parser_score in pred(
            parser, questions, schema, env, beam=config.parser_beam
        ):
            candidates.append(
                SynthesizedExample(
                    question=question,
                    sql=sql,
                    db_id=schema.db_id,
                    entity_sequence=seq,
                    generator_score=gen_scores[question],
                    parser_score=parser_score,
                )
            )
    stats.after_pred = len(candidates)
    candidates = dedup(candidates, reference, cap=config.s2)
    stats.after_dedup = len(candidates)
    candidates = no_para(candidates)
    stats.after_nopara = len(candidates)
    if report is not None:
        report.domains.append(stats)
    return candidates


def synthesize(
    schemas: list[SchemaGraph],
    reference_pairs: list[AnnotatedPair],
    mode: str,
    sampler,
    generator,
    parser,
    env: ExecEnvironment,
    config: SynthesisConfig,
    report: SynthesisReport | None = None,
) -> list[SynthesizedExample]:
    """Union of per-domain synthesis over the selected domain set.

    Domains with at least one reference pair count as training domains;
    the rest are zero-shot and are deduplicated against an empty reference
    set. Deterministic in schema order for a fixed seed.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    by_db: dict[str, list[AnnotatedPair]] = {}
    for pair in reference_pairs:
        by_db.setdefault(pair.db_id, []).append(pair)
    out: list[SynthesizedExample] = []
    for schema in schemas:
        reference = by_db.get(schema.db_id, [])
        is_train = bool(reference)
        if mode == "train-domains" and not is_train:
            continue
        if mode == "zero-shot-domains" and is_train:
            continue
        out.extend(
            synthesize_domain(schema, env, sampler, generator, parser, reference, config, report)
        )
    return out


# ---------------------------------------------------------------------------
# augmented-dataset file format
# ---------------------------------------------------------------------------

def save_synthesized(examples: list[SynthesizedExample], path: str | Path) -> None:
    """Write the augmented dataset with provenance, loadable as plain
    (question, query, db_id) records too."""
    records = []
    for ex in examples:
        records.append(
            {
                "question": ex.question,
                "query": ex.sql,
                "db_id": ex.db_id,
                "entities": [str(e) for e in ex.entity_sequence.entities],
                "generator_score": ex.generator_score,
                "parser_score": ex.parser_score,
                "aug": ex.aug,
            }
        )
    Path(path).write_text(
        json.dumps(records, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def load_synthesized(path: str | Path, schemas: list[SchemaGraph]) -> list[SynthesizedExample]:
    by_id = {s.db_id: s for s in schemas}
    try:
        records = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataParseError(f"cannot read {path}: {exc}") from exc
    out = []
    for idx, rec in enumerate(records):
        try:
            schema = by_id[rec["db_id"]]
            entities = tuple(Entity(*name.split(".", 1)) for name in rec["entities"])
            for e in entities:
                schema.column_index(e)  # validates resolution
            out.append(
                SynthesizedExample(
                    question=rec["question"],
                    sql=rec["query"],
                    db_id=rec["db_id"],
                    entity_sequence=EntitySequence(db_name=rec["db_id"], entities=entities),
                    generator_score=rec["generator_score"],
                    parser_score=rec["parser_score"],
                    aug=bool(rec.get("aug", True)),
                )
            )
        except (KeyError, ValueError) as exc:
            raise DataParseError(
                f"augmented entry {idx}: {exc}", entry_index=idx
            ) from exc
    return out
