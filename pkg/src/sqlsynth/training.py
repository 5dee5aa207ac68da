"""Student training on the original + augmented mixture.

Augmented examples get a literal "[AUG] " prefix on the question and a
per-source loss weight: alpha_train for augmented examples from training
domains, alpha_new for augmented examples from zero-shot domains, 1.0 for
the original data. Batches reduce with the weighted mean
sum(w_i * nll_i) / sum(w_i), so scaling every weight by a constant leaves
the updates unchanged, and an empty augmentation reproduces baseline
training exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

from .parser import ParserModel, ParserNetConfig, ParserTrainConfig, train_parser
from .pipeline import SynthesizedExample
from .schema import AnnotatedPair, SchemaGraph

MODES = ("weighted-joint", "pretrain-finetune", "combine")


@dataclass
class TrainingMixtureConfig:
    alpha_train: float = 0.3
    alpha_new: float = 0.1
    mode: str = "weighted-joint"
    aug_token: str = "[AUG]"

    def __post_init__(self):
        if self.alpha_train < 0 or self.alpha_new < 0:
            raise ValueError("loss weights must be >= 0")
        if not self.aug_token:
            raise ValueError("aug_token must be non-empty")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass(frozen=True)
class WeightedExample:
    pair: AnnotatedPair
    weight: float
    tagged: bool


def tag_augmented(example: SynthesizedExample, aug_token: str = "[AUG]") -> AnnotatedPair:
    """Prefix the question with the augmentation tag; refuses double tags."""
    if example.question.startswith(aug_token + " ") or example.question == aug_token:
        raise ValueError(f"question already carries the {aug_token} tag")
    return AnnotatedPair(
        question=f"{aug_token} {example.question}",
        sql=example.sql,
        db_id=example.db_id,
    )


def untagged_pair(example: SynthesizedExample) -> AnnotatedPair:
    return AnnotatedPair(question=example.question, sql=example.sql, db_id=example.db_id)


def build_training_mixture(
    train: list[AnnotatedPair],
    aug_train: list[SynthesizedExample],
    aug_new: list[SynthesizedExample],
    config: TrainingMixtureConfig | None = None,
) -> list[WeightedExample]:
    """Original examples at weight 1.0 untagged; augmented examples tagged
    at their source's alpha."""
    config = config or TrainingMixtureConfig()
    out = [WeightedExample(pair=p, weight=1.0, tagged=False) for p in train]
    out.extend(
        WeightedExample(pair=tag_augmented(ex, config.aug_token), weight=config.alpha_train, tagged=True)
        for ex in aug_train
    )
    out.extend(
        WeightedExample(pair=tag_augmented(ex, config.aug_token), weight=config.alpha_new, tagged=True)
        for ex in aug_new
    )
    return out


def train_student(
    train: list[AnnotatedPair],
    aug_train: list[SynthesizedExample],
    aug_new: list[SynthesizedExample],
    schemas: list[SchemaGraph],
    mixture_config: TrainingMixtureConfig | None = None,
    parser_config: ParserTrainConfig | None = None,
    net_config: ParserNetConfig | None = None,
) -> ParserModel:
    """Train a fresh parser on the mixture, per the configured mode.

    weighted-joint minimizes the weighted objective over the shared-batch
    mixture; pretrain-finetune trains on augmented data then fine-tunes on
    the original train set; combine trains once on the unweighted, untagged
    union.
    """
    mixture_config = mixture_config or TrainingMixtureConfig()
    parser_config = parser_config or ParserTrainConfig()
    mode = mixture_config.mode
    if mode == "weighted-joint":
        mixture = build_training_mixture(train, aug_train, aug_new, mixture_config)
        if not mixture:
            raise ValueError("empty training mixture")
        return train_parser(
            [w.pair for w in mixture],
            schemas,
            parser_config,
            net_config,
            weights=[w.weight for w in mixture],
        )
    if mode == "combine":
        union = list(train) + [untagged_pair(e) for e in aug_train + aug_new]
        if not union:
            raise ValueError("empty training mixture")
        return train_parser(union, schemas, parser_config, net_config)
    # pretrain-finetune
    aug_pairs = [tag_augmented(e, mixture_config.aug_token) for e in aug_train + aug_new]
    if not aug_pairs and not train:
        raise ValueError("empty training mixture")
    if not aug_pairs:
        return train_parser(train, schemas, parser_config, net_config)
    pre = train_parser(
        aug_pairs, schemas, parser_config, net_config, vocab_examples=aug_pairs + train
    )
    if not train:
        return pre
    return train_parser(train, schemas, parser_config, net_config, init_model=pre)
