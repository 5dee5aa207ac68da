"""Cross-domain text-to-SQL data synthesis and dataset diagnostics.

Pipeline: sample schema entities, generate questions from them, self-label
with a teacher parser, filter (executability, dedup, one question per
logical form), then train a student parser on the weighted mixture of
original and synthesized data. The analysis module measures what the
augmentation changed: sketch/column diversity and the association between
column sets and query structure.
"""

from .schema import (
    AnnotatedPair,
    Entity,
    EntitySequence,
    SchemaGraph,
    extract_entity_sequence,
    format_generator_input,
    load_examples,
    load_schemas,
)
from .sampler import (
    SamplerModel,
    SamplerTrainConfig,
    sample_entities,
    sample_random_entities,
    sequence_log_prob,
    train_sampler,
)
from .generator import (
    GeneratorModel,
    GeneratorTrainConfig,
    generate_questions,
    train_generator,
)
from .parser import (
    ExecEnvironment,
    ParserModel,
    ParserTrainConfig,
    check_executable,
    exact_match,
    evaluate_em,
    parse_beam,
    pred,
    train_parser,
)
from .pipeline import (
    SynthesisConfig,
    SynthesizedExample,
    dedup,
    no_para,
    synthesize,
    synthesize_domain,
)
from .training import (
    TrainingMixtureConfig,
    WeightedExample,
    build_training_mixture,
    tag_augmented,
    train_student,
)
from .analysis import (
    DatasetStats,
    Sketch,
    dataset_stats,
    deconstruct,
    normalized_entropy,
    normalized_mutual_information,
    sketch,
)

__version__ = "0.1.0"
