"""The whole loop: synthesize, diagnose, and train a student.

Runs the pipeline at reduced scale (smaller s1/s2 than the defaults so the
demo finishes in a couple of minutes), prints the attrition through each
filter stage, compares the seed and augmented datasets with the entropy /
mutual-information diagnostics, and retrains a student parser on the
weighted mixture.
"""

import tempfile
from pathlib import Path

import torch

from sqlsynth.analysis import dataset_stats, render_stats_table
from sqlsynth.generator import GeneratorTrainConfig, train_generator
from sqlsynth.parser import ExecEnvironment, ParserTrainConfig, evaluate_em, train_parser
from sqlsynth.pipeline import SynthesisConfig, SynthesisReport, synthesize
from sqlsynth.sampler import SamplerTrainConfig, train_sampler
from sqlsynth.schema import extract_entity_sequence, format_generator_input
from sqlsynth.toygen import build_toy_corpus, materialize_databases
from sqlsynth.training import TrainingMixtureConfig, train_student

torch.set_num_threads(1)

corpus = build_toy_corpus(n_domains=7, pairs_per_domain=60, seed=0)
by_id = {s.db_id: s for s in corpus.schemas}
db_dir = Path(tempfile.mkdtemp(prefix="sqlsynth_dbs_"))
materialize_databases(corpus.schemas, db_dir, rows=24, seed=0)
env = ExecEnvironment(corpus.schemas, db_dir=db_dir, timeout_s=2.0)

print("phase 1: training synthesizer components")
sequences = [extract_entity_sequence(p.sql, by_id[p.db_id]) for p in corpus.train_pairs]
sampler = train_sampler(corpus.train_schemas, sequences, SamplerTrainConfig(epochs=15, seed=0))
gen_pairs = [
    (format_generator_input(s, by_id[p.db_id]), p.question)
    for p, s in zip(corpus.train_pairs, sequences)
    if s.entities
]
generator = train_generator(gen_pairs, GeneratorTrainConfig(epochs=15, seed=0))
teacher = train_parser(corpus.train_pairs, corpus.schemas, ParserTrainConfig(epochs=20, seed=0))
teacher_em = evaluate_em(teacher, corpus.eval_pairs, corpus.schemas, beam=1)
print(f"teacher held-out EM: {teacher_em:.3f}\n")

print("phase 2: synthesis (reduced scale: s1=20, s2=10)")
config = SynthesisConfig(s1=20, s2=10, beam_size=10, seed=0)
report = SynthesisReport()
augmented = synthesize(
    corpus.schemas, corpus.train_pairs, "both", sampler, generator, teacher, env, config, report
)
for d in report.domains:
    zs = " (zero-shot)" if d.db_id == corpus.zero_shot_db else ""
    print(
        f"  {d.db_id:<14}{zs:<13} beam {d.after_beam:>4} -> pred {d.after_pred:>4} "
        f"-> dedup {d.after_dedup:>3} -> no-para {d.after_nopara:>3}"
    )
print(f"total: {len(augmented)} synthesized examples\n")

for ex in augmented[:4]:
    print(f"  {ex.db_id}: {ex.question}")
    print(f"      -> {ex.sql}")

train_dbs = {p.db_id for p in corpus.train_pairs}
aug_train = [e for e in augmented if e.db_id in train_dbs]
aug_new = [e for e in augmented if e.db_id not in train_dbs]

print("\ndataset diagnostics (seed vs augmented, train domains):")
stats = {
    "seed": dataset_stats(corpus.train_pairs, corpus.schemas),
    "augmented": dataset_stats(aug_train, corpus.schemas),
}
print(render_stats_table(stats))

print("\nphase 3: student training on the weighted mixture (alpha 0.3 / 0.1)")
student = train_student(
    corpus.train_pairs, aug_train, aug_new, corpus.schemas,
    TrainingMixtureConfig(alpha_train=0.3, alpha_new=0.1),
    parser_config=ParserTrainConfig(epochs=20, seed=1),
)
student_em = evaluate_em(student, corpus.eval_pairs, corpus.schemas, beam=1)
print(f"student EM {student_em:.3f} vs teacher {teacher_em:.3f} ({student_em - teacher_em:+.3f})")
