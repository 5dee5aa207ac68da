"""Entity strings to questions, and what beam search buys.

The generator maps a formatted entity string to a natural question. With a
wide beam it does not just paraphrase: candidates sweep different logical
intents over the same entities (list them, count them, rank by them),
which is where the augmented data's structural diversity comes from.
"""

import torch

from sqlsynth.generator import GeneratorTrainConfig, generate_questions, train_generator
from sqlsynth.schema import extract_entity_sequence, format_generator_input
from sqlsynth.toygen import build_toy_corpus

torch.set_num_threads(1)

corpus = build_toy_corpus(n_domains=7, pairs_per_domain=60, seed=0)
by_id = {s.db_id: s for s in corpus.schemas}
pairs = []
for p in corpus.train_pairs:
    seq = extract_entity_sequence(p.sql, by_id[p.db_id])
    if seq.entities:
        pairs.append((format_generator_input(seq, by_id[p.db_id]), p.question))

print(f"fine-tuning the question generator on {len(pairs)} (entities, question) pairs...")
model = train_generator(pairs, GeneratorTrainConfig(epochs=15, seed=0))
print(f"loss {model.train_log[0]:.3f} -> {model.train_log[-1]:.3f}\n")

for source in [
    pairs[0][0],
    pairs[7][0],
]:
    print(f"input: {source}")
    for question, score in generate_questions(model, source, beam_size=5):
        print(f"  [{score:7.3f}] {question}")
    print()

zs = corpus.zero_shot_schema
seq = extract_entity_sequence(corpus.zero_shot_pairs[0].sql, zs)
source = format_generator_input(seq, zs)
print(f"zero-shot input (domain never seen in training): {source}")
for question, score in generate_questions(model, source, beam_size=5):
    print(f"  [{score:7.3f}] {question}")
