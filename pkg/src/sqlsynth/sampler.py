"""Autoregressive entity sampler conditioned on a schema.

Given a schema, the model emits a sequence of distinct columns terminated
by an end token: a single-layer LSTM whose output is a pointer over the
schema's columns plus the end token. The db-name prefix of every sequence
is forced (probability one), so it contributes nothing to the likelihood.
Already-chosen columns are masked out and the distribution renormalized,
both in training targets and at sampling time.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .errors import SchemaInvariantError, SqlResolutionError, UntrainedModelError
from .nets import SchemaEncoder, state_to_numpy, load_state_from_numpy, epoch_batches
from .schema import Entity, EntitySequence, SchemaGraph


@dataclass
class SamplerTrainConfig:
    learning_rate: float = 2e-3
    epochs: int = 40
    batch_size: int = 16
    teacher_forcing: bool = True  # maximum likelihood with teacher forcing; always on
    seed: int = 0
    max_seq_len: int = 9  # decode steps including the end token; >= 2

    def __post_init__(self):
        if self.max_seq_len < 2:
            raise ValueError("max_seq_len must allow one entity plus the end token")
        if not self.teacher_forcing:
            raise ValueError("training is teacher-forced by definition")


@dataclass
class SamplerNetConfig:
    emb_dim: int = 48
    hidden: int = 96


class SamplerNet(nn.Module):
    def __init__(self, cfg: SamplerNetConfig):
        super().__init__()
        d, h = cfg.emb_dim, cfg.hidden
        self.schema_enc = SchemaEncoder(d)
        self.in_proj = nn.Linear(d, h)
        self.start = nn.Parameter(torch.zeros(h))  # stands in for the forced db-name prefix
        self.eos_item = nn.Parameter(torch.zeros(d))
        self.cell = nn.LSTMCell(h, h)
        self.init_h = nn.Linear(d, h)
        self.init_c = nn.Linear(d, h)
        self.ptr = nn.Linear(h, d)
        nn.init.normal_(self.start, std=0.1)
        nn.init.normal_(self.eos_item, std=0.1)

    def items(self, schema: SchemaGraph) -> torch.Tensor:
        """Pointer targets: the schema's columns followed by the end token."""
        _, cols = self.schema_enc.encode(schema)
        return torch.cat([cols, self.eos_item.unsqueeze(0)], dim=0)

    def initial_state(self, items: torch.Tensor, batch: int):
        summary = items[:-1].mean(dim=0, keepdim=True).expand(batch, -1)
        return torch.tanh(self.init_h(summary)), torch.tanh(self.init_c(summary))

    def step(self, h_c, inp: torch.Tensor, items: torch.Tensor, mask: torch.Tensor):
        """One decode step.

        inp [B, h]; items [N, d]; mask [B, N] (True = selectable). Returns
        (new state, log-probs [B, N]) with masked entries renormalized away.
        """
        h, c = self.cell(inp, h_c)
        query = self.ptr(h)  # [B, d]
        scores = query @ items.t()  # [B, N]
        scores = scores.masked_fill(~mask, float("-inf"))
        return (h, c), torch.log_softmax(scores, dim=-1)


@dataclass
class SamplerModel:
    """Learned sampler parameters plus the configs that shaped them."""

    net: SamplerNet
    net_config: SamplerNetConfig
    train_config: SamplerTrainConfig
    trained: bool = False
    train_log: list = field(default_factory=list)  # per-epoch mean NLL, [initial, ...]

    def to_checkpoint(self) -> dict:
        return {
            "kind": "sampler",
            "net_config": vars(self.net_config),
            "train_config": vars(self.train_config),
            "trained": self.trained,
            "train_log": list(self.train_log),
            "state": state_to_numpy(self.net),
        }

    @classmethod
    def from_checkpoint(cls, payload: dict) -> "SamplerModel":
        net_config = SamplerNetConfig(**payload["net_config"])
        net = SamplerNet(net_config)
        load_state_from_numpy(net, payload["state"])
        return cls(
            net=net,
            net_config=net_config,
            train_config=SamplerTrainConfig(**payload["train_config"]),
            trained=payload["trained"],
            train_log=list(payload["train_log"]),
        )

    def sample(self, schema, n, temperature=1.0, seed=0):
        """Entity-source surface used by the synthesis pipeline."""
        return sample_entities(self, schema, n, temperature=temperature, seed=seed)


def _target_indices(seq: EntitySequence, schema: SchemaGraph, max_steps: int) -> list[int]:
    """Column indices of the sequence followed by the end index."""
    eos = len(schema.columns)
    idxs = [schema.column_index(e) for e in seq.entities]
    return idxs[: max_steps - 1] + [eos]


def _batch_nll(net: SamplerNet, schema: SchemaGraph, targets: list[list[int]]) -> torch.Tensor:
    """Summed NLL over a batch of same-schema target sequences."""
    items = net.items(schema)
    n_items = items.shape[0]
    batch = len(targets)
    lengths = [len(t) for t in targets]
    t_max = max(lengths)
    state = net.initial_state(items, batch)
    inp = net.start.unsqueeze(0).expand(batch, -1)
    mask = torch.ones(batch, n_items, dtype=torch.bool)
    total = torch.zeros(())
    for t in range(t_max):
        state, logp = net.step(state, inp, items, mask)
        next_inp = []
        for b in range(batch):
            if t < lengths[b]:
                tgt = targets[b][t]
                total = total - logp[b, tgt]
                if tgt < n_items - 1:
                    mask[b, tgt] = False
                next_inp.append(items[tgt] if tgt < n_items - 1 else items[-1])
            else:
                next_inp.append(items[-1])
        inp = torch.tanh(net.in_proj(torch.stack(next_inp)))
    return total


def mean_nll(
    model: SamplerModel, schemas: list[SchemaGraph], sequences: list[EntitySequence]
) -> float:
    """Mean per-sequence NLL of the corpus under the model."""
    by_id = {s.db_id: s for s in schemas}
    groups: dict[str, list[list[int]]] = {}
    cfg = model.train_config
    for seq in sequences:
        if not seq.entities:
            continue
        schema = by_id[seq.db_name]
        groups.setdefault(seq.db_name, []).append(
            _target_indices(seq, schema, cfg.max_seq_len)
        )
    with torch.no_grad():
        total = sum(float(_batch_nll(model.net, by_id[db], tgts)) for db, tgts in groups.items())
    n = sum(len(t) for t in groups.values())
    return total / max(1, n)


def train_sampler(
    schemas: list[SchemaGraph],
    sequences: list[EntitySequence],
    config: SamplerTrainConfig | None = None,
    net_config: SamplerNetConfig | None = None,
) -> SamplerModel:
    """Maximum-likelihood training with teacher forcing.

    Sequences with no entities (e.g. from pure ``count(*)`` queries) carry
    no pointer targets and are dropped. Deterministic given the seed.
    """
    config = config or SamplerTrainConfig()
    net_config = net_config or SamplerNetConfig()
    by_id = {s.db_id: s for s in schemas}
    usable: list[EntitySequence] = []
    for seq in sequences:
        if seq.db_name not in by_id:
            raise SqlResolutionError(f"no schema for db {seq.db_name!r}")
        if seq.entities:
            usable.append(seq)
    if not usable:
        raise ValueError("empty training set for the entity sampler")

    torch.manual_seed(config.seed)
    net = SamplerNet(net_config)
    model = SamplerModel(net=net, net_config=net_config, train_config=config)
    model.train_log.append(mean_nll(model, schemas, usable))

    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    encoded = [
        (seq.db_name, _target_indices(seq, by_id[seq.db_name], config.max_seq_len))
        for seq in usable
    ]
    for _ in range(config.epochs):
        epoch_nll = 0.0
        for batch_idx in epoch_batches(len(encoded), config.batch_size, rng):
            by_db: dict[str, list[list[int]]] = {}
            for i in batch_idx:
                db, tgt = encoded[i]
                by_db.setdefault(db, []).append(tgt)
            loss = torch.zeros(())
            for db, tgts in by_db.items():
                loss = loss + _batch_nll(net, by_id[db], tgts)
            epoch_nll += float(loss.detach())
            (loss / len(batch_idx)).backward()
            opt.step()
            opt.zero_grad()
        model.train_log.append(epoch_nll / len(encoded))
    model.trained = True
    return model


def sequence_log_prob(model: SamplerModel, schema: SchemaGraph, seq: EntitySequence) -> float:
    """log p of a sequence: entity steps plus the end step, <= 0.

    The forced db-name prefix contributes exactly 0. A truncated sequence
    (terminated=False) is scored without the end step.
    """
    net = model.net
    idxs = [schema.column_index(e) for e in seq.entities]
    targets = idxs + ([len(schema.columns)] if seq.terminated else [])
    if not targets:
        return 0.0
    with torch.no_grad():
        items = net.items(schema)
        state = net.initial_state(items, 1)
        inp = net.start.unsqueeze(0)
        mask = torch.ones(1, items.shape[0], dtype=torch.bool)
        total = 0.0
        for tgt in targets:
            state, logp = net.step(state, inp, items, mask)
            total += float(logp[0, tgt])
            if tgt < items.shape[0] - 1:
                mask[0, tgt] = False
            inp = torch.tanh(net.in_proj(items[tgt].unsqueeze(0)))
    return total


def step_distributions(
    model: SamplerModel, schema: SchemaGraph, seq: EntitySequence
) -> list[torch.Tensor]:
    """Per-step selection distributions along a teacher-forced path."""
    net = model.net
    targets = [schema.column_index(e) for e in seq.entities] + [len(schema.columns)]
    out = []
    with torch.no_grad():
        items = net.items(schema)
        state = net.initial_state(items, 1)
        inp = net.start.unsqueeze(0)
        mask = torch.ones(1, items.shape[0], dtype=torch.bool)
        for tgt in targets:
            state, logp = net.step(state, inp, items, mask)
            out.append(logp[0].exp())
            if tgt < items.shape[0] - 1:
                mask[0, tgt] = False
            inp = torch.tanh(net.in_proj(items[tgt].unsqueeze(0)))
    return out


def sample_entities(
    model: SamplerModel,
    schema: SchemaGraph,
    n: int,
    temperature: float = 1.0,
    seed: int = 0,
) -> list[EntitySequence]:
    """Draw n entity sequences for one schema.

    Chosen columns are masked and the distribution renormalized, so no
    sequence repeats an entity. The end token is masked at the first step
    (every sampled sequence has at least one entity). Temperatures at or
    below 1e-6 reduce to greedy decoding.
    """
    if not model.trained:
        raise UntrainedModelError("sampler has not been trained")
    if n < 1:
        raise ValueError("n must be >= 1")
    if not schema.columns:
        raise SchemaInvariantError(f"{schema.db_id}: schema has no columns")
    net = model.net
    max_entities = model.train_config.max_seq_len - 1
    gen = torch.Generator().manual_seed(seed)
    greedy = temperature <= 1e-6
    with torch.no_grad():
        items = net.items(schema)
        n_items = items.shape[0]
        eos = n_items - 1
        state = net.initial_state(items, n)
        inp = net.start.unsqueeze(0).expand(n, -1)
        mask = torch.ones(n, n_items, dtype=torch.bool)
        mask[:, eos] = False  # no empty sequences
        done = torch.zeros(n, dtype=torch.bool)
        chosen: list[list[int]] = [[] for _ in range(n)]
        terminated = [False] * n
        for t in range(max_entities + 1):
            state, logp = net.step(state, inp, items, mask)
            if greedy:
                picks = logp.argmax(dim=-1)
            else:
                probs = torch.softmax(logp / temperature, dim=-1)
                picks = torch.multinomial(probs, 1, generator=gen).squeeze(-1)
            next_inp = []
            for b in range(n):
                pick = int(picks[b])
                if done[b]:
                    next_inp.append(items[eos])
                    continue
                if pick == eos:
                    done[b] = True
                    terminated[b] = True
                    next_inp.append(items[eos])
                    continue
                chosen[b].append(pick)
                mask[b, pick] = False
                if len(chosen[b]) >= max_entities:
                    mask[b, :eos] = False  # only the end token remains
                next_inp.append(items[pick])
            mask[:, eos] = True
            if bool(done.all()):
                break
            inp = torch.tanh(net.in_proj(torch.stack(next_inp)))
    out = []
    for b in range(n):
        ents = tuple(Entity(schema.tables[schema.columns[i][0]], schema.columns[i][1]) for i in chosen[b])
        out.append(EntitySequence(db_name=schema.db_id, entities=ents, terminated=terminated[b]))
    return out


def empirical_length_distribution(sequences: list[EntitySequence]) -> list[int]:
    """Observed entity counts; the default length source for random sampling."""
    return [len(s.entities) for s in sequences if s.entities]


def sample_random_entities(
    schema: SchemaGraph,
    n: int,
    length_dist: list[int] | None = None,
    seed: int = 0,
) -> list[EntitySequence]:
    """Uniform-random baseline: distinct columns chosen uniformly.

    Lengths are drawn from ``length_dist`` (a sample of observed lengths,
    typically from ``empirical_length_distribution``); with none given,
    lengths are uniform on [1, min(4, #columns)].
    """
    n_cols = len(schema.columns)
    if n_cols < 1:
        raise SchemaInvariantError(f"{schema.db_id}: schema has no columns")
    if length_dist is not None:
        if any(l > n_cols for l in length_dist):
            raise ValueError(
                f"requested length exceeds the {n_cols} columns of {schema.db_id}"
            )
        lengths_pool = [max(1, l) for l in length_dist]
    else:
        lengths_pool = list(range(1, min(4, n_cols) + 1))
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        length = int(rng.choice(lengths_pool))
        picks = rng.choice(n_cols, size=length, replace=False)
        ents = tuple(
            Entity(schema.tables[schema.columns[int(i)][0]], schema.columns[int(i)][1])
            for i in picks
        )
        out.append(EntitySequence(db_name=schema.db_id, entities=ents, terminated=True))
    return out
