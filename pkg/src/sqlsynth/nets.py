"""Shared neural building blocks: hashed embeddings, schema encoding, text.

All word lookups go through a fixed crc32 bucket space instead of a fitted
vocabulary, so words from unseen domains still get distinct, consistent
embeddings; schema linking then works across domains because a column name
word and the same word in a question land in the same bucket.
"""

from __future__ import annotations

import re

import torch
import torch.nn as nn

from .schema import COLUMN_TYPES, SchemaGraph
from .util import stable_token_bucket

N_BUCKETS = 4096

_WORD_RE = re.compile(r"\w+|[^\w\s]")


def tokenize_text(text: str) -> list[str]:
    """Words and punctuation marks as separate tokens, case preserved."""
    return _WORD_RE.findall(text)


def detokenize_text(tokens: list[str]) -> str:
    """Inverse of tokenize_text up to original spacing."""
    out = " ".join(tokens)
    out = re.sub(r"\s+([.,!?;:%)\]])", r"\1", out)
    out = re.sub(r"([(\[])\s+", r"\1", out)
    out = re.sub(r"\s+(')", r"\1", out)
    return out


def name_words(identifier: str) -> list[str]:
    """Lowercased words of a schema identifier (split on ``_`` and ``.``)."""
    return [w for w in re.split(r"[_.]+", identifier.lower()) if w]


def bucket_ids(words: list[str], n_buckets: int = N_BUCKETS) -> torch.Tensor:
    # bucket 0 is reserved for padding
    return torch.tensor(
        [1 + stable_token_bucket(w.lower(), n_buckets - 1) for w in words],
        dtype=torch.long,
    )


class HashedWordEmbedding(nn.Module):
    """Mean of hashed word embeddings; zero vector for an empty word list."""

    def __init__(self, dim: int, n_buckets: int = N_BUCKETS):
        super().__init__()
        self.emb = nn.Embedding(n_buckets, dim, padding_idx=0)
        self.n_buckets = n_buckets

    def embed_words(self, words: list[str]) -> torch.Tensor:
        if not words:
            return self.emb.weight.new_zeros(self.emb.embedding_dim)
        return self.emb(bucket_ids(words, self.n_buckets)).mean(dim=0)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        return self.emb(ids)


# column types plus a pseudo-type for table items
_TYPE_INDEX = {t: i for i, t in enumerate(COLUMN_TYPES)}
_TABLE_TYPE = len(COLUMN_TYPES)


class SchemaEncoder(nn.Module):
    """Vectors for every table and column of a schema.

    A column is represented by its table's name words, its own name words,
    and its type; a table by its name words alone. Both go through the same
    projection so item vectors live in one space for pointer scoring.
    """

    def __init__(self, dim: int, n_buckets: int = N_BUCKETS):
        super().__init__()
        self.words = HashedWordEmbedding(dim, n_buckets)
        self.type_emb = nn.Embedding(len(COLUMN_TYPES) + 1, dim)
        self.proj = nn.Linear(3 * dim, dim)
        self.dim = dim

    def encode(self, schema: SchemaGraph) -> tuple[torch.Tensor, torch.Tensor]:
        """Returns (table_vecs [T, d], column_vecs [C, d])."""
        table_word_vecs = [self.words.embed_words(name_words(t)) for t in schema.tables]
        tab_rows = []
        for t_vec in table_word_vecs:
            tab_rows.append(
                torch.cat([t_vec, t_vec, self.type_emb.weight[_TABLE_TYPE]])
            )
        col_rows = []
        for t_idx, name, ctype in schema.columns:
            col_vec = self.words.embed_words(name_words(name))
            col_rows.append(
                torch.cat(
                    [table_word_vecs[t_idx], col_vec, self.type_emb.weight[_TYPE_INDEX[ctype]]]
                )
            )
        tables = torch.tanh(self.proj(torch.stack(tab_rows))) if tab_rows else torch.zeros(0, self.dim)
        columns = torch.tanh(self.proj(torch.stack(col_rows))) if col_rows else torch.zeros(0, self.dim)
        return tables, columns


class TextEncoder(nn.Module):
    """Bidirectional GRU over hashed word ids."""

    def __init__(self, emb_dim: int, hidden: int, n_buckets: int = N_BUCKETS):
        super().__init__()
        self.words = HashedWordEmbedding(emb_dim, n_buckets)
        self.gru = nn.GRU(emb_dim, hidden, batch_first=True, bidirectional=True)
        self.out_dim = 2 * hidden

    def forward(self, ids: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """ids [B, T] padded with 0, mask [B, T] of 1/0.

        Returns (states [B, T, 2h], summary [B, 2h]) where the summary is
        the concatenated final states of both directions.
        """
        emb = self.words(ids)
        states, final = self.gru(emb)
        summary = torch.cat([final[0], final[1]], dim=-1)
        states = states * mask.unsqueeze(-1)
        return states, summary


def pad_id_batch(seqs: list[torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
    """Pad variable-length id tensors to [B, T_max]; returns (ids, mask)."""
    n = len(seqs)
    t_max = max(1, max(len(s) for s in seqs))
    ids = torch.zeros(n, t_max, dtype=torch.long)
    mask = torch.zeros(n, t_max)
    for i, s in enumerate(seqs):
        ids[i, : len(s)] = s
        mask[i, : len(s)] = 1.0
    return ids, mask


def luong_scores(states: torch.Tensor, mask: torch.Tensor, query: torch.Tensor) -> torch.Tensor:
    """Attention log-weights of query [B, d] over states [B, T, d]."""
    scores = torch.bmm(states, query.unsqueeze(-1)).squeeze(-1)
    scores = scores.masked_fill(mask == 0, float("-inf"))
    return torch.log_softmax(scores, dim=-1)


def state_to_numpy(module: nn.Module) -> dict:
    return {k: v.detach().cpu().numpy().copy() for k, v in module.state_dict().items()}


def load_state_from_numpy(module: nn.Module, state: dict) -> None:
    module.load_state_dict({k: torch.as_tensor(v) for k, v in state.items()})


def epoch_batches(n: int, batch_size: int, rng) -> list[list[int]]:
    """Shuffled index batches for one epoch, deterministic given the rng."""
    order = list(rng.permutation(n))
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]
