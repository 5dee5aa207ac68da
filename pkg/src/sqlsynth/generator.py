"""Entity-string to question generation.

The generator sees only the formatted entity string (which embeds the
domain name), never the schema itself. Two interchangeable backends:

* ``TinySeq2seqBackend`` — a from-scratch GRU encoder-decoder with copy
  attention. Copying lets it mention schema words it never saw in
  training, which is what makes zero-shot domains workable without a
  pretrained model.
* ``PretrainedSeq2seqBackend`` — fine-tunes a text-to-text transformer
  when the transformers package and weights are available.

Beam candidates are scored by length-normalized sequence log-probability
and returned best first with exact-duplicate strings removed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn

from .errors import BackendUnavailableError, UntrainedModelError
from .nets import (
    HashedWordEmbedding,
    TextEncoder,
    detokenize_text,
    epoch_batches,
    load_state_from_numpy,
    pad_id_batch,
    bucket_ids,
    state_to_numpy,
    tokenize_text,
)

PAD, BOS, EOS, UNK = 0, 1, 2, 3
_SPECIALS = ["<pad>", "<bos>", "<eos>", "<unk>"]


@dataclass
class GeneratorTrainConfig:
    learning_rate: float = 3e-4
    batch_size: int = 8
    epochs: int = 3
    grad_clip: float = 1.0
    warmup_steps: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size <= 0 or self.epochs <= 0:
            raise ValueError("learning rate, batch size, and epochs must be positive")
        if self.grad_clip <= 0:
            raise ValueError("gradient clip threshold must be positive")
        if self.warmup_steps != 0:
            raise ValueError("training runs without warm-up steps")


@dataclass
class GeneratorDecodeConfig:
    beam_size: int = 8
    max_len: int = 64
    length_penalty: float = 1.0


@dataclass
class GeneratorNetConfig:
    emb_dim: int = 64
    enc_hidden: int = 64
    dec_hidden: int = 128


class TinySeq2seqBackend(nn.Module):
    """GRU encoder-decoder with copy attention over the source string."""

    def __init__(self, vocab: list[str], cfg: GeneratorNetConfig):
        super().__init__()
        self.cfg = cfg
        self.vocab = list(vocab)
        self.word_to_id = {w: i for i, w in enumerate(self.vocab)}
        e, src, h = cfg.emb_dim, 2 * cfg.enc_hidden, cfg.dec_hidden
        self.encoder = TextEncoder(e, cfg.enc_hidden)
        self.dec_emb = HashedWordEmbedding(e)
        self.cell = nn.GRUCell(e + src, h)
        self.init_h = nn.Linear(src, h)
        self.att = nn.Linear(h, src, bias=False)
        self.out = nn.Linear(h + src, h)
        self.vocab_out = nn.Linear(h, len(self.vocab))
        self.p_gen = nn.Linear(h + src + e, 1)

    def encode(self, token_lists: list[list[str]]):
        ids = [bucket_ids(toks) for toks in token_lists]
        padded, mask = pad_id_batch(ids)
        states, summary = self.encoder(padded, mask)
        h0 = torch.tanh(self.init_h(summary))
        ctx0 = torch.zeros(len(token_lists), states.shape[-1])
        return states, mask, h0, ctx0

    def step(self, h, ctx, prev_words: list[str], states, mask):
        """One decode step for a batch of hypotheses.

        Returns (h', ctx', vocab_probs [B, V], attention [B, T], p_gen [B, 1]).
        """
        emb = self.dec_emb(bucket_ids([w.lower() for w in prev_words]))
        h = self.cell(torch.cat([emb, ctx], dim=-1), h)
        scores = torch.bmm(states, self.att(h).unsqueeze(-1)).squeeze(-1)
        scores = scores.masked_fill(mask == 0, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        ctx = torch.bmm(attn.unsqueeze(1), states).squeeze(1)
        out = torch.tanh(self.out(torch.cat([h, ctx], dim=-1)))
        vocab_probs = torch.softmax(self.vocab_out(out), dim=-1)
        p_gen = torch.sigmoid(self.p_gen(torch.cat([h, ctx, emb], dim=-1)))
        return h, ctx, vocab_probs, attn, p_gen

    def extended_probs(self, vocab_probs, attn, p_gen, src_ext_ids, n_oov: int):
        """Mix generation and copying into one distribution.

        src_ext_ids [B, T] maps each source position to its extended-vocab
        id (vocab id, or V + oov index for out-of-vocabulary source words).
        """
        batch = vocab_probs.shape[0]
        ext = torch.cat(
            [p_gen * vocab_probs, torch.zeros(batch, n_oov)], dim=-1
        )
        ext = ext.scatter_add(1, src_ext_ids, (1.0 - p_gen) * attn)
        return ext


def _source_extension(src_tokens: list[str], word_to_id: dict[str, int]):
    """Extended ids for one source: vocab id or a fresh OOV slot per word."""
    oov_words: list[str] = []
    ext_ids = []
    n_vocab = len(word_to_id)
    for tok in src_tokens:
        wid = word_to_id.get(tok)
        if wid is None:
            if tok not in oov_words:
                oov_words.append(tok)
            wid = n_vocab + oov_words.index(tok)
        ext_ids.append(wid)
    return ext_ids, oov_words


@dataclass
class GeneratorModel:
    backend: object
    decode: GeneratorDecodeConfig = field(default_factory=GeneratorDecodeConfig)
    trained: bool = False
    train_log: list = field(default_factory=list)

    def to_checkpoint(self) -> dict:
        if not isinstance(self.backend, TinySeq2seqBackend):
            raise BackendUnavailableError("only the tiny backend supports checkpoint files")
        return {
            "kind": "generator",
            "vocab": list(self.backend.vocab),
            "net_config": vars(self.backend.cfg),
            "decode": vars(self.decode),
            "trained": self.trained,
            "train_log": list(self.train_log),
            "state": state_to_numpy(self.backend),
        }

    @classmethod
    def from_checkpoint(cls, payload: dict) -> "GeneratorModel":
        backend = TinySeq2seqBackend(payload["vocab"], GeneratorNetConfig(**payload["net_config"]))
        load_state_from_numpy(backend, payload["state"])
        return cls(
            backend=backend,
            decode=GeneratorDecodeConfig(**payload["decode"]),
            trained=payload["trained"],
            train_log=list(payload["train_log"]),
        )

    def beam_questions(self, inputs: list[str], beam_size: int):
        """Question-source surface used by the synthesis pipeline."""
        return generate_questions_batch(self, inputs, beam_size)


def save_generator_corpus(pairs: list[tuple[str, str]], path) -> None:
    """Fine-tuning corpus as .json (records) or .tsv (input <TAB> question)."""
    import json
    from pathlib import Path

    path = Path(path)
    if path.suffix == ".tsv":
        lines = [f"{src}\t{tgt}" for src, tgt in pairs]
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return
    records = [{"input": src, "question": tgt} for src, tgt in pairs]
    path.write_text(json.dumps(records, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")


def load_generator_corpus(path) -> list[tuple[str, str]]:
    import json
    from pathlib import Path

    path = Path(path)
    if path.suffix == ".tsv":
        pairs = []
        for n, line in enumerate(path.read_text(encoding="utf-8").splitlines()):
            if not line.strip():
                continue
            try:
                src, tgt = line.split("\t", 1)
            except ValueError as exc:
                raise ValueError(f"{path}:{n + 1}: expected input<TAB>question") from exc
            pairs.append((src, tgt))
        return pairs
    records = json.loads(path.read_text(encoding="utf-8"))
    return [(r["input"], r["question"]) for r in records]


def _build_vocab(pairs: list[tuple[str, str]]) -> list[str]:
    seen = dict.fromkeys(_SPECIALS)
    for src, tgt in pairs:
        for tok in tokenize_text(tgt):
            seen.setdefault(tok)
        for tok in tokenize_text(src):
            seen.setdefault(tok)
    return list(seen)


def _batch_nll(
    backend: TinySeq2seqBackend, batch: list[tuple[list[str], list[str]]]
) -> torch.Tensor:
    """Summed sequence NLL over a batch of (source tokens, target tokens)."""
    srcs = [s for s, _ in batch]
    states, mask, h, ctx = backend.encode(srcs)
    ext_data = [_source_extension(s, backend.word_to_id) for s in srcs]
    max_oov = max((len(o) for _, o in ext_data), default=0)
    src_ext_ids, _ = pad_id_batch([torch.tensor(e, dtype=torch.long) for e, _ in ext_data])
    n_vocab = len(backend.vocab)
    targets = []
    for (src, tgt), (_, oov) in zip(batch, ext_data):
        ids = []
        for tok in tokenize_text(tgt):
            wid = backend.word_to_id.get(tok)
            if wid is None:
                wid = n_vocab + oov.index(tok) if tok in oov else UNK
            ids.append(wid)
        targets.append(ids + [EOS])
    t_max = max(len(t) for t in targets)
    prev_words = [["<bos>"] * len(batch)]
    total = torch.zeros(())
    surfaces = [tokenize_text(t) + ["<eos>"] for _, t in batch]
    for t in range(t_max):
        h, ctx, vocab_probs, attn, p_gen = backend.step(
            h, ctx, prev_words[-1], states, mask
        )
        ext = backend.extended_probs(vocab_probs, attn, p_gen, src_ext_ids, max_oov)
        step_words = []
        for b, tgt_ids in enumerate(targets):
            if t < len(tgt_ids):
                total = total - torch.log(ext[b, tgt_ids[t]] + 1e-12)
                step_words.append(surfaces[b][t])
            else:
                step_words.append("<pad>")
        prev_words.append(step_words)
    return total


def train_generator(
    pairs: list[tuple[str, str]],
    config: GeneratorTrainConfig | None = None,
    net_config: GeneratorNetConfig | None = None,
    backend: str = "tiny",
) -> GeneratorModel:
    """Fit a generator on (entity string, question) pairs."""
    if not pairs:
        raise ValueError("empty generator training corpus")
    config = config or GeneratorTrainConfig()
    if backend == "pretrained":
        b = PretrainedSeq2seqBackend()
        log = b.fit(pairs, config)
        return GeneratorModel(backend=b, trained=True, train_log=log)
    if backend != "tiny":
        raise BackendUnavailableError(f"unknown generator backend {backend!r}")

    torch.manual_seed(config.seed)
    net = TinySeq2seqBackend(_build_vocab(pairs), net_config or GeneratorNetConfig())
    tokenized = [(tokenize_text(s), t) for s, t in pairs]
    opt = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    model = GeneratorModel(backend=net)
    n_tokens = sum(len(tokenize_text(t)) + 1 for _, t in pairs)
    for _ in range(config.epochs):
        epoch_nll = 0.0
        for batch_idx in epoch_batches(len(tokenized), config.batch_size, rng):
            batch = [tokenized[i] for i in batch_idx]
            loss = _batch_nll(net, batch)
            epoch_nll += float(loss.detach())
            (loss / len(batch)).backward()
            nn.utils.clip_grad_norm_(net.parameters(), config.grad_clip)
            opt.step()
            opt.zero_grad()
        model.train_log.append(epoch_nll / n_tokens)
    model.trained = True
    return model


def generate_questions(
    model: GeneratorModel, input_text: str, beam_size: int | None = None
) -> list[tuple[str, float]]:
    """Beam-decode questions for one entity string, best first."""
    return generate_questions_batch(model, [input_text], beam_size)[0]


def generate_questions_batch(
    model: GeneratorModel, inputs: list[str], beam_size: int | None = None
) -> list[list[tuple[str, float]]]:
    if not model.trained:
        raise UntrainedModelError("generator has not been trained")
    k = beam_size if beam_size is not None else model.decode.beam_size
    if k < 1:
        raise ValueError("beam size must be >= 1")
    if isinstance(model.backend, TinySeq2seqBackend):
        with torch.no_grad():
            return [_beam_decode(model.backend, text, k, model.decode) for text in inputs]
    return model.backend.beam(inputs, k, model.decode)


def _greedy_decode(
    net: TinySeq2seqBackend, input_text: str, decode: GeneratorDecodeConfig
) -> list[tuple[str, float]]:
    """Beam of one is plain greedy: argmax token per step until <eos>."""
    src = tokenize_text(input_text)
    ext_ids, oov = _source_extension(src, net.word_to_id)
    n_vocab = len(net.vocab)
    states, mask, h, ctx = net.encode([src])
    src_ext = torch.tensor(ext_ids, dtype=torch.long).unsqueeze(0)
    words: list[str] = []
    prev = ["<bos>"]
    total = 0.0
    for t in range(decode.max_len):
        h, ctx, vocab_probs, attn, p_gen = net.step(h, ctx, prev, states, mask)
        ext = net.extended_probs(vocab_probs, attn, p_gen, src_ext, len(oov))
        logp = torch.log(ext + 1e-12)
        logp[:, PAD] = logp[:, BOS] = logp[:, UNK] = float("-inf")
        if t == 0:
            logp[:, EOS] = float("-inf")
        pick = int(logp[0].argmax())
        total += float(logp[0, pick])
        if pick == EOS:
            break
        tok = net.vocab[pick] if pick < n_vocab else oov[pick - n_vocab]
        words.append(tok)
        prev = [tok]
    score = total / max(1, len(words)) ** decode.length_penalty
    return [(detokenize_text(words), score)]


def _beam_decode(
    net: TinySeq2seqBackend, input_text: str, beam_size: int, decode: GeneratorDecodeConfig
) -> list[tuple[str, float]]:
    if beam_size == 1:
        return _greedy_decode(net, input_text, decode)
    src = tokenize_text(input_text)
    ext_ids, oov = _source_extension(src, net.word_to_id)
    n_vocab, n_oov = len(net.vocab), len(oov)
    states, mask, h, ctx = net.encode([src])
    k = beam_size
    states = states.expand(k, -1, -1)
    mask = mask.expand(k, -1)
    src_ext = torch.tensor(ext_ids, dtype=torch.long).unsqueeze(0).expand(k, -1)
    h = h.expand(k, -1).contiguous()
    ctx = ctx.expand(k, -1).contiguous()

    def surface(ext_id: int) -> str:
        return net.vocab[ext_id] if ext_id < n_vocab else oov[ext_id - n_vocab]

    words: list[list[str]] = [[] for _ in range(k)]
    scores = torch.full((k,), float("-inf"))
    scores[0] = 0.0  # all beams identical at step 0; keep one live
    finished: list[tuple[list[str], float]] = []
    prev = ["<bos>"] * k
    for t in range(decode.max_len):
        h, ctx, vocab_probs, attn, p_gen = net.step(h, ctx, prev, states, mask)
        ext = net.extended_probs(vocab_probs, attn, p_gen, src_ext, n_oov)
        logp = torch.log(ext + 1e-12)
        logp[:, PAD] = float("-inf")
        logp[:, BOS] = float("-inf")
        logp[:, UNK] = float("-inf")
        if t == 0:
            logp[:, EOS] = float("-inf")  # questions are non-empty
        total = scores.unsqueeze(1) + logp
        flat = total.view(-1)
        top = torch.topk(flat, min(2 * k, flat.shape[0]))
        new_words, new_prev, keep_rows, new_scores = [], [], [], []
        for val, idx in zip(top.values.tolist(), top.indices.tolist()):
            if val == float("-inf"):
                continue
            row, ext_id = divmod(idx, n_vocab + n_oov)
            tok = surface(ext_id)
            if ext_id == EOS:
                length = max(1, len(words[row]))
                finished.append((list(words[row]), val / (length ** decode.length_penalty)))
                continue
            if len(new_words) < k:
                new_words.append(words[row] + [tok])
                new_prev.append(tok)
                keep_rows.append(row)
                new_scores.append(val)
        if not new_words:
            break
        rows = torch.tensor(keep_rows, dtype=torch.long)
        h, ctx = h[rows], ctx[rows]
        states, mask, src_ext = states[rows], mask[rows], src_ext[rows]
        words, prev = new_words, new_prev
        scores = torch.tensor(new_scores)
        if len(finished) >= 4 * k:
            break
    if not finished:
        finished = [
            (w, s / max(1, len(w)) ** decode.length_penalty)
            for w, s in zip(words, scores.tolist())
        ]
    best: dict[str, float] = {}
    for w, score in finished:
        text = detokenize_text(w)
        if not text:
            continue
        if text not in best or score > best[text]:
            best[text] = score
    ranked = sorted(best.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:beam_size]


class PretrainedSeq2seqBackend:
    """Text-to-text transformer fine-tuning; requires the transformers package.

    Kept intentionally thin: the full-scale path when pretrained weights
    are available locally, never exercised by the test suite.
    """

    def __init__(self, model_name: str = "t5-base"):
        try:
            from transformers import AutoModelForSeq2SeqLM, AutoTokenizer
        except ImportError as exc:
            raise BackendUnavailableError("transformers is not installed") from exc
        try:
            self.tokenizer = AutoTokenizer.from_pretrained(model_name)
            self.model = AutoModelForSeq2SeqLM.from_pretrained(model_name)
        except OSError as exc:
            raise BackendUnavailableError(f"cannot load weights for {model_name!r}") from exc

    def fit(self, pairs: list[tuple[str, str]], config: GeneratorTrainConfig) -> list[float]:
        torch.manual_seed(config.seed)
        opt = torch.optim.AdamW(self.model.parameters(), lr=config.learning_rate)
        rng = np.random.default_rng(config.seed)
        log = []
        self.model.train()
        for _ in range(config.epochs):
            epoch_loss, n_batches = 0.0, 0
            for batch_idx in epoch_batches(len(pairs), config.batch_size, rng):
                batch = [pairs[i] for i in batch_idx]
                enc = self.tokenizer(
                    [s for s, _ in batch], return_tensors="pt", padding=True
                )
                lab = self.tokenizer(
                    [t for _, t in batch], return_tensors="pt", padding=True
                ).input_ids
                lab[lab == self.tokenizer.pad_token_id] = -100
                loss = self.model(**enc, labels=lab).loss
                loss.backward()
                nn.utils.clip_grad_norm_(self.model.parameters(), config.grad_clip)
                opt.step()
                opt.zero_grad()
                epoch_loss += float(loss.detach())
                n_batches += 1
            log.append(epoch_loss / max(1, n_batches))
        self.model.eval()
        return log

    def beam(self, inputs: list[str], beam_size: int, decode: GeneratorDecodeConfig):
        out = []
        enc = self.tokenizer(inputs, return_tensors="pt", padding=True)
        result = self.model.generate(
            **enc,
            num_beams=beam_size,
            num_return_sequences=beam_size,
            max_length=decode.max_len,
            length_penalty=decode.length_penalty,
            output_scores=True,
            return_dict_in_generate=True,
            early_stopping=True,
        )
        texts = self.tokenizer.batch_decode(result.sequences, skip_special_tokens=True)
        scores = result.sequences_scores.tolist()
        for i in range(len(inputs)):
            cands: dict[str, float] = {}
            for j in range(beam_size):
                text = texts[i * beam_size + j].strip()
                score = scores[i * beam_size + j]
                if text and (text not in cands or score > cands[text]):
                    cands[text] = score
            out.append(sorted(cands.items(), key=lambda kv: (-kv[1], kv[0])))
        return out
