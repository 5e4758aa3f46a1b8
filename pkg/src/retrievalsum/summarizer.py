"""Exemplar-conditioned encoder-decoder with sentence group tags."""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import torch
from torch import nn

from . import tensor as T
from .corpus import BOS_ID, CLS_ID, EOS_ID, PAD_ID, SEP_ID, TokenSequence


@dataclass(frozen=True)
class AssembledInput:
    """[CLS] X [SEP] [CLS] E1 [SEP] ... with one group tag per token."""

    ids: tuple[int, ...]
    group_tags: tuple[int, ...]
    exemplar_cls_positions: tuple[int, ...]
    exemplars: tuple[tuple[int, ...], ...] = ()

    def __len__(self):
        return len(self.ids)

    def to_json(self) -> str:
        return json.dumps({"ids": self.ids, "tags": self.group_tags,
                           "cls_positions": self.exemplar_cls_positions}, sort_keys=True)


def _sentence_index(seq: TokenSequence) -> list[int]:
    """1-based sentence number for each token; tokens outside spans inherit the previous one."""
    idx = [0] * len(seq.ids)
    for s, (a, b) in enumerate(seq.sentence_spans, 1):
        for p in range(a, min(b, len(idx))):
            idx[p] = s
    last = 1
    for p, v in enumerate(idx):
        if v == 0:
            idx[p] = last
        last = idx[p]
    return idx


def assemble(doc: TokenSequence, exemplars: Sequence[TokenSequence], n_tags: int = 32,
             doc_len: int = 1024, exemplar_budget: int = 768) -> AssembledInput:
    """Lay out document and exemplars; tag exemplar sentence i with min(i, n_tags - 1).

    Exemplars are cut to whatever is left of ``exemplar_budget`` tokens, in order.
    """
    doc = doc.truncate(doc_len)
    ids = [CLS_ID, *doc.ids, SEP_ID]
    tags = [0] * len(ids)
    cls_pos, kept = [], []
    budget = exemplar_budget
    for ex in exemplars:
        if budget <= 0:
            break
        ex = ex.truncate(budget)
        budget -= len(ex)
        cls_pos.append(len(ids))
        ids.append(CLS_ID)
        tags.append(0)
        ids.extend(ex.ids)
        tags.extend(min(s, n_tags - 1) for s in _sentence_index(ex))
        ids.append(SEP_ID)
        tags.append(0)
        kept.append(tuple(ex.ids))
    return AssembledInput(tuple(ids), tuple(tags), tuple(cls_pos), tuple(kept))


@dataclass(frozen=True)
class TaggedTarget:
    ids: tuple[int, ...]  # [BOS] s1 [SEP] s2 ... [EOS]
    groups: tuple[int, ...]

    @property
    def inputs(self) -> tuple[int, ...]:
        return self.ids[:-1]

    @property
    def outputs(self) -> tuple[int, ...]:
        return self.ids[1:]


def sentence_groups(ids: Sequence[int], n_tags: int = 32) -> list[int]:
    """Group index per position: 1 + number of [SEP] strictly before it, clamped to n_tags - 1."""
    out, seps = [], 0
    for t in ids:
        out.append(min(1 + seps, n_tags - 1))
        if t == SEP_ID:
            seps += 1
    return out


def make_target(summary: TokenSequence, n_tags: int = 32, max_len: int = 128) -> TaggedTarget:
    ids = [BOS_ID]
    for i, sent in enumerate(summary.sentences()):
        if i:
            ids.append(SEP_ID)
        ids.extend(sent)
    ids = ids[: max_len - 1] + [EOS_ID]
    if len(ids) < 3 and not summary.ids:
        raise ValueError("empty target summary")
    return TaggedTarget(tuple(ids), tuple(sentence_groups(ids, n_tags)))


@dataclass
class SummarizerConfig:
    vocab_size: int
    d: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    attn_heads: int = 4
    d_ff: int = 128
    n_tags: int = 32
    dropout: float = 0.0
    max_src: int = 1024 + 768 + 64
    max_tgt: int = 128
    tag_position: str = "output"  # "output" adds tags after the encoder stack, "input" before it
    use_tags: bool = True


class SummarizerModel(nn.Module):
    def __init__(self, cfg: SummarizerConfig, seed: int = 0):
        super().__init__()
        if cfg.tag_position not in ("output", "input"):
            raise ValueError(f"tag_position must be 'output' or 'input', got {cfg.tag_position!r}")
        self.cfg = cfg
        torch.manual_seed(seed)
        self.tok = T.Embedding(cfg.vocab_size, cfg.d)
        self.src_pos = T.Embedding(cfg.max_src, cfg.d)
        self.tgt_pos = T.Embedding(cfg.max_tgt, cfg.d)
        self.tags = T.Embedding(cfg.n_tags, cfg.d)
        self.encoder = nn.ModuleList(
            T.EncoderLayer(cfg.d, cfg.attn_heads, cfg.d_ff, cfg.dropout) for _ in range(cfg.enc_layers))
        self.decoder = nn.ModuleList(
            T.DecoderLayer(cfg.d, cfg.attn_heads, cfg.d_ff, cfg.dropout) for _ in range(cfg.dec_layers))
        self.generator = torch.Generator().manual_seed(seed + 1)
        if not cfg.use_tags:
            self.zero_tags()

    def zero_tags(self) -> None:
        with torch.no_grad():
            self.tags.weight.zero_()
        self.tags.weight.requires_grad_(False)

    @property
    def output_weight(self) -> torch.Tensor:
        # tied: logits = h @ Emb^T
        return self.tok.weight

    def encode(self, src: torch.Tensor, src_tags: torch.Tensor, src_mask: torch.Tensor) -> torch.Tensor:
        """src, src_tags: (B, L) long; src_mask: (B, L) bool. Returns (B, L, d)."""
        if src_tags.numel() and int(src_tags.max()) >= self.cfg.n_tags:
            raise AssertionError("group tag out of range; tags must be clamped")
        x = self.tok(src) + self.src_pos(torch.arange(src.shape[1]))[None]
        if self.cfg.tag_position == "input":
            x = x + self.tags(src_tags)
        mask = src_mask[:, None, :]
        for layer in self.encoder:
            x = layer(x, mask, self.generator)
        if self.cfg.tag_position == "output":
            x = x + self.tags(src_tags)
        return x

    def decoder_input(self, tgt: torch.Tensor, tgt_groups: torch.Tensor) -> torch.Tensor:
        g0 = self.tags(torch.zeros_like(tgt))
        return self.tok(tgt) + self.tgt_pos(torch.arange(tgt.shape[1]))[None] + self.tags(tgt_groups) + g0

    def decode(self, memory, src_mask, tgt, tgt_groups, tgt_mask=None):
        """Returns (logits (B, Lt, V), last-layer cross-attention (B, heads, Lt, Ls))."""
        x = self.decoder_input(tgt, tgt_groups)
        Lt = tgt.shape[1]
        self_mask = T.causal_mask(Lt)[None]
        if tgt_mask is not None:
            self_mask = self_mask & tgt_mask[:, None, :]
        cross_mask = src_mask[:, None, :]
        w = None
        for layer in self.decoder:
            x, w = layer(x, memory, self_mask, cross_mask, self.generator)
        return T.matmul(x, self.output_weight.T), w

    def forward(self, batch: "Batch"):
        memory = self.encode(batch.src, batch.src_tags, batch.src_mask)
        return self.decode(memory, batch.src_mask, batch.tgt_in, batch.tgt_groups, batch.tgt_mask)


def _pad(rows: Sequence[Sequence[int]], value: int = PAD_ID) -> torch.Tensor:
    width = max(len(r) for r in rows)
    out = torch.full((len(rows), width), value, dtype=torch.long)
    for i, r in enumerate(rows):
        out[i, : len(r)] = torch.tensor(list(r), dtype=torch.long)
    return out


@dataclass
class Batch:
    src: torch.Tensor
    src_tags: torch.Tensor
    src_mask: torch.Tensor
    tgt_in: torch.Tensor = None
    tgt_groups: torch.Tensor = None
    tgt_mask: torch.Tensor = None
    tgt_out: torch.Tensor = None

    @classmethod
    def make(cls, inputs: Sequence[AssembledInput], targets: Sequence[TaggedTarget] | None = None):
        src = _pad([x.ids for x in inputs])
        b = cls(src, _pad([x.group_tags for x in inputs], 0), T.padding_mask([len(x) for x in inputs], src.shape[1]))
        if targets is not None:
            b.tgt_in = _pad([t.inputs for t in targets])
            b.tgt_groups = _pad([t.groups[:-1] for t in targets], 0)
            b.tgt_mask = T.padding_mask([len(t.inputs) for t in targets], b.tgt_in.shape[1])
            b.tgt_out = _pad([t.outputs for t in targets])
        return b


def encode(model: SummarizerModel, inp: AssembledInput) -> torch.Tensor:
    b = Batch.make([inp])
    return model.encode(b.src, b.src_tags, b.src_mask)[0]


def decode_step(model: SummarizerModel, h_enc: torch.Tensor, prefix: Sequence[int]) -> torch.Tensor:
    """Next-token logits (V,) after ``prefix`` (which starts with [BOS])."""
    tgt = torch.tensor([list(prefix)], dtype=torch.long)
    groups = torch.tensor([sentence_groups(prefix, model.cfg.n_tags)], dtype=torch.long)
    mask = torch.ones(1, h_enc.shape[0], dtype=torch.bool)
    logits, _ = model.decode(h_enc[None], mask, tgt, groups)
    return logits[0, -1]


def nll_loss(model: SummarizerModel, inputs, targets) -> torch.Tensor:
    """Token-level cross entropy under teacher forcing, averaged over non-pad positions."""
    if isinstance(inputs, AssembledInput):
        inputs, targets = [inputs], [targets]
    if any(len(t.outputs) == 0 for t in targets):
        raise ValueError("empty target")
    batch = Batch.make(inputs, targets)
    logits, _ = model(batch)
    return T.cross_entropy(logits, batch.tgt_out, PAD_ID)


@dataclass
class SummarizerTrainConfig:
    epochs: int = 5
    batch_size: int = 4
    lr_max: float = 1e-4
    warmup: int = 100
    seed: int = 0


@dataclass
class SummarizerTrainResult:
    losses: list[float] = field(default_factory=list)
    epoch_losses: list[float] = field(default_factory=list)


def train_summarizer(model: SummarizerModel, examples: Sequence[tuple[AssembledInput, TaggedTarget]],
                     cfg: SummarizerTrainConfig,
                     on_epoch: Callable[[int, SummarizerModel], bool | None] | None = None) -> SummarizerTrainResult:
    """Adam with warmup over shuffled mini-batches.

    ``on_epoch(epoch, model)`` runs after every epoch in eval mode; returning True stops training.
    """
    if not examples:
        raise ValueError("no training examples")
    rng = random.Random(cfg.seed)
    state = T.AdamState(lr_max=cfg.lr_max, warmup=cfg.warmup)
    model.generator.manual_seed(cfg.seed + 1)
    model.train()
    result = SummarizerTrainResult()
    order = list(range(len(examples)))
    for epoch in range(cfg.epochs):
        rng.shuffle(order)
        losses = []
        for b in range(0, len(order), cfg.batch_size):
            chunk = [examples[i] for i in order[b : b + cfg.batch_size]]
            loss = nll_loss(model, [x for x, _ in chunk], [t for _, t in chunk])
            T.backward(loss)
            T.adam_step(state, T.trainable(model))
            losses.append(loss.item())
        result.losses.extend(losses)
        result.epoch_losses.append(sum(losses) / len(losses))
        if on_epoch is not None:
            model.eval()
            stop = on_epoch(epoch, model)
            model.train()
            if stop is True:
                break
    model.eval()
    return result


def save_model(model: SummarizerModel, path, meta: dict | None = None) -> None:
    T.save_checkpoint(path, model, {"config": asdict(model.cfg), **(meta or {})})


def load_model(path) -> SummarizerModel:
    doc = T.read_checkpoint(path)
    model = SummarizerModel(SummarizerConfig(**doc["meta"]["config"]))
    T.load_params(model, doc["params"])
    if not model.cfg.use_tags:
        model.zero_tags()
    model.eval()
    return model
