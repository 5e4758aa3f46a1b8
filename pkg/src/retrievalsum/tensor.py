"""Float64 tensor ops, transformer layers, Adam with warmup and checkpoints.

Reverse-mode autodiff is torch's; everything here runs in 64-bit on CPU.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import torch
from torch import nn

DTYPE = torch.float64
CHECKPOINT_FORMAT = "retrievalsum-checkpoint"
CHECKPOINT_VERSION = 1

torch.set_default_dtype(DTYPE)


class ShapeError(ValueError):
    pass


class NumericError(FloatingPointError):
    """Raised when a loss or gradient turns NaN/inf."""


def _shape(t) -> tuple:
    return tuple(t.shape)


def as_tensor(values, requires_grad: bool = False) -> torch.Tensor:
    return torch.tensor(values, dtype=DTYPE, requires_grad=requires_grad)


# ---------------------------------------------------------------- forward ops


def matmul(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.dim() < 1 or b.dim() < 1 or a.shape[-1] != (b.shape[-2] if b.dim() > 1 else b.shape[0]):
        raise ShapeError(f"matmul: incompatible shapes {_shape(a)} and {_shape(b)}")
    return a @ b


def add(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    try:
        torch.broadcast_shapes(a.shape, b.shape)
    except RuntimeError:
        raise ShapeError(f"add: cannot broadcast {_shape(a)} with {_shape(b)}") from None
    return a + b


def softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    z = x - x.max(dim=dim, keepdim=True).values.detach()
    e = torch.exp(z)
    return e / e.sum(dim=dim, keepdim=True)


def log_softmax(x: torch.Tensor, dim: int = -1) -> torch.Tensor:
    return x - torch.logsumexp(x, dim=dim, keepdim=True)


def layer_norm(x: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    if gain.shape != x.shape[-1:] or bias.shape != x.shape[-1:]:
        raise ShapeError(f"layer_norm: input {_shape(x)} vs gain {_shape(gain)} / bias {_shape(bias)}")
    mu = x.mean(dim=-1, keepdim=True)
    var = ((x - mu) ** 2).mean(dim=-1, keepdim=True)
    return (x - mu) / torch.sqrt(var + eps) * gain + bias


def embedding_lookup(table: torch.Tensor, ids) -> torch.Tensor:
    ids = torch.as_tensor(ids, dtype=torch.long)
    if table.dim() != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {_shape(table)}")
    if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= table.shape[0]):
        raise ShapeError(f"embedding_lookup: ids out of range for table {_shape(table)}")
    return table[ids]


def gelu(x: torch.Tensor) -> torch.Tensor:
    return 0.5 * x * (1.0 + torch.erf(x / math.sqrt(2.0)))


def dropout(x: torch.Tensor, p: float, training: bool, generator: torch.Generator | None = None) -> torch.Tensor:
    if not training or p == 0.0:
        return x
    keep = torch.rand(x.shape, generator=generator, dtype=DTYPE) >= p
    return x * keep / (1.0 - p)


def attention(q, k, v, mask=None):
    """Scaled dot-product attention over the last two dims.

    q: (..., Lq, dh), k/v: (..., Lk, dh); mask broadcastable to (..., Lq, Lk), True = attend.
    Returns (output, weights).
    """
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention: q {_shape(q)}, k {_shape(k)}, v {_shape(v)}")
    scores = (q @ k.transpose(-1, -2)) / math.sqrt(q.shape[-1])
    if mask is not None:
        # finite fill keeps fully masked rows NaN-free
        scores = scores.masked_fill(~mask, -1e30)
    w = softmax(scores, dim=-1)
    return w @ v, w


def multi_head_attention(q, k, v, mask, n_heads: int):
    """Split (B, L, d) inputs into heads, attend, merge. Returns (out, weights[B, h, Lq, Lk])."""
    B, Lq, d = q.shape
    if d % n_heads:
        raise ShapeError(f"multi_head_attention: width {d} not divisible by {n_heads} heads")
    if k.shape[-1] != d or v.shape[-1] != d or k.shape[:2] != v.shape[:2]:
        raise ShapeError(f"multi_head_attention: q {_shape(q)}, k {_shape(k)}, v {_shape(v)}")
    dh = d // n_heads

    def split(x):
        return x.reshape(x.shape[0], x.shape[1], n_heads, dh).transpose(1, 2)

    if mask is not None and mask.dim() == 3:
        mask = mask[:, None]
    out, w = attention(split(q), split(k), split(v), mask)
    return out.transpose(1, 2).reshape(B, Lq, d), w


def cross_entropy(logits: torch.Tensor, targets, pad_id: int = 0) -> torch.Tensor:
    """Mean negative log-likelihood over non-pad target positions."""
    targets = torch.as_tensor(targets, dtype=torch.long)
    if logits.shape[:-1] != targets.shape:
        raise ShapeError(f"cross_entropy: logits {_shape(logits)} vs targets {_shape(targets)}")
    keep = targets != pad_id
    n = int(keep.sum())
    if n == 0:
        raise ShapeError("cross_entropy: no non-pad targets")
    lp = log_softmax(logits, dim=-1)
    picked = lp.gather(-1, targets.unsqueeze(-1)).squeeze(-1)
    return -(picked * keep).sum() / n


def backward(loss: torch.Tensor) -> None:
    if loss.numel() != 1 or loss.dim() != 0:
        raise ShapeError(f"backward: loss must be a scalar, got shape {_shape(loss)}")
    if not torch.isfinite(loss):
        raise NumericError(f"non-finite loss {loss.item()}")
    loss.backward()


# ---------------------------------------------------------------- layers


class Linear(nn.Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(d_in, d_out, dtype=DTYPE))
        nn.init.xavier_uniform_(self.weight)
        self.bias = nn.Parameter(torch.zeros(d_out, dtype=DTYPE)) if bias else None

    def forward(self, x):
        y = matmul(x, self.weight)
        return y if self.bias is None else y + self.bias


class LayerNorm(nn.Module):
    def __init__(self, d: int):
        super().__init__()
        self.gain = nn.Parameter(torch.ones(d, dtype=DTYPE))
        self.bias = nn.Parameter(torch.zeros(d, dtype=DTYPE))

    def forward(self, x):
        return layer_norm(x, self.gain, self.bias)


class Embedding(nn.Module):
    def __init__(self, n: int, d: int, std: float = 0.02):
        super().__init__()
        self.weight = nn.Parameter(torch.empty(n, d, dtype=DTYPE))
        nn.init.normal_(self.weight, 0.0, std)

    def forward(self, ids):
        return embedding_lookup(self.weight, ids)


class FeedForward(nn.Module):
    def __init__(self, d: int, d_ff: int, dropout: float = 0.0):
        super().__init__()
        self.inp = Linear(d, d_ff)
        self.out = Linear(d_ff, d)
        self.p = dropout

    def forward(self, x, generator=None):
        h = dropout(gelu(self.inp(x)), self.p, self.training, generator)
        return self.out(h)


def ffn(x, module: FeedForward):
    return module(x)


class MultiHeadAttention(nn.Module):
    def __init__(self, d: int, n_heads: int):
        super().__init__()
        if d % n_heads:
            raise ShapeError(f"hidden size {d} not divisible by {n_heads} heads")
        self.n_heads = n_heads
        self.q = Linear(d, d)
        self.k = Linear(d, d)
        self.v = Linear(d, d)
        self.o = Linear(d, d)

    def forward(self, x, memory=None, mask=None):
        memory = x if memory is None else memory
        out, w = multi_head_attention(self.q(x), self.k(memory), self.v(memory), mask, self.n_heads)
        return self.o(out), w


class EncoderLayer(nn.Module):
    """Post-norm transformer encoder block."""

    def __init__(self, d, n_heads, d_ff, dropout=0.0):
        super().__init__()
        self.attn = MultiHeadAttention(d, n_heads)
        self.ln1 = LayerNorm(d)
        self.ff = FeedForward(d, d_ff, dropout)
        self.ln2 = LayerNorm(d)
        self.p = dropout

    def forward(self, x, mask, generator=None):
        a, _ = self.attn(x, mask=mask)
        x = self.ln1(x + dropout(a, self.p, self.training, generator))
        return self.ln2(x + dropout(self.ff(x, generator), self.p, self.training, generator))


class DecoderLayer(nn.Module):
    def __init__(self, d, n_heads, d_ff, dropout=0.0):
        super().__init__()
        self.self_attn = MultiHeadAttention(d, n_heads)
        self.ln1 = LayerNorm(d)
        self.cross_attn = MultiHeadAttention(d, n_heads)
        self.ln2 = LayerNorm(d)
        self.ff = FeedForward(d, d_ff, dropout)
        self.ln3 = LayerNorm(d)
        self.p = dropout

    def forward(self, x, memory, self_mask, cross_mask, generator=None):
        """Returns (states, cross-attention weights [B, heads, Lq, Lk])."""
        a, _ = self.self_attn(x, mask=self_mask)
        x = self.ln1(x + dropout(a, self.p, self.training, generator))
        c, w = self.cross_attn(x, memory=memory, mask=cross_mask)
        x = self.ln2(x + dropout(c, self.p, self.training, generator))
        return self.ln3(x + dropout(self.ff(x, generator), self.p, self.training, generator)), w


def causal_mask(n: int) -> torch.Tensor:
    return torch.tril(torch.ones(n, n, dtype=torch.bool))


def padding_mask(lengths: Sequence[int], max_len: int) -> torch.Tensor:
    """(B, max_len) bool, True on real tokens."""
    return torch.arange(max_len)[None, :] < torch.as_tensor(lengths)[:, None]


# ---------------------------------------------------------------- optimizer


def warmup_lr(step: int, lr_max: float, warmup: int) -> float:
    """Inverse-sqrt schedule with linear warmup, scaled so lr(warmup) == lr_max."""
    if step < 1:
        raise ValueError("step counts from 1")
    return lr_max * min(step ** -0.5, step * warmup ** -1.5) * warmup ** 0.5


@dataclass
class AdamState:
    lr_max: float = 1e-4
    warmup: int = 100
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def lr(self, step: int | None = None) -> float:
        return warmup_lr(self.step if step is None else step, self.lr_max, self.warmup)


@torch.no_grad()
def adam_step(state: AdamState, params: Iterable[tuple[str, torch.Tensor]]) -> float:
    """Apply one Adam update to named parameters and zero their gradients. Returns the lr used."""
    params = list(params)
    for name, p in params:
        if p.grad is None:
            raise ValueError(f"adam_step: parameter {name!r} has no gradient")
        if not torch.isfinite(p.grad).all():
            raise NumericError(f"adam_step: non-finite gradient in {name!r}")
    state.step += 1
    lr = state.lr()
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params:
        g = p.grad
        m = state.m.setdefault(name, torch.zeros_like(p))
        v = state.v.setdefault(name, torch.zeros_like(p))
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        p.sub_(lr * (m / c1) / (torch.sqrt(v / c2) + state.eps))
        p.grad = None
    return lr


def trainable(module: nn.Module):
    """Named parameters that require grad, deduplicated by storage (tied weights once)."""
    seen = set()
    for name, p in module.named_parameters():
        if p.requires_grad and id(p) not in seen:
            seen.add(id(p))
            yield name, p


# ---------------------------------------------------------------- gradient check


def finite_difference_check(
    fn: Callable[[], torch.Tensor],
    params: Sequence[torch.Tensor],
    h: float = 1e-5,
    max_coords: int | None = None,
    generator: torch.Generator | None = None,
    floor: float = 1e-5,
) -> float:
    """Max relative error between autodiff and central differences of scalar ``fn``.

    ``max_coords`` samples that many coordinates per tensor; relative error is
    |a - n| / max(|a|, |n|, floor).
    """
    for p in params:
        p.grad = None
    loss = fn()
    backward(loss)
    worst = 0.0
    for p in params:
        grad = torch.zeros_like(p).reshape(-1) if p.grad is None else p.grad.detach().clone().reshape(-1)
        flat = p.data.reshape(-1)
        idx = range(flat.numel())
        if max_coords is not None and flat.numel() > max_coords:
            idx = torch.randperm(flat.numel(), generator=generator)[:max_coords].tolist()
        for i in idx:
            orig = float(flat[i])
            with torch.no_grad():
                flat[i] = orig + h
                fp = float(fn())
                flat[i] = orig - h
                fm = float(fn())
                flat[i] = orig
            num = (fp - fm) / (2 * h)
            ana = float(grad[i])
            err = abs(ana - num) / max(abs(ana), abs(num), floor)
            worst = max(worst, err)
        p.grad = None
    return worst


# ---------------------------------------------------------------- checkpoints


def state_to_tree(module: nn.Module) -> dict:
    tree = {}
    for name, t in module.state_dict(keep_vars=False).items():
        tree[name] = {"shape": list(t.shape), "values": t.detach().reshape(-1).tolist()}
    return tree


def save_checkpoint(path, module: nn.Module, meta: dict | None = None) -> None:
    """JSON tree of named parameters; float repr round-trips exactly."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": meta or {},
        "params": state_to_tree(module),
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True), encoding="utf-8")


def read_checkpoint(path) -> dict:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    return doc


def load_params(module: nn.Module, params: dict) -> None:
    state = {}
    for name, entry in params.items():
        state[name] = torch.tensor(entry["values"], dtype=DTYPE).reshape(entry["shape"])
    module.load_state_dict(state)
