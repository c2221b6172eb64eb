"""Tied-weight bidirectional transformer encoder with an MLM head.

The softmax weights of the MLM head ARE the word embedding matrix: logits
are computed as r @ E^T and no separate output matrix exists in the
parameter store. encode() accepts either token indices or direct per-slot
input vectors, which is what lets constructed entity embeddings ride along
as pseudo-tokens.
"""

import time
from dataclasses import dataclass

import numpy as np

from pelt.errors import (ConfigError, ContractError, DivergenceError,
                         LengthError, ShapeError)
from pelt.optim import Adam
from pelt.tensor import (ParamStore, Tensor, add, gather_rows, gelu,
                         layer_norm, matmul, mul, no_grad, reshape, softmax,
                         softmax_cross_entropy, transpose)
from pelt.vocab import MASK_ID, PAD_ID

_NEG_INF = -1e9


@dataclass(frozen=True)
class ModelConfig:
    dim: int = 64
    layers: int = 2
    heads: int = 4
    ffn_mult: int = 4
    max_len: int = 64
    vocab_size: int = 0
    ln_eps: float = 1e-5
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be positive")
        if self.dim % self.heads != 0:
            raise ConfigError(f"dim {self.dim} not divisible by {self.heads} heads")
        if self.layers < 0 or self.max_len < 1:
            raise ConfigError("layers must be >= 0 and max_len >= 1")


@dataclass
class Checkpoint:
    config: ModelConfig
    params: ParamStore
    step: int = 0
    train_seed: int = 0
    final_loss: float = float("nan")


def init_params(config, dtype=np.float32):
    """Fresh parameters, seeded; insertion order fixes serialization order."""
    rng = np.random.default_rng(config.seed)
    d, std = config.dim, 0.02

    def normal(*shape):
        return rng.normal(0.0, std, shape).astype(dtype)

    p = ParamStore()
    p.add("emb.word", normal(config.vocab_size, d))
    p.add("emb.pos", normal(config.max_len, d))
    p.add("emb.ln.g", np.ones(d, dtype=dtype))
    p.add("emb.ln.b", np.zeros(d, dtype=dtype))
    for i in range(config.layers):
        pre = f"layer{i}."
        for name in ("wq", "wk", "wv", "wo"):
            p.add(pre + "attn." + name, normal(d, d))
        for name in ("bq", "bk", "bv", "bo"):
            p.add(pre + "attn." + name, np.zeros(d, dtype=dtype))
        p.add(pre + "ln1.g", np.ones(d, dtype=dtype))
        p.add(pre + "ln1.b", np.zeros(d, dtype=dtype))
        p.add(pre + "ffn.w1", normal(d, d * config.ffn_mult))
        p.add(pre + "ffn.b1", np.zeros(d * config.ffn_mult, dtype=dtype))
        p.add(pre + "ffn.w2", normal(d * config.ffn_mult, d))
        p.add(pre + "ffn.b2", np.zeros(d, dtype=dtype))
        p.add(pre + "ln2.g", np.ones(d, dtype=dtype))
        p.add(pre + "ln2.b", np.zeros(d, dtype=dtype))
    p.add("head.w", normal(d, d))
    p.add("head.b", np.zeros(d, dtype=dtype))
    p.add("head.ln.g", np.ones(d, dtype=dtype))
    p.add("head.ln.b", np.zeros(d, dtype=dtype))
    return p


def new_checkpoint(config, dtype=np.float32):
    return Checkpoint(config, init_params(config, dtype))


# ---------------------------------------------------------------------------
# Forward pass
# ---------------------------------------------------------------------------

def _encoder(params, cfg, x, attn_bias):
    """H = Enc(LayerNorm(x + P)); x is (B, n, D) input features."""
    n = x.shape[1]
    pos = gather_rows(params["emb.pos"], np.arange(n))
    h = layer_norm(add(x, pos), params["emb.ln.g"], params["emb.ln.b"], cfg.ln_eps)
    hd = cfg.dim // cfg.heads
    scale = 1.0 / np.sqrt(hd)
    for i in range(cfg.layers):
        pre = f"layer{i}."
        b = h.shape[0]
        q = add(matmul(h, params[pre + "attn.wq"]), params[pre + "attn.bq"])
        k = add(matmul(h, params[pre + "attn.wk"]), params[pre + "attn.bk"])
        v = add(matmul(h, params[pre + "attn.wv"]), params[pre + "attn.bv"])
        qh = transpose(reshape(q, (b, n, cfg.heads, hd)), (0, 2, 1, 3))
        kh = transpose(reshape(k, (b, n, cfg.heads, hd)), (0, 2, 1, 3))
        vh = transpose(reshape(v, (b, n, cfg.heads, hd)), (0, 2, 1, 3))
        scores = mul(matmul(qh, transpose(kh, (0, 1, 3, 2))), scale)
        if attn_bias is not None:
            scores = add(scores, attn_bias)
        weights = softmax(scores, axis=-1)
        ctx = reshape(transpose(matmul(weights, vh), (0, 2, 1, 3)), (b, n, cfg.dim))
        out = add(matmul(ctx, params[pre + "attn.wo"]), params[pre + "attn.bo"])
        h = layer_norm(add(h, out), params[pre + "ln1.g"], params[pre + "ln1.b"], cfg.ln_eps)
        f = gelu(add(matmul(h, params[pre + "ffn.w1"]), params[pre + "ffn.b1"]))
        f = add(matmul(f, params[pre + "ffn.w2"]), params[pre + "ffn.b2"])
        h = layer_norm(add(h, f), params[pre + "ln2.g"], params[pre + "ln2.b"], cfg.ln_eps)
    return h


def _head(params, cfg, h):
    """Output-representation transform r = LayerNorm(GELU(hW + b))."""
    f = gelu(add(matmul(h, params["head.w"]), params["head.b"]))
    return layer_norm(f, params["head.ln.g"], params["head.ln.b"], cfg.ln_eps)


def _input_matrix(params, cfg, slots, dtype):
    emb = params["emb.word"].data
    x = np.empty((len(slots), cfg.dim), dtype=dtype)
    for i, s in enumerate(slots):
        if isinstance(s, (int, np.integer)):
            if not 0 <= s < cfg.vocab_size:
                raise IndexError(f"token id {s} out of range for vocabulary {cfg.vocab_size}")
            x[i] = emb[s]
        else:
            vec = np.asarray(s)
            if vec.shape != (cfg.dim,):
                raise ConfigError(
                    f"input vector at slot {i} has shape {vec.shape}, model dim is {cfg.dim}")
            x[i] = vec
    return x


def encode(ckpt, slots):
    """Contextual representations for token ids and/or direct input vectors.

    Returns an (n, D) array; one row per slot.
    """
    cfg = ckpt.config
    if len(slots) > cfg.max_len:
        raise LengthError(f"sequence of {len(slots)} exceeds max length {cfg.max_len}")
    if len(slots) == 0:
        raise ContractError("cannot encode an empty sequence")
    with no_grad():
        x = _input_matrix(ckpt.params, cfg, list(slots), ckpt.params["emb.word"].data.dtype)
        h = _encoder(ckpt.params, cfg, Tensor(x[None, :, :]), None)
    return h.data[0]


def encode_batch(ckpt, token_seqs):
    """Batched encode over padded token-id sequences; returns per-sequence H."""
    cfg = ckpt.config
    if not token_seqs:
        return []
    lens = [len(t) for t in token_seqs]
    if max(lens) > cfg.max_len:
        raise LengthError(f"sequence of {max(lens)} exceeds max length {cfg.max_len}")
    dtype = ckpt.params["emb.word"].data.dtype
    b, n = len(token_seqs), max(lens)
    tokens = np.full((b, n), PAD_ID, dtype=np.int64)
    for i, seq in enumerate(token_seqs):
        tokens[i, :len(seq)] = seq
    bias = _attention_bias(tokens, dtype)
    with no_grad():
        x = gather_rows(ckpt.params["emb.word"], tokens)
        h = _encoder(ckpt.params, cfg, x, bias)
    return [h.data[i, :lens[i]] for i in range(b)]


def _attention_bias(tokens, dtype):
    if not (tokens == PAD_ID).any():
        return None
    bias = np.where(tokens == PAD_ID, _NEG_INF, 0.0).astype(dtype)
    return bias[:, None, None, :]


def output_repr(ckpt, h, position):
    """MLM-head transform of one contextual vector; the vector PELT aggregates."""
    if not 0 <= position < h.shape[0]:
        raise IndexError(f"position {position} outside sequence of {h.shape[0]}")
    with no_grad():
        r = _head(ckpt.params, ckpt.config, Tensor(h[position:position + 1]))
    return r.data[0]


def output_repr_all(ckpt, h):
    with no_grad():
        r = _head(ckpt.params, ckpt.config, Tensor(h))
    return r.data


# ---------------------------------------------------------------------------
# Loss and training
# ---------------------------------------------------------------------------

def mlm_loss(params, cfg, tokens, targets):
    """Mean tied-softmax cross entropy over the masked positions.

    ``tokens`` is (B, n) int; ``targets`` is (B, n) int with -1 everywhere
    except masked positions. Gradients flow into the embedding matrix both
    through the input lookup and through the output product.
    """
    tokens = np.asarray(tokens, dtype=np.int64)
    targets = np.asarray(targets, dtype=np.int64)
    if tokens.shape != targets.shape or tokens.ndim != 2:
        raise ShapeError(f"tokens {tokens.shape} and targets {targets.shape} must match, 2-D")
    flat_targets = targets.reshape(-1)
    sel = np.nonzero(flat_targets >= 0)[0]
    if sel.size == 0:
        raise ContractError("mlm loss: batch contains no masked position")
    emb = params["emb.word"]
    bias = _attention_bias(tokens, emb.data.dtype)
    x = gather_rows(emb, tokens)
    h = _encoder(params, cfg, x, bias)
    h_flat = reshape(h, (tokens.shape[0] * tokens.shape[1], cfg.dim))
    h_sel = gather_rows(h_flat, sel)
    r = _head(params, cfg, h_sel)
    logits = matmul(r, transpose(emb))
    return softmax_cross_entropy(logits, flat_targets[sel])


def _lr_schedule(base, step, steps):
    warmup = max(1, steps // 10)
    if step < warmup:
        return base * (step + 1) / warmup
    frac = (step - warmup) / max(1, steps - warmup)
    return base * (1.0 - 0.9 * frac)


@dataclass
class _Prepared:
    tokens: np.ndarray
    is_mention: np.ndarray


def _prepare(sentences):
    prepped = []
    for s in sentences:
        toks = np.asarray(s.tokens, dtype=np.int64)
        mention = np.zeros(len(s.tokens), dtype=bool)
        for m in s.mentions:
            mention[m.start:m.end] = True
        prepped.append(_Prepared(toks, mention))
    return prepped


def _mask_batch(prepped, picks, rng, mask_rate):
    lens = [prepped[i].tokens.size for i in picks]
    n = max(lens)
    b = len(picks)
    tokens = np.full((b, n), PAD_ID, dtype=np.int64)
    targets = np.full((b, n), -1, dtype=np.int64)
    for row, i in enumerate(picks):
        s = prepped[i]
        ln = s.tokens.size
        tokens[row, :ln] = s.tokens
        draw = rng.random(ln)
        chosen = draw < mask_rate
        if not chosen.any():
            chosen[rng.integers(ln)] = True
        targets[row, :ln][chosen] = s.tokens[chosen]
        tokens[row, :ln][chosen] = MASK_ID
    return tokens, targets


def train_mlm(sentences, config, steps, lr, mask_rate=0.15, seed=0,
              batch_size=32, log_every=100, log=print):
    """Train from scratch; deterministic for a fixed (seed, thread count)."""
    if not sentences:
        raise ContractError("train corpus is empty")
    params = init_params(config, np.float32)
    prepped = _prepare(sentences)
    for p in prepped:
        if p.tokens.size > config.max_len:
            raise LengthError(f"training sentence of {p.tokens.size} tokens exceeds "
                              f"max length {config.max_len}")
    rng = np.random.default_rng(seed)
    adam = Adam(params, lr)
    t0 = time.time()
    recent = []
    last = float("nan")
    for step in range(steps):
        picks = rng.integers(0, len(prepped), size=batch_size)
        tokens, targets = _mask_batch(prepped, picks, rng, mask_rate)
        loss = mlm_loss(params, config, tokens, targets)
        last = loss.item()
        if not np.isfinite(last):
            raise DivergenceError(step)
        params.zero_grad()
        loss.backward()
        adam.step(lr=_lr_schedule(lr, step, steps))
        recent.append(last)
        if log_every and (step + 1) % log_every == 0:
            mean = sum(recent) / len(recent)
            log(f"step {step + 1:>6}/{steps}  loss {mean:7.4f}  "
                f"lr {_lr_schedule(lr, step, steps):.2e}  {time.time() - t0:6.1f}s")
            recent = []
    return Checkpoint(config, params, steps, seed, last)


# ---------------------------------------------------------------------------
# Prediction
# ---------------------------------------------------------------------------

def rank_tokens(ckpt, r, k, candidates=None):
    """Top-k token ids by tied-softmax logit; ties broken toward lower id."""
    emb = ckpt.params["emb.word"].data
    if candidates is None:
        ids = np.arange(emb.shape[0])
        logits = emb @ r
    else:
        ids = np.asarray(sorted(set(int(c) for c in candidates)), dtype=np.int64)
        logits = emb[ids] @ r
    k = min(k, ids.size)
    order = np.lexsort((ids, -logits))[:k]
    return [(int(ids[j]), float(logits[j])) for j in order]


def predict_topk(ckpt, tokens, position, k, candidates=None):
    """Ranked (token id, logit) pairs for the MASK at ``position``."""
    tokens = list(tokens)
    if not 0 <= position < len(tokens):
        raise IndexError(f"position {position} outside sequence of {len(tokens)}")
    if tokens[position] != MASK_ID:
        raise ContractError(f"position {position} does not hold [MASK]")
    h = encode(ckpt, tokens)
    r = output_repr(ckpt, h, position)
    return rank_tokens(ckpt, r, k, candidates)
