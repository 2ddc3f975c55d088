"""Transformer encoder with a pooled [CLS] relation classifier.

Parameters live in a flat ``dict`` of numpy arrays keyed by dotted names
(``"layers.0.attn.query.weight"`` ...).  Projection matrices inside the
encoder are stored (in, out) and applied as ``x @ W``; the pooler and
classifier are stored (out, in) and applied as ``W @ x``.

The forward pass is batched over (B, L, d) arrays and returns a
:class:`ForwardCache` in train mode for :func:`docrel.training.backward`.
"""

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels as K
from .errors import ConfigError, NumericError

TRAIN, EVAL = "train", "eval"


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    n_relations: int
    d_model: int = 768
    n_layers: int = 12
    n_heads: int = 12
    d_ff: int = 0  # 0 -> 4 * d_model
    max_len: int = 512
    n_segments: int = 2
    dropout_p: float = 0.3
    layernorm_eps: float = 1e-12

    def __post_init__(self):
        if self.d_ff == 0:
            object.__setattr__(self, "d_ff", 4 * self.d_model)
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff", "max_len", "n_segments"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.n_relations < 2:
            raise ConfigError("n_relations must be >= 2")
        if self.d_model % self.n_heads:
            raise ConfigError(f"d_model={self.d_model} not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ConfigError("dropout_p must lie in [0, 1)")
        if self.layernorm_eps <= 0:
            raise ConfigError("layernorm_eps must be positive")

    @property
    def d_head(self):
        return self.d_model // self.n_heads

    def to_dict(self):
        return asdict(self)


def parameter_shapes(cfg):
    """Ordered mapping name -> shape for every learnable tensor."""
    d, f = cfg.d_model, cfg.d_ff
    shapes = {
        "embeddings.word": (cfg.vocab_size, d),
        "embeddings.position": (cfg.max_len, d),
        "embeddings.segment": (cfg.n_segments, d),
    }
    for i in range(cfg.n_layers):
        p = f"layers.{i}."
        for proj in ("query", "key", "value", "output"):
            shapes[p + f"attn.{proj}.weight"] = (d, d)
            shapes[p + f"attn.{proj}.bias"] = (d,)
        shapes[p + "attn_norm.gain"] = (d,)
        shapes[p + "attn_norm.bias"] = (d,)
        shapes[p + "ffn.in.weight"] = (d, f)
        shapes[p + "ffn.in.bias"] = (f,)
        shapes[p + "ffn.out.weight"] = (f, d)
        shapes[p + "ffn.out.bias"] = (d,)
        shapes[p + "ffn_norm.gain"] = (d,)
        shapes[p + "ffn_norm.bias"] = (d,)
    shapes["pooler.weight"] = (d, d)
    shapes["pooler.bias"] = (d,)
    shapes["classifier.weight"] = (cfg.n_relations, d)
    shapes["classifier.bias"] = (cfg.n_relations,)
    return shapes


def is_encoder_param(name):
    return name.startswith(("embeddings.", "layers."))


def _truncated_normal(rng, shape, std, dtype):
    x = rng.standard_normal(shape)
    bad = np.abs(x) > 2.0
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > 2.0
    return (x * std).astype(dtype)


def init_params(cfg, seed=0, dtype=np.float32, std=0.02):
    """Truncated-normal weights (|z| <= 2), zero biases, unit LayerNorm gains."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(cfg).items():
        if name.endswith(".gain"):
            params[name] = np.ones(shape, dtype=dtype)
        elif name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            params[name] = _truncated_normal(rng, shape, std, dtype)
    return params


def cast_params(params, dtype):
    return {k: v.astype(dtype) for k, v in params.items()}


# --------------------------------------------------------------------------- #
# Building blocks
# --------------------------------------------------------------------------- #
def embed(token_ids, position_ids, segment_ids, params):
    """Sum of word, position and segment embeddings; works on (L,) or (B, L) ids."""
    tables = (
        ("embeddings.word", token_ids),
        ("embeddings.position", position_ids),
        ("embeddings.segment", segment_ids),
    )
    out = None
    for name, ids in tables:
        table = params[name]
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
            raise IndexError(f"{name}: id out of range [0, {table.shape[0]})")
        rows = table[ids]
        out = rows if out is None else out + rows
    return out


def layer_norm(x, gain, bias, eps=1e-12):
    """Normalise over the last axis with the biased variance, then scale and shift."""
    x = np.asarray(x)
    return K.layer_norm_forward(x, np.asarray(gain, dtype=x.dtype), np.asarray(bias, dtype=x.dtype), eps)[0]


def _layer_params(params, i):
    p = f"layers.{i}."
    return {k[len(p):]: v for k, v in params.items() if k.startswith(p)}


def _split_heads(x, n_heads):
    b, l, d = x.shape
    return x.reshape(b, l, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, l, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, l, h * dh)


def _encoder_layer(h, lp, key_valid, n_heads, eps):
    """One post-norm block over (B, L, d).  Returns (out, cache)."""
    q = h @ lp["attn.query.weight"] + lp["attn.query.bias"]
    k = h @ lp["attn.key.weight"] + lp["attn.key.bias"]
    v = h @ lp["attn.value.weight"] + lp["attn.value.bias"]
    qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
    scale = 1.0 / math.sqrt(qh.shape[-1])
    scores = (qh @ kh.transpose(0, 1, 3, 2)) * scale
    probs = K.masked_softmax(scores, key_valid)
    ctx = _merge_heads(probs @ vh)
    attn_out = ctx @ lp["attn.output.weight"] + lp["attn.output.bias"]

    h1 = attn_out + h
    h2, xhat1, rstd1 = K.layer_norm_forward(h1, lp["attn_norm.gain"], lp["attn_norm.bias"], eps)
    f1 = h2 @ lp["ffn.in.weight"] + lp["ffn.in.bias"]
    g = K.gelu_forward(f1)
    f2 = g @ lp["ffn.out.weight"] + lp["ffn.out.bias"]
    out, xhat2, rstd2 = K.layer_norm_forward(f2 + h2, lp["ffn_norm.gain"], lp["ffn_norm.bias"], eps)
    cache = LayerCache(h, qh, kh, vh, probs, ctx, h2, xhat1, rstd1, f1, g, xhat2, rstd2, scale)
    return out, cache


def encoder_layer(h, layer_params, mask=None, n_heads=1, eps=1e-12):
    """Apply one encoder block to ``h`` of shape (L, d) or (B, L, d).

    ``mask`` marks real (1/True) versus padding (0/False) key positions.
    Returns ``(out, attention_probs)``.
    """
    h = np.asarray(h)
    single = h.ndim == 2
    hb = h[None] if single else h
    if mask is None:
        key_valid = np.ones(hb.shape[:2], dtype=bool)
    else:
        key_valid = np.asarray(mask, dtype=bool).reshape(hb.shape[:2])
    out, cache = _encoder_layer(hb, layer_params, key_valid, n_heads, eps)
    if single:
        return out[0], cache.probs[0]
    return out, cache.probs


def pool(h, params):
    """tanh(W_p h[0] + b_p): only the first ([CLS]) row is used.  ``h`` is (L, d) or (B, L, d)."""
    cls = np.asarray(h)[..., 0, :]
    return np.tanh(cls @ params["pooler.weight"].T + params["pooler.bias"])


def dropout_mask(shape, p, rng, dtype):
    """Inverted-dropout multiplier: 0 with probability p, 1/(1-p) otherwise."""
    if p == 0.0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= p
    return (keep / (1.0 - p)).astype(dtype)


def classify(c, params, mode=EVAL, rng=None, p=0.3, mask=None):
    """Logits W_r·dropout(c) + b_r.  Dropout only in train mode.

    Returns ``(logits, mask)`` where ``mask`` is the multiplier that was
    applied (``None`` in eval mode).
    """
    c = np.asarray(c)
    if mode == TRAIN:
        if mask is None:
            if rng is None:
                raise ValueError("train mode needs an rng")
            mask = dropout_mask(c.shape, p, rng, c.dtype)
        r = c * mask
    elif mode == EVAL:
        mask = None
        r = c
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return r @ params["classifier.weight"].T + params["classifier.bias"], mask


def softmax(logits):
    logits = np.asarray(logits)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logit")
    return K.softmax_rows(logits)


def predict(logits):
    """Return ``(relation_id, probabilities)``; ties go to the smallest index."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1 or logits.shape[0] < 2:
        raise ValueError("predict expects a vector of at least two logits")
    probs = softmax(logits)
    return int(np.argmax(probs)), probs


# --------------------------------------------------------------------------- #
# Full forward pass
# --------------------------------------------------------------------------- #
@dataclass
class LayerCache:
    inp: np.ndarray
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    probs: np.ndarray
    ctx: np.ndarray
    h2: np.ndarray
    xhat1: np.ndarray
    rstd1: np.ndarray
    f1: np.ndarray
    g: np.ndarray
    xhat2: np.ndarray
    rstd2: np.ndarray
    scale: float


@dataclass
class ForwardCache:
    token_ids: np.ndarray
    position_ids: np.ndarray
    segment_ids: np.ndarray
    key_valid: np.ndarray
    layers: list
    cls_state: np.ndarray
    pooled: np.ndarray
    dropout: np.ndarray
    dropped: np.ndarray
    logits: np.ndarray
    shapes: dict = field(default_factory=dict)


def forward(batch, params, cfg, mode=EVAL, rng=None, dropout=None):
    """Run the classifier on a :class:`docrel.encoding.Batch`.

    Returns ``(logits, cache)``; ``cache`` is ``None`` in eval mode.  A fixed
    ``dropout`` multiplier may be supplied to make train-mode passes
    reproducible (gradient checks).
    """
    h = embed(batch.token_ids, batch.position_ids, batch.segment_ids, params)
    key_valid = np.asarray(batch.attention_mask, dtype=bool)
    caches = []
    for i in range(cfg.n_layers):
        h, lc = _encoder_layer(h, _layer_params(params, i), key_valid, cfg.n_heads, cfg.layernorm_eps)
        caches.append(lc)
    cls_state = h[:, 0, :]
    pooled = pool(h, params)
    logits, mask = classify(pooled, params, mode, rng, cfg.dropout_p, dropout)
    if mode == EVAL:
        return logits, None
    cache = ForwardCache(
        batch.token_ids, batch.position_ids, batch.segment_ids, key_valid, caches,
        cls_state, pooled, mask, pooled * mask, logits,
        {k: v.shape for k, v in params.items()},
    )
    return logits, cache
