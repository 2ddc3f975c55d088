"""Loss, hand-written reverse-mode gradients, Adam, and the epoch loop."""

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np

from . import _kernels as K
from .encoding import collate
from .errors import ConfigError, NumericError
from .metrics import EpochReport, SplitMetrics, score
from .model import EVAL, TRAIN, _layer_params, forward, init_params, is_encoder_param

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    epochs: int = 3
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip_norm: float = 1.0
    seed: int = 0
    freeze_encoder: bool = False
    init_std: float = 0.02

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be > 0")


# --------------------------------------------------------------------------- #
# Loss
# --------------------------------------------------------------------------- #
def _check_finite(logits):
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")


def log_softmax(logits):
    _check_finite(logits)
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits, gold):
    """-log softmax(logits)[gold].  Vector input gives a scalar; (B, C) input gives the batch mean."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim == 1:
        return float(-log_softmax(logits)[gold])
    gold = np.asarray(gold)
    return float(-log_softmax(logits)[np.arange(len(gold)), gold].mean())


# --------------------------------------------------------------------------- #
# Backward
# --------------------------------------------------------------------------- #
def _sum_rows(x):
    return x.reshape(-1, x.shape[-1]).sum(axis=0)


def _outer(a, b):
    """sum over leading axes of a^T b, for (..., m) and (..., n) -> (m, n)."""
    return a.reshape(-1, a.shape[-1]).T @ b.reshape(-1, b.shape[-1])


def _layer_backward(dout, lc, lp, grads, prefix):
    dh3, grads[prefix + "ffn_norm.gain"], grads[prefix + "ffn_norm.bias"] = K.layer_norm_backward(
        dout, lc.xhat2, lc.rstd2, lp["ffn_norm.gain"]
    )
    grads[prefix + "ffn.out.weight"] = _outer(lc.g, dh3)
    grads[prefix + "ffn.out.bias"] = _sum_rows(dh3)
    dg = dh3 @ lp["ffn.out.weight"].T
    df1 = K.gelu_backward(lc.f1, dg)
    grads[prefix + "ffn.in.weight"] = _outer(lc.h2, df1)
    grads[prefix + "ffn.in.bias"] = _sum_rows(df1)
    dh2 = dh3 + df1 @ lp["ffn.in.weight"].T

    dh1, grads[prefix + "attn_norm.gain"], grads[prefix + "attn_norm.bias"] = K.layer_norm_backward(
        dh2, lc.xhat1, lc.rstd1, lp["attn_norm.gain"]
    )
    grads[prefix + "attn.output.weight"] = _outer(lc.ctx, dh1)
    grads[prefix + "attn.output.bias"] = _sum_rows(dh1)
    dctx = dh1 @ lp["attn.output.weight"].T
    b, l, d = dctx.shape
    n_heads = lc.q.shape[1]
    dctx_h = dctx.reshape(b, l, n_heads, d // n_heads).transpose(0, 2, 1, 3)
    dprobs = dctx_h @ lc.v.transpose(0, 1, 3, 2)
    dv = lc.probs.transpose(0, 1, 3, 2) @ dctx_h
    dscores = K.softmax_backward(lc.probs, dprobs) * lc.scale
    dq = dscores @ lc.k
    dk = dscores.transpose(0, 1, 3, 2) @ lc.q

    dx = dh1
    for name, dt in (("query", dq), ("key", dk), ("value", dv)):
        dflat = dt.transpose(0, 2, 1, 3).reshape(b, l, d)
        grads[prefix + f"attn.{name}.weight"] = _outer(lc.inp, dflat)
        grads[prefix + f"attn.{name}.bias"] = _sum_rows(dflat)
        dx = dx + dflat @ lp[f"attn.{name}.weight"].T
    return dx


def backward(cache, gold, params, freeze_encoder=False):
    """Gradients of the batch-mean cross entropy with respect to every tensor in ``params``.

    ``cache`` must come from a train-mode :func:`docrel.model.forward` on the
    same parameters.  With ``freeze_encoder`` the embedding and encoder-layer
    gradients are exact zeros.
    """
    if cache is None:
        raise ValueError("backward needs a train-mode forward cache")
    for name, arr in params.items():
        if cache.shapes.get(name) != arr.shape:
            raise ValueError(f"cache/parameter mismatch at {name!r}")
    gold = np.atleast_1d(np.asarray(gold))
    logits = cache.logits
    b = logits.shape[0]
    if gold.shape != (b,):
        raise ValueError("gold labels do not match the batch")

    dlogits = np.exp(log_softmax(logits)).astype(logits.dtype)
    dlogits[np.arange(b), gold] -= 1.0
    dlogits /= b

    grads = {}
    grads["classifier.weight"] = dlogits.T @ cache.dropped
    grads["classifier.bias"] = dlogits.sum(axis=0)
    dpooled = (dlogits @ params["classifier.weight"]) * cache.dropout
    dz = dpooled * (1.0 - cache.pooled * cache.pooled)
    grads["pooler.weight"] = dz.T @ cache.cls_state
    grads["pooler.bias"] = dz.sum(axis=0)

    if freeze_encoder:
        for name, arr in params.items():
            grads.setdefault(name, np.zeros_like(arr))
        return grads

    dcls = dz @ params["pooler.weight"]
    dh = np.zeros_like(cache.layers[-1].inp)
    dh[:, 0, :] = dcls
    for i in reversed(range(len(cache.layers))):
        dh = _layer_backward(dh, cache.layers[i], _layer_params(params, i), grads, f"layers.{i}.")

    d = dh.shape[-1]
    flat = dh.reshape(-1, d)
    for name, ids in (
        ("embeddings.word", cache.token_ids),
        ("embeddings.position", cache.position_ids),
        ("embeddings.segment", cache.segment_ids),
    ):
        g = np.zeros_like(params[name])
        np.add.at(g, np.asarray(ids).reshape(-1), flat)
        grads[name] = g
    return {name: grads[name].astype(params[name].dtype, copy=False) for name in params}


# --------------------------------------------------------------------------- #
# Optimizer
# --------------------------------------------------------------------------- #
@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(p) for k, p in params.items()}, {k: np.zeros_like(p) for k, p in params.items()})


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))


def clip_by_global_norm(grads, max_norm):
    norm = global_norm(grads)
    if max_norm is None or max_norm <= 0 or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {k: g * g.dtype.type(scale) for k, g in grads.items()}, norm


def optimizer_step(params, grads, state, config, frozen=()):
    """Clip to ``config.grad_clip_norm`` then apply one bias-corrected Adam update in place.

    Tensors named in ``frozen`` are left untouched.
    """
    grads, _ = clip_by_global_norm(grads, config.grad_clip_norm)
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in {name!r} at step {state.step + 1}")
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, g in grads.items():
        if name in frozen:
            continue
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = config.learning_rate * (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
        params[name] -= update.astype(params[name].dtype, copy=False)
    return params, state


# --------------------------------------------------------------------------- #
# Evaluation and epoch loop
# --------------------------------------------------------------------------- #
def iter_batches(items, batch_size, order=None):
    order = range(len(items)) if order is None else order
    order = list(order)
    for start in range(0, len(order), batch_size):
        yield [items[i] for i in order[start:start + batch_size]]


def evaluate(items, params, model_config, schema=None, batch_size=64, averaging="micro", return_probs=False):
    """Eval-mode metrics over encoded instances.  Returns :class:`SplitMetrics` (and probabilities)."""
    preds, golds, losses, probs_all = [], [], [], []
    for chunk in iter_batches(items, batch_size):
        batch = collate(chunk)
        logits, _ = forward(batch, params, model_config, EVAL)
        logp = log_softmax(logits.astype(np.float64))
        losses.append(-logp[np.arange(len(chunk)), batch.relation_ids])
        preds.extend(int(i) for i in np.argmax(logp, axis=-1))
        golds.extend(int(g) for g in batch.relation_ids)
        if return_probs:
            probs_all.append(np.exp(logp))
    n_relations = model_config.n_relations
    s = score(preds, golds, schema if schema is not None else n_relations, averaging)
    metrics = SplitMetrics(s["precision"], s["recall"], s["f1"], s["accuracy"], float(np.concatenate(losses).mean()))
    if return_probs:
        return metrics, np.concatenate(probs_all), preds
    return metrics


def train(instances, val_instances, model_config, train_config, params=None, schema=None,
          dtype=np.float32, on_epoch_end=None, on_step=None):
    """Train on encoded instances; returns ``(params, reports)``.

    Each epoch reshuffles with the seeded generator, runs every batch (the
    last one may be partial), then records eval-mode metrics for the
    training set and, if given, the validation set.  ``on_epoch_end(epoch,
    params, report)`` is called after each epoch (checkpointing, logging).
    """
    if not instances:
        raise ConfigError("empty training set")
    rng = np.random.default_rng(train_config.seed)
    if params is None:
        params = init_params(model_config, seed=train_config.seed, dtype=dtype, std=train_config.init_std)
    frozen = frozenset(k for k in params if is_encoder_param(k)) if train_config.freeze_encoder else frozenset()
    state = AdamState.zeros_like(params)
    reports = []
    for epoch in range(1, train_config.epochs + 1):
        order = rng.permutation(len(instances))
        step_losses = []
        for chunk in iter_batches(instances, train_config.batch_size, order):
            batch = collate(chunk)
            logits, cache = forward(batch, params, model_config, TRAIN, rng)
            step_losses.append(cross_entropy(logits, batch.relation_ids))
            grads = backward(cache, batch.relation_ids, params, train_config.freeze_encoder)
            optimizer_step(params, grads, state, train_config, frozen)
            if on_step is not None:
                on_step(state.step, step_losses[-1])
        splits = {"train": evaluate(instances, params, model_config, schema)}
        if val_instances:
            splits["val"] = evaluate(val_instances, params, model_config, schema)
        report = EpochReport(epoch, splits, train_step_loss=float(np.mean(step_losses)))
        reports.append(report)
        log.info("epoch %d: %s", epoch, {k: round(v.f1, 4) for k, v in splits.items()})
        if on_epoch_end is not None:
            on_epoch_end(epoch, params, report)
    return params, reports


def write_log_records(fh, report):
    """Append one JSON line per split of ``report`` to an open text file."""
    for split, m in report.splits.items():
        rec = {"epoch": report.epoch, "split": split, **asdict(m)}
        fh.write(json.dumps(rec, sort_keys=False) + "\n")
