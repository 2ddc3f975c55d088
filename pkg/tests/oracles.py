"""Independent reference computations used as test oracles.

Nothing here imports the code paths it checks (beyond calling the loss
as a black box for finite differences).
"""

import random
from collections import Counter

import numpy as np

from docrel.encoding import EncodedInput
from docrel.model import dropout_mask, forward
from docrel.training import cross_entropy


def expected_doc_tokens(n, m1, m2, max_len):
    """Document tokens kept: whatever is left of max_len after entities and 4 specials."""
    room = max_len - m1 - m2 - 4
    return n if n <= room else room


def numerical_gradients(params, batch, cfg, dropout, h=1e-5):
    """Central differences of the batch-mean loss, element by element."""
    def loss():
        logits, _ = forward(batch, params, cfg, "train", dropout=dropout)
        return cross_entropy(logits, batch.relation_ids)

    grads = {}
    for name, arr in params.items():
        num = np.zeros_like(arr)
        flat = arr.reshape(-1)
        out = num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss()
            flat[i] = orig - h
            down = loss()
            flat[i] = orig
            out[i] = (up - down) / (2 * h)
        grads[name] = num
    return grads


def relative_error(analytic, numeric, abs_floor=1e-8):
    """||a - n|| / max(||a||, ||n||); tensors whose gradients are both below
    ``abs_floor`` everywhere (exactly-zero true gradient, e.g. attention key
    biases) are judged on the absolute difference alone."""
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if np.max(np.abs(analytic)) < abs_floor and np.max(np.abs(numeric)) < abs_floor:
        return 0.0 if diff < abs_floor else float("inf")
    return diff / scale


def gradcheck_batch(cfg, seed=0, lengths=(12, 9, 7)):
    """A padded batch of random encoded inputs at full ``cfg.max_len`` width."""
    from docrel.encoding import collate

    rng = np.random.default_rng(seed)
    items = []
    L = cfg.max_len
    for i, n_real in enumerate(lengths):
        n_doc = n_real - 5
        seg = [0] * (n_doc + 1) + [1] * (L - n_doc - 1)
        mask = [1] * n_real + [0] * (L - n_real)
        items.append(EncodedInput(tuple(int(t) for t in rng.integers(0, cfg.vocab_size, L)),
                                  tuple(range(L)), tuple(seg), tuple(mask), i % cfg.n_relations))
    batch = collate(items, L)
    drop = dropout_mask((len(items), cfg.d_model), cfg.dropout_p, rng, np.float64)
    return batch, drop


def brute_force_prf(predictions, golds, na=0):
    """Micro and macro P/R/F1 by explicit per-instance counting with Counters."""
    tp, fp, fn = Counter(), Counter(), Counter()
    for p, g in zip(predictions, golds):
        if p == g:
            if p != na:
                tp[p] += 1
        else:
            if p != na:
                fp[p] += 1
            if g != na:
                fn[g] += 1

    def prf(t, f_p, f_n):
        p = t / (t + f_p) if t + f_p else 0.0
        r = t / (t + f_n) if t + f_n else 0.0
        f = 2 * p * r / (p + r) if p + r else 0.0
        return p, r, f

    micro = prf(sum(tp.values()), sum(fp.values()), sum(fn.values()))
    classes = sorted((set(predictions) | set(golds)) - {na})
    per = [prf(tp[c], fp[c], fn[c]) for c in classes]
    if per:
        macro = tuple(sum(x[i] for x in per) / len(per) for i in range(3))
    else:
        macro = (0.0, 0.0, 0.0)
    acc = sum(p == g for p, g in zip(predictions, golds)) / len(golds) if golds else 0.0
    return micro, macro, acc


def separable_corpus(n_instances=32, n_relations=4, vocab_size=50, seed=0, max_len=12):
    """Synthetic encoded instances that are separable by construction.

    The non-special vocabulary is cut into ``n_relations`` disjoint pools and
    every document/head/tail token of a relation-r instance comes from pool r.
    Relations cycle 0, 1, ..., so classes are balanced.
    """
    rnd = random.Random(seed)
    pool = (vocab_size - 4) // n_relations
    items = []
    for i in range(n_instances):
        rel = i % n_relations
        lo = 4 + rel * pool
        n_doc = rnd.randint(2, max_len - 7)
        doc = [rnd.randrange(lo, lo + pool) for _ in range(n_doc)]
        tokens = [2, *doc, 3, rnd.randrange(lo, lo + pool), 3, rnd.randrange(lo, lo + pool), 3]
        L = len(tokens)
        seg = [0] * (n_doc + 1) + [1] * (L - n_doc - 1)
        items.append(EncodedInput(tuple(tokens), tuple(range(L)), tuple(seg), (1,) * L, rel))
    return items


def pool_vote(item, n_relations=4, vocab_size=50):
    """Label an instance by which token pool its non-special tokens fall in."""
    pool = (vocab_size - 4) // n_relations
    votes = Counter((t - 4) // pool for t in item.token_ids if t >= 4)
    return votes.most_common(1)[0][0]
