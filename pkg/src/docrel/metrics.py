"""Precision / recall / F1 / accuracy for relation predictions, and epoch report tables.

The no-relation class (id 0) never counts as an extraction: it contributes
to neither true positives, false positives nor false negatives.  Accuracy
is plain exact match over all instances, NA included.  Any 0/0 is 0.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

NA_ID = 0


def _div(num, den):
    return num / den if den else 0.0


def _f1(p, r):
    return _div(2 * p * r, p + r)


def confusion_counts(predictions, golds, n_classes):
    """Per-class (tp, fp, fn) arrays, NA excluded from all three."""
    pred = np.asarray(predictions, dtype=np.int64)
    gold = np.asarray(golds, dtype=np.int64)
    hit = pred == gold
    tp = np.bincount(pred[hit], minlength=n_classes)
    fp = np.bincount(pred[~hit], minlength=n_classes)
    fn = np.bincount(gold[~hit], minlength=n_classes)
    tp[NA_ID] = fp[NA_ID] = fn[NA_ID] = 0
    return tp, fp, fn


def score(predictions, golds, schema, averaging="micro"):
    """Return ``{"precision", "recall", "f1", "accuracy"}``.

    ``schema`` is a :class:`~docrel.corpus.RelationSchema` or a class count.
    Macro averaging takes the unweighted mean over non-NA relations that occur
    in the predictions or the golds.
    """
    if len(predictions) != len(golds):
        raise InputError(f"length mismatch: {len(predictions)} predictions vs {len(golds)} golds")
    n = len(predictions)
    n_classes = schema if isinstance(schema, int) else len(schema)
    if n:
        n_classes = max(n_classes, int(max(max(predictions), max(golds))) + 1)
    tp, fp, fn = confusion_counts(predictions, golds, n_classes)
    accuracy = _div(sum(int(p == g) for p, g in zip(predictions, golds)), n)
    if averaging == "micro":
        t, f_p, f_n = int(tp.sum()), int(fp.sum()), int(fn.sum())
        p = _div(t, t + f_p)
        r = _div(t, t + f_n)
        return {"precision": p, "recall": r, "f1": _f1(p, r), "accuracy": accuracy}
    if averaging == "macro":
        ps, rs, fs = [], [], []
        for c in range(n_classes):
            if c == NA_ID or tp[c] + fp[c] + fn[c] == 0:
                continue
            pc = _div(int(tp[c]), int(tp[c] + fp[c]))
            rc = _div(int(tp[c]), int(tp[c] + fn[c]))
            ps.append(pc)
            rs.append(rc)
            fs.append(_f1(pc, rc))
        k = len(ps)
        return {
            "precision": _div(sum(ps), k),
            "recall": _div(sum(rs), k),
            "f1": _div(sum(fs), k),
            "accuracy": accuracy,
        }
    raise ValueError(f"unknown averaging {averaging!r}")


@dataclass(frozen=True)
class SplitMetrics:
    precision: float
    recall: float
    f1: float
    accuracy: float
    loss: float


@dataclass(frozen=True)
class EpochReport:
    epoch: int
    splits: dict
    train_step_loss: float = field(default=float("nan"), compare=False)


# --------------------------------------------------------------------------- #
# Formatting
# --------------------------------------------------------------------------- #
_SPLIT_TITLES = {"train": "Train", "val": "Val", "test": "Test"}


def pct(value):
    """Fraction -> percent string with one decimal (0.338 -> '33.8')."""
    return f"{round(value * 100.0, 1):.1f}"


def format_report(reports):
    """Plain-text table with P/R/F1/Loss/Acc per split, values scaled by 100."""
    if not reports:
        raise ValueError("no reports to format")
    splits = []
    for rep in reports:
        for s in rep.splits:
            if s not in splits:
                splits.append(s)
    header = ["Epoch"]
    for s in splits:
        title = _SPLIT_TITLES.get(s, s)
        header += [f"{col} ({title})" for col in ("P", "R", "F1", "Loss", "Acc")]
    rows = [header]
    for rep in reports:
        row = [str(rep.epoch)]
        for s in splits:
            m = rep.splits.get(s)
            if m is None:
                row += ["-"] * 5
            else:
                row += [pct(m.precision), pct(m.recall), pct(m.f1), pct(m.loss), pct(m.accuracy)]
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    return "\n".join("  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows)


def plot_reports(reports, path):
    """Write loss and F1 curves per split to an image file (needs matplotlib)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    epochs = [r.epoch for r in reports]
    fig, (ax_loss, ax_f1) = plt.subplots(1, 2, figsize=(9, 3.5))
    for split in {s for r in reports for s in r.splits}:
        pts = [(r.epoch, r.splits[split]) for r in reports if split in r.splits]
        ax_loss.plot([e for e, _ in pts], [m.loss for _, m in pts], marker="o", label=split)
        ax_f1.plot([e for e, _ in pts], [m.f1 for _, m in pts], marker="o", label=split)
    ax_loss.set_title("Loss")
    ax_f1.set_title("F1")
    for ax in (ax_loss, ax_f1):
        ax.set_xlabel("epoch")
        ax.set_xticks(epochs)
        ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


# --------------------------------------------------------------------------- #
# Prediction files
# --------------------------------------------------------------------------- #
def read_predictions(path, schema):
    """Read ``{doc_id, head_idx, tail_idx, relation}`` lines into a dict keyed by pair.

    Gold DocRED-style lines (``{"title", "h", "t", "r"}``) are accepted too.
    Relations may be names or integer ids.
    """
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    if text.lstrip().startswith("["):
        # a whole DocRED file: flatten its labels
        try:
            docs = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InputError(f"{path}: {exc}") from exc
        records = [
            {"title": d.get("title", i), "h": lab["h"], "t": lab["t"], "r": lab["r"]}
            for i, d in enumerate(docs)
            for lab in d.get("labels", ())
        ]
    else:
        records = text.splitlines()
    out = {}
    for lineno, line in enumerate(records):
        if isinstance(line, str) and not line.strip():
            continue
        try:
            rec = json.loads(line) if isinstance(line, str) else line
            key = (
                str(rec.get("doc_id", rec.get("title"))),
                int(rec["head_idx"] if "head_idx" in rec else rec["h"]),
                int(rec["tail_idx"] if "tail_idx" in rec else rec["t"]),
            )
            rel = rec["relation"] if "relation" in rec else rec["r"]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise InputError(f"{path}: line {lineno}: {exc}") from exc
        rel_id = rel if isinstance(rel, int) else schema.lookup(rel)
        out.setdefault(key, set()).add(rel_id)
    return out


def score_prediction_files(pred_path, gold_path, schema):
    """Micro P/R/F1 over extracted (doc, head, tail, relation) facts; NA facts ignored."""
    pred = read_predictions(pred_path, schema)
    gold = read_predictions(gold_path, schema)
    pred_facts = {(k, r) for k, rs in pred.items() for r in rs if r != NA_ID}
    gold_facts = {(k, r) for k, rs in gold.items() for r in rs if r != NA_ID}
    tp = len(pred_facts & gold_facts)
    p = _div(tp, len(pred_facts))
    r = _div(tp, len(gold_facts))
    return {"precision": p, "recall": r, "f1": _f1(p, r)}
