"""Classification metrics, probability-averaging ensembles, and reports.

A PredictionSet carries per-sample ids so that predictions from two
models can be averaged only when they describe the same samples in the
same order. Reports are plain dicts ready for ``json.dumps``:

    {n_samples, accuracy,
     macro: {precision, recall, f1, auc},
     per_class: [{name, precision, recall, f1, auc, support, flags}],
     confusion: [[int]]}

Conventions, applied throughout: precision/recall/F1 with a zero
denominator are 0 and the class gets a "*_zero_division" flag; argmax
ties go to the lowest class index; classes without both a positive and
a negative sample are skipped in macro AUC with an "auc_skipped" flag
(their auc is null) but still count as zeros in macro P/R/F1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import autodiff as ad
from .data import Manifest, collate, eval_transform, load_sample, normalize, path_id
from .errors import (
    AlignmentError,
    ConfigError,
    DimensionError,
    MetricError,
    UsageError,
)
from .models import Model

ROW_SUM_TOLERANCE = 1e-5


@dataclass
class PredictionSet:
    """Model outputs over one ordered set of samples."""

    probabilities: np.ndarray  # (N, C), rows sum to 1
    labels: np.ndarray  # (N,) true class indices
    class_names: list
    ids: np.ndarray = field(default=None)  # (N,) stable sample ids

    def __post_init__(self):
        self.probabilities = np.asarray(self.probabilities, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.probabilities.ndim != 2:
            raise DimensionError(
                f"probabilities must be (N, C), got shape {self.probabilities.shape}"
            )
        n, c = self.probabilities.shape
        if len(self.class_names) != c:
            raise DimensionError(
                f"{len(self.class_names)} class names for {c} probability columns"
            )
        if self.labels.shape != (n,):
            raise DimensionError(
                f"labels shape {self.labels.shape} does not match {n} rows"
            )
        if n and (self.labels.min() < 0 or self.labels.max() >= c):
            raise IndexError(f"labels must lie in [0, {c - 1}]")
        if self.ids is None:
            self.ids = np.arange(n, dtype=np.uint64)
        self.ids = np.asarray(self.ids)
        if self.ids.shape != (n,):
            raise DimensionError(f"ids shape {self.ids.shape} does not match {n} rows")
        sums = self.probabilities.sum(axis=1)
        if n and np.abs(sums - 1.0).max() > ROW_SUM_TOLERANCE:
            raise DimensionError(
                f"probability rows must sum to 1 within {ROW_SUM_TOLERANCE}, "
                f"worst deviation {np.abs(sums - 1.0).max():.3g}"
            )

    @property
    def predicted(self) -> np.ndarray:
        """Argmax class per row; ties go to the lowest index."""
        return np.argmax(self.probabilities, axis=1)


def predict(
    model: Model,
    manifest: Manifest,
    records,
    image_size: int = 32,
    batch_size: int = 16,
) -> PredictionSet:
    """Run the classifier over records with the deterministic eval transform."""
    if model.config.head is None:
        raise ConfigError("model has no classification head")
    records = list(records)
    rows = []
    with ad.no_grad():
        for start in range(0, len(records), batch_size):
            chunk = records[start : start + batch_size]
            tensors = [
                normalize(eval_transform(load_sample(manifest, r).pixels, image_size))
                for r in chunk
            ]
            rows.append(model.classify(ad.Tensor(collate(tensors))).data)
    probabilities = (
        np.concatenate(rows, axis=0)
        if rows
        else np.zeros((0, model.config.head.num_classes))
    )
    return PredictionSet(
        probabilities,
        np.array([r.label for r in records], dtype=int),
        list(manifest.class_names),
        np.array([path_id(r.path) for r in records], dtype=np.uint64),
    )


def ensemble_average(a: PredictionSet, b: PredictionSet) -> PredictionSet:
    """Elementwise mean of two aligned prediction sets."""
    if a.probabilities.shape != b.probabilities.shape:
        raise AlignmentError(
            f"prediction shapes differ: {a.probabilities.shape} vs "
            f"{b.probabilities.shape}"
        )
    if list(a.class_names) != list(b.class_names):
        raise AlignmentError("prediction sets name different classes")
    if not np.array_equal(a.ids, b.ids):
        raise AlignmentError("prediction sets cover different samples or orders")
    if not np.array_equal(a.labels, b.labels):
        raise AlignmentError("prediction sets disagree on true labels")
    return PredictionSet(
        (a.probabilities + b.probabilities) / 2.0,
        a.labels.copy(),
        list(a.class_names),
        a.ids.copy(),
    )


# ---------------------------------------------------------------------------
# metrics


def confusion_and_prf(preds: PredictionSet) -> dict:
    """Confusion matrix and precision/recall/F1, per class and macro.

    Returns {confusion, accuracy, precision, recall, f1, support, flags,
    macro: {precision, recall, f1}} with numpy arrays for the per-class
    vectors. Rows of the confusion matrix are true classes, columns are
    predictions.
    """
    c = len(preds.class_names)
    predicted = preds.predicted
    confusion = np.zeros((c, c), dtype=np.int64)
    np.add.at(confusion, (preds.labels, predicted), 1)

    tp = np.diag(confusion).astype(np.float64)
    predicted_count = confusion.sum(axis=0).astype(np.float64)
    support = confusion.sum(axis=1)
    precision = np.zeros(c)
    recall = np.zeros(c)
    f1 = np.zeros(c)
    flags = [[] for _ in range(c)]
    for k in range(c):
        if predicted_count[k] > 0:
            precision[k] = tp[k] / predicted_count[k]
        else:
            flags[k].append("precision_zero_division")
        if support[k] > 0:
            recall[k] = tp[k] / support[k]
        else:
            flags[k].append("recall_zero_division")
        if precision[k] + recall[k] > 0:
            f1[k] = 2.0 * precision[k] * recall[k] / (precision[k] + recall[k])
        else:
            flags[k].append("f1_zero_division")
    n = len(preds.labels)
    return {
        "confusion": confusion,
        "accuracy": float(np.trace(confusion) / n) if n else 0.0,
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "support": support,
        "flags": flags,
        "macro": {
            "precision": float(precision.mean()),
            "recall": float(recall.mean()),
            "f1": float(f1.mean()),
        },
    }


def binary_auc(scores: np.ndarray, positive: np.ndarray):
    """AUC of one score column via the rank statistic, ties mid-ranked.

    Depends on the scores only through their ordering, so any strictly
    increasing rescaling leaves the value unchanged. Returns None when
    either side is empty.
    """
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = int(positive.size) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(np.asarray(scores))
    rank_sum = float(ranks[positive].sum())
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc_per_class(preds: PredictionSet):
    """One-vs-rest AUC per class; None where a class is not evaluable."""
    return [
        binary_auc(preds.probabilities[:, k], preds.labels == k)
        for k in range(len(preds.class_names))
    ]


def roc_auc_macro_ovr(preds: PredictionSet) -> float:
    """Macro-average one-vs-rest AUC over the evaluable classes."""
    aucs = [a for a in auc_per_class(preds) if a is not None]
    if not aucs:
        raise MetricError(
            "no class has both positive and negative samples; AUC undefined"
        )
    return float(np.mean(aucs))


def metrics_report(preds: PredictionSet) -> dict:
    """Full JSON-ready report for one prediction set."""
    prf = confusion_and_prf(preds)
    aucs = auc_per_class(preds)
    included = [a for a in aucs if a is not None]
    if not included:
        raise MetricError(
            "no class has both positive and negative samples; AUC undefined"
        )
    per_class = []
    for k, name in enumerate(preds.class_names):
        flags = list(prf["flags"][k])
        if aucs[k] is None:
            flags.append("auc_skipped")
        per_class.append(
            {
                "name": str(name),
                "precision": float(prf["precision"][k]),
                "recall": float(prf["recall"][k]),
                "f1": float(prf["f1"][k]),
                "auc": None if aucs[k] is None else float(aucs[k]),
                "support": int(prf["support"][k]),
                "flags": flags,
            }
        )
    return {
        "n_samples": int(len(preds.labels)),
        "accuracy": prf["accuracy"],
        "macro": {
            "precision": prf["macro"]["precision"],
            "recall": prf["macro"]["recall"],
            "f1": prf["macro"]["f1"],
            "auc": float(np.mean(included)),
        },
        "per_class": per_class,
        "confusion": prf["confusion"].tolist(),
    }


# ---------------------------------------------------------------------------
# harness


def evaluate(
    models,
    manifest: Manifest,
    split: str = "test",
    ensemble: bool = False,
    image_size: int = 32,
    batch_size: int = 16,
) -> dict:
    """Score one or two models on a manifest split.

    One model returns its report directly. Two models return
    {"models": [report_a, report_b]} and, with ``ensemble`` set, an
    "ensemble" key whose report scores the averaged probabilities.
    """
    models = list(models)
    if len(models) not in (1, 2):
        raise UsageError(f"expected 1 or 2 models, got {len(models)}")
    if ensemble and len(models) != 2:
        raise UsageError("ensemble evaluation needs exactly 2 models")
    records = manifest.split(split)
    for model in models:
        if model.config.head is None:
            raise ConfigError("model has no classification head")
        if model.config.head.num_classes != len(manifest.class_names):
            raise ConfigError(
                f"model has {model.config.head.num_classes} classes but the "
                f"manifest defines {len(manifest.class_names)}"
            )
    sets = [
        predict(m, manifest, records, image_size=image_size, batch_size=batch_size)
        for m in models
    ]
    if len(models) == 1:
        return metrics_report(sets[0])
    report = {"models": [metrics_report(s) for s in sets]}
    if ensemble:
        report["ensemble"] = metrics_report(ensemble_average(sets[0], sets[1]))
    return report
