"""Downstream scoring of a selection: train on the picked instances, test on the rest."""

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import cdist

from .selection import select
from .solver import fit_variant

log = logging.getLogger(__name__)

CLASSIFIERS = ("one-nn", "nearest-centroid")
SWEEP_COLUMNS = ("feature_ratio", "instance_ratio", "acc", "f1", "repeats", "seed")


def accuracy(y_true, y_pred):
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    return float(np.count_nonzero(y_true == y_pred)) / y_true.size


def per_class_scores(y_true, y_pred, classes=None):
    """Precision, recall and F1 per class; classes default to those seen in either array."""
    y_true, y_pred = np.asarray(y_true), np.asarray(y_pred)
    if classes is None:
        classes = np.unique(np.concatenate([y_true, y_pred]))
    out = {}
    for c in classes:
        tp = np.count_nonzero((y_pred == c) & (y_true == c))
        n_pred = np.count_nonzero(y_pred == c)
        n_true = np.count_nonzero(y_true == c)
        p = tp / n_pred if n_pred else 0.0
        r = tp / n_true if n_true else 0.0
        f = 2 * p * r / (p + r) if p + r > 0 else 0.0
        out[c.item() if hasattr(c, "item") else c] = (p, r, f)
    return out


def macro_f1(y_true, y_pred, classes=None):
    scores = per_class_scores(y_true, y_pred, classes)
    return float(np.mean([f for _, _, f in scores.values()]))


def predict(train_X, train_y, test_X, classifier="one-nn"):
    """Rows are samples. Ties go to the lowest training index / class order."""
    train_y = np.asarray(train_y)
    if classifier == "one-nn":
        d = cdist(test_X, train_X, "sqeuclidean")
        return train_y[np.argmin(d, axis=1)]
    if classifier == "nearest-centroid":
        classes = np.unique(train_y)
        cents = np.vstack([train_X[train_y == c].mean(axis=0) for c in classes])
        return classes[np.argmin(cdist(test_X, cents, "sqeuclidean"), axis=1)]
    raise ValueError(f"unknown classifier {classifier!r}; choose from {CLASSIFIERS}")


@dataclass
class EvalReport:
    acc: float
    f1: float
    per_class: dict
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "acc": self.acc,
            "f1": self.f1,
            "per_class": {str(k): {"precision": p, "recall": r, "f1": f}
                          for k, (p, r, f) in self.per_class.items()},
            "config": self.config,
        }


def evaluate(ds, sel, classifier="one-nn"):
    """Score a selection on labelled data.

    The dataset is restricted to the selected features (concatenated over
    views), the classifier is fit on the selected instances and the report
    covers the unselected instances only.
    """
    if ds.labels is None:
        raise ValueError("evaluation needs labels")
    y = np.asarray(ds.labels)
    train = np.asarray(sel.selected_instances, dtype=int)
    if train.size == 0:
        raise ValueError("selection contains no instances")
    test = np.setdiff1d(np.arange(ds.n), train)
    if test.size == 0:
        raise ValueError("every instance was selected; nothing left to evaluate")
    blocks = [X[np.asarray(f, dtype=int)] for X, f in zip(ds.views, sel.selected_features) if len(f)]
    Z = np.vstack(blocks).T
    missing = sorted(set(np.unique(y[test]).tolist()) - set(np.unique(y[train]).tolist()))
    if missing:
        msg = f"classes {missing} have no selected training instance; their recall is 0"
        warnings.warn(msg, stacklevel=2)
        log.warning(msg)
    pred = predict(Z[train], y[train], Z[test], classifier)
    per_class = per_class_scores(y[test], pred)
    return EvalReport(
        acc=accuracy(y[test], pred),
        f1=float(np.mean([f for _, _, f in per_class.values()])),
        per_class=per_class,
        config={"feature_ratio": sel.ratios[0], "instance_ratio": sel.ratios[1],
                "classifier": classifier},
    )


def _sweep_one(args):
    ds, hp, variant, feature_ratios, instance_ratios, classifier = args
    state, _ = fit_variant(ds.unlabeled(), hp, variant)
    out = {}
    for fr in feature_ratios:
        for ir in instance_ratios:
            rep = evaluate(ds, select(state, fr, ir, hp.epsilon), classifier)
            out[(fr, ir)] = (rep.acc, rep.f1)
    return out


def ratio_sweep(ds, hp, feature_ratios, instance_ratios, repeats=1, classifier="one-nn",
                variant="full", jobs=1):
    """Grid of averaged (acc, f1) over feature/instance ratios.

    Repeat ``k`` refits with seed ``hp.seed + k``; each grid cell reuses the
    fit of its repeat. Rows come back in grid order regardless of ``jobs``.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    feature_ratios = [float(x) for x in feature_ratios]
    instance_ratios = [float(x) for x in instance_ratios]
    tasks = [(ds, replace(hp, seed=hp.seed + k), variant, feature_ratios, instance_ratios, classifier)
             for k in range(repeats)]
    if jobs > 1 and repeats > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            runs = list(ex.map(_sweep_one, tasks))
    else:
        runs = [_sweep_one(t) for t in tasks]
    rows = []
    for fr in feature_ratios:
        for ir in instance_ratios:
            accs = [run[(fr, ir)][0] for run in runs]
            f1s = [run[(fr, ir)][1] for run in runs]
            rows.append({"feature_ratio": fr, "instance_ratio": ir,
                         "acc": float(np.mean(accs)), "f1": float(np.mean(f1s)),
                         "repeats": repeats, "seed": hp.seed,
                         "acc_runs": accs, "f1_runs": f1s})
    return rows
