"""Rank instances and features from a fitted state and cut the top fractions."""

import math
from dataclasses import dataclass

import numpy as np

from ._io import write_csv, write_json


def mvis_scores(B, B_v_all, eta, eps=1e-8):
    """Multi-view instance score.

    ``score_i = ||B_i.||^2 + sum_v eta_v / (||B_v_i.||^2 + eps)``: high
    consistent-part energy raises the score, high view-specific energy
    lowers it. ``eps`` caps the contribution of a vanishing view row at
    ``eta_v / eps``.
    """
    score = np.einsum("ij,ij->i", B, B)
    for e, Bv in zip(eta, B_v_all):
        score = score + e / (np.einsum("ij,ij->i", Bv, Bv) + eps)
    return score


def view_energy_scores(B_v_all, eta):
    """``sum_v eta_v ||B_v_i.||^2``: instance ranking when no consistent part is learned."""
    return sum(e * np.einsum("ij,ij->i", Bv, Bv) for e, Bv in zip(eta, B_v_all))


def feature_scores(W_all, normalize=False):
    """Row norms of each view's projection plus one global ranking.

    Returns ``(per_view, ranking)`` where ``ranking`` is a list of
    ``(view, feature)`` pairs sorted by descending score, ties broken by
    view then feature index. ``normalize=True`` divides each view's
    scores by that view's maximum before mixing.
    """
    per_view = [np.linalg.norm(W, axis=1) for W in W_all]
    mixed = per_view
    if normalize:
        mixed = [s / s.max() if s.max() > 0 else s for s in per_view]
    flat = np.concatenate(mixed)
    owner = np.concatenate([np.full(len(s), v) for v, s in enumerate(per_view)])
    local = np.concatenate([np.arange(len(s)) for s in per_view])
    order = np.argsort(-flat, kind="stable")
    ranking = [(int(owner[i]), int(local[i])) for i in order]
    return per_view, ranking


def _count(ratio, total):
    if not 0 < ratio <= 1:
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    # guard against 0.1 * 30 = 3.0000000000000004 style round-up
    return min(total, max(1, math.ceil(round(ratio * total, 9))))


def top_k(scores, k):
    return [int(i) for i in np.argsort(-np.asarray(scores), kind="stable")[:k]]


@dataclass
class SelectionResult:
    instance_scores: np.ndarray
    feature_scores: list
    feature_ranking: list
    selected_instances: list
    selected_features: list
    ratios: tuple

    @property
    def instance_ranking(self):
        return top_k(self.instance_scores, len(self.instance_scores))

    def to_dict(self):
        return {
            "ratios": {"feature_ratio": self.ratios[0], "instance_ratio": self.ratios[1]},
            "instance_scores": [float(x) for x in self.instance_scores],
            "instance_ranking": self.instance_ranking,
            "selected_instances": list(self.selected_instances),
            "feature_scores": [[float(x) for x in s] for s in self.feature_scores],
            "feature_ranking": [list(p) for p in self.feature_ranking],
            "selected_features": [list(s) for s in self.selected_features],
        }

    def write(self, directory):
        write_json(directory / "selection.json", self.to_dict())
        inst = self.instance_ranking
        chosen = set(self.selected_instances)
        write_csv(directory / "instances.csv", ["rank", "instance", "score", "selected"],
                  [[k, i, self.instance_scores[i], int(i in chosen)] for k, i in enumerate(inst)])
        picked = {(v, j) for v, sel in enumerate(self.selected_features) for j in sel}
        write_csv(directory / "features.csv", ["rank", "view", "feature", "score", "selected"],
                  [[k, v, j, self.feature_scores[v][j], int((v, j) in picked)]
                   for k, (v, j) in enumerate(self.feature_ranking)])


def select(state, feature_ratio, instance_ratio, eps=1e-8, normalize_features=False):
    """Top-``ceil(ratio * total)`` instances and features of a fitted state.

    Features are cut from the global ranking across all views, so a view
    may contribute anywhere from none to all of the selected features.
    """
    n = state.B.shape[0]
    if state.variant == "no-consensus":
        inst_scores = view_energy_scores(state.B_v, state.eta)
    else:
        inst_scores = mvis_scores(state.B, state.B_v, state.eta, eps)
    m = _count(instance_ratio, n)
    per_view, ranking = feature_scores(state.W, normalize_features)
    l = _count(feature_ratio, sum(len(s) for s in per_view))
    chosen = [[] for _ in per_view]
    for v, j in ranking[:l]:
        chosen[v].append(j)
    return SelectionResult(
        instance_scores=inst_scores,
        feature_scores=per_view,
        feature_ranking=ranking,
        selected_instances=top_k(inst_scores, m),
        selected_features=chosen,
        ratios=(float(feature_ratio), float(instance_ratio)),
    )
