"""Clustering evaluation: adjusted Rand index, V-measure, property accuracy.

Label vectors align truth and prediction by position.  The ARI uses exact
integer pair counts with a single final division, so it agrees with a
brute-force pair-counting oracle to float64 precision.  Entropies use the
natural log; the base cancels in every ratio.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

from .catalog import GroupingOutput
from .errors import LengthMismatch, MissingTruth, TooFewItems


@dataclass(frozen=True)
class Contingency:
    """Joint label counts with marginals."""

    counts: dict[tuple[int, int], int]
    truth_sizes: dict[int, int]
    pred_sizes: dict[int, int]
    n: int


@dataclass
class MetricReport:
    """One row of clustering metrics (per property or aggregate)."""

    ari: float
    ari_normalized: float
    homogeneity: float
    completeness: float
    v_measure: float


def contingency(truth, pred) -> Contingency:
    """Joint counts n_ij of (truth label, predicted label) pairs."""
    truth = list(truth)
    pred = list(pred)
    if len(truth) != len(pred):
        raise LengthMismatch(f"label vectors differ in length: {len(truth)} vs {len(pred)}")
    if not truth:
        raise TooFewItems("label vectors must have at least one item")
    return Contingency(
        counts=dict(Counter(zip(truth, pred))),
        truth_sizes=dict(Counter(truth)),
        pred_sizes=dict(Counter(pred)),
        n=len(truth),
    )


def _comb2(x: int) -> int:
    return x * (x - 1) // 2


def adjusted_rand_index(truth, pred) -> float:
    """Chance-adjusted partition agreement in [-1, 1].

    Returns 1.0 when the expected and maximum index coincide (both
    clusterings trivial), matching the usual convention.
    """
    table = contingency(truth, pred)
    if table.n < 2:
        raise TooFewItems("adjusted Rand index needs at least two items")
    sum_cells = sum(_comb2(c) for c in table.counts.values())
    sum_a = sum(_comb2(c) for c in table.truth_sizes.values())
    sum_b = sum(_comb2(c) for c in table.pred_sizes.values())
    total = _comb2(table.n)
    # ARI = (sum_cells - sum_a*sum_b/total) / ((sum_a+sum_b)/2 - sum_a*sum_b/total),
    # cleared of fractions so both terms stay exact integers.
    numerator = 2 * total * sum_cells - 2 * sum_a * sum_b
    denominator = total * (sum_a + sum_b) - 2 * sum_a * sum_b
    if denominator == 0:
        return 1.0
    return numerator / denominator


def normalized_ari(truth, pred) -> float:
    """Affine map of the ARI onto [0, 1]."""
    return (adjusted_rand_index(truth, pred) + 1.0) / 2.0


def _entropy(sizes: dict[int, int], n: int) -> float:
    h = 0.0
    for count in sizes.values():
        if count:
            p = count / n
            h -= p * math.log(p)
    return h


def v_measure(truth, pred) -> tuple[float, float, float]:
    """(homogeneity, completeness, V) of a predicted clustering.

    Homogeneity is 1 when every cluster holds a single class, completeness
    when every class sits in a single cluster; V is their harmonic mean
    (0 when both are 0).
    """
    table = contingency(truth, pred)
    n = table.n
    h_truth = _entropy(table.truth_sizes, n)
    h_pred = _entropy(table.pred_sizes, n)

    h_truth_given_pred = 0.0
    h_pred_given_truth = 0.0
    for (t, p), count in table.counts.items():
        joint = count / n
        h_truth_given_pred -= joint * math.log(count / table.pred_sizes[p])
        h_pred_given_truth -= joint * math.log(count / table.truth_sizes[t])

    homogeneity = 1.0 if h_truth == 0.0 else 1.0 - h_truth_given_pred / h_truth
    completeness = 1.0 if h_pred == 0.0 else 1.0 - h_pred_given_truth / h_pred
    if homogeneity + completeness == 0.0:
        v = 0.0
    else:
        v = 2.0 * homogeneity * completeness / (homogeneity + completeness)
    return homogeneity, completeness, v


def metric_report(truth, pred) -> MetricReport:
    ari = adjusted_rand_index(truth, pred)
    homogeneity, completeness, v = v_measure(truth, pred)
    return MetricReport(
        ari=ari,
        ari_normalized=(ari + 1.0) / 2.0,
        homogeneity=homogeneity,
        completeness=completeness,
        v_measure=v,
    )


# ---------------------------------------------------------------------------
# end-to-end property accuracy


def grouping_labels(pred: GroupingOutput, truth, room_type: str) -> tuple[list[int], list[int]]:
    """Aligned (truth, predicted) label vectors for one room type.

    Only retained images count: ids that appear both in a predicted group of
    this room type and in the ground-truth partition of the same type.
    Pruned (unassigned) images are excluded.
    """
    truth_label: dict[str, int] = {}
    for room_index, members in enumerate(truth.partition(room_type)):
        for image_id in members:
            truth_label[image_id] = room_index
    truth_vec: list[int] = []
    pred_vec: list[int] = []
    for gi, group in enumerate(pred.room_types.get(room_type, [])):
        for image_id in group.image_ids:
            if image_id in truth_label:
                truth_vec.append(truth_label[image_id])
                pred_vec.append(gi)
    return truth_vec, pred_vec


def property_correct(pred: GroupingOutput, truth) -> bool:
    """A property counts correct iff every room-type partition (restricted to
    retained images) matches ground truth and every bedroom group carries the
    exact ground-truth bed type."""
    for room_type, groups in pred.room_types.items():
        retained = {i for g in groups for i in g.image_ids}
        truth_part = {
            frozenset(m for m in members if m in retained)
            for members in truth.partition(room_type)
        }
        truth_part.discard(frozenset())
        pred_part = {frozenset(g.image_ids) for g in groups if g.image_ids}
        if pred_part != truth_part:
            return False
    for group in pred.room_types.get("bedroom", []):
        if not group.image_ids:
            continue
        expected = truth.bed_for_image(group.image_ids[0])
        if group.bed_type != expected:
            return False
    return True


def property_accuracy(predictions: dict[str, GroupingOutput], truths: dict) -> float:
    """Fraction of properties graded correct under :func:`property_correct`."""
    if not predictions:
        raise TooFewItems("no predictions to grade")
    correct = 0
    for property_id, pred in predictions.items():
        if property_id not in truths:
            raise MissingTruth(f"no ground truth for property '{property_id}'")
        if property_correct(pred, truths[property_id]):
            correct += 1
    return correct / len(predictions)
