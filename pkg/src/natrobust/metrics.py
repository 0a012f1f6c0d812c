"""Conditional robustness and the analyses built on it.

``R_d(f) = P(f(d(x)) = y | f(x) = y)``: the fraction of correctly classified
anchors whose transformed counterpart is also classified correctly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from natrobust.dataset import OFFSETS, FrameManifest, offset_ms
from natrobust.errors import (
    DegenerateVariance,
    LengthMismatch,
    MissingPredictions,
    UndefinedConditional,
    WrongArity,
)
from natrobust.predictor import CLEAN, NATURAL, PredictionTable, TransformRef, natural


@dataclass(frozen=True)
class RobustnessResult:
    model_id: str
    transform: TransformRef
    numerator: int  # anchor correct and transformed correct
    denominator: int  # anchor correct
    n_pairs: int = 0  # anchors evaluated (anchor + transformed prediction present)
    n_transformed_correct: int = 0

    def __post_init__(self):
        if self.denominator < 1:
            raise UndefinedConditional("robustness needs at least one correctly classified anchor")
        if not 0 <= self.numerator <= self.denominator:
            raise ValueError("numerator must be within [0, denominator]")

    @property
    def r_value(self) -> float:
        return self.numerator / self.denominator

    @property
    def fraction(self) -> Fraction:
        return Fraction(self.numerator, self.denominator)

    @property
    def clean_accuracy(self) -> float:
        return self.denominator / self.n_pairs if self.n_pairs else math.nan

    @property
    def transformed_accuracy(self) -> float:
        return self.n_transformed_correct / self.n_pairs if self.n_pairs else math.nan

    @property
    def relative_drop(self) -> float:
        return self.clean_accuracy - self.transformed_accuracy


def _counts(table: PredictionTable, manifest: FrameManifest, transform: TransformRef,
            model_id: str, anchor_ref: TransformRef = CLEAN):
    transform = TransformRef(*transform)
    num = den = pairs = t_correct = 0
    missing = []
    for e in manifest.entries:
        if transform.family == NATURAL and transform.severity not in e.neighbors:
            continue
        a = table.label(model_id, e.shot_id, anchor_ref)
        t = table.label(model_id, e.shot_id, transform)
        if a is None:
            missing.append((model_id, e.shot_id, anchor_ref.label()))
        if t is None:
            missing.append((model_id, e.shot_id, transform.label()))
        if a is None or t is None:
            continue
        pairs += 1
        t_correct += t == e.label
        if a == e.label:
            den += 1
            num += t == e.label
    if missing:
        preview = ", ".join(map(str, missing[:5]))
        more = f" (+{len(missing) - 5} more)" if len(missing) > 5 else ""
        raise MissingPredictions(f"{len(missing)} predictions missing: {preview}{more}", missing)
    return num, den, pairs, t_correct


def conditional_robustness(table: PredictionTable, manifest: FrameManifest,
                           transform: TransformRef, model_id: str) -> RobustnessResult:
    num, den, pairs, t_correct = _counts(table, manifest, transform, model_id)
    if den == 0:
        raise UndefinedConditional(
            f"{model_id}: no correctly classified anchor among {pairs} for {TransformRef(*transform).label()}"
        )
    return RobustnessResult(model_id, TransformRef(*transform), num, den, pairs, t_correct)


def relative_drop(table: PredictionTable, manifest: FrameManifest,
                  transform: TransformRef, model_id: str) -> float:
    """P(f(x) = y) - P(f(d(x)) = y) over anchors with both predictions."""
    _, den, pairs, t_correct = _counts(table, manifest, transform, model_id)
    if pairs == 0:
        raise UndefinedConditional("no evaluable anchors")
    return (den - t_correct) / pairs


def clean_accuracy(table: PredictionTable, manifest: FrameManifest, model_id: str) -> float:
    correct = total = 0
    missing = []
    for e in manifest.entries:
        a = table.label(model_id, e.shot_id, CLEAN)
        if a is None:
            missing.append((model_id, e.shot_id, CLEAN.label()))
            continue
        total += 1
        correct += a == e.label
    if missing:
        raise MissingPredictions(f"{len(missing)} anchor predictions missing", missing)
    if total == 0:
        raise UndefinedConditional("empty manifest")
    return correct / total


@dataclass(frozen=True)
class OffsetCurve:
    signed: dict  # offset index -> RobustnessResult
    pooled: dict  # |offset| -> RobustnessResult (counts of +k and -k summed)

    def delta_ms(self, k: int) -> float:
        return offset_ms(k)


def robustness_vs_offset(table: PredictionTable, manifest: FrameManifest, model_id: str) -> OffsetCurve:
    signed = {k: conditional_robustness(table, manifest, natural(k), model_id) for k in OFFSETS}
    pooled = {}
    for k in sorted({abs(k) for k in OFFSETS}):
        a, b = signed[k], signed[-k]
        pooled[k] = RobustnessResult(
            model_id, TransformRef("natural_abs", k),
            a.numerator + b.numerator, a.denominator + b.denominator,
            a.n_pairs + b.n_pairs, a.n_transformed_correct + b.n_transformed_correct,
        )
    return OffsetCurve(signed, pooled)


def average_over_severity(results) -> float:
    """Unweighted mean of r over severities 1..5 of one family and model."""
    results = list(results)
    if len(results) != 5:
        raise WrongArity(f"need 5 severity results, got {len(results)}")
    fams = {(r.model_id, r.transform.family, r.transform.seed) for r in results}
    if len(fams) != 1 or sorted(r.transform.severity for r in results) != [1, 2, 3, 4, 5]:
        raise WrongArity("results must cover severities 1..5 of one family and model")
    return math.fsum(r.r_value for r in results) / 5.0


def natural_average(curve: OffsetCurve, pooled: bool = True) -> float:
    """Mean natural robustness over the 5 |dt| bins (``pooled``) or the 10 signed offsets."""
    cells = curve.pooled if pooled else curve.signed
    return math.fsum(r.r_value for r in cells.values()) / len(cells)


def seed_averaged(results) -> tuple[float, float]:
    """Mean and spread (max - min) of r over per-seed results for one cell."""
    vals = [r.r_value for r in results]
    if not vals:
        raise WrongArity("no per-seed results")
    return math.fsum(vals) / len(vals), max(vals) - min(vals)


def pearson_r(xs, ys) -> tuple[float, float]:
    """Sample Pearson correlation and its square."""
    xs = [float(v) for v in xs]
    ys = [float(v) for v in ys]
    if len(xs) != len(ys):
        raise LengthMismatch(f"{len(xs)} vs {len(ys)} values")
    if len(xs) < 2:
        raise LengthMismatch("need at least two points")
    n = len(xs)
    mx = math.fsum(xs) / n
    my = math.fsum(ys) / n
    dx = [x - mx for x in xs]
    dy = [y - my for y in ys]
    sxx = math.fsum(d * d for d in dx)
    syy = math.fsum(d * d for d in dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateVariance("correlation undefined for a constant series")
    sxy = math.fsum(a * b for a, b in zip(dx, dy))
    r = max(-1.0, min(1.0, sxy / math.sqrt(sxx * syy)))
    return r, r * r


@dataclass(frozen=True)
class CorrelationCell:
    transform_a: str
    transform_b: str
    pearson_r: float | None  # None: undefined (fewer than 2 models or zero variance)
    n_models: int


@dataclass(frozen=True)
class CorrelationMatrix:
    transforms: tuple
    cells: dict  # (a, b) -> CorrelationCell, both orders present

    def r(self, a, b):
        return self.cells[(a, b)].pearson_r

    def as_array(self) -> np.ndarray:
        n = len(self.transforms)
        out = np.full((n, n), np.nan)
        for i, a in enumerate(self.transforms):
            for j, b in enumerate(self.transforms):
                v = self.cells[(a, b)].pearson_r
                if v is not None:
                    out[i, j] = v
        return out


def correlation_matrix(per_model: dict) -> CorrelationMatrix:
    """Pearson r between transforms over models' robustness scores.

    ``per_model`` maps model id -> {transform name -> scalar robustness}.
    Each cell uses the models that cover both transforms.
    """
    transforms = []
    for scores in per_model.values():
        for t in scores:
            if t not in transforms:
                transforms.append(t)
    models = sorted(per_model)
    cells = {}
    for i, a in enumerate(transforms):
        for b in transforms[i:]:
            both = [m for m in models if a in per_model[m] and b in per_model[m]]
            value = None
            if len(both) >= 2:
                xs = [per_model[m][a] for m in both]
                ys = [per_model[m][b] for m in both]
                try:
                    value = pearson_r(xs, ys)[0]
                    if a == b:
                        value = 1.0
                except DegenerateVariance:
                    value = None
            cells[(a, b)] = CorrelationCell(a, b, value, len(both))
            cells[(b, a)] = CorrelationCell(b, a, value, len(both))
    return CorrelationMatrix(tuple(transforms), cells)


def rank_by_r_squared(accuracy: dict, robustness: dict) -> list[tuple[str, float, float]]:
    """Correlate accuracy with per-transform robustness across models.

    ``accuracy``: model -> accuracy; ``robustness``: transform -> {model -> r}.
    Returns ``(transform, r, r^2)`` sorted by descending r^2; undefined
    correlations are dropped.
    """
    rows = []
    for t, scores in robustness.items():
        models = sorted(m for m in scores if m in accuracy)
        if len(models) < 2:
            continue
        try:
            r, r2 = pearson_r([accuracy[m] for m in models], [scores[m] for m in models])
        except DegenerateVariance:
            continue
        rows.append((t, r, r2))
    return sorted(rows, key=lambda row: (-row[2], row[0]))


# --- CSV writers -------------------------------------------------------------

ROBUSTNESS_COLUMNS = ("model_id", "transform", "family", "severity", "seed", "r_value",
                      "numerator", "denominator", "n_pairs", "clean_accuracy",
                      "transformed_accuracy", "relative_drop")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def write_robustness_csv(results, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(ROBUSTNESS_COLUMNS)
        for r in results:
            t = r.transform
            w.writerow([r.model_id, t.label(), t.family, t.severity, _fmt(t.seed), _fmt(r.r_value),
                        r.numerator, r.denominator, r.n_pairs, _fmt(r.clean_accuracy),
                        _fmt(r.transformed_accuracy), _fmt(r.relative_drop)])


def write_correlation_csv(matrix: CorrelationMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["transform_a", "transform_b", "pearson_r", "n_models"])
        for a in matrix.transforms:
            for b in matrix.transforms:
                c = matrix.cells[(a, b)]
                w.writerow([a, b, _fmt(c.pearson_r), c.n_models])
