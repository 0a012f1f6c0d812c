"""L-inf distances between temporal frame pairs versus the adversarial epsilon ball."""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass

import numpy as np

from natrobust.dataset import FrameManifest, FramePair, load_eval_frame
from natrobust.errors import DecodeError, EmptyInput, MissingPredictions
from natrobust.image import EvalGeometry, linf_distance, read_image
from natrobust.predictor import CLEAN, PredictionTable, natural

DEFAULT_EPSILON = 16


@dataclass(frozen=True)
class DistanceSample:
    pair: FramePair
    linf: int
    brittle: bool | None = None


@dataclass(frozen=True)
class AnalysisConfig:
    epsilon: float = DEFAULT_EPSILON  # 8-bit units
    offsets: tuple = (-1, 1)
    sample_size: int | None = None
    preprocess: bool = True  # False: distances on raw frames

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


def pair_distances(pairs, preprocess: bool = True, geometry: EvalGeometry = EvalGeometry()):
    """L-inf distance for each pair; returns ``(samples, failures)``.

    Pairs whose frames cannot be decoded (or differ in size) are skipped and
    reported in ``failures`` as ``(pair, message)``.
    """
    samples, failures = [], []
    load = (lambda p: load_eval_frame(p, geometry)) if preprocess else read_image
    for pair in pairs:
        try:
            a = load(pair.anchor_path)
            b = load(pair.other_path)
            samples.append(DistanceSample(pair, linf_distance(a, b)))
        except (DecodeError, FileNotFoundError, ValueError) as exc:
            failures.append((pair, str(exc)))
    return samples, failures


def mark_brittle(samples, table: PredictionTable, manifest: FrameManifest, model_id: str):
    """Flag pairs whose anchor is classified correctly but whose neighbour is not."""
    labels = {e.shot_id: e.label for e in manifest.entries}
    out, missing = [], []
    for s in samples:
        shot = s.pair.shot_id
        a = table.label(model_id, shot, CLEAN)
        b = table.label(model_id, shot, natural(s.pair.offset))
        if a is None or b is None:
            missing.append((model_id, shot, s.pair.offset))
            continue
        y = labels.get(shot, s.pair.label)
        out.append(DistanceSample(s.pair, s.linf, a == y and b != y))
    if missing:
        raise MissingPredictions(f"{len(missing)} pairs lack predictions", missing)
    return out


class EmpiricalCDF:
    """Right-continuous empirical CDF: F(t) = #{v <= t} / n."""

    def __init__(self, values):
        vals = sorted(float(v) for v in values)
        if not vals:
            raise EmptyInput("CDF of an empty sample")
        self.values = vals

    def __len__(self):
        return len(self.values)

    def count_le(self, t: float) -> int:
        return bisect.bisect_right(self.values, t)

    def __call__(self, t: float) -> float:
        return self.count_le(t) / len(self.values)

    def table(self) -> list[tuple[float, float]]:
        """(threshold, fraction <= threshold) at every distinct sample value."""
        n = len(self.values)
        out = []
        for i, v in enumerate(self.values):
            if i + 1 == n or self.values[i + 1] != v:
                out.append((v, (i + 1) / n))
        return out


def cdf(values) -> EmpiricalCDF:
    return EmpiricalCDF(values)


def summarize(samples, config: AnalysisConfig = AnalysisConfig()) -> dict:
    """Mean, population std and epsilon-ball fractions of the L-inf distances."""
    samples = list(samples)
    if not samples:
        raise EmptyInput("no distance samples")
    values = np.array([s.linf for s in samples], dtype=np.float64)
    n = len(values)
    mean = math.fsum(values) / n
    std = math.sqrt(math.fsum((values - mean) ** 2) / n)
    eps = config.epsilon
    n_within = int(np.sum(values <= eps))
    brittle = [s.linf for s in samples if s.brittle]
    n_brittle_within = sum(1 for v in brittle if v <= eps)
    return {
        "n_pairs": n,
        "mean": mean,
        "std": std,
        "std_convention": "population",
        "epsilon": eps,
        "n_within_epsilon": n_within,
        "fraction_within_epsilon": n_within / n,
        "n_brittle": len(brittle),
        "n_brittle_within_epsilon": n_brittle_within if brittle else None,
        "brittle_fraction_within_epsilon": (n_brittle_within / len(brittle)) if brittle else None,
    }


def write_samples_csv(samples, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["video_id", "shot_id", "offset", "delta_ms", "linf", "brittle"])
        for s in samples:
            p = s.pair
            w.writerow([p.video_id, p.shot_id, p.offset, repr(p.delta_ms), s.linf,
                        "" if s.brittle is None else int(s.brittle)])


def write_cdf_csv(c: EmpiricalCDF, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "fraction"])
        for t, f in c.table():
            w.writerow([repr(t), repr(f)])
