"""Builders for in-memory manifests and prediction tables."""

import numpy as np

from natrobust.dataset import OFFSETS, FrameManifest, ManifestEntry
from natrobust.predictor import CLEAN, PredictionRecord, PredictionTable, TransformRef


def make_manifest(labels, num_classes=None, with_neighbors=True):
    entries = []
    for i, y in enumerate(labels):
        neighbors = {k: f"s{i}/f{k:+d}.png" for k in OFFSETS} if with_neighbors else {}
        entries.append(ManifestEntry(f"v{i // 4}", f"s{i:04d}", "test", int(y), f"s{i}/f0.png", neighbors))
    k = num_classes if num_classes is not None else (max(labels) + 1 if len(labels) else 1)
    return FrameManifest(tuple(entries), k)


def make_table(manifest, model_id, predictions):
    """``predictions``: transform -> list of predicted labels aligned with the manifest."""
    recs = []
    for transform, labels in predictions.items():
        for e, p in zip(manifest.entries, labels):
            recs.append(PredictionRecord(model_id, e.shot_id, TransformRef(*transform), int(p)))
    return PredictionTable(recs, {model_id: manifest.num_classes})


def random_fixture(rng, n, k, transforms, model_id="m"):
    """Random labels plus noisy predictions for ``CLEAN`` and each transform."""
    labels = rng.integers(0, k, n)
    manifest = make_manifest(labels.tolist(), k)
    preds = {}
    for t in (CLEAN, *transforms):
        correct = rng.random(n) < rng.uniform(0.2, 0.95)
        preds[t] = np.where(correct, labels, rng.integers(0, k, n))
    return manifest, make_table(manifest, model_id, preds), labels, preds


def brute_force_counts(labels, anchor, transformed):
    num = den = 0
    for y, a, t in zip(labels, anchor, transformed):
        if a == y:
            den += 1
            if t == y:
                num += 1
    return num, den
