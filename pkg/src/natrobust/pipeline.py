"""Glue between the dataset, distortions, predictors and metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from natrobust.dataset import OFFSETS, FrameManifest
from natrobust.distortions import (
    DEFAULT_SEVERITIES,
    FAMILIES,
    SEVERITIES,
    STOCHASTIC,
    DistortionSpec,
    SeverityTable,
    evaluation_view,
)
from natrobust.image import EvalGeometry, read_image
from natrobust.predictor import (
    CLEAN,
    PredictionRecord,
    PredictionTable,
    TransformRef,
    natural,
    query_service,
)
from natrobust.rng import keyed_stream
from natrobust.trainer import MLPModel, TrainingData, featurize, forward
from natrobust.dataset import random_crops


def training_data(manifest: FrameManifest, n_views: int = 8, seed: int = 0,
                  geometry: EvalGeometry = EvalGeometry()) -> TrainingData:
    """Featurized train anchors (random-crop views) and val anchors (centre crop)."""
    train = manifest.subset("train")
    val = manifest.subset("val")
    xs = []
    for e in train.entries:
        rng = keyed_stream(seed, "train-views", e.shot_id)
        views = random_crops(read_image(train.anchor_path(e)), n_views, rng, geometry)
        xs.append(np.stack([featurize(v) for v in views]))
    x_val = [featurize(geometry.preprocess(read_image(val.anchor_path(e)))) for e in val.entries]
    return TrainingData(
        np.asarray(xs).reshape(len(xs), n_views, -1),
        np.array([e.label for e in train.entries], dtype=np.int64),
        np.asarray(x_val).reshape(len(x_val), -1) if x_val else None,
        np.array([e.label for e in val.entries], dtype=np.int64) if x_val else None,
    )


@dataclass(frozen=True)
class EvalPlan:
    """Which transforms to predict for each anchor."""

    families: tuple = FAMILIES
    severities: tuple = SEVERITIES
    offsets: tuple = OFFSETS
    seeds: tuple = (0,)  # per stochastic family; one keyed draw per seed
    direction: str = "+x"

    def transforms(self) -> list[tuple[TransformRef, DistortionSpec | None]]:
        out = [(CLEAN, None)]
        out += [(natural(k), None) for k in self.offsets]
        for fam in self.families:
            seeds = self.seeds if fam in STOCHASTIC else (None,)
            for sev in self.severities:
                for seed in seeds:
                    out.append((TransformRef(fam, sev, seed), DistortionSpec(fam, sev, seed, self.direction)))
        return out


def builtin_backend(model: MLPModel):
    def predict(images):
        if not images:
            return []
        return list(forward(model, np.stack([featurize(im) for im in images])))
    return predict


def service_backend(endpoint: str, num_classes=None, **kw):
    def predict(images):
        return query_service(endpoint, images, num_classes, **kw)
    return predict


def anchor_views(manifest: FrameManifest, entry, plan: EvalPlan,
                 table: SeverityTable = DEFAULT_SEVERITIES,
                 geometry: EvalGeometry = EvalGeometry()):
    """``(TransformRef, Image)`` for every planned transform of one anchor."""
    anchor = read_image(manifest.anchor_path(entry))
    out = []
    for ref, spec in plan.transforms():
        if ref.family == "natural":
            if ref.severity not in entry.neighbors:
                continue
            img = evaluation_view(read_image(manifest.frame_path(entry, ref.severity)), None, table, geometry)
        elif spec is None:
            img = evaluation_view(anchor, None, table, geometry)
        else:
            spec = DistortionSpec(spec.family, spec.severity, spec.seed, spec.direction, entry.shot_id)
            img = evaluation_view(anchor, spec, table, geometry)
        out.append((ref, img))
    return out


def predict_models(manifest: FrameManifest, backends, plan: EvalPlan = EvalPlan(),
                   table: SeverityTable = DEFAULT_SEVERITIES,
                   geometry: EvalGeometry = EvalGeometry(), on_error=None) -> PredictionTable:
    """Predict every planned transform of every anchor with each ``(model_id, backend)``.

    The distorted views of an anchor are built once and shared by all
    models. ``backend`` maps a list of images to a list of logit vectors.
    With ``on_error`` set, a failing (model, anchor) is reported through
    ``on_error(model_id, entry, refs, exc)`` and skipped; otherwise the error
    propagates.
    """
    backends = list(backends)
    records = []
    for entry in manifest.entries:
        views = anchor_views(manifest, entry, plan, table, geometry)
        images = [img for _, img in views]
        for model_id, backend in backends:
            try:
                logits = backend(images)
            except Exception as exc:
                if on_error is None:
                    raise
                on_error(model_id, entry, [ref for ref, _ in views], exc)
                continue
            for (ref, _), z in zip(views, logits):
                records.append(PredictionRecord.from_logits(model_id, entry.shot_id, ref, z))
    return PredictionTable(records)


def predict_manifest(manifest: FrameManifest, backend, model_id: str, plan: EvalPlan = EvalPlan(),
                     table: SeverityTable = DEFAULT_SEVERITIES,
                     geometry: EvalGeometry = EvalGeometry(), on_error=None) -> PredictionTable:
    """Single-model form of :func:`predict_models`; ``on_error(entry, refs, exc)``."""
    hook = None if on_error is None else (lambda _m, entry, refs, exc: on_error(entry, refs, exc))
    return predict_models(manifest, [(model_id, backend)], plan, table, geometry, hook)
