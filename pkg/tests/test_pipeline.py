import numpy as np
import pytest

from natrobust.dataset import SynthVideoConfig, generate_synthetic
from natrobust.pipeline import EvalPlan, builtin_backend, predict_manifest, predict_models, training_data
from natrobust.trainer import FEATURE_DIM, init_mlp


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    cfg = SynthVideoConfig(num_shots=12, seed=4, frame_size=(48, 36))
    return generate_synthetic(cfg, tmp_path_factory.mktemp("pipe"))


def test_plan_size():
    plan = EvalPlan(families=("gaussian_noise", "contrast"), seeds=(0, 1))
    # clean + 10 offsets + noise 5x2 seeds + contrast 5
    assert len(plan.transforms()) == 1 + 10 + 10 + 5


def test_shared_views_match_single_model(manifest):
    plan = EvalPlan(families=("gaussian_blur", "gaussian_noise"))
    models = {f"m{i}": init_mlp((FEATURE_DIM, 8, manifest.num_classes), seed=i) for i in range(3)}
    joint = predict_models(manifest, [(m, builtin_backend(v)) for m, v in models.items()], plan)
    single = None
    for m, v in models.items():
        t = predict_manifest(manifest, builtin_backend(v), m, plan)
        single = t if single is None else single.merged(t)
    assert joint.sorted_records() == single.sorted_records()
    assert len(joint) == 3 * len(manifest) * (1 + 10 + 10)


def test_on_error_reports_and_skips(manifest):
    def broken(images):
        raise ConnectionError("down")

    seen = []
    plan = EvalPlan(families=())
    good = builtin_backend(init_mlp((FEATURE_DIM, 4, manifest.num_classes)))
    t = predict_models(manifest, [("bad", broken), ("ok", good)], plan,
                       on_error=lambda m, e, refs, exc: seen.append((m, e.shot_id, len(refs))))
    assert t.model_ids() == ["ok"]
    assert len(seen) == len(manifest) and all(m == "bad" and n == 11 for m, _, n in seen)
    with pytest.raises(ConnectionError):
        predict_manifest(manifest, broken, "bad", plan)


def test_training_data_shapes_and_determinism(manifest):
    a = training_data(manifest, n_views=3, seed=1)
    b = training_data(manifest, n_views=3, seed=1)
    n_train = len(manifest.subset("train"))
    assert a.x.shape == (n_train, 3, FEATURE_DIM)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
    assert not np.array_equal(a.x, training_data(manifest, n_views=3, seed=2).x)
