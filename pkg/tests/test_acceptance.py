"""Acceptance criteria 1-13, one test each.

Every test records a one-line PASS/FAIL verdict (shown in the terminal
summary) and then asserts it. Tolerances are the ones the criteria state.
"""

import csv
import json
import math
import time
import xml.etree.ElementTree as ET
from contextlib import contextmanager
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

from natrobust.adversarial import AnalysisConfig, DistanceSample, cdf, summarize
from natrobust.cli import main as cli_main
from natrobust.dataset import FramePair, SynthVideoConfig, generate_synthetic, render_shot
from natrobust.distortions import DEFAULT_TABLE, FAMILIES, STOCHASTIC, DistortionSpec, apply, translation_offset
from natrobust.errors import UndefinedConditional
from natrobust.image import EvalGeometry, jpeg_roundtrip, l2_distance, psnr, write_png
from natrobust.metrics import (
    average_over_severity,
    clean_accuracy,
    conditional_robustness,
    correlation_matrix,
    natural_average,
    relative_drop,
    robustness_vs_offset,
)
from natrobust.pipeline import EvalPlan, builtin_backend, predict_models, training_data
from natrobust.predictor import CLEAN, TransformRef
from natrobust.trainer import (
    FEATURE_DIM,
    TECHNIQUES,
    MLPModel,
    PGDConfig,
    TrainConfig,
    cross_entropy,
    forward,
    init_mlp,
    pgd_attack,
    train,
)

from conftest import record_verdict
from fixtures import brute_force_counts, make_manifest, make_table, random_fixture
from gradcheck import max_relative_error

GEOMETRY = EvalGeometry()
E2E_SHOTS = 1200


@contextmanager
def criterion(number, title):
    state = {"ok": False, "detail": ""}
    try:
        yield state
    except Exception as exc:
        record_verdict(number, title, False, f"{type(exc).__name__}: {exc}")
        raise
    record_verdict(number, title, bool(state["ok"]), state["detail"])
    assert state["ok"], state["detail"]


def raw_fixtures(n=50, seed=11):
    cfg = SynthVideoConfig(seed=seed, frames_per_shot=1)
    return [render_shot(cfg, i % cfg.num_classes, f"accept{i}")[0] for i in range(n)]


@pytest.fixture(scope="module")
def world(tmp_path_factory):
    """The synthetic end-to-end task shared by criteria 2, 9, 10 and 12."""
    root = tmp_path_factory.mktemp("acceptance")
    t0 = time.perf_counter()
    manifest = generate_synthetic(SynthVideoConfig(num_shots=E2E_SHOTS, seed=0), root / "data")
    data = training_data(manifest, n_views=8, seed=0)
    return {"root": root, "manifest": manifest, "data": data, "test": manifest.subset("test"),
            "setup_s": time.perf_counter() - t0}


@pytest.fixture(scope="module")
def baseline(world):
    t0 = time.perf_counter()
    init = init_mlp((FEATURE_DIM, 64, world["manifest"].num_classes), seed=0)
    model, log = train(init, world["data"], TrainConfig())
    return model, log, time.perf_counter() - t0


# --- 1 ---------------------------------------------------------------------------

def test_c01_metric_oracle_equivalence():
    with criterion(1, "metric oracle equivalence") as c:
        rng = np.random.default_rng(2024)
        t0 = time.perf_counter()
        transform = TransformRef("gaussian_noise", 3, 0)
        mismatches = undefined = 0
        for _ in range(100):
            n, k = int(rng.integers(1, 1001)), int(rng.integers(2, 24))
            manifest, table, labels, preds = random_fixture(rng, n, k, (transform,))
            num, den = brute_force_counts(labels, preds[CLEAN], preds[transform])
            if den == 0:
                undefined += 1
                try:
                    conditional_robustness(table, manifest, transform, "m")
                    mismatches += 1
                except UndefinedConditional:
                    pass
                continue
            r = conditional_robustness(table, manifest, transform, "m")
            if (r.numerator, r.denominator) != (num, den) or r.fraction != Fraction(num, den):
                mismatches += 1
        elapsed = time.perf_counter() - t0
        c["ok"] = mismatches == 0 and elapsed < 10
        c["detail"] = (f"100 fixtures (<=1000 frames, K<=23), {mismatches} mismatches, "
                       f"{undefined} undefined handled, {elapsed:.1f}s (<10s)")


# --- 2 ---------------------------------------------------------------------------

def test_c02_identity_robustness(world, baseline, tmp_path):
    with criterion(2, "identity robustness") as c:
        plan = EvalPlan(families=FAMILIES, severities=(0,), offsets=())
        small = generate_synthetic(SynthVideoConfig(num_shots=30, seed=9, frame_size=(80, 60)), tmp_path)
        cases = [("trained", world["test"], baseline[0]),
                 ("random-init", small, init_mlp((FEATURE_DIM, 16, small.num_classes), seed=3))]
        values = []
        for name, manifest, model in cases:
            table = predict_models(manifest, [(name, builtin_backend(model))], plan)
            for ref in table.transforms(name):
                if ref == CLEAN:
                    continue
                try:
                    values.append(conditional_robustness(table, manifest, ref, name).r_value)
                except UndefinedConditional:
                    pass
        c["ok"] = len(values) == 2 * len(FAMILIES) and all(v == 1.0 for v in values)
        c["detail"] = f"{len(values)} severity-0 cells over 2 datasets, all r == 1.0: {c['ok']}"


# --- 3 ---------------------------------------------------------------------------

def test_c03_metric_distinction():
    with criterion(3, "metric distinction fixture") as c:
        labels = [0] * 10
        clean = [0] * 8 + [1, 1]
        t1 = [0] * 7 + [1, 1, 1]  # breaks one correct anchor
        t2 = [1, 1, 1, 0, 0, 0, 0, 0, 0, 0]  # breaks three, repairs two
        T1, T2 = TransformRef("contrast", 1), TransformRef("contrast", 2)
        m = make_manifest(labels, 2)
        table = make_table(m, "m", {CLEAN: clean, T1: t1, T2: t2})
        d1, d2 = relative_drop(table, m, T1, "m"), relative_drop(table, m, T2, "m")
        r1 = conditional_robustness(table, m, T1, "m").r_value
        r2 = conditional_robustness(table, m, T2, "m").r_value
        c["ok"] = math.isclose(d1, d2, abs_tol=1e-15) and abs(r1 - r2) >= 0.2
        c["detail"] = f"relative drop {d1:.3f} vs {d2:.3f}; r {r1:.3f} vs {r2:.3f} (|diff| {abs(r1 - r2):.3f} >= 0.2)"


# --- 4 ---------------------------------------------------------------------------

def test_c04_determinism_and_severity_monotonicity():
    with criterion(4, "distortion determinism + severity monotonicity") as c:
        t0 = time.perf_counter()
        frames = [GEOMETRY.frame(f) for f in raw_fixtures(50)]
        views = [GEOMETRY.center_crop(f) for f in frames]
        nondeterministic, means = [], {}
        for family in FAMILIES:
            means[family] = []
            for sev in range(1, 6):
                total = 0.0
                for i, (full, view) in enumerate(zip(frames, views)):
                    spec = DistortionSpec(family, sev, 5, "+x", f"fx{i}")
                    src = full if family == "translation" else view
                    out = apply(spec, src)
                    if out != apply(spec, src):
                        nondeterministic.append((family, sev, i))
                    total += l2_distance(view, out)
                means[family].append(total / len(views))
        not_increasing = [f for f in FAMILIES if f != "translation"
                          and not all(b > a for a, b in zip(means[f], means[f][1:]))]
        elapsed = time.perf_counter() - t0
        c["ok"] = not nondeterministic and not not_increasing and elapsed < 60
        c["detail"] = (f"50 fixtures x 10 families x 5 severities; non-reproducible {len(nondeterministic)}; "
                       f"non-increasing mean L2 {not_increasing or 'none'} (translation exempt); "
                       f"{elapsed:.1f}s (<60s)")


# --- 5 ---------------------------------------------------------------------------

def test_c05_translation_exactness():
    with criterion(5, "translation exactness") as c:
        frames = [GEOMETRY.frame(f) for f in raw_fixtures(20)]
        checked = bad = 0
        for full in frames:
            cx, cy = GEOMETRY.center_origin(full)
            for sev, offset in enumerate(DEFAULT_TABLE["translation"], start=1):
                for direction in ("+x", "-x", "+y", "-y"):
                    dx, dy = translation_offset(offset, direction)
                    out = apply(DistortionSpec("translation", sev, direction=direction), full)
                    want = full.pixels[cy + dy:cy + dy + 224, cx + dx:cx + dx + 224]
                    checked += 1
                    bad += not (out.pixels.shape == want.shape and np.array_equal(out.pixels, want))
        c["ok"] = bad == 0 and checked > 0 and DEFAULT_TABLE["translation"] == (1, 2, 4, 8, 16)
        c["detail"] = f"{checked} crops (offsets 1,2,4,8,16 x 4 directions x 20 frames), {bad} not exact subregions"


# --- 6 ---------------------------------------------------------------------------

def test_c06_jpeg_behaviour():
    with criterion(6, "JPEG behaviour") as c:
        views = [GEOMETRY.preprocess(f) for f in raw_fixtures(50)]
        q95 = [psnr(v, jpeg_roundtrip(v, 95)) for v in views]
        non_monotone = 0
        for v in views:
            values = [psnr(v, apply(DistortionSpec("jpeg_quality", s), v)) for s in range(1, 6)]
            non_monotone += not all(b <= a for a, b in zip(values, values[1:]))
        c["ok"] = min(q95) > 40 and non_monotone == 0
        c["detail"] = (f"q=95 PSNR min {min(q95):.2f} dB (>40) over 50 evaluation views; "
                       f"{non_monotone} fixtures with PSNR increasing across severities")


# --- 7 ---------------------------------------------------------------------------

def test_c07_gradient_checks():
    with criterion(7, "gradient checks") as c:
        rng = np.random.default_rng(77)
        worst = {}
        for technique in TECHNIQUES:
            worst[technique] = 0.0
            for trial in range(20):
                d, h, k = int(rng.integers(3, 8)), int(rng.integers(2, 7)), int(rng.integers(2, 5))
                model = init_mlp((d, h, k), seed=1000 + trial)
                model.biases = [rng.normal(scale=0.1, size=b.shape) for b in model.biases]
                x, y = rng.random((10, d)), rng.integers(0, k, 10)
                pgd = PGDConfig(0.05, 3, 0.02) if technique == "adversarial_logit_pairing" else None
                cfg = TrainConfig(technique=technique, reg=float(rng.uniform(0.05, 1.0)),
                                  smoothing=float(rng.uniform(0.05, 0.3)) if technique == "label_smoothing" else 0.0,
                                  pgd=pgd)
                x_adv = pgd_attack(model, x, y, pgd) if pgd else None
                worst[technique] = max(worst[technique], max_relative_error(model, x, y, cfg, x_adv))
        c["ok"] = all(v <= 1e-4 for v in worst.values())
        c["detail"] = ("20 trials each, h=1e-5, max rel err "
                       + ", ".join(f"{t}={v:.1e}" for t, v in worst.items()) + " (<=1e-4)")


# --- 8 ---------------------------------------------------------------------------

def test_c08_pgd_contract():
    with criterion(8, "PGD contract") as c:
        rng = np.random.default_rng(88)
        ball = ascent = closed = 0
        runs = 200
        for i in range(runs):
            d, k = int(rng.integers(3, 10)), int(rng.integers(2, 6))
            model = init_mlp((d, int(rng.integers(2, 12)), k), seed=i)
            x, y = rng.random((8, d)), rng.integers(0, k, 8)
            cfg = PGDConfig(float(rng.uniform(0, 0.3)), int(rng.integers(1, 8)), float(rng.uniform(0.001, 0.1)))
            adv = pgd_attack(model, x, y, cfg)
            ball += np.max(np.abs(adv - x)) > cfg.epsilon or adv.min() < 0 or adv.max() > 1
            ascent += np.any(cross_entropy(forward(model, adv), y) < cross_entropy(forward(model, x), y) - 1e-9)
        for i in range(runs):
            d, k = 6, 3
            w, b = rng.normal(size=(d, k)), rng.normal(size=k)
            x, y = rng.random((8, d)), rng.integers(0, k, 8)
            eps, step = float(rng.uniform(0.01, 0.2)), float(rng.uniform(0.01, 0.2))
            adv = pgd_attack(MLPModel([w], [b]), x, y, PGDConfig(eps, 1, step))
            z = x @ w + b
            p = np.exp(z - z.max(axis=1, keepdims=True))
            p /= p.sum(axis=1, keepdims=True)
            p[np.arange(8), y] -= 1
            want = np.clip(np.clip(x + step * np.sign(p @ w.T), x - eps, x + eps), 0, 1)
            closed += not np.allclose(adv, want, rtol=0, atol=1e-12)
        c["ok"] = ball == 0 and ascent == 0 and closed == 0
        c["detail"] = (f"{runs} random runs: {ball} ball/box violations, {ascent} CE decreases; "
                       f"{runs} linear one-step runs: {closed} closed-form mismatches")


# --- 9 ---------------------------------------------------------------------------

def test_c09_natural_robustness_trend(world, baseline):
    with criterion(9, "end-to-end temporal robustness trend") as c:
        model, log, train_s = baseline
        t0 = time.perf_counter()
        test = world["test"]
        table = predict_models(test, [("baseline", builtin_backend(model))], EvalPlan(families=()))
        curve = robustness_vs_offset(table, test, "baseline")
        predict_s = time.perf_counter() - t0
        r = [1.0] + [curve.pooled[k].r_value for k in range(1, 6)]  # r at |dt| = 0 is 1 by definition
        non_increasing = sum(b <= a for a, b in zip(r, r[1:]))
        margin = r[1] - r[5]
        val_acc = log[-1].val_accuracy
        total = world["setup_s"] + train_s + predict_s
        c["ok"] = val_acc >= 0.90 and margin >= 0.01 and non_increasing >= 4 and total < 600
        c["detail"] = (f"{E2E_SHOTS} shots, val acc {val_acc:.3f} (>=0.90); r(|dt|) "
                       + " ".join(f"{v:.4f}" for v in r[1:])
                       + f"; r(66.7ms)-r(333.3ms)={margin:.4f} (>=0.01); "
                       f"non-increasing {non_increasing}/5 bins (>=4); {total:.0f}s (<600s)")


# --- 10 --------------------------------------------------------------------------

def _pearson_oracle(xs, ys):
    """Exact-rational sums, one final square root."""
    fx, fy = [Fraction(v) for v in xs], [Fraction(v) for v in ys]
    n = len(fx)
    mx, my = sum(fx) / n, sum(fy) / n
    sxy = sum((a - mx) * (b - my) for a, b in zip(fx, fy))
    sxx = sum((a - mx) ** 2 for a in fx)
    syy = sum((b - my) ** 2 for b in fy)
    if sxx == 0 or syy == 0:
        return None
    return math.copysign(math.sqrt(sxy * sxy / (sxx * syy)), sxy)


def test_c10_correlation_pipeline(world):
    with criterion(10, "correlation pipeline") as c:
        schedule = [(3, 0), (6, 1), (12, 2), (25, 3), (50, 4), (100, 5)]
        backends = []
        for epochs, seed in schedule:
            init = init_mlp((FEATURE_DIM, 64, world["manifest"].num_classes), seed=seed)
            model, _ = train(init, world["data"], TrainConfig(epochs=epochs, seed=seed))
            backends.append((f"e{epochs}-s{seed}", builtin_backend(model)))
        test = world["test"]
        table = predict_models(test, backends, EvalPlan())
        per_model, accuracy = {}, {}
        for mid, _ in backends:
            accuracy[mid] = clean_accuracy(table, test, mid)
            scores = {"natural": natural_average(robustness_vs_offset(table, test, mid))}
            for fam in FAMILIES:
                ref = lambda s: TransformRef(fam, s, 0 if fam in STOCHASTIC else None)
                scores[fam] = average_over_severity(
                    [conditional_robustness(table, test, ref(s), mid) for s in range(1, 6)])
            per_model[mid] = scores
        matrix = correlation_matrix(per_model)
        names = matrix.transforms
        models = sorted(per_model)
        symmetric = all(matrix.r(a, b) == matrix.r(b, a) for a in names for b in names)
        diagonal = all(matrix.r(t, t) == 1.0 for t in names)
        worst = 0.0
        for a in names:
            for b in names:
                want = _pearson_oracle([per_model[m][a] for m in models], [per_model[m][b] for m in models])
                got = matrix.r(a, b)
                if a == b and want is not None:
                    want = 1.0
                if (want is None) != (got is None):
                    worst = math.inf
                elif want is not None:
                    worst = max(worst, abs(got - want))
        tn = matrix.r("translation", "natural")
        accs = sorted(accuracy.values())
        c["ok"] = (len(backends) >= 6 and len(set(accs)) > 1 and symmetric and diagonal
                   and worst <= 1e-12 and ("translation", "natural") in matrix.cells)
        c["detail"] = (f"{len(backends)} models, clean acc {accs[0]:.3f}..{accs[-1]:.3f}; "
                       f"{len(names)}x{len(names)} matrix symmetric={symmetric} diagonal1={diagonal}; "
                       f"max |r - oracle| {worst:.1e} (<=1e-12); translation-vs-natural r = "
                       + ("undefined" if tn is None else f"{tn:+.3f}"))


# --- 11 --------------------------------------------------------------------------

def test_c11_adversarial_oracles():
    with criterion(11, "adversarial-analysis oracles") as c:
        rng = np.random.default_rng(111)
        problems = 0
        for f in range(25):
            n = int(rng.integers(1, 400))
            values = rng.integers(0, 256, n).tolist()
            flags = (rng.random(n) < 0.3).tolist()
            samples = [DistanceSample(FramePair("v", f"s{i}", 1, Path("a"), Path("b"), 66.7, 0), v, b)
                       for i, (v, b) in enumerate(zip(values, flags))]
            F = cdf(values)
            for t in range(-1, 257):
                problems += F(t) != sum(v <= t for v in values) / n
            s = summarize(samples, AnalysisConfig(epsilon=16))
            mean_exact = Fraction(sum(values), n)
            var_exact = sum((Fraction(v) - mean_exact) ** 2 for v in values) / n
            problems += s["mean"] != float(mean_exact)
            problems += not math.isclose(s["std"], math.sqrt(var_exact), rel_tol=1e-15, abs_tol=1e-15)
            problems += s["fraction_within_epsilon"] != sum(v <= 16 for v in values) / n
            brittle = [v for v, b in zip(values, flags) if b]
            want_b = sum(v <= 16 for v in brittle) / len(brittle) if brittle else None
            problems += s["brittle_fraction_within_epsilon"] != want_b
            prev = -1.0
            for eps in np.linspace(0, 255, 50):
                frac = summarize(samples, AnalysisConfig(epsilon=float(eps)))["fraction_within_epsilon"]
                problems += frac < prev or frac != F(eps)
                prev = frac
        c["ok"] = problems == 0
        c["detail"] = f"25 fixtures, CDF at 258 thresholds, mean/std/eps fractions, 50-point eps grid: {problems} mismatches"


# --- 12 --------------------------------------------------------------------------

def test_c12_technique_scatter(world):
    with criterion(12, "technique-vs-baseline run") as c:
        root = world["root"]
        manifest = str(root / "data" / "manifest.csv")
        techniques = [t for t in TECHNIQUES if t != "baseline"]
        assert cli_main(["train-ref", "--manifest", manifest, "--out", str(root / "models"),
                         "--techniques", "baseline", *techniques]) == 0
        index = str(root / "models" / "models.json")
        assert cli_main(["predict", "--manifest", manifest, "--models-index", index,
                         "--out", str(root / "pred")]) == 0
        assert cli_main(["report", "--manifest", manifest, "--models-index", index,
                         "--predictions", str(root / "pred" / "predictions.csv"), "--out", str(root / "report")]) == 0
        svg = ET.parse(root / "report" / "technique_vs_baseline.svg").getroot()
        ns = "{http://www.w3.org/2000/svg}"
        series = {g.get("data-series") for g in svg.iter(f"{ns}g") if g.get("class") == "series"}
        equality = any(el.get("class") == "equality" for el in svg.iter(f"{ns}line"))
        with open(root / "report" / "technique_accuracy.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        models = json.loads(Path(index).read_text())
        base = models["baseline_val_accuracy"]
        gate_ok, parts = True, []
        for m in models["models"]:
            if m["technique"] == "baseline":
                continue
            drop_pp = 100 * (base - m["val_accuracy"])
            gate_ok &= drop_pp <= 1.2 or m["flagged"]
            gate_ok &= m["flagged"] == (drop_pp > 1.2)
            parts.append(f"{m['technique']} {drop_pp:+.1f}pp{' flagged' if m['flagged'] else ''}")
        c["ok"] = series == set(techniques) and equality and len(rows) == len(techniques) and gate_ok
        c["detail"] = (f"scatter series {len(series)}/6 with equality line={equality}; baseline val acc "
                       f"{base:.3f}; val-acc drop vs baseline: " + ", ".join(parts))


# --- 13 --------------------------------------------------------------------------

def _snapshot(root: Path) -> dict:
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_c13_cli_reproducibility(tmp_path):
    with criterion(13, "CLI reproducibility") as c:
        d = tmp_path
        frame = render_shot(SynthVideoConfig(seed=1, frames_per_shot=1), 0, "repro")[0]
        write_png(frame, d / "frame.png")
        manifest = str(d / "data" / "manifest.csv")
        commands = [("gen-synthetic", ["gen-synthetic", "--num-shots", "40", "--seed", "5", "--out", str(d / "data")])]
        for fam in FAMILIES:
            commands.append((f"distort {fam}", ["distort", "--family", fam, "--severity", "3", "--seed", "2",
                                                "--out", str(d / "distort" / fam), str(d / "frame.png")]))
        commands += [
            ("train-ref", ["train-ref", "--manifest", manifest, "--techniques", "baseline", "clean_logit_squeezing",
                           "--epochs", "5", "--n-seeds", "2", "--out", str(d / "models")]),
            ("predict", ["predict", "--manifest", manifest, "--models-index", str(d / "models" / "models.json"),
                         "--set", "predictor.n_seeds=2", "--out", str(d / "pred")]),
            ("report", ["report", "--manifest", manifest, "--predictions", str(d / "pred" / "predictions.csv"),
                        "--models-index", str(d / "models" / "models.json"), "--out", str(d / "report")]),
            ("adv-analysis", ["adv-analysis", "--manifest", manifest, "--predictions",
                              str(d / "pred" / "predictions.csv"), "--model-id", "baseline-s0",
                              "--out", str(d / "adv")]),
        ]
        failed = []
        for name, argv in commands:
            if cli_main(argv) != 0:
                failed.append(name)
        first = _snapshot(d)
        for name, argv in commands:
            if cli_main(argv) != 0:
                failed.append(name)
        second = _snapshot(d)
        changed = sorted(k for k in first if first[k] != second.get(k))
        n_tables = sum(k.endswith((".csv", ".svg")) for k in first)
        c["ok"] = not failed and not changed and first.keys() == second.keys() and n_tables > 0
        c["detail"] = (f"{len(commands)} command runs (6 subcommands) repeated; {n_tables} CSV/SVG files, "
                       f"{len(first)} files total; changed: {changed or 'none'}; failed: {failed or 'none'}")
