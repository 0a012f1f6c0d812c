"""``natrobust`` command line: distort, gen-synthetic, train-ref, predict, report, adv-analysis.

Every command reads one TOML config (``--config``), applies flag overrides,
writes ``resolved_config.toml`` and ``VERSION`` into its output directory and
exits 0 on success, 1 on validation errors and 2 on runtime/data errors. On
failure stderr carries exactly one JSON object ``{"error", "message"}``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import shutil
import sys
from collections import defaultdict
from dataclasses import replace
from pathlib import Path

from natrobust import __version__, config as cfgmod
from natrobust.adversarial import (
    AnalysisConfig,
    cdf,
    mark_brittle,
    pair_distances,
    summarize,
    write_cdf_csv,
    write_samples_csv,
)
from natrobust.dataset import FrameManifest, generate_synthetic, load_manifest, offset_ms, pairs_at_offset
from natrobust.distortions import STOCHASTIC, DistortionSpec, SeverityTable, apply
from natrobust.errors import (
    ConfigError,
    MissingPredictions,
    NatRobustError,
    ServiceConnectionError,
    UndefinedConditional,
)
from natrobust.image import EvalGeometry, read_image, write_png
from natrobust.metrics import (
    average_over_severity,
    clean_accuracy,
    conditional_robustness,
    correlation_matrix,
    natural_average,
    rank_by_r_squared,
    robustness_vs_offset,
    write_correlation_csv,
    write_robustness_csv,
)
from natrobust.pipeline import EvalPlan, builtin_backend, predict_models, service_backend, training_data
from natrobust.predictor import IDENTITY, NATURAL, PredictionTable, load_predictions, save_predictions
from natrobust.rng import keyed_uniform
from natrobust import svg
from natrobust.trainer import (
    DEFAULT_GRID,
    FEATURE_DIM,
    PGDConfig,
    TrainConfig,
    accuracy_gate,
    hyperparameter_grid,
    init_mlp,
    load_model,
    run_grid,
    save_model,
    technique_config,
    write_log,
)

GEOMETRY = EvalGeometry()
MODELS_INDEX = "models.json"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _out_dir(cfg) -> Path:
    out = Path(cfg["run"]["output_dir"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path, doc) -> None:
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


def _table(cfg) -> SeverityTable:
    return SeverityTable.with_overrides(cfg["distortions"]["table"])


def _manifest(cfg, split: bool = True) -> FrameManifest:
    path = cfg["dataset"]["manifest"]
    if not path:
        raise ConfigError("dataset.manifest is required")
    manifest = load_manifest(path, cfg["dataset"]["num_classes"] or None)
    s = cfg["dataset"]["split"]
    return manifest.subset(s) if split and s != "all" else manifest


# --- distort -------------------------------------------------------------------

def cmd_distort(cfg, args) -> int:
    """Apply one distortion to each input image.

    Non-translation families act on the image as given. Translation treats
    the input as a raw frame: short side resized, then the shifted crop.
    Severity 0 copies the input unchanged.
    """
    family = cfg["distort"]["family"]
    severity = cfg["distort"]["severity"]
    seed = cfg["run"]["seed"]
    if not family:
        raise ConfigError("distort.family is required (--family)")
    if not args.inputs:
        raise ConfigError("no input images")
    table = _table(cfg)
    DistortionSpec(family, severity, seed, cfg["distortions"]["direction"])  # validate before any work
    out = _out_dir(cfg)
    cfgmod.write_provenance(cfg, out)
    for src in map(Path, args.inputs):
        img = read_image(src)
        raw = src.read_bytes()
        spec = DistortionSpec(family, severity, seed if family in STOCHASTIC else None,
                              cfg["distortions"]["direction"], src.stem)
        dst = out / f"{src.stem}.png"
        if severity == 0 and src.suffix.lower() == ".png":
            shutil.copyfile(src, dst)
        elif severity == 0:
            write_png(img, dst)
        else:
            write_png(apply(spec, GEOMETRY.frame(img) if family == "translation" else img, table, GEOMETRY), dst)
        _write_json(out / f"{src.stem}.json", {
            "input": src.name,
            "input_sha256": hashlib.sha256(raw).hexdigest(),
            "output": dst.name,
            "spec": spec.to_dict(),
            "parameter": table.param(family, severity) if severity else None,
            "geometry": {"short_side": GEOMETRY.short_side, "crop_size": GEOMETRY.crop_size}
            if family == "translation" else None,
            "tool": f"natrobust {__version__}",
        })
        print(dst)
    return 0


# --- gen-synthetic -------------------------------------------------------------

def cmd_gen_synthetic(cfg, args) -> int:
    sc = cfgmod.synth_config(cfg)
    out = _out_dir(cfg)
    manifest = generate_synthetic(sc, out)
    cfgmod.write_provenance(cfg, out)
    counts = {s: len(manifest.subset(s)) for s in ("train", "val", "test")}
    print(f"{len(manifest)} shots ({counts}) -> {out / 'manifest.csv'}")
    return 0


# --- train-ref -----------------------------------------------------------------

def _weight_key(technique: str) -> str:
    return "smoothing" if technique == "label_smoothing" else "reg"


def _train_configs(cfg) -> list[tuple[str, TrainConfig]]:
    t = cfg["trainer"]
    seed = cfg["run"]["seed"]
    techniques = list(dict.fromkeys(t["techniques"]))
    unknown = [x for x in techniques if x not in DEFAULT_GRID]
    if unknown or not techniques:
        raise ConfigError(f"trainer.techniques: unknown {unknown}; choose from {list(DEFAULT_GRID)}")
    if techniques[0] != "baseline":
        techniques = ["baseline"] + [x for x in techniques if x != "baseline"]
    bad = set(t["weights"]) - set(DEFAULT_GRID)
    if bad:
        raise ConfigError(f"trainer.weights: unknown techniques {sorted(bad)}")
    if t["n_seeds"] < 1:
        raise ConfigError("trainer.n_seeds must be >= 1")
    try:
        base = TrainConfig(lr=t["lr"], momentum=t["momentum"], epochs=t["epochs"],
                           batch_size=t["batch_size"], seed=seed, lr_schedule=t["lr_schedule"])
        pgd = PGDConfig(t["pgd_epsilon"], t["pgd_steps"], t["pgd_step_size"])
    except ValueError as exc:
        raise ConfigError(f"[trainer]: {exc}") from None
    out = []
    for tech in techniques:
        extra = {"pgd": pgd} if tech == "adversarial_logit_pairing" else {}
        if t["grid"]:
            knob, _ = DEFAULT_GRID[tech]
            for c in hyperparameter_grid(tech, replace(base, pgd=None), t["n_seeds"]):
                c = replace(c, **extra)
                out.append((f"{tech}-{knob}{getattr(c, knob):g}-s{c.seed}", c))
        else:
            kw = dict(extra)
            if tech in t["weights"]:
                kw[_weight_key(tech)] = float(t["weights"][tech])
            for s in range(t["n_seeds"]):
                out.append((f"{tech}-s{seed + s}", technique_config(tech, base, seed=seed + s, **kw)))
    return out


def cmd_train_ref(cfg, args) -> int:
    t = cfg["trainer"]
    manifest = _manifest(cfg, split=False)
    configs = _train_configs(cfg)
    data = training_data(manifest, t["n_views"], cfg["run"]["seed"], GEOMETRY)
    init = init_mlp((FEATURE_DIM, t["hidden"], manifest.num_classes), seed=cfg["run"]["seed"])
    out = _out_dir(cfg)
    cfgmod.write_provenance(cfg, out)
    (out / "checkpoints").mkdir(exist_ok=True)
    (out / "logs").mkdir(exist_ok=True)
    results = run_grid(init, data, [c for _, c in configs], workers=t["workers"])

    # the gate compares against baseline runs at the configured learning rate
    ref = [r.val_accuracy for (mid, c), r in zip(configs, results)
           if c.technique == "baseline" and c.lr == t["lr"] and r.val_accuracy is not None]
    baseline_acc = math.fsum(ref) / len(ref) if ref else None
    index = []
    for (model_id, c), r in zip(configs, results):
        ckpt = Path("checkpoints") / f"{model_id}.json"
        save_model(r.model, out / ckpt, {"model_id": model_id, "technique": c.technique,
                                         "config": c.to_dict()})
        write_log(r.log, out / "logs" / f"{model_id}.csv")
        acc = r.val_accuracy
        flagged = (c.technique != "baseline" and baseline_acc is not None and acc is not None
                   and accuracy_gate(baseline_acc, acc))
        index.append({"model_id": model_id, "technique": c.technique, "checkpoint": ckpt.as_posix(),
                      "val_accuracy": acc, "flagged": bool(flagged), "config": c.to_dict()})
        print(f"{model_id}: val_accuracy={_fmt(acc)}{' FLAGGED' if flagged else ''}")
    _write_json(out / MODELS_INDEX, {"baseline_val_accuracy": baseline_acc,
                                     "gate_pp": 1.2, "models": index})
    return 0


# --- predict -------------------------------------------------------------------

def _load_index(path) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"models index not found: {path}") from None
    return {m["model_id"]: dict(m, checkpoint=str(path.parent / m["checkpoint"])) for m in doc["models"]}


def _checkpoints(cfg) -> list[tuple[str, str]]:
    p = cfg["predictor"]
    out = []
    if p["models_index"]:
        out += [(mid, m["checkpoint"]) for mid, m in _load_index(p["models_index"]).items()]
    for path in p["checkpoints"]:
        _, meta = load_model(path)
        out.append((meta.get("model_id") or Path(path).stem, path))
    if not out:
        raise ConfigError("builtin backend needs predictor.checkpoints or predictor.models_index")
    ids = [m for m, _ in out]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"duplicate model ids among checkpoints: {ids}")
    return out


def cmd_predict(cfg, args) -> int:
    p = cfg["predictor"]
    manifest = _manifest(cfg)
    seed = cfg["run"]["seed"]
    plan = EvalPlan(families=tuple(p["families"]), severities=tuple(p["severities"]),
                    offsets=tuple(p["offsets"]), seeds=tuple(range(seed, seed + p["n_seeds"])),
                    direction=cfg["distortions"]["direction"])
    for fam in plan.families:
        DistortionSpec(fam, 0)  # validates the family name
    for sev in plan.severities:
        DistortionSpec("gaussian_blur", sev)
    table = _table(cfg)
    if p["backend"] == "builtin":
        backends = [(mid, builtin_backend(load_model(path)[0])) for mid, path in _checkpoints(cfg)]
    else:
        if not p["endpoint"]:
            raise ConfigError("service backend needs predictor.endpoint")
        k = p["num_classes"] or manifest.num_classes
        backends = [(p["model_id"], service_backend(p["endpoint"], k, timeout=p["timeout"],
                                                    retries=p["retries"],
                                                    max_in_flight=p["max_in_flight"]))]
    out = _out_dir(cfg)
    cfgmod.write_provenance(cfg, out)
    failures = []

    def on_error(model_id, entry, refs, exc):
        code = exc.code if isinstance(exc, NatRobustError) else type(exc).__name__
        for ref in refs:
            failures.append([model_id, entry.shot_id, ref.frame_offset, ref.family, ref.severity,
                             _fmt(ref.seed), code, str(exc)])

    merged = predict_models(manifest, backends, plan, table, GEOMETRY, on_error=on_error)
    save_predictions(merged, out / "predictions.csv")
    failure_path = out / "failures.csv"
    if failures:
        _write_rows(failure_path, ["model_id", "shot_id", "frame_offset", "transform_family",
                                   "severity", "seed", "error", "message"], failures)
    elif failure_path.exists():
        failure_path.unlink()
    _write_json(out / "predict_status.json", {
        "complete": not failures,
        "n_rows": len(merged),
        "n_failed_rows": len(failures),
        "models": [m for m, _ in backends],
    })
    print(f"{len(merged)} predictions -> {out / 'predictions.csv'}")
    if failures:
        first = failures[0]
        exc_cls = ServiceConnectionError if first[6] == "ServiceConnectionError" else NatRobustError
        raise exc_cls(f"{len(failures)} predictions failed (first: model {first[0]}, shot {first[1]}: "
                      f"{first[7]}); partial results flagged in {failure_path}")
    return 0


# --- report --------------------------------------------------------------------

def _severity_scores(results_by_family) -> dict:
    """family -> (severity-averaged r, seed spread, n_seeds)."""
    out = {}
    for family, by_seed in sorted(results_by_family.items()):
        per_seed = [average_over_severity(rs) for _, rs in sorted(by_seed.items(), key=lambda kv: _fmt(kv[0]))
                    if len(rs) == 5]
        if not per_seed:
            continue
        mean = math.fsum(per_seed) / len(per_seed)
        out[family] = (mean, max(per_seed) - min(per_seed), len(per_seed))
    return out


def _model_report(table: PredictionTable, manifest: FrameManifest, model_id: str, pooled: bool):
    acc = clean_accuracy(table, manifest, model_id)
    curve = robustness_vs_offset(table, manifest, model_id)
    results = list(curve.signed.values()) + list(curve.pooled.values())
    by_family = defaultdict(lambda: defaultdict(list))
    for t in table.transforms(model_id):
        if t.family in (IDENTITY, NATURAL):
            continue
        r = conditional_robustness(table, manifest, t, model_id)
        results.append(r)
        by_family[t.family][t.seed].append(r)
    scores = _severity_scores(by_family)
    scores = {"natural": (natural_average(curve, pooled), 0.0, 1), **scores}
    return acc, curve, results, scores


def _missing_list(exc: MissingPredictions) -> list:
    return [list(m) for m in exc.missing[:50]]


def cmd_report(cfg, args) -> int:
    rc = cfg["report"]
    paths = rc["predictions"]
    if not paths:
        raise ConfigError("report.predictions lists no prediction CSVs")
    manifest = _manifest(cfg)
    table = PredictionTable()
    for path in paths:
        table = table.merged(load_predictions(path, manifest.num_classes))
    models = table.model_ids()
    if not models:
        raise ConfigError("no predictions to report on")
    pooled = cfg["metrics"]["pooling"] == "pooled"
    out = _out_dir(cfg)
    cfgmod.write_provenance(cfg, out)
    notices = []

    all_results, accuracy, scores, curves = [], {}, {}, {}
    for m in list(models):
        try:
            acc, curve, results, sc = _model_report(table, manifest, m, pooled)
        except UndefinedConditional as exc:
            notices.append(f"model {m} skipped: {exc}")
            models.remove(m)
            continue
        accuracy[m], curves[m], scores[m] = acc, curve, sc
        all_results += results
    if not models:
        raise UndefinedConditional("robustness is undefined for every model: " + "; ".join(notices))
    write_robustness_csv(all_results, out / "robustness.csv")

    # robustness vs temporal offset
    offset_rows, lines = [], {}
    for m in models:
        for k, r in sorted(curves[m].pooled.items()):
            offset_rows.append([m, k, _fmt(offset_ms(k)), _fmt(r.r_value), r.numerator, r.denominator])
        lines[m] = [(offset_ms(k), r.r_value) for k, r in sorted(curves[m].pooled.items())]
    _write_rows(out / "robustness_vs_offset.csv",
                ["model_id", "abs_offset", "delta_ms", "r_value", "numerator", "denominator"], offset_rows)
    (out / "robustness_vs_offset.svg").write_text(svg.line_plot(
        lines, "Natural robustness vs. frame distance", "|dt| (ms)", "conditional robustness r"))

    # severity averages and accuracy vs robustness
    transforms = list(dict.fromkeys(t for m in models for t in scores[m]))
    _write_rows(out / "severity_average.csv", ["model_id", "transform", "r_mean", "seed_spread", "n_seeds"],
                [[m, t, _fmt(v[0]), _fmt(v[1]), v[2]] for m in models for t, v in scores[m].items()])
    _write_rows(out / "accuracy_vs_robustness.csv", ["model_id", "clean_accuracy", "transform", "robustness"],
                [[m, _fmt(accuracy[m]), t, _fmt(scores[m][t][0])] for m in models for t in scores[m]])
    points = {t: [(accuracy[m], scores[m][t][0], m) for m in models if t in scores[m]] for t in transforms}
    (out / "accuracy_vs_robustness.svg").write_text(svg.scatter_plot(
        points, "Clean accuracy vs. robustness", "clean accuracy", "robustness (severity-averaged r)"))
    ranked = rank_by_r_squared(accuracy, {t: {m: scores[m][t][0] for m in models if t in scores[m]}
                                          for t in transforms})
    _write_rows(out / "accuracy_r2.csv", ["transform", "pearson_r", "r_squared"],
                [[t, _fmt(r), _fmt(r2)] for t, r, r2 in ranked])

    # correlation between transforms across models
    matrix = correlation_matrix({m: {t: v[0] for t, v in scores[m].items()} for m in models})
    write_correlation_csv(matrix, out / "correlation.csv")
    heat = out / "correlation_heatmap.svg"
    if len(models) >= 2:
        heat.write_text(svg.heatmap(list(matrix.transforms),
                                    [[matrix.r(a, b) for b in matrix.transforms] for a in matrix.transforms],
                                    "Correlation of robustness across models"))
    else:
        if heat.exists():
            heat.unlink()
        notices.append("correlation heatmap omitted: it needs predictions from at least 2 models")

    _technique_report(cfg, models, scores, accuracy, out, notices)
    _distance_report(cfg, manifest, table, out, notices)

    _write_json(out / "report.json", {
        "models": {m: {"clean_accuracy": accuracy[m],
                       "robustness": {t: v[0] for t, v in scores[m].items()}} for m in models},
        "pooling": cfg["metrics"]["pooling"],
        "notices": notices,
    })
    for n in notices:
        print(f"notice: {n}")
    print(f"report -> {out}")
    return 0


def _technique_report(cfg, models, scores, accuracy, out: Path, notices: list) -> None:
    svg_path = out / "technique_vs_baseline.svg"
    index_path = cfg["report"]["models_index"]
    if not index_path:
        notices.append("technique-vs-baseline plot omitted: report.models_index not set")
        return
    index = _load_index(index_path)
    technique = {m: index[m]["technique"] for m in models if m in index}
    base = [m for m in models if technique.get(m) == "baseline"]
    others = sorted({t for t in technique.values() if t != "baseline"})
    if not base or not others:
        notices.append("technique-vs-baseline plot omitted: needs baseline and technique models")
        return
    transforms = [t for t in scores[base[0]] if all(t in scores[m] for m in models if m in technique)]

    def mean_over(ms, key):
        return math.fsum(key(m) for m in ms) / len(ms)

    rows, series = [], {}
    base_acc = mean_over(base, accuracy.get)
    for tech in others:
        ms = [m for m in models if technique.get(m) == tech]
        pts = []
        for t in transforms:
            x = mean_over(base, lambda m: scores[m][t][0])
            y = mean_over(ms, lambda m: scores[m][t][0])
            pts.append((x, y, t))
            rows.append([tech, t, _fmt(x), _fmt(y), len(ms)])
        series[tech] = pts
    acc_rows = []
    for tech in others:
        ms = [m for m in models if technique.get(m) == tech]
        acc = mean_over(ms, accuracy.get)
        acc_rows.append([tech, _fmt(base_acc), _fmt(acc), int(accuracy_gate(base_acc, acc))])
    _write_rows(out / "technique_vs_baseline.csv",
                ["technique", "transform", "baseline_robustness", "technique_robustness", "n_models"], rows)
    _write_rows(out / "technique_accuracy.csv",
                ["technique", "baseline_accuracy", "technique_accuracy", "flagged"], acc_rows)
    svg_path.write_text(svg.scatter_plot(series, "Robustness: technique vs. baseline",
                                         "baseline robustness", "technique robustness", equality_line=True))


def _distance_report(cfg, manifest, table, out: Path, notices: list) -> None:
    if not cfg["report"]["distances"]:
        return
    a = cfg["analysis"]
    pairs = _analysis_pairs(cfg, manifest)
    samples, failures = pair_distances(pairs, a["preprocess"], GEOMETRY)
    if not samples:
        notices.append("L-inf CDF omitted: no decodable frame pairs")
        return
    series = {"all pairs": cdf([s.linf for s in samples])}
    model_id = a["model_id"]
    if model_id:
        marked = mark_brittle(samples, table, manifest, model_id)
        brittle = [s.linf for s in marked if s.brittle]
        if brittle:
            series["brittle pairs"] = cdf(brittle)
    _write_rows(out / "linf_cdf.csv", ["series", "threshold", "fraction"],
                [[name, _fmt(t), _fmt(f)] for name, c in series.items() for t, f in c.table()])
    summary = summarize(samples, AnalysisConfig(epsilon=a["epsilon"]))
    _write_rows(out / "distance_summary.csv", ["statistic", "value"],
                [[k, _fmt(v)] for k, v in sorted(summary.items())])
    (out / "linf_cdf.svg").write_text(svg.step_plot(
        {name: c.table() for name, c in series.items()}, "L-inf distance between neighbouring frames",
        "L-inf distance (8-bit units)", "fraction of pairs", vlines=[(a["epsilon"], f"eps={a['epsilon']:g}")]))
    if failures:
        notices.append(f"{len(failures)} frame pairs could not be read and were skipped")


# --- adv-analysis --------------------------------------------------------------

def _analysis_pairs(cfg, manifest: FrameManifest):
    a = cfg["analysis"]
    pairs = [p for k in a["offsets"] for p in pairs_at_offset(manifest, k)]
    n = a["sample_size"]
    if n < 0:
        raise ConfigError("analysis.sample_size must be >= 0")
    if n and n < len(pairs):
        seed = cfg["run"]["seed"]
        ranked = sorted(pairs, key=lambda p: (keyed_uniform(seed, "pair-sample", p.shot_id, p.offset),
                                              p.shot_id, p.offset))
        pairs = sorted(ranked[:n], key=lambda p: (p.shot_id, p.offset))
    return pairs


def cmd_adv_analysis(cfg, args) -> int:
    a = cfg["analysis"]
    manifest = _manifest(cfg)
    acfg = AnalysisConfig(epsilon=a["epsilon"], offsets=tuple(a["offsets"]),
                          sample_size=a["sample_size"] or None, preprocess=a["preprocess"])
    pairs = _analysis_pairs(cfg, manifest)
    out = _out_dir(cfg)
    cfgmod.write_provenance(cfg, out)
    samples, failures = pair_distances(pairs, acfg.preprocess, GEOMETRY)
    if a["predictions"]:
        table = load_predictions(a["predictions"], manifest.num_classes)
        model_id = a["model_id"]
        if not model_id:
            ids = table.model_ids()
            if len(ids) != 1:
                raise ConfigError(f"analysis.model_id must name one of {ids}")
            model_id = ids[0]
        samples = mark_brittle(samples, table, manifest, model_id)
    write_samples_csv(samples, out / "linf_samples.csv")
    if failures:
        _write_rows(out / "pair_failures.csv", ["shot_id", "offset", "message"],
                    [[p.shot_id, p.offset, msg] for p, msg in failures])
    summary = summarize(samples, acfg)
    summary.update({"n_failed_pairs": len(failures), "offsets": list(acfg.offsets),
                    "preprocess": acfg.preprocess})
    c = cdf([s.linf for s in samples])
    write_cdf_csv(c, out / "linf_cdf.csv")
    _write_json(out / "summary.json", summary)
    (out / "linf_cdf.svg").write_text(svg.step_plot(
        {"all pairs": c.table()}, "L-inf distance between neighbouring frames",
        "L-inf distance (8-bit units)", "fraction of pairs", vlines=[(acfg.epsilon, f"eps={acfg.epsilon:g}")]))
    print(f"{summary['n_pairs']} pairs, mean {summary['mean']:.2f}, "
          f"within eps {summary['fraction_within_epsilon']:.4f} -> {out}")
    return 0


# --- argument parsing ----------------------------------------------------------

COMMANDS = {
    "distort": cmd_distort,
    "gen-synthetic": cmd_gen_synthetic,
    "train-ref": cmd_train_ref,
    "predict": cmd_predict,
    "report": cmd_report,
    "adv-analysis": cmd_adv_analysis,
}

# flag -> (config key, type, help); ``nargs`` lists map to arrays
FLAGS = {
    "distort": [
        ("--family", "distort.family", str, "distortion family"),
        ("--severity", "distort.severity", int, "severity 0..5 (0 = identity)"),
        ("--direction", "distortions.direction", str, "translation direction (+x, -x, +y, -y)"),
    ],
    "gen-synthetic": [
        ("--num-shots", "synthetic.num_shots", int, "number of shots"),
        ("--num-classes", "synthetic.num_classes", int, "number of classes"),
    ],
    "train-ref": [
        ("--manifest", "dataset.manifest", str, "manifest CSV"),
        ("--techniques", "trainer.techniques", "list", "training techniques"),
        ("--epochs", "trainer.epochs", int, "epochs per run"),
        ("--lr", "trainer.lr", float, "peak learning rate"),
        ("--n-seeds", "trainer.n_seeds", int, "seeds per setting"),
        ("--workers", "trainer.workers", int, "parallel training processes"),
    ],
    "predict": [
        ("--manifest", "dataset.manifest", str, "manifest CSV"),
        ("--split", "dataset.split", str, "manifest split to evaluate (or 'all')"),
        ("--backend", "predictor.backend", str, "builtin or service"),
        ("--checkpoints", "predictor.checkpoints", "list", "model checkpoints (builtin backend)"),
        ("--models-index", "predictor.models_index", str, "models.json written by train-ref"),
        ("--endpoint", "predictor.endpoint", str, "tcp://host:port or stdio:<command>"),
        ("--model-id", "predictor.model_id", str, "model id for the service backend"),
        ("--families", "predictor.families", "list", "distortion families to evaluate"),
    ],
    "report": [
        ("--manifest", "dataset.manifest", str, "manifest CSV"),
        ("--split", "dataset.split", str, "manifest split (or 'all')"),
        ("--predictions", "report.predictions", "list", "prediction CSVs"),
        ("--models-index", "report.models_index", str, "models.json for technique labels"),
    ],
    "adv-analysis": [
        ("--manifest", "dataset.manifest", str, "manifest CSV"),
        ("--split", "dataset.split", str, "manifest split (or 'all')"),
        ("--epsilon", "analysis.epsilon", float, "epsilon in 8-bit units"),
        ("--predictions", "analysis.predictions", str, "prediction CSV for brittle-pair marking"),
        ("--model-id", "analysis.model_id", str, "model whose predictions mark brittle pairs"),
    ],
}


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="natrobust", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"natrobust {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        sp = sub.add_parser(name, help=COMMANDS[name].__doc__.splitlines()[0] if COMMANDS[name].__doc__ else None)
        sp.add_argument("--config", help="TOML run configuration")
        sp.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override any config key (repeatable)")
        sp.add_argument("--out", dest="run.output_dir", help="output directory")
        sp.add_argument("--seed", dest="run.seed", type=int, help="master seed")
        for flag, key, typ, help_ in FLAGS.get(name, ()):
            if typ == "list":
                sp.add_argument(flag, dest=key, nargs="+", help=help_)
            else:
                sp.add_argument(flag, dest=key, type=typ, help=help_)
        if name == "distort":
            sp.add_argument("inputs", nargs="*", help="input images")
    return ap


def resolve_config(args) -> dict:
    cfg = cfgmod.load(args.config)
    cfg = cfgmod.apply_assignments(cfg, args.set)
    overrides: dict = {}
    for dest, value in vars(args).items():
        if "." in dest and value is not None:
            section, key = dest.split(".", 1)
            overrides.setdefault(section, {})[key] = value
    return cfgmod.merge(cfg, overrides)


def _fail(code: str, message: str, exit_code: int, **extra) -> int:
    doc = {"error": code, "message": message, **extra}
    sys.stderr.write(json.dumps(doc, sort_keys=True) + "\n")
    return exit_code


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve_config(args)
        return COMMANDS[args.command](cfg, args)
    except MissingPredictions as exc:
        return _fail(exc.code, str(exc), exc.exit_code, missing=_missing_list(exc))
    except NatRobustError as exc:
        return _fail(exc.code, str(exc), exc.exit_code)
    except ValueError as exc:
        return _fail("InvalidValue", str(exc), 1)
    except OSError as exc:
        return _fail(type(exc).__name__, str(exc), 2)


if __name__ == "__main__":
    sys.exit(main())
