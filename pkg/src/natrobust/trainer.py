"""Small fully-connected reference classifier trained by explicit backprop.

Implements the six regularization / adversarial-training variants compared
against a plain cross-entropy baseline, a PGD attack for adversarial logit
pairing, minibatch SGD, and a JSON checkpoint format.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from natrobust.errors import LabelOutOfRange, NonFiniteLoss, ShapeMismatch
from natrobust.image import Image, resize_float
from natrobust.rng import keyed_stream

FEATURE_SIDE = 16
FEATURE_DIM = FEATURE_SIDE * FEATURE_SIDE * 3

TECHNIQUES = (
    "baseline",
    "weight_decay",
    "label_smoothing",
    "clean_logit_pairing",
    "clean_logit_squeezing",
    "adversarial_logit_pairing",
    "sigmoid_multiclass",
)
REGULARIZERS = TECHNIQUES[1:]


def featurize(img: Image) -> np.ndarray:
    """16x16 box-downsample, flattened to 768 unit-interval floats."""
    return resize_float(img.to_float(), FEATURE_SIDE, FEATURE_SIDE, "box").ravel()


@dataclass
class MLPModel:
    weights: list  # W[l] has shape (fan_in, fan_out)
    biases: list

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=np.float64) for w in self.weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in self.biases]
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatch("need one bias vector per weight matrix")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ShapeMismatch(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeMismatch(f"layer {i} input {w.shape[0]} != previous output")

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    @property
    def num_classes(self) -> int:
        return self.weights[-1].shape[1]

    def params(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]

    def copy(self) -> "MLPModel":
        return MLPModel([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(p)) for p in self.params())


def init_mlp(sizes=(FEATURE_DIM, 64, 8), seed: int = 0) -> MLPModel:
    rng = keyed_stream(int(seed), "mlp-init", tuple(sizes))
    weights = [rng.standard_normal((a, b)) * np.sqrt(2.0 / a) for a, b in zip(sizes, sizes[1:])]
    return MLPModel(weights, [np.zeros(b) for b in sizes[1:]])


def zeros_like(model: MLPModel) -> MLPModel:
    return MLPModel([np.zeros_like(w) for w in model.weights], [np.zeros_like(b) for b in model.biases])


def _as_batch(model: MLPModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    x2 = x[None, :] if x.ndim == 1 else x
    if x2.ndim != 2 or x2.shape[1] != model.sizes[0]:
        raise ShapeMismatch(f"input of shape {x.shape} for a model expecting {model.sizes[0]} features")
    return x2


def _forward(model: MLPModel, x: np.ndarray):
    acts = [x]
    pre = []
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        pre.append(z)
        h = z if i == last else np.maximum(z, 0.0)
        acts.append(h)
    return h, (acts, pre)


def _backward(model: MLPModel, cache, dlogits: np.ndarray, need_input_grad=False):
    acts, pre = cache
    gw = [None] * len(model.weights)
    gb = [None] * len(model.weights)
    delta = dlogits
    for i in range(len(model.weights) - 1, -1, -1):
        gw[i] = acts[i].T @ delta
        gb[i] = delta.sum(axis=0)
        if i > 0 or need_input_grad:
            delta = delta @ model.weights[i].T
            if i > 0:
                delta = delta * (pre[i - 1] > 0)
    return MLPModel(gw, gb), (delta if need_input_grad else None)


def forward(model: MLPModel, x) -> np.ndarray:
    """Logits for one feature vector ``(d,)`` or a batch ``(B, d)``."""
    x = np.asarray(x, dtype=np.float64)
    logits, _ = _forward(model, _as_batch(model, x))
    return logits[0] if x.ndim == 1 else logits


def predict_labels(logits: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum: ties go to the lowest class index
    return np.argmax(np.atleast_2d(logits), axis=1)


def _log_softmax(z):
    m = z.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    return z - lse


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Per-example softmax cross-entropy."""
    return -_log_softmax(logits)[np.arange(len(y)), y]


@dataclass(frozen=True)
class PGDConfig:
    epsilon: float = 8 / 255
    steps: int = 5
    step_size: float = 2 / 255


@dataclass(frozen=True)
class TrainConfig:
    technique: str = "baseline"
    reg: float = 0.0  # technique weight (lambda)
    smoothing: float = 0.0  # label-smoothing mass
    pgd: PGDConfig | None = None
    lr: float = 0.02
    momentum: float = 0.9
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    lr_schedule: str = "cosine"  # or "constant"

    def __post_init__(self):
        if self.technique not in TECHNIQUES:
            raise ValueError(f"unknown technique {self.technique!r}")
        if self.reg < 0:
            raise ValueError("reg must be >= 0")
        if not 0.0 <= self.smoothing < 1.0:
            raise ValueError("smoothing must be in [0, 1)")
        if (self.technique == "adversarial_logit_pairing") != (self.pgd is not None):
            raise ValueError("pgd settings are required for, and only for, adversarial_logit_pairing")
        if self.epochs < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs >= 0, batch_size >= 1 and lr > 0 required")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError("lr_schedule must be 'cosine' or 'constant'")

    def lr_at(self, epoch: int) -> float:
        """Learning rate for 1-based ``epoch``; cosine decays to zero at the last epoch."""
        if self.lr_schedule == "constant":
            return self.lr
        return 0.5 * self.lr * (1.0 + math.cos(math.pi * (epoch - 1) / self.epochs))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if d.get("pgd") is not None:
            d["pgd"] = PGDConfig(**d["pgd"])
        return cls(**d)


def _check_labels(model, y):
    y = np.asarray(y)
    if y.ndim != 1 or not np.issubdtype(y.dtype, np.integer):
        raise ShapeMismatch("labels must be a 1-D integer array")
    if y.size and (y.min() < 0 or y.max() >= model.num_classes):
        raise LabelOutOfRange(f"labels must be in [0, {model.num_classes})")
    return y


def input_gradient(model: MLPModel, x: np.ndarray, y: np.ndarray):
    """Per-example cross-entropy and its gradient with respect to the input."""
    logits, cache = _forward(model, x)
    logp = _log_softmax(logits)
    rows = np.arange(len(y))
    dz = np.exp(logp)
    dz[rows, y] -= 1.0
    _, dx = _backward(model, cache, dz, need_input_grad=True)
    return -logp[rows, y], dx


def _ball_bounds(x: np.ndarray, eps: float):
    """Per-coordinate [lo, hi] of the eps ball intersected with [0, 1].

    ``x + eps`` can round one ulp past the ball, so each edge is nudged
    inward until ``|edge - x| <= eps`` holds in floating point.
    """
    hi = x + eps
    lo = x - eps
    while np.any(over := hi - x > eps):
        hi = np.where(over, np.nextafter(hi, -np.inf), hi)
    while np.any(over := x - lo > eps):
        lo = np.where(over, np.nextafter(lo, np.inf), lo)
    return np.clip(lo, 0.0, 1.0), np.clip(hi, 0.0, 1.0)


def pgd_attack(model: MLPModel, x, y, pgd: PGDConfig) -> np.ndarray:
    """L-inf PGD on cross-entropy, starting at ``x``.

    Each step moves ``step_size`` along the gradient sign, then projects onto
    the epsilon ball and [0, 1]. The highest-loss iterate per example
    (including ``x`` itself) is returned.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = _as_batch(model, x)
    yb = _check_labels(model, np.atleast_1d(np.asarray(y)))
    if len(yb) != len(xb):
        raise ShapeMismatch("one label per input required")
    if pgd.epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    lo, hi = _ball_bounds(xb, pgd.epsilon)
    best = xb.copy()
    best_ce, grad = input_gradient(model, xb, yb)
    cur = xb.copy()
    for _ in range(pgd.steps):
        cur = np.clip(cur + pgd.step_size * np.sign(grad), lo, hi)
        ce, grad = input_gradient(model, cur, yb)
        better = ce >= best_ce
        best[better] = cur[better]
        best_ce = np.where(better, ce, best_ce)
    return best[0] if single else best


def _objective(model: MLPModel, x, y, config: TrainConfig, x_adv=None, need_grad=True):
    x = _as_batch(model, x)
    y = _check_labels(model, y)
    if len(x) == 0 or len(x) != len(y):
        raise ShapeMismatch("batch must be non-empty with one label per example")
    n, k = len(x), model.num_classes
    rows = np.arange(n)
    onehot = np.zeros((n, k))
    onehot[rows, y] = 1.0
    tech = config.technique
    logits, cache = _forward(model, x)
    logp = _log_softmax(logits)
    p = np.exp(logp)

    if tech == "sigmoid_multiclass":
        # BCE with logits: softplus(z) - t*z, summed over classes
        sp = np.logaddexp(0.0, logits)
        base = float(np.mean(np.sum(sp - onehot * logits, axis=1)))
        dz = (0.5 * (1.0 + np.tanh(0.5 * logits)) - onehot) / n
    elif tech == "label_smoothing":
        target = (1.0 - config.smoothing) * onehot + config.smoothing / k
        base = float(np.mean(-np.sum(target * logp, axis=1)))
        dz = (p - target) / n
    else:
        base = float(np.mean(-logp[rows, y]))
        dz = (p - onehot) / n

    term = 0.0
    lam = config.reg
    adv_cache = None
    if tech == "clean_logit_squeezing":
        term = lam * float(np.mean(np.sum(logits ** 2, axis=1)))
        dz = dz + 2.0 * lam * logits / n
    elif tech == "clean_logit_pairing":
        pairs = n // 2
        if pairs:
            a, b = logits[0:2 * pairs:2], logits[1:2 * pairs:2]
            diff = a - b
            term = lam * float(np.mean(np.sum(diff ** 2, axis=1)))
            g = 2.0 * lam * diff / pairs
            dz = dz.copy()
            dz[0:2 * pairs:2] += g
            dz[1:2 * pairs:2] -= g
    elif tech == "adversarial_logit_pairing":
        if x_adv is None:
            x_adv = pgd_attack(model, x, y, config.pgd)
        adv_logits, adv_cache = _forward(model, _as_batch(model, x_adv))
        adv_logp = _log_softmax(adv_logits)
        base = base + float(np.mean(-adv_logp[rows, y]))
        diff = logits - adv_logits
        term = lam * float(np.mean(np.sum(diff ** 2, axis=1)))
        g = 2.0 * lam * diff / n
        dz = dz + g
        dz_adv = (np.exp(adv_logp) - onehot) / n - g

    if tech == "weight_decay":
        term = lam * 0.5 * sum(float(np.sum(w * w)) for w in model.weights)

    loss = base + term
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"{tech}: loss is {loss} (base {base}, technique term {term})")
    if not need_grad:
        return base, term, None
    grads, _ = _backward(model, cache, dz)
    if adv_cache is not None:
        g_adv, _ = _backward(model, adv_cache, dz_adv)
        grads = MLPModel([a + b for a, b in zip(grads.weights, g_adv.weights)],
                         [a + b for a, b in zip(grads.biases, g_adv.biases)])
    if tech == "weight_decay":
        grads.weights = [gw + lam * w for gw, w in zip(grads.weights, model.weights)]
    return base, term, grads


def loss_and_grad(model: MLPModel, x, y, config: TrainConfig, x_adv=None):
    """Total loss for ``config.technique`` and its exact gradient.

    For adversarial logit pairing the PGD example is treated as a constant
    input; pass ``x_adv`` to reuse a precomputed one.
    """
    base, term, grads = _objective(model, x, y, config, x_adv)
    return base + term, grads


def loss_breakdown(model: MLPModel, x, y, config: TrainConfig, x_adv=None) -> dict:
    base, term, _ = _objective(model, x, y, config, x_adv, need_grad=False)
    return {"base": base, "technique": term, "total": base + term}


# --- training ----------------------------------------------------------------

@dataclass
class TrainingData:
    """Featurized examples.

    ``x`` is ``(N, d)`` or ``(N, V, d)``; with V augmented views per example,
    each epoch draws one view per example.
    """

    x: np.ndarray
    y: np.ndarray
    x_val: np.ndarray | None = None
    y_val: np.ndarray | None = None

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.y = np.asarray(self.y, dtype=np.int64)
        if self.x.ndim == 2:
            self.x = self.x[:, None, :]
        if self.x.ndim != 3 or len(self.x) != len(self.y):
            raise ShapeMismatch("x must be (N, d) or (N, V, d) with one label per example")
        if self.x_val is not None:
            self.x_val = np.asarray(self.x_val, dtype=np.float64)
            self.y_val = np.asarray(self.y_val, dtype=np.int64)


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_accuracy: float | None


def accuracy(model: MLPModel, x, y) -> float:
    if x is None or len(x) == 0:
        return float("nan")
    return float(np.mean(predict_labels(forward(model, x)) == np.asarray(y)))


def train(model_init: MLPModel, data: TrainingData, config: TrainConfig):
    """Minibatch SGD with momentum; returns ``(model, [EpochLog, ...])``.

    Shuffling and view selection come from keyed streams of ``config.seed``,
    so identical inputs give identical parameter trajectories.
    """
    model = model_init.copy()
    velocity = zeros_like(model)
    n, n_views, _ = data.x.shape
    log = []
    for epoch in range(1, config.epochs + 1):
        rng = keyed_stream(config.seed, "epoch", epoch)
        order = rng.permutation(n)
        views = rng.integers(0, n_views, size=n)
        losses = []
        lr = config.lr_at(epoch)
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            xb = data.x[idx, views[idx]]
            try:
                loss, grads = loss_and_grad(model, xb, data.y[idx], config)
            except NonFiniteLoss as exc:
                raise NonFiniteLoss(f"epoch {epoch}, batch at {start}: {exc}") from None
            losses.append(loss)
            for params, vel, g in ((model.weights, velocity.weights, grads.weights),
                                   (model.biases, velocity.biases, grads.biases)):
                for i in range(len(params)):
                    vel[i] = config.momentum * vel[i] - lr * g[i]
                    params[i] = params[i] + vel[i]
        if not model.all_finite():
            raise NonFiniteLoss(f"epoch {epoch}: parameters became non-finite")
        val = accuracy(model, data.x_val, data.y_val) if data.x_val is not None else None
        log.append(EpochLog(epoch, float(np.mean(losses)), val))
    return model, log


def write_log(log, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "train_loss", "val_accuracy"])
        for e in log:
            w.writerow([e.epoch, repr(e.train_loss), "" if e.val_accuracy is None else repr(e.val_accuracy)])


# --- checkpoints ---------------------------------------------------------------

CHECKPOINT_FORMAT = "natrobust-mlp"
CHECKPOINT_VERSION = 1


def save_model(model: MLPModel, path, meta: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "sizes": model.sizes,
        "weights": [w.ravel().tolist() for w in model.weights],
        "biases": [b.tolist() for b in model.biases],
        "meta": meta or {},
    }
    Path(path).write_text(json.dumps(doc, sort_keys=True) + "\n")


def load_model(path) -> tuple[MLPModel, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ShapeMismatch(f"{path}: not a v{CHECKPOINT_VERSION} {CHECKPOINT_FORMAT} checkpoint")
    sizes = doc["sizes"]
    weights = [np.asarray(w, dtype=np.float64).reshape(a, b)
               for w, a, b in zip(doc["weights"], sizes, sizes[1:])]
    return MLPModel(weights, doc["biases"]), doc.get("meta", {})


# --- hyperparameter grid -------------------------------------------------------

DEFAULT_GRID = {
    "baseline": ("lr", (0.01, 0.015, 0.02, 0.03, 0.04)),
    "weight_decay": ("reg", (1e-4, 3e-4, 1e-3, 3e-3, 1e-2)),
    "label_smoothing": ("smoothing", (0.02, 0.05, 0.1, 0.15, 0.2)),
    "clean_logit_pairing": ("reg", (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)),
    "clean_logit_squeezing": ("reg", (1e-3, 3e-3, 1e-2, 3e-2, 1e-1)),
    "adversarial_logit_pairing": ("reg", (0.01, 0.03, 0.1, 0.3, 1.0)),
    "sigmoid_multiclass": ("lr", (0.01, 0.015, 0.02, 0.03, 0.04)),
}
DEFAULT_TECHNIQUE_WEIGHT = {
    "baseline": {},
    "weight_decay": {"reg": 1e-3},
    "label_smoothing": {"smoothing": 0.1},
    "clean_logit_pairing": {"reg": 1e-2},
    "clean_logit_squeezing": {"reg": 1e-2},
    "adversarial_logit_pairing": {"reg": 0.1},
    "sigmoid_multiclass": {},
}


def technique_config(technique: str, base: TrainConfig, **overrides) -> TrainConfig:
    """``base`` switched to ``technique`` with its default weight."""
    kw = dict(DEFAULT_TECHNIQUE_WEIGHT[technique])
    kw["pgd"] = (base.pgd or PGDConfig()) if technique == "adversarial_logit_pairing" else None
    kw.update(overrides)
    return replace(base, technique=technique, reg=kw.pop("reg", 0.0),
                   smoothing=kw.pop("smoothing", 0.0), **kw)


def hyperparameter_grid(technique: str, base: TrainConfig, n_seeds: int = 5) -> list[TrainConfig]:
    """5 weights x ``n_seeds`` seeds (25 settings by default)."""
    knob, values = DEFAULT_GRID[technique]
    return [technique_config(technique, base, **{knob: v}, seed=base.seed + s)
            for v in values for s in range(n_seeds)]


@dataclass
class RunResult:
    config: TrainConfig
    model: MLPModel
    log: list = field(default_factory=list)

    @property
    def val_accuracy(self):
        return self.log[-1].val_accuracy if self.log else None


def _run_one(args):
    model_init, data, config = args
    model, log = train(model_init, data, config)
    return RunResult(config, model, log)


def run_grid(model_init: MLPModel, data: TrainingData, configs, workers: int = 1) -> list[RunResult]:
    """Train every config from the same init; results keep the input order."""
    jobs = [(model_init, data, c) for c in configs]
    if workers <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


ACCURACY_GATE_PP = 1.2


def accuracy_gate(baseline_acc: float, technique_acc: float, tolerance_pp: float = ACCURACY_GATE_PP) -> bool:
    """True when the technique run should be flagged (accuracy drop > tolerance)."""
    return (baseline_acc - technique_acc) * 100.0 > tolerance_pp + 1e-9
