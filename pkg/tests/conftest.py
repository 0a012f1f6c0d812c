import numpy as np
import pytest

from natrobust.image import Image


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_image(rng, w=16, h=12):
    return Image(rng.integers(0, 256, (h, w, 3), dtype=np.uint8))


def smooth_image(rng, w=64, h=48):
    """Low-frequency 'natural-ish' image: a blurred random field plus a gradient."""
    coarse = rng.random((h // 8 + 2, w // 8 + 2, 3))
    ys = np.linspace(0, coarse.shape[0] - 1.001, h)
    xs = np.linspace(0, coarse.shape[1] - 1.001, w)
    y0, x0 = ys.astype(int), xs.astype(int)
    ty, tx = (ys - y0)[:, None, None], (xs - x0)[None, :, None]
    c = coarse
    field = ((1 - ty) * (1 - tx) * c[y0][:, x0] + (1 - ty) * tx * c[y0][:, x0 + 1]
             + ty * (1 - tx) * c[y0 + 1][:, x0] + ty * tx * c[y0 + 1][:, x0 + 1])
    grad = np.linspace(0, 0.3, w)[None, :, None]
    return Image.from_float(0.15 + 0.6 * field + grad * 0.5)


def synthetic_views(n, seed=0):
    """Evaluation views (resize 256, centre crop 224) of rendered synthetic anchors."""
    from natrobust.dataset import SynthVideoConfig, render_shot
    from natrobust.image import EvalGeometry

    cfg = SynthVideoConfig(seed=seed, frames_per_shot=1)
    g = EvalGeometry()
    return [g.preprocess(render_shot(cfg, i % cfg.num_classes, f"fixture{i}")[0]) for i in range(n)]


# --- acceptance verdicts -----------------------------------------------------------

_VERDICTS: dict = {}


def record_verdict(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
    _VERDICTS[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[n])
