import json
import shutil

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from strokeplan import canvas as cv
from strokeplan.executor import (
    Executor,
    ExecutorConfig,
    MalformedRecordError,
    ManifestMismatchError,
    MissingFileError,
    execute_stroke,
    load_dataset,
    realized_force,
    save_dataset,
    selfplay_collect,
)
from strokeplan.stroke import ActionBounds, StrokeAction, StrokeColor, StrokeRenderer

NOISY = ExecutorConfig(width_jitter_sd=0.1, edge_noise_sd=0.3, opacity_jitter_sd=0.1, seed=3)


@given(st.floats(10, 90), st.floats(10, 90), st.floats(0, 70), st.floats(-15, 15), st.floats(0, 360),
       st.floats(0.1, 4.0), st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=25)
def test_noiseless_equals_renderer(x0, y0, l, b, alpha, F, c, a):
    u, color = StrokeAction(x0, y0, l, b, alpha, F), StrokeColor(c, a)
    base = np.full((100, 100), 0.7)
    assert np.array_equal(execute_stroke(base, u, color, ExecutorConfig()), StrokeRenderer().render(base, u, color))


def test_determinism_from_fresh_state():
    u, color = StrokeAction(20, 30, 40, 8, 30, 1.0), StrokeColor(0.2, 0.9)
    base = cv.blank_canvas()
    a = [Executor(NOISY).execute(base, u, color) for _ in range(2)]
    assert np.array_equal(a[0], a[1])
    ex = Executor(NOISY)
    first, second = ex.execute(base, u, color), ex.execute(base, u, color)
    assert np.array_equal(first, a[0]) and not np.array_equal(first, second)


def test_width_jitter_area_spread():
    cfg = ExecutorConfig(width_jitter_sd=0.1, seed=1)
    ex = Executor(cfg)
    u, color = StrokeAction(20, 50, 50, 0, 0, 0.5), StrokeColor(0.0)
    areas = np.array([(ex.execute(cv.blank_canvas(), u, color) < 1.0).sum() for _ in range(200)])
    ratio = areas.std(ddof=1) / areas.mean()
    assert 0.05 <= ratio <= 0.2


def test_transparent_jitter_leaves_canvas():
    base = cv.blank_canvas()
    out = execute_stroke(base, StrokeAction(20, 50, 50, 0, 0, 0.5), StrokeColor(0.0, 0.0), NOISY)
    assert np.array_equal(out, base)


def test_force_realization_close_to_command():
    for F in (0.3, 1.0, 3.0):
        assert abs(realized_force(F) - F) < 0.01


def test_single_triple():
    data = selfplay_collect(1, ActionBounds(), [StrokeColor(0.0)], ExecutorConfig())
    assert len(data) == 1 and np.array_equal(data[0].before, cv.blank_canvas())


def test_round_robin_colors():
    c1, c2 = StrokeColor(0.1), StrokeColor(0.5)
    data = selfplay_collect(4, ActionBounds(), [c1, c2], ExecutorConfig(), strokes_per_canvas=3)
    assert [t.color for t in data] == [c1, c2, c1, c2]


def test_canvas_resets():
    data = selfplay_collect(10, ActionBounds(), [StrokeColor(0.0)], ExecutorConfig(), strokes_per_canvas=4)
    for i, t in enumerate(data):
        if i % 4 == 0:
            assert np.array_equal(t.before, cv.blank_canvas())
        else:
            assert np.array_equal(t.before, data[i - 1].after)


def test_uniform_marginals():
    bounds = ActionBounds()
    data = selfplay_collect(900, bounds, [StrokeColor(0.0)], ExecutorConfig(seed=11))
    vals = np.array([t.action.to_array() for t in data])
    for k, (lo, hi) in enumerate(zip(bounds.lo, bounds.hi)):
        d = stats.kstest(vals[:, k], stats.uniform(loc=lo, scale=hi - lo).cdf).statistic
        assert d <= 0.08, (k, d)


def test_collection_order_independent():
    colors = [StrokeColor(0.0), StrokeColor(0.4)]
    a = selfplay_collect(16, ActionBounds(), colors, NOISY)
    b = selfplay_collect(24, ActionBounds(), colors, NOISY)
    for s, t in zip(a, b):
        assert s.action == t.action and np.array_equal(s.after, t.after)


@given(st.floats(10, 90), st.floats(10, 90), st.floats(5, 70), st.floats(-15, 15), st.floats(0, 360),
       st.floats(0.1, 4.0), st.floats(0.0, 0.1), st.floats(0.11, 1.0))
@settings(max_examples=30)
def test_visible_stroke_changes_canvas(x0, y0, l, b, alpha, F, c, a):
    base = cv.blank_canvas()
    after = execute_stroke(base, StrokeAction(x0, y0, l, b, alpha, F), StrokeColor(c, a), NOISY)
    assert cv.change_mask(base, after).any()


def _dataset(n=10):
    return selfplay_collect(n, ActionBounds(), [StrokeColor(0.0), StrokeColor(0.6, 0.5)], NOISY, 4)


def test_round_trip(tmp_path):
    data = _dataset()
    save_dataset(data, tmp_path / "d", ActionBounds(), NOISY)
    back = load_dataset(tmp_path / "d")
    assert len(back) == len(data)
    for s, t in zip(data, back):
        assert np.array_equal(s.before, t.before) and np.array_equal(s.after, t.after)
        assert s.action == t.action and s.color == t.color
    manifest = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert manifest["seed"] == NOISY.seed and manifest["count"] == 10


def test_save_is_byte_identical(tmp_path):
    for name in ("a", "b"):
        save_dataset(_dataset(), tmp_path / name, ActionBounds(), NOISY)
    for f in sorted((tmp_path / "a").rglob("*")):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def test_corrupt_record_reports_index(tmp_path):
    save_dataset(_dataset(), tmp_path / "d")
    (tmp_path / "d" / "00006" / "action.json").write_text("{not json")
    with pytest.raises(MalformedRecordError) as info:
        load_dataset(tmp_path / "d")
    assert info.value.index == 6 and "6" in str(info.value)


def test_count_mismatch(tmp_path):
    save_dataset(_dataset(), tmp_path / "d")
    shutil.rmtree(tmp_path / "d" / "00009")
    with pytest.raises(ManifestMismatchError):
        load_dataset(tmp_path / "d")


def test_missing_files(tmp_path):
    with pytest.raises(MissingFileError):
        load_dataset(tmp_path)
    save_dataset(_dataset(), tmp_path / "d")
    (tmp_path / "d" / "00002" / "after.png").unlink()
    with pytest.raises(MissingFileError):
        load_dataset(tmp_path / "d")


def test_argument_errors():
    with pytest.raises(ValueError):
        selfplay_collect(0, ActionBounds(), [StrokeColor(0.0)], ExecutorConfig())
    with pytest.raises(ValueError):
        selfplay_collect(3, ActionBounds(), [], ExecutorConfig())
    with pytest.raises(ValueError):
        ExecutorConfig(width_jitter_sd=-0.1)
