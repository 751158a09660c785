import numpy as np
import pytest

from pixprune import imgio, lehopp, scenegen


def scene_inputs(spec, target_index=None):
    """Normalized images, geometry and a single leave-one-out task for ``spec``."""
    views = scenegen.generate_scene(spec)
    frame0 = [v for v in views if v.frame_id == 0]
    norm = spec.norm_params
    images = {v.view_id: imgio.preprocess(imgio.quantize(v.image), norm) for v in frame0}
    geometry = {v.view_id: (v.depth.astype(np.float64), v.camera) for v in frame0}
    t = frame0[len(frame0) // 2 if target_index is None else target_index]
    task = lehopp.TargetTask(t.view_id, t.camera, t.depth.astype(np.float64), images[t.view_id],
                             tuple(v.view_id for v in frame0 if v.view_id != t.view_id))
    return images, geometry, task


@pytest.fixture(scope="session")
def small_scene(tmp_path_factory):
    """A 32x32, 4-view, 2-frame desk scene written to disk."""
    root = tmp_path_factory.mktemp("scene")
    spec = scenegen.desk_scene(3, n_views=4, width=32, frames=2)
    return scenegen.write_scene(spec, root)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = {}


def record_criterion(number, ok, detail):
    """Remember a PASS/FAIL line for the end-of-run acceptance summary."""
    ACCEPTANCE_LINES[number] = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
