import math

import numpy as np
import pytest

from larc.controllers import (
    ArcController,
    ArcState,
    ControllerError,
    MondrianController,
    Partition,
    arc_update,
    controller_from_snapshot,
    make_controller,
    mondrian_init,
    mondrian_observe,
    threshold_at,
)
from larc.kernels import KernelSpec


def test_arc_update_example():
    s = ArcState(alpha=0.1, eta1=0.1, threshold=0.5)
    s2 = arc_update(s, 1.0)
    assert s2.threshold == pytest.approx(0.59)
    assert s2.step == 1
    assert s.threshold == 0.5  # functional update
    assert s2.averaged_threshold == 0.5


def test_arc_closed_form_trajectory():
    rng = np.random.default_rng(0)
    losses = (rng.uniform(size=1000) < 0.3).astype(float)
    s = ArcState(alpha=0.1, eta1=0.7)
    for loss in losses:
        s = arc_update(s, loss)
    eta = 0.7 / np.sqrt(np.arange(1, 1001))
    assert s.threshold == pytest.approx(float(np.sum(eta * (losses - 0.1))), abs=1e-12)
    path = np.concatenate([[0.0], np.cumsum(eta * (losses - 0.1))])[:-1]
    assert s.averaged_threshold == pytest.approx(path.mean(), abs=1e-12)


def test_arc_rejects_bad_loss_and_params():
    with pytest.raises(ControllerError):
        arc_update(ArcState(0.1, 1.0), 1.2)
    with pytest.raises(ControllerError):
        ArcState(1.0, 1.0)
    with pytest.raises(ControllerError):
        _ = ArcState(0.1, 1.0).averaged_threshold


def test_partition_regions():
    p = Partition([{"low": [0, 0], "high": [1, 1]}, {"center": [5, 5], "radius": 1.0}])
    assert p.n_cells == 3
    assert p([0.5, 0.5]) == 0
    assert p([5.5, 5.0]) == 1
    assert p([-3, 0]) == 2
    assert Partition([]).n_cells == 1
    with pytest.raises(ControllerError):
        Partition([{"low": [0]}])


def test_mondrian_updates_only_its_cell():
    part = Partition([{"low": [-10.0], "high": [0.0]}])
    st = mondrian_init(part, part.n_cells, 0.1, 1.0)
    st2 = mondrian_observe(st, [-1.0], 1.0)
    assert st2.cells[0].threshold == pytest.approx(0.9)
    assert st2.cells[1] == st.cells[1]


def test_mondrian_equals_arc_on_each_substream():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(600, 1))
    losses = (rng.uniform(size=600) < 0.2).astype(float)
    ctrl = MondrianController([{"low": [-np.inf], "high": [0.0]}], alpha=0.1, eta1=0.5)
    for x, l in zip(X, losses):
        ctrl.observe(x, l)
    for cell, mask in ((0, X[:, 0] <= 0), (1, X[:, 0] > 0)):
        ref = ArcController(0.1, 0.5)
        for l in losses[mask]:
            ref.observe(None, l)
        assert ctrl.state.cells[cell] == ref.state


def test_single_cell_mondrian_is_arc():
    rng = np.random.default_rng(2)
    m = MondrianController([], alpha=0.2, eta1=1.0)
    a = ArcController(alpha=0.2, eta1=1.0)
    for _ in range(300):
        x = rng.normal(size=2)
        l = float(rng.uniform() > m.threshold_at(x))
        assert m.threshold_at(x) == a.threshold_at(x)
        m.observe(x, l)
        a.observe(x, l)


def test_custom_partition_out_of_range():
    ctrl = MondrianController([], 0.1, 1.0, partition=lambda x: 3, n_cells=2)
    with pytest.raises(ControllerError):
        ctrl.threshold_at([0.0])


def test_zero_amplitude_larc_reproduces_arc():
    rng = np.random.default_rng(3)
    larc = make_controller("larc", alpha=0.1, eta1=1.0, lam=1e-2, kernel=KernelSpec("rbf", 0.0, 1.0), dim=2)
    arc = make_controller("arc", alpha=0.1, eta1=1.0)
    for _ in range(2000):
        x = rng.normal(size=2)
        s = rng.uniform()
        g, lam_t = larc.threshold_at(x), arc.threshold_at(x)
        assert g == lam_t
        larc.observe(x, float(s > g))
        arc.observe(x, float(s > lam_t))
    assert larc.averaged_threshold_at([0.0, 0.0]) == pytest.approx(arc.averaged_threshold_at(), abs=1e-12)


def test_threshold_at_examples():
    larc = make_controller("larc", alpha=0.1, eta1=1.0, lam=0.1, kernel=KernelSpec("rbf", 1.0, 1.0), dim=1)
    assert threshold_at(larc, [0.0]) == 0.0
    larc.observe([0.0], 1.0)
    assert threshold_at(larc, [0.0]) == pytest.approx(1.8)
    assert threshold_at(larc, [1.0]) == pytest.approx(0.9 + 0.9 * math.exp(-1.0))
    arc = make_controller("arc", alpha=0.1, eta1=1.0)
    arc.observe(None, 0.0)
    assert threshold_at(arc, [123.0]) == pytest.approx(-0.1)


@pytest.mark.parametrize("method", ["arc", "mondrian", "larc"])
def test_snapshot_round_trip(method):
    rng = np.random.default_rng(4)
    ctrl = make_controller(method, alpha=0.1, eta1=1.0, lam=1e-2, kernel=KernelSpec("rbf", 1.0, 0.5),
                           mondrian_cells=[{"center": [0, 0], "radius": 1.0}], dim=2)
    for _ in range(50):
        x = rng.normal(size=2)
        ctrl.observe(x, float(rng.uniform() > ctrl.threshold_at(x)))
    clone = controller_from_snapshot(ctrl.snapshot())
    X = rng.normal(size=(10, 2))
    np.testing.assert_allclose(clone.averaged_thresholds(X), ctrl.averaged_thresholds(X), rtol=0, atol=1e-13)
    assert [clone.threshold_at(x) for x in X] == pytest.approx([ctrl.threshold_at(x) for x in X], abs=1e-13)
    assert clone.step == ctrl.step


def test_runs_are_deterministic():
    def go():
        rng = np.random.default_rng(5)
        c = make_controller("larc", alpha=0.1, eta1=1.0, lam=1e-3, kernel=KernelSpec("cauchy", 1.0, 1.0), dim=3)
        out = []
        for _ in range(200):
            x = rng.normal(size=3)
            g = c.threshold_at(x)
            out.append(g)
            c.observe(x, float(rng.uniform() > g))
        return out
    assert go() == go()


def test_unknown_method():
    with pytest.raises(ControllerError):
        make_controller("aci", alpha=0.1, eta1=1.0)
    with pytest.raises(ControllerError):
        controller_from_snapshot({"method": "nope"})
