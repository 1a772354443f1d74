from __future__ import annotations

import math

import numpy as np
import pytest

from delaycredit.errors import AllPathsExcluded
from delaycredit.market_data import MemoryPath, StepCurve, VolatilityModel
from delaycredit.monte_carlo import (
    Ensemble,
    confidence_band,
    mean_path,
    run_ensemble,
    run_merton_ensemble,
    stddev_path,
    write_summary_csv,
)
from delaycredit.sdde import NoiseStream, SchemeConfig, SddeModel, simulate_path


@pytest.fixture
def model():
    mem = MemoryPath(L=1.0, knots=np.array([-1.0, -0.5, 0.0]), values=np.array([1.0, 1.2, 1.1]))
    g = VolatilityModel("value_fit_quadratic", 0.15, 0.35, coefficients=np.array([0.1, 0.1, 0.0]))
    return SddeModel(StepCurve.constant(0.05), StepCurve.constant(0.01), g, mem, 1.0, 2.0)


@pytest.fixture
def scheme():
    return SchemeConfig.build(2.0, 1.0, 0.01)


def test_default_path_count(model, scheme):
    ens = run_ensemble(model, scheme, 400, seed=0)
    assert ens.paths.shape == (400, scheme.M_steps + 1)


def test_singleton_equals_simulate_path(model, scheme):
    ens = run_ensemble(model, scheme, 1, seed=11)
    path = simulate_path(model, scheme, NoiseStream(11, 0))
    assert np.array_equal(ens.paths[0], path.values)


def test_same_seed_identical(model, scheme):
    a = run_ensemble(model, scheme, 64, seed=3, workers=1)
    b = run_ensemble(model, scheme, 64, seed=3, workers=4)
    assert a.paths.tobytes() == b.paths.tobytes()
    assert a.excluded == b.excluded
    assert mean_path(a).tobytes() == mean_path(b).tobytes()
    assert stddev_path(a).tobytes() == stddev_path(b).tobytes()


def test_worker_env_cap(model, scheme, monkeypatch):
    monkeypatch.setenv("DELAYCREDIT_THREADS", "1")
    a = run_ensemble(model, scheme, 20, seed=1, workers=8)
    monkeypatch.setenv("DELAYCREDIT_THREADS", "3")
    b = run_ensemble(model, scheme, 20, seed=1, workers=8)
    assert a.paths.tobytes() == b.paths.tobytes()


def test_mean_starts_at_memory_end(model, scheme):
    ens = run_ensemble(model, scheme, 50, seed=2)
    assert mean_path(ens)[0] == pytest.approx(model.memory(0.0), rel=1e-15)
    assert np.all(stddev_path(ens) >= 0)


def _ensemble(paths):
    paths = np.asarray(paths, dtype=float)
    return Ensemble(np.arange(paths.shape[1]), paths, 0, ())


def test_identical_paths_collapse_band():
    ens = _ensemble([[1.0, 2.0, 3.0]] * 4)
    assert np.all(stddev_path(ens) == 0)
    lo, hi = confidence_band(ens)
    assert np.array_equal(lo, mean_path(ens)) and np.array_equal(hi, mean_path(ens))


def test_symmetric_pair_mean():
    v = np.array([0.3, 1.7, 2.2])
    ens = _ensemble([v, -v + 2 * 5.0])
    assert np.allclose(mean_path(ens), 5.0, rtol=0, atol=1e-15)


def test_excluded_paths_dropped():
    paths = np.array([[1.0, 2.0], [1.0, -1.0], [1.0, 4.0]])
    ens = Ensemble(np.arange(2), paths, 0, (1,))
    assert ens.n_included == 2
    assert np.array_equal(mean_path(ens), [1.0, 3.0])


def test_all_excluded_raises():
    scheme = SchemeConfig(theta=1.0, M_steps=5, dt=0.1, m_lag=1)
    with pytest.raises(AllPathsExcluded):
        run_merton_ensemble(0.0, 0.05, 0.0, 0.2, scheme, 3, seed=0)


def test_merton_mean_within_three_standard_errors():
    scheme = SchemeConfig(theta=1.0, M_steps=200, dt=0.01, m_lag=1)
    ens = run_merton_ensemble(100.0, 0.05, 0.0, 0.2, scheme, 10_000, seed=99)
    se = stddev_path(ens)[-1] / math.sqrt(ens.n_included)
    assert abs(mean_path(ens)[-1] - 100 * math.exp(0.1)) <= 3 * se


def test_summary_csv(tmp_path, model, scheme):
    ens = run_ensemble(model, scheme, 10, seed=0)
    target = tmp_path / "s.csv"
    write_summary_csv(ens, target, comment="cfg", t_offset=2000.5)
    lines = target.read_text().splitlines()
    assert lines[0] == "# cfg"
    assert lines[1] == "t,mean,stddev,lower,upper,n_included"
    assert lines[2].startswith("2000.5,") and lines[2].endswith(",10")
