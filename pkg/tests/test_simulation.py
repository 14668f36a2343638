import numpy as np
import pandas as pd
import pytest

from hfimpute.factors import VarDynamics, ar1_coef, gls_project, project_static
from hfimpute.simulation import (DgpSpec, block_counts, calibrate_dgp, comparison_layout, metric_r2_per_factor,
                                 metric_trace_ratio, replication_table, select_columns, shrinkage_distance,
                                 simulate_panel, summarize_replications, synthetic_dgp1, synthetic_dgp2,
                                 synthetic_spec)


def test_reference_dimensions():
    d1, d2 = synthetic_dgp1(), synthetic_dgp2()
    assert (d1.T, d1.N, d1.r) == (720, 122, 3)
    assert (d2.T, d2.N, d2.r) == (420, 50, 2)
    np.testing.assert_allclose(d1.factor_variance_shares(), [0.147, 0.073, 0.070], atol=1e-9)
    assert d1.idio_var.min() == pytest.approx(0.065) and d1.idio_var.max() == pytest.approx(0.984)
    assert d1.idio_ar.min() == pytest.approx(-0.617) and d1.idio_ar.max() == pytest.approx(0.955)


def test_spec_validation_and_json(tmp_path):
    var = VarDynamics(np.array([[[0.5]]]), np.eye(1))
    with pytest.raises(ValueError):
        DgpSpec(np.ones((3, 1)), [1, 1, -1], [0, 0, 0], var, 10)
    with pytest.raises(ValueError):
        DgpSpec(np.ones((3, 1)), [1, 1, 1], [0, 0, 1.0], var, 10)
    with pytest.raises(ValueError):
        DgpSpec(np.ones((3, 1)), [1, 1, 1], [0, 0, 0], VarDynamics(np.array([[[1.1]]]), np.eye(1)), 10)
    spec = synthetic_dgp2()
    back = DgpSpec.load(spec.save(tmp_path / "spec.json"))
    np.testing.assert_array_equal(back.loadings, spec.loadings)
    assert back.block_shares == spec.block_shares and back.T == spec.T


@pytest.mark.parametrize("nsim", [3, 10, 17, 50, 122])
def test_block_counts_sum_and_order(nsim):
    counts = block_counts(nsim)
    assert counts.sum() == nsim
    floors = np.floor(np.array([0.4, 0.3, 0.3]) * nsim + 1e-9)
    assert np.all(counts - floors >= 0) and np.all(counts - floors <= 1)
    extra = counts - floors
    assert np.all(np.diff(extra) <= 0)        # remainder goes to the earliest blocks
    with pytest.raises(ValueError):
        block_counts(2)


def test_full_width_uses_every_row_once(rng):
    spec = synthetic_dgp2()
    cols = select_columns(spec, spec.N, rng)
    assert sorted(cols.tolist()) == list(range(spec.N))


def test_simulation_is_seed_deterministic():
    spec = synthetic_dgp2()
    a, Fa = simulate_panel(spec, 20, seed=5, rep=3)
    b, Fb = simulate_panel(spec, 20, seed=5, rep=3)
    assert a.values.tobytes() == b.values.tobytes() and Fa.tobytes() == Fb.tobytes()
    c, Fc = simulate_panel(spec, 30, seed=5, rep=3)
    assert Fc.tobytes() == Fa.tobytes()                 # factors shared across widths
    d, _ = simulate_panel(spec, 20, seed=5, rep=4)
    assert not np.array_equal(a.values, d.values)
    with pytest.raises(ValueError):
        simulate_panel(spec, spec.N + 1)


def test_simulated_idiosyncratic_persistence():
    spec = synthetic_dgp1()
    panel, F = simulate_panel(spec, spec.N, seed=11)
    resid = panel.values - F @ spec.loadings.T
    rho_hat, _ = ar1_coef(resid)
    assert np.median(np.abs(rho_hat - spec.idio_ar)) < 0.1


def test_calibrate_round_trip_preserves_shares():
    spec = synthetic_spec(60, 2, 5000, (0.3, 0.15), seed=1)
    panel, _ = simulate_panel(spec, seed=2)
    cal = calibrate_dgp(panel, 2)
    np.testing.assert_allclose(cal.factor_variance_shares(), spec.factor_variance_shares(), rtol=0.2)
    assert cal.T == 5000 and cal.N == 60
    with pytest.raises(ValueError):
        calibrate_dgp(np.where(np.eye(5000, 60) > 0, np.nan, panel.values), 2)


# ---------------------------------------------------------------------------
# metrics


def test_trace_ratio_invariance_and_extremes(rng):
    F = rng.normal(size=(50, 2))
    G = rng.normal(size=(2, 2))
    assert metric_trace_ratio(F, F @ G) == pytest.approx(1.0, abs=1e-10)
    Q, _ = np.linalg.qr(rng.normal(size=(50, 4)))
    assert metric_trace_ratio(Q[:, :2], Q[:, 2:]) == pytest.approx(0.0, abs=1e-10)
    with pytest.raises(np.linalg.LinAlgError):
        metric_trace_ratio(F, np.zeros((50, 1)))


def test_trace_ratio_is_pooled_regression_r2(rng):
    F = rng.normal(size=(50, 2))
    Fh = F @ rng.normal(size=(2, 2)) + rng.normal(size=(50, 2))
    ssr = sst = 0.0
    for j in range(2):
        coef, res, *_ = np.linalg.lstsq(Fh, F[:, j], rcond=None)
        ssr += float(np.sum((F[:, j] - Fh @ coef) ** 2))
        sst += float(F[:, j] @ F[:, j])
    assert metric_trace_ratio(F, Fh) == pytest.approx(1 - ssr / sst, abs=1e-10)
    for j in range(2):
        coef = np.linalg.lstsq(Fh, F[:, j], rcond=None)[0]
        r2 = 1 - np.sum((F[:, j] - Fh @ coef) ** 2) / (F[:, j] @ F[:, j])
        assert metric_r2_per_factor(F[:, j], Fh) == pytest.approx(r2, abs=1e-10)
    assert metric_r2_per_factor(F[:, 0], F) == pytest.approx(1.0, abs=1e-12)


def test_shrinkage_distance_definition(rng):
    L = rng.normal(size=(20, 2))
    phi = rng.uniform(0.5, 1, 20)
    X = rng.normal(size=(30, 20))
    d = np.linalg.norm(project_static(L, phi, np.eye(2), X) - gls_project(L, phi, X)) / np.sqrt(30)
    assert shrinkage_distance(X, L, phi, np.eye(2)) == pytest.approx(d, rel=1e-12)


# ---------------------------------------------------------------------------
# harness


def test_replication_table_shape_and_summary():
    spec = synthetic_dgp2()
    df = replication_table(spec, ["PC"], [10, 20, 50], reps=1, seed=0)
    assert len(df) == 3 and df["error"].isna().all()
    summary = summarize_replications(df)
    assert summary["reps"].tolist() == [1, 1, 1]
    wide = comparison_layout(summary, "M")
    assert wide["nsim"].tolist() == [10, 20, 50] and "PC" in wide


def test_replications_are_independent_of_worker_count():
    spec = synthetic_dgp2()
    serial = replication_table(spec, ["PC", "PC_GLS_H"], [10, 20], reps=3, seed=4, threads=1)
    pooled = replication_table(spec, ["PC", "PC_GLS_H"], [10, 20], reps=3, seed=4, threads=2)
    pd.testing.assert_frame_equal(serial, pooled)


def test_failures_are_recorded_not_raised():
    spec = synthetic_dgp2()
    df = replication_table(spec, ["PC", "NOPE"], [10], reps=2, seed=0)
    summary = summarize_replications(df)
    assert df.loc[df.estimator == "NOPE", "error"].notna().all()
    assert summary.loc[summary.estimator == "PC", "failures"].item() == 0


@pytest.mark.slow
def test_pc_trace_ratio_increases_with_width():
    spec = synthetic_dgp1()
    summary = summarize_replications(replication_table(spec, ["PC"], [10, 30, 50, 122], reps=100, seed=1))
    m, se = summary["M"].to_numpy(), summary["M_se"].to_numpy()
    assert np.all(np.diff(m) >= -2 * np.maximum(se[1:], se[:-1]))


@pytest.mark.slow
def test_mle_h_ahead_of_pc_at_small_width():
    spec = synthetic_spec(122, 3, 720, (0.3, 0.2, 0.15), idio_range=(0.05, 0.95), seed=3)
    summary = summarize_replications(replication_table(spec, ["PC", "MLE_H"], [10], reps=200, seed=2))
    m = summary.set_index("estimator")["M"]
    assert m["MLE_H"] >= m["PC"]
