from dataclasses import replace

import numpy as np
import pytest

from tubeil.dynamics import NOMINAL_PARAMS, discrete_step
from tubeil.metrics import realized_disturbance
from tubeil.sim import (
    GOV_CLOSED_FORM,
    GOV_OFF,
    EpisodeRecord,
    MpcOracle,
    SimConfig,
    run_batch,
    run_episode,
)

CHANGED = NOMINAL_PARAMS.with_masses(6.0, 0.5)


def test_zero_disturbance_actual_equals_shadow(nominal_net, gain):
    rec = run_episode(SimConfig(disturbance_bound=0.0), nominal_net, gain)
    assert np.max(np.abs(rec.actual - rec.nominal)) <= 1e-12
    assert np.max(np.abs(rec.u_anc)) <= 1e-10


def test_shadow_ignores_plant(nominal_net, gain):
    a = run_episode(SimConfig(seed=1), nominal_net, gain)
    b = run_episode(SimConfig(seed=2, plant=CHANGED, disturbance_bound=3.0), nominal_net, gain)
    c = run_episode(SimConfig(seed=3, plant=CHANGED, governor=True), nominal_net, gain)
    assert np.array_equal(a.nominal, b.nominal) and np.array_equal(a.nominal, c.nominal)
    # the shadow is the network in closed loop with the nominal model and nothing else
    xb = np.array(a.config.x0, dtype=float)
    for k in range(a.n_steps):
        assert np.array_equal(a.nominal[k], xb)
        xb = discrete_step(xb, a.u_nominal[k], NOMINAL_PARAMS, a.config.dt, a.config.substeps)


def test_force_bookkeeping(nominal_net, gain):
    rec = run_episode(SimConfig(seed=4, plant=CHANGED, governor=True), nominal_net, gain)
    assert np.array_equal(rec.applied, rec.u_cmd[:, None] + rec.disturbance)
    assert np.all(np.abs(rec.disturbance) <= 5.0)
    assert np.allclose(rec.u_ctrl, rec.u_dnn + rec.u_anc, atol=1e-12)
    assert np.array_equal(rec.u_cmd, rec.u_gov)
    assert np.all(rec.gov_code == GOV_CLOSED_FORM)


def test_governor_off_passes_input_through(nominal_net, gain):
    rec = run_episode(SimConfig(seed=4, plant=CHANGED), nominal_net, gain)
    assert np.array_equal(rec.u_cmd, rec.u_ctrl)
    assert np.all(np.isnan(rec.u_gov)) and np.all(rec.gov_code == GOV_OFF)


def test_episode_reproducible(nominal_net, gain):
    cfg = SimConfig(seed=11, plant=CHANGED, governor=True)
    a, b = run_episode(cfg, nominal_net, gain), run_episode(cfg, nominal_net, gain)
    assert np.array_equal(a.actual, b.actual) and np.array_equal(a.disturbance, b.disturbance)
    c = run_episode(replace(cfg, seed=12), nominal_net, gain)
    assert not np.array_equal(a.disturbance, c.disturbance)


def test_batch_of_one_matches_episode(nominal_net, gain):
    recs, summ = run_batch(SimConfig(), nominal_net, gain, 1, seed_base=7)
    single = run_episode(SimConfig(seed=7), nominal_net, gain)
    assert np.array_equal(recs[0].actual, single.actual)
    assert summ["episodes"] == 1


def test_batch_parallel_matches_serial(nominal_net, gain):
    serial, _ = run_batch(SimConfig(steps=20), nominal_net, gain, 3)
    para, _ = run_batch(SimConfig(steps=20), nominal_net, gain, 3, jobs=2)
    assert all(np.array_equal(a.actual, b.actual) for a, b in zip(serial, para))
    assert [r.config.seed for r in para] == [0, 1, 2]


def test_proposed_regulates(nominal_net, gain):
    recs, summ = run_batch(SimConfig(), nominal_net, gain, 10)
    assert summ["regulated"] >= 9
    assert summ["diverged"] == 0


def test_governor_keeps_friction_limit(nominal_net, gain):
    recs, _ = run_batch(SimConfig(plant=CHANGED, governor=True), nominal_net, gain, 5)
    assert sum(r.constraint_violations() for r in recs) == 0


def test_governor_scales_cmd_up_for_heavier_cart(nominal_net, gain):
    rec = run_episode(SimConfig(seed=0, plant=CHANGED, governor=True, disturbance_bound=0.0), nominal_net, gain)
    big = np.abs(rec.u_ctrl) > 1.0
    assert np.all(np.abs(rec.u_cmd[big]) > np.abs(rec.u_ctrl[big]))


def test_realized_disturbance_zero_when_models_agree(nominal_net, gain):
    rec = run_episode(SimConfig(disturbance_bound=0.0), nominal_net, gain)
    assert np.max(np.abs(realized_disturbance(rec))) <= 1e-12


def test_state_policy_variant_uses_actual_state(nominal_net, gain, demo_traj):
    rec = run_episode(SimConfig(variant="dr-tube", steps=10), nominal_net, gain, reference=demo_traj)
    assert np.all(np.isnan(rec.nominal))
    assert np.array_equal(rec.u_cmd, rec.u_dnn)
    assert np.all(np.isfinite(rec.u_ref))


def test_mpc_variant_requires_oracle(gain):
    with pytest.raises(ValueError):
        run_episode(SimConfig(variant="mpc-nominal"), None, gain)
    with pytest.raises(ValueError):
        run_episode(SimConfig(variant="proposed"), None, gain)


def test_proposed_tracks_mpc_on_shadow(nominal_net, gain, mpc_cfg):
    rec = run_episode(SimConfig(steps=30), nominal_net, gain, reference=MpcOracle(mpc_cfg))
    assert np.all(np.isfinite(rec.u_ref))
    assert np.sqrt(np.mean((rec.u_policy - rec.u_ref) ** 2)) < 0.15


def test_divergence_detected(gain):
    from tubeil.mlp import MlpWeights

    w = MlpWeights.zeros()
    w.biases[-1][:] = 1e4
    rec = run_episode(SimConfig(variant="no-dr", divergence_threshold=50.0), w, gain)
    assert rec.diverged_at is not None and not rec.regulated()
    assert rec.n_steps == rec.diverged_at


def test_csv_round_trip(nominal_net, gain, tmp_path):
    rec = run_episode(SimConfig(seed=5, plant=CHANGED, governor=True), nominal_net, gain)
    rec.to_csv(tmp_path / "episode_0005.csv")
    back = EpisodeRecord.from_csv(tmp_path / "episode_0005.csv")
    assert back.config == rec.config
    for name in ("actual", "nominal", "u_cmd", "u_ctrl", "disturbance", "applied", "u_nominal", "gov_code"):
        assert np.array_equal(getattr(back, name), getattr(rec, name), equal_nan=True), name


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(variant="bogus")
    with pytest.raises(ValueError):
        SimConfig(disturbance_bound=-1)
    assert SimConfig(variant="proposed+governor").governor_on
