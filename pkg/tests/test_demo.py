import numpy as np
import pytest

from tubeil.demo import (
    Dataset,
    DemoAborted,
    Trajectory,
    collect_nominal_demo,
    estimate_tube,
    make_dr_dataset,
    nominal_dataset,
    train_all,
    tube_sites,
)
from tubeil.mlp import TrainConfig
from tubeil.mpc import MpcConfig

RADIUS = np.array([0.1, 0.14, 0.02, 0.13])


def test_demo_reaches_origin(demo_traj):
    assert len(demo_traj) == 100
    assert demo_traj.converged.all()
    assert abs(demo_traj.states[-1, 0]) < 0.1 and abs(demo_traj.states[-1, 2]) < 0.05


def test_demo_successors_follow_model(demo_traj, mpc_cfg):
    assert demo_traj.consistency_error(mpc_cfg) <= 1e-10


def test_demo_from_origin_stays_put(mpc_cfg):
    t = collect_nominal_demo(np.zeros(4), 5, mpc_cfg)
    assert np.max(np.abs(t.states)) < 1e-10
    assert np.max(np.abs(t.inputs)) < 1e-8


def test_demo_deterministic(demo_traj, mpc_cfg):
    again = collect_nominal_demo((3.0, 0.0, 0.0, 0.0), 100, mpc_cfg)
    assert np.array_equal(again.states, demo_traj.states)
    assert np.array_equal(again.inputs, demo_traj.inputs)


def test_demo_abort_keeps_partial():
    cfg = MpcConfig(max_outer=1, max_inner=1)
    with pytest.raises(DemoAborted) as exc:
        collect_nominal_demo((3.0, 0.0, 0.0, 0.0), 10, cfg)
    assert exc.value.step == 0
    assert len(exc.value.partial) == 0


def test_trajectory_csv_round_trip(demo_traj, tmp_path):
    path = tmp_path / "demo.csv"
    demo_traj.to_csv(path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 101
    back = Trajectory.from_csv(path)
    assert np.array_equal(back.states, demo_traj.states)
    assert np.array_equal(back.inputs, demo_traj.inputs)


def test_nominal_dataset_matches_demo(demo_traj):
    ds = nominal_dataset(demo_traj)
    assert len(ds) == 100 and ds.provenance == "nominal"
    assert np.array_equal(ds.states, demo_traj.states[:100])


def test_zero_offset_label_is_demo_input(demo_traj, gain):
    ds = make_dr_dataset(demo_traj, gain, 1, "conventional", np.zeros(4))
    assert np.array_equal(ds.labels, demo_traj.inputs)


def test_tube_sites_are_vertices_and_face_centres():
    sites = tube_sites(RADIUS)
    assert sites.shape == (24, 4)
    assert len({tuple(s) for s in sites}) == 24
    scaled = sites / RADIUS
    nonzero = np.count_nonzero(scaled, axis=1)
    assert np.sum(nonzero == 4) == 16 and np.sum(nonzero == 1) == 8
    assert np.all(np.isin(np.abs(scaled), (0.0, 1.0)))


def test_tube_mode_uses_only_sites(demo_traj, gain):
    ds = make_dr_dataset(demo_traj, gain, 3, "tube", RADIUS)
    offsets = ds.states - np.tile(demo_traj.states[:100], (3, 1))
    site_set = {tuple(np.round(s, 12)) for s in tube_sites(RADIUS)}
    assert all(tuple(np.round(o, 12)) in site_set for o in offsets)


def test_conventional_mode_within_box(demo_traj, gain):
    ds = make_dr_dataset(demo_traj, gain, 10, "conventional", RADIUS, seed=3)
    assert len(ds) == 1000
    offsets = ds.states - np.tile(demo_traj.states[:100], (10, 1))
    assert np.all(np.abs(offsets) <= RADIUS)
    assert ds.n_trajectories == 10


def test_labels_are_tube_controller(demo_traj, gain):
    ds = make_dr_dataset(demo_traj, gain, 2, "conventional", RADIUS, seed=1)
    base = np.tile(demo_traj.states[:100], (2, 1))
    expected = np.tile(demo_traj.inputs, 2) + (ds.states - base) @ gain.K
    assert np.allclose(ds.labels, expected, atol=1e-12)


def test_dr_dataset_validation(demo_traj, gain):
    with pytest.raises(ValueError):
        make_dr_dataset(demo_traj, gain, 1, "bogus", RADIUS)
    with pytest.raises(ValueError):
        make_dr_dataset(demo_traj, gain, 0, "tube", RADIUS)
    with pytest.raises(ValueError):
        make_dr_dataset(demo_traj, gain, 1, "tube", -RADIUS)


def test_dataset_csv_round_trip(demo_traj, gain, tmp_path):
    ds = make_dr_dataset(demo_traj, gain, 2, "tube", RADIUS)
    ds.to_csv(tmp_path / "d.csv")
    back = Dataset.from_csv(tmp_path / "d.csv")
    assert np.array_equal(back.states, ds.states) and np.array_equal(back.labels, ds.labels)
    assert back.provenance == "dr-tube" and back.n_trajectories == 2
    assert np.array_equal(back.traj_index, ds.traj_index)


def test_tube_zero_disturbance(nominal_net, gain):
    assert np.all(estimate_tube(nominal_net, gain, 3, 0.0) == 0.0)


@pytest.fixture(scope="module")
def tube_100(nominal_net, gain):
    return estimate_tube(nominal_net, gain, 100, 5.0)


def test_tube_saturates(nominal_net, gain, tube_100):
    assert np.all(tube_100 > 0)
    tube_200 = estimate_tube(nominal_net, gain, 200, 5.0)
    assert np.all(tube_200 >= tube_100)
    assert np.all(tube_200 < 1.25 * tube_100)


def test_tube_grows_with_disturbance(nominal_net, gain, tube_100):
    half = estimate_tube(nominal_net, gain, 100, 2.5)
    assert np.all(half < tube_100)


def test_train_all_tags_provenance(demo_traj, gain):
    sets = {"nominal": nominal_dataset(demo_traj),
            "dr-tube": make_dr_dataset(demo_traj, gain, 1, "tube", RADIUS)}
    nets = train_all(sets, TrainConfig(epochs=100, layer_sizes=(4, 8, 1), polish_iters=200))
    assert nets["nominal"].meta["provenance"] == "nominal"
    assert nets["dr-tube"].meta["provenance"] == "dr-tube"
    assert all(np.isfinite(w.meta["normalized_mse"]) and w.meta["normalized_mse"] < 0.1 for w in nets.values())
