import json

import numpy as np
import pytest

from qtraj import (
    QuantumState,
    TimeGrid,
    generate_atom_model,
    simulate_linear,
    simulate_posterior,
    standard_direct,
    standard_heterodyne,
)
from qtraj.errors import ConfigError
from qtraj.serialize import (
    load_model,
    model_hash,
    model_to_config,
    save_model,
    write_trajectory_csv,
)


class TestModelRoundTrip:
    def test_save_load_exact(self, tmp_path, heterodyne_model):
        path = tmp_path / "model.json"
        h1 = save_model(heterodyne_model, path)
        loaded, h2 = load_model(path)
        assert h1 == h2
        assert np.array_equal(loaded.hamiltonian, heterodyne_model.hamiltonian)
        for a, b in zip(loaded.diffusive_ops, heterodyne_model.diffusive_ops):
            assert np.array_equal(a, b)

    def test_jump_channels_roundtrip(self, tmp_path, direct_model):
        path = tmp_path / "model.json"
        save_model(direct_model, path)
        loaded, _ = load_model(path)
        assert loaded.n_jump == 1
        assert loaded.jump_channels[0].outcome_label == "count"
        assert np.array_equal(
            loaded.jump_channels[0].kraus_ops[0], direct_model.jump_channels[0].kraus_ops[0]
        )

    def test_hash_stable_and_sensitive(self, heterodyne_model):
        cfg = model_to_config(heterodyne_model)
        h1 = model_hash(cfg)
        h2 = model_hash(json.loads(json.dumps(cfg)))
        assert h1 == h2
        other = model_to_config(generate_atom_model(standard_heterodyne(1.0, 2.1)))
        assert model_hash(other) != h1

    def test_bad_file(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError):
            load_model(path)
        with pytest.raises(ConfigError):
            load_model(tmp_path / "missing.json")

    def test_simulation_identical_through_roundtrip(self, tmp_path, mixed):
        # in-process model and file round-trip drive identical trajectories
        m1 = generate_atom_model(standard_heterodyne(0.7, 1.3, delta_omega=0.2))
        path = tmp_path / "m.json"
        save_model(m1, path)
        m2, _ = load_model(path)
        grid = TimeGrid(t_final=0.2, dt=1e-3)
        t1 = simulate_posterior(m1, mixed, grid, seed=5)
        t2 = simulate_posterior(m2, mixed, grid, seed=5)
        assert np.array_equal(t1.state_path, t2.state_path)


class TestCsv:
    def test_trajectory_csv_layout(self, tmp_path, heterodyne_model, mixed):
        grid = TimeGrid(t_final=0.05, dt=1e-3)
        traj = simulate_posterior(heterodyne_model, mixed, grid, seed=3)
        path = tmp_path / "traj.csv"
        write_trajectory_csv(path, traj, {"command": "test", "seed": 3})
        lines = path.read_text().splitlines()
        assert lines[0].startswith("# command=test")
        header = lines[1].split(",")
        assert header[0] == "t"
        assert "rho00_re" in header and "entropy" in header
        assert "cum_W0" in header and "cum_W1" in header
        assert len(lines) == 2 + grid.n_steps + 1

    def test_full_precision(self, tmp_path, heterodyne_model, mixed):
        grid = TimeGrid(t_final=0.02, dt=1e-3)
        traj = simulate_linear(heterodyne_model, mixed, grid, seed=3)
        path = tmp_path / "t.csv"
        write_trajectory_csv(path, traj, {"command": "test"})
        row = path.read_text().splitlines()[3].split(",")
        weight_col = row[1 + 8]  # t + 4 complex entries
        assert float(weight_col) == traj.weight_path[1]

    def test_jump_counts_column(self, tmp_path, mixed):
        m = generate_atom_model(standard_direct(4.0, 2.0))
        grid = TimeGrid(t_final=2.0, dt=1e-3)
        traj = simulate_posterior(m, mixed, grid, seed=11)
        assert traj.output.jump_events  # decay at rate ~2 over T=2
        path = tmp_path / "t.csv"
        write_trajectory_csv(path, traj, {"command": "test"})
        lines = path.read_text().splitlines()
        header = lines[1].split(",")
        assert header[-1] == "cum_N0"
        final = int(lines[-1].split(",")[-1])
        assert final == len(traj.output.jump_events)
