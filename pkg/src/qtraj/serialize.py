"""Model configuration files and CSV emission.

Model configs are JSON with complex numbers as [re, im] pairs and matrices
as row-major nested arrays:

    {
      "dimension": 2,
      "hamiltonian": [[[0.0, 0.0], [0.5, 0.0]], [[0.5, 0.0], [0.0, 0.0]]],
      "diffusive_ops": [ <matrix>, ... ],
      "jump_channels": [ {"label": "count", "weight": 1.0,
                          "kraus": [ <matrix>, ... ]}, ... ],
      "dissipative_ops": [ <matrix>, ... ]
    }

JSON floats round-trip exactly, so a written model reloads bit-identically.
All CSV files start with one '#'-prefixed metadata line (model hash,
command, seed, dt, scheme, version) and print floats with 17 significant
digits so reruns can be compared byte for byte.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from . import __version__
from .analysis import BlochHistogram
from .engine import EnsembleStats, LinearTrajectory, PosteriorTrajectory, RNG_ALGORITHM
from .errors import ConfigError
from .linalg import QuantumState
from .model import MeasurementModel, build_model

_FMT = "%.16e"


def _fmt(x: float) -> str:
    return _FMT % float(x)


def complex_to_pair(z: complex) -> list[float]:
    return [float(np.real(z)), float(np.imag(z))]


def matrix_to_nested(mat: np.ndarray) -> list[list[list[float]]]:
    return [[complex_to_pair(z) for z in row] for row in np.asarray(mat)]


def model_to_config(m: MeasurementModel) -> dict:
    """Serializable config dict reproducing the model exactly."""
    return {
        "dimension": m.dim,
        "hamiltonian": matrix_to_nested(m.hamiltonian),
        "diffusive_ops": [matrix_to_nested(op) for op in m.diffusive_ops],
        "jump_channels": [
            {
                "label": ch.outcome_label,
                "weight": ch.weight,
                "kraus": [matrix_to_nested(j) for j in ch.kraus_ops],
            }
            for ch in m.jump_channels
        ],
        "dissipative_ops": [matrix_to_nested(op) for op in m.dissipative_ops],
    }


def model_hash(config: dict) -> str:
    """SHA-256 of the canonical JSON encoding of a config."""
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def save_model(m: MeasurementModel, path) -> str:
    config = model_to_config(m)
    with open(path, "w") as fh:
        json.dump(config, fh, indent=1)
        fh.write("\n")
    return model_hash(config)


def load_model(path) -> tuple[MeasurementModel, str]:
    """Load a model config file; returns (model, hash)."""
    try:
        with open(path) as fh:
            config = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read model file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"cannot parse model file {path}: {exc}") from exc
    model = build_model(config)
    return model, model_hash(model_to_config(model))


def _metadata_line(meta: dict) -> str:
    parts = [f"{k}={meta[k]}" for k in meta]
    return "# " + " ".join(parts) + "\n"


def _base_metadata(command: str, mhash: str, **extra) -> dict:
    meta = {"command": command, "model_hash": mhash, "version": __version__}
    meta.update(extra)
    return meta


def _state_header(prefix: str, n: int) -> list[str]:
    cols = []
    for i in range(n):
        for j in range(n):
            cols.append(f"{prefix}{i}{j}_re")
            cols.append(f"{prefix}{i}{j}_im")
    return cols


def _state_row(mat: np.ndarray) -> list[str]:
    out = []
    for z in np.asarray(mat).reshape(-1):
        out.append(_fmt(z.real))
        out.append(_fmt(z.imag))
    return out


def write_trajectory_csv(path, traj, meta: dict) -> None:
    """One row per grid time: state, weight, entropy, cumulative outputs."""
    if isinstance(traj, LinearTrajectory):
        states = traj.sigma_path
        weights = traj.weight_path
        entropy = None
        prefix = "sigma"
    elif isinstance(traj, PosteriorTrajectory):
        states = traj.state_path
        weights = None
        entropy = traj.entropy_path
        prefix = "rho"
    else:
        raise ConfigError(f"unsupported trajectory type {type(traj)!r}")
    n = states.shape[1]
    n_steps = states.shape[0] - 1
    n_diff = traj.output.wiener.shape[1]
    cum_w = np.vstack(
        [np.zeros((1, n_diff)), np.cumsum(traj.output.wiener, axis=0)]
    )
    channels = sorted({k for _, k in traj.output.jump_events})
    cum_n = np.zeros((n_steps + 1, len(channels)), dtype=np.int64)
    for step, k in traj.output.jump_events:
        cum_n[step + 1 :, channels.index(k)] += 1

    header = ["t"] + _state_header(prefix, n)
    header.append("weight")
    header.append("entropy")
    header += [f"cum_W{j}" for j in range(n_diff)]
    header += [f"cum_N{k}" for k in channels]

    with open(path, "w") as fh:
        fh.write(_metadata_line(meta))
        fh.write(",".join(header) + "\n")
        times = traj.grid.times
        for i in range(n_steps + 1):
            row = [_fmt(times[i])]
            row += _state_row(states[i])
            row.append(_fmt(weights[i] if weights is not None else 1.0))
            if entropy is not None:
                row.append(_fmt(entropy[i]))
            else:
                w = max(weights[i], 1e-300)
                tr2 = float(np.einsum("ij,ji->", states[i], states[i]).real)
                row.append(_fmt(1.0 - tr2 / w**2))
            row += [_fmt(v) for v in cum_w[i]]
            row += [str(int(v)) for v in cum_n[i]]
            fh.write(",".join(row) + "\n")


def write_ensemble_csv(path, stats: EnsembleStats, meta: dict) -> None:
    """Per-step ensemble aggregates with componentwise standard errors."""
    n = stats.mean_state.shape[1]
    header = ["t"] + _state_header("mean", n)
    header += _state_header("se", n)
    header += ["mean_weight", "se_weight", "mean_entropy", "se_entropy"]
    has_obs = stats.obs_mean is not None
    if has_obs:
        header += ["obs_re", "obs_im", "obs_se_re", "obs_se_im"]
    with open(path, "w") as fh:
        fh.write(_metadata_line(meta))
        fh.write(",".join(header) + "\n")
        for i, t in enumerate(stats.times):
            row = [_fmt(t)]
            row += _state_row(stats.mean_state[i])
            se = stats.se_state_re[i] + 1j * stats.se_state_im[i]
            row += _state_row(se)
            row += [
                _fmt(stats.mean_weight[i]),
                _fmt(stats.se_weight[i]),
                _fmt(stats.mean_entropy[i]),
                _fmt(stats.se_entropy[i]),
            ]
            if has_obs:
                row += [
                    _fmt(stats.obs_mean[i].real),
                    _fmt(stats.obs_mean[i].imag),
                    _fmt(stats.obs_se_re[i]),
                    _fmt(stats.obs_se_im[i]),
                ]
            fh.write(",".join(row) + "\n")


def write_states_csv(path, times, states: list[QuantumState], meta: dict) -> None:
    """State path in the same layout as trajectories (master/equilibrium)."""
    n = states[0].dim
    header = ["t"] + _state_header("eta", n)
    with open(path, "w") as fh:
        fh.write(_metadata_line(meta))
        fh.write(",".join(header) + "\n")
        for t, state in zip(times, states):
            row = [_fmt(t)] + _state_row(state.matrix)
            fh.write(",".join(row) + "\n")


def write_histogram_csv(path, hist: BlochHistogram, meta: dict) -> None:
    header = ["theta_index", "phi_index", "dwell_time", "count"]
    with open(path, "w") as fh:
        fh.write(_metadata_line(meta))
        fh.write(",".join(header) + "\n")
        for ti in range(hist.grid[0]):
            for pi in range(hist.grid[1]):
                fh.write(
                    ",".join(
                        [
                            str(ti),
                            str(pi),
                            _fmt(hist.dwell_time[ti, pi]),
                            str(int(hist.counts[ti, pi])),
                        ]
                    )
                    + "\n"
                )


def write_report(path, lines: dict, meta: dict) -> None:
    """Flat key=value text report."""
    with open(path, "w") as fh:
        fh.write(_metadata_line(meta))
        for key, value in lines.items():
            fh.write(f"{key}={value}\n")


def format_report(lines: dict) -> str:
    return "\n".join(f"{key}={value}" for key, value in lines.items())
