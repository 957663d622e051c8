"""Post-processing: entropies, ergodic averages, invariant-measure surrogates.

The ergodic diagnostics compare single-trajectory time averages against the
equilibrium state of the master equation, decompose quantum variances into
their within-state and between-state parts, and histogram dim-2 trajectories
over the Bloch sphere as an empirical stand-in for the invariant measure.
The Lie-rank check evaluates the hypoellipticity condition for uniqueness
of that measure at user-supplied points.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .engine import PosteriorTrajectory, _ModelArrays, _strat_a_b, _strat_b_b
from .errors import (
    DimensionMismatch,
    DimensionNotTwo,
    EmptyAverageWindow,
    NoDiffusiveChannels,
    ValidationError,
)
from .linalg import PureStateVector, QuantumState, as_complex_matrix, project_to_state
from .model import MeasurementModel

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=np.complex128)
PAULI_Y = np.array([[0.0, -1.0j], [1.0j, 0.0]], dtype=np.complex128)
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]], dtype=np.complex128)


def linear_entropy(rho: QuantumState) -> float:
    """tr rho(1 - rho); zero exactly on pure states, always in [0, 1)."""
    mat = rho.matrix
    val = 1.0 - float(np.einsum("ij,ji->", mat, mat).real)
    return max(val, 0.0)


def von_neumann_entropy(rho: QuantumState) -> float:
    """-tr rho ln rho with the 0 ln 0 = 0 convention below 1e-14."""
    evals = np.linalg.eigvalsh(rho.matrix)
    evals = evals[evals > 1e-14]
    return max(float(-(evals * np.log(evals)).sum()), 0.0)


def _window(traj: PosteriorTrajectory, burn_in: float):
    times = traj.grid.times
    if burn_in >= traj.grid.t_final:
        raise EmptyAverageWindow("burn_in must be smaller than t_final")
    mask = times >= burn_in
    if mask.sum() < 2:
        raise EmptyAverageWindow("averaging window holds fewer than two samples")
    return times[mask], traj.state_path[mask]


def time_average_state(traj: PosteriorTrajectory, burn_in: float = 0.0) -> QuantumState:
    """Trapezoidal time average of the state path after burn_in."""
    times, states = _window(traj, burn_in)
    avg = np.trapezoid(states, times, axis=0) / (times[-1] - times[0])
    return project_to_state(avg)


def quantum_variance(a: np.ndarray, rho: QuantumState) -> float:
    """D^2(a; rho) = <a* a, rho> - |<a, rho>|^2, clipped at zero."""
    a = as_complex_matrix(a, dim=rho.dim)
    mat = rho.matrix
    second = float(np.trace(a.conj().T @ a @ mat).real)
    first = complex(np.trace(a.conj().T @ mat))
    return max(second - abs(first) ** 2, 0.0)


@dataclass(frozen=True)
class VarianceDecomposition:
    """lhs = D^2(a; eta_eq); term1, term2 are trajectory time averages."""

    lhs: float
    term1: float
    term2: float

    @property
    def residual(self) -> float:
        return self.lhs - self.term1 - self.term2


def variance_decomposition(
    a: np.ndarray,
    traj: PosteriorTrajectory,
    eta_eq: QuantumState,
    burn_in: float = 0.0,
) -> VarianceDecomposition:
    """Ergodic split of the equilibrium variance of an observable.

    term1 is the time average of the within-state variance D^2(a; rho_t),
    term2 the time average of |<a, rho_t - eta_eq>|^2; for an ergodic model
    their sum converges to D^2(a; eta_eq) as the horizon grows.
    """
    a = as_complex_matrix(a, dim=eta_eq.dim)
    times, states = _window(traj, burn_in)
    span = times[-1] - times[0]
    adag = a.conj().T
    second = np.einsum("ij,tji->t", adag @ a, states).real
    first = np.einsum("ij,tji->t", adag, states)
    var_t = np.clip(second - np.abs(first) ** 2, 0.0, None)
    eq_first = complex(np.trace(adag @ eta_eq.matrix))
    dev_t = np.abs(first - eq_first) ** 2
    return VarianceDecomposition(
        lhs=quantum_variance(a, eta_eq),
        term1=float(np.trapezoid(var_t, times) / span),
        term2=float(np.trapezoid(dev_t, times) / span),
    )


@dataclass(frozen=True)
class ErgodicReport:
    time_avg_state: QuantumState
    eta_eq: QuantumState
    distance: float
    variance_decomposition: dict[str, VarianceDecomposition]


def build_ergodic_report(
    traj: PosteriorTrajectory,
    eta_eq: QuantumState,
    observables: dict[str, np.ndarray],
    burn_in: float = 0.0,
) -> ErgodicReport:
    avg = time_average_state(traj, burn_in)
    dist = float(np.linalg.norm(avg.matrix - eta_eq.matrix))
    decomp = {
        name: variance_decomposition(a, traj, eta_eq, burn_in)
        for name, a in observables.items()
    }
    return ErgodicReport(
        time_avg_state=avg, eta_eq=eta_eq, distance=dist, variance_decomposition=decomp
    )


# -- Bloch histogram ----------------------------------------------------------

@dataclass
class BlochHistogram:
    """Dwell-time histogram over equal-angle (theta, phi) bins."""

    grid: tuple[int, int]
    counts: np.ndarray        # (n_polar, n_azimuth) int
    total: int
    dwell_time: np.ndarray    # (n_polar, n_azimuth) float
    mixed_samples: int = 0
    polar_axis: np.ndarray | None = None

    def occupancy(self) -> float:
        """Fraction of bins with nonzero dwell time."""
        return float((self.counts > 0).mean())


def bloch_vector(rho: np.ndarray) -> np.ndarray:
    """Bloch components (x, y, z) of a 2x2 density matrix."""
    return np.array(
        [
            float(np.trace(PAULI_X @ rho).real),
            float(np.trace(PAULI_Y @ rho).real),
            float(np.trace(PAULI_Z @ rho).real),
        ]
    )


def _axis_triad(polar_axis: np.ndarray):
    axis = np.asarray(polar_axis, dtype=float)
    nrm = np.linalg.norm(axis)
    if nrm == 0:
        raise ValidationError("polar_axis must be a nonzero 3-vector")
    axis = axis / nrm
    helper = np.array([1.0, 0.0, 0.0])
    if abs(axis @ helper) > 0.9:
        helper = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(helper, axis)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(axis, e1)
    return e1, e2, axis


def empirical_invariant_measure(
    traj: PosteriorTrajectory,
    grid: tuple[int, int] = (12, 24),
    burn_in: float = 0.0,
    polar_axis=(0.0, 0.0, 1.0),
    purity_gate: float = 0.05,
) -> BlochHistogram:
    """Dwell-time histogram of a dim-2 trajectory over the Bloch sphere.

    Samples with linear entropy above ``purity_gate`` are binned by their
    dominant eigenvector and counted in ``mixed_samples``.  ``polar_axis``
    picks the axis the polar angle is measured from, so that structures
    like great circles can be aligned with one angular band.
    """
    if traj.state_path.shape[1] != 2:
        raise DimensionNotTwo("Bloch binning is defined for dim 2 only")
    n_polar, n_azimuth = int(grid[0]), int(grid[1])
    if n_polar < 1 or n_azimuth < 1:
        raise ValidationError("histogram grid must be at least 1x1")
    times, states = _window(traj, burn_in)
    dt = traj.grid.dt

    tr2 = np.einsum("tij,tji->t", states, states).real
    entropy = 1.0 - tr2
    mixed = entropy > purity_gate
    vecs = np.empty((states.shape[0], 3))
    vecs[:, 0] = np.einsum("ij,tji->t", PAULI_X, states).real
    vecs[:, 1] = np.einsum("ij,tji->t", PAULI_Y, states).real
    vecs[:, 2] = np.einsum("ij,tji->t", PAULI_Z, states).real
    if mixed.any():
        # direction of the dominant eigenvector = direction of the Bloch vector
        idx = np.flatnonzero(mixed)
        norms = np.linalg.norm(vecs[idx], axis=1)
        norms[norms == 0] = 1.0
        vecs[idx] /= norms[:, None]
    nrm = np.linalg.norm(vecs, axis=1)
    nrm[nrm == 0] = 1.0
    unit = vecs / nrm[:, None]

    e1, e2, axis = _axis_triad(np.asarray(polar_axis, dtype=float))
    z = np.clip(unit @ axis, -1.0, 1.0)
    theta = np.arccos(z)
    phi = np.mod(np.arctan2(unit @ e2, unit @ e1), 2.0 * np.pi)
    ti = np.minimum((theta / np.pi * n_polar).astype(int), n_polar - 1)
    pi_ = np.minimum((phi / (2.0 * np.pi) * n_azimuth).astype(int), n_azimuth - 1)
    counts = np.zeros((n_polar, n_azimuth), dtype=np.int64)
    np.add.at(counts, (ti, pi_), 1)
    return BlochHistogram(
        grid=(n_polar, n_azimuth),
        counts=counts,
        total=int(counts.sum()),
        dwell_time=counts * dt,
        mixed_samples=int(mixed.sum()),
        polar_axis=axis,
    )


# -- Lie rank (hypoellipticity) check ------------------------------------------

def traceless_hermitian_basis(n: int) -> np.ndarray:
    """Orthonormal basis of traceless Hermitian n x n matrices, (n^2-1, n, n)."""
    mats = []
    for j in range(n):
        for k in range(j + 1, n):
            sym = np.zeros((n, n), dtype=np.complex128)
            sym[j, k] = sym[k, j] = 1.0 / np.sqrt(2.0)
            mats.append(sym)
            asym = np.zeros((n, n), dtype=np.complex128)
            asym[j, k] = -1.0j / np.sqrt(2.0)
            asym[k, j] = 1.0j / np.sqrt(2.0)
            mats.append(asym)
    for l in range(1, n):
        diag = np.zeros(n)
        diag[:l] = 1.0
        diag[l] = -float(l)
        mats.append(np.diag(diag / np.sqrt(l * (l + 1))).astype(np.complex128))
    return np.stack(mats)


@dataclass(frozen=True)
class LieRankReport:
    rank: int
    full: bool
    tangent_dim: int
    n_fields: int


def lie_rank_check(
    m: MeasurementModel,
    psi: PureStateVector,
    max_depth: int = 3,
    fd_step: float = 1e-5,
    sv_threshold: float = 1e-6,
) -> LieRankReport:
    """Rank of the Lie algebra of drift and diffusion fields at a pure state.

    States are coordinatized as real vectors over an orthonormal traceless
    Hermitian basis; the drift and diffusion fields of the Stratonovich
    system are evaluated there, iterated Lie brackets are formed with
    central-difference Jacobians, and the span is projected onto the
    tangent space of the pure-state manifold before the rank decision.
    """
    if m.n_diffusive == 0:
        raise NoDiffusiveChannels("the Lie-rank check needs diffusive fields")
    if psi.dim != m.dim:
        raise DimensionMismatch("state vector dimension does not match the model")
    n = m.dim
    if n > 4:
        raise ValidationError("Lie-rank check supports dim <= 4")
    if max_depth < 1:
        raise ValidationError("max_depth must be >= 1")

    basis = traceless_hermitian_basis(n)
    dim_r = basis.shape[0]
    eye = np.eye(n, dtype=np.complex128) / n
    arr = _ModelArrays(m)

    def to_coords(rho: np.ndarray) -> np.ndarray:
        return np.einsum("aij,ji->a", basis, rho).real

    def from_coords(x: np.ndarray) -> np.ndarray:
        return eye + np.einsum("a,aij->ij", x, basis)

    def drift_field(x: np.ndarray) -> np.ndarray:
        rho = from_coords(x)[None]
        return to_coords(_strat_a_b(arr, rho)[0])

    def diffusion_field(j: int):
        def field(x: np.ndarray) -> np.ndarray:
            rho = from_coords(x)[None]
            return to_coords(_strat_b_b(arr, rho)[0, j])

        return field

    def jacobian(field, x: np.ndarray) -> np.ndarray:
        jac = np.empty((dim_r, dim_r))
        for a in range(dim_r):
            xp = x.copy()
            xp[a] += fd_step
            xm = x.copy()
            xm[a] -= fd_step
            jac[:, a] = (field(xp) - field(xm)) / (2.0 * fd_step)
        return jac

    def bracket(f, g):
        def field(x: np.ndarray) -> np.ndarray:
            return jacobian(g, x) @ f(x) - jacobian(f, x) @ g(x)

        return field

    generators = [drift_field] + [diffusion_field(j) for j in range(m.n_diffusive)]
    x0 = to_coords(psi.projector())

    # tangent space of the pure-state manifold at psi, in coordinates
    comp = scipy.linalg.null_space(psi.amplitudes.conj()[None, :])
    tangent = []
    for i in range(comp.shape[1]):
        v = comp[:, i]
        tau1 = np.outer(psi.amplitudes, v.conj()) + np.outer(v, psi.amplitudes.conj())
        tau2 = 1.0j * np.outer(psi.amplitudes, v.conj()) - 1.0j * np.outer(
            v, psi.amplitudes.conj()
        )
        tangent.append(to_coords(tau1))
        tangent.append(to_coords(tau2))
    tangent = np.stack(tangent)
    tangent /= np.linalg.norm(tangent, axis=1)[:, None]
    tangent_dim = tangent.shape[0]

    def current_rank(vectors) -> int:
        proj = np.stack(vectors) @ tangent.T
        svals = np.linalg.svd(proj, compute_uv=False)
        return int(np.count_nonzero(svals > sv_threshold))

    fields = list(generators)
    vectors = [f(x0) for f in fields]
    frontier = list(generators)
    rank = current_rank(vectors)
    depth = 1
    while rank < tangent_dim and depth < max_depth:
        new_frontier = []
        for g in generators:
            for f in frontier:
                br = bracket(g, f)
                new_frontier.append(br)
                vectors.append(br(x0))
        rank = current_rank(vectors)
        frontier = new_frontier
        depth += 1

    return LieRankReport(
        rank=min(rank, tangent_dim),
        full=rank >= tangent_dim,
        tangent_dim=tangent_dim,
        n_fields=len(vectors),
    )
