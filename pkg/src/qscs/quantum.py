"""Exact state-vector simulation of the noisy, field-controlled XY spin chain.

Basis ordering follows ``np.kron``: site 1 is the most significant bit, so the
single-excitation state with the excitation on site 1 is ``|10...0>`` at index
``2**(N-1)``.  ``|1>`` is the excited level (sigma^z eigenvalue -1).
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
import math

import numpy as np

MAX_SPINS = 8

PAULI_I = np.eye(2, dtype=complex)
PAULI_X = np.array([[0, 1], [1, 0]], dtype=complex)
PAULI_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
PAULI_Z = np.array([[1, 0], [0, -1]], dtype=complex)


class ContractViolation(ValueError):
    """Raised when an operation is called outside its documented preconditions."""


@dataclass(frozen=True)
class SpinChainSpec:
    n_spins: int = 3
    coupling: float = 1.0
    field_on_strength: float = 5.0
    noise_level: float = 0.05
    dt: float = 1.0

    def __post_init__(self):
        if not isinstance(self.n_spins, (int, np.integer)) or not 1 <= self.n_spins <= MAX_SPINS:
            raise ContractViolation(f"n_spins must be an integer in [1, {MAX_SPINS}], got {self.n_spins!r}")
        if not math.isfinite(self.coupling):
            raise ContractViolation("coupling must be finite")
        if not math.isfinite(self.field_on_strength):
            raise ContractViolation("field_on_strength must be finite")
        if not 0.0 <= self.noise_level <= 1.0:
            raise ContractViolation(f"noise_level must lie in [0, 1], got {self.noise_level}")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ContractViolation(f"dt must be positive, got {self.dt}")

    @property
    def dim(self) -> int:
        return 2 ** self.n_spins


class NoiseKind(str, Enum):
    NONE = "none"
    BIT_FLIP = "bit_flip"
    DEPOLARIZING = "depolarizing"
    PHASE_FLIP = "phase_flip"


@dataclass(frozen=True)
class NoiseChannelSpec:
    """Per-qubit Pauli error channel applied once per environment step."""

    kind: NoiseKind = NoiseKind.NONE
    probability: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", NoiseKind(self.kind))
        if not 0.0 <= self.probability <= 1.0:
            raise ContractViolation(f"channel probability must lie in [0, 1], got {self.probability}")


# ---------------------------------------------------------------------------
# operators

def site_operator(op: np.ndarray, site: int, n_spins: int) -> np.ndarray:
    """Embed a single-site operator at ``site`` (0-based) of an ``n_spins`` chain."""
    out = np.ones((1, 1), dtype=complex)
    for k in range(n_spins):
        out = np.kron(out, op if k == site else PAULI_I)
    return out


@lru_cache(maxsize=None)
def _coupling_term(n_spins: int) -> np.ndarray:
    # (1/2) sum (XX + YY), J factored out
    dim = 2 ** n_spins
    h = np.zeros((dim, dim), dtype=complex)
    for n in range(n_spins - 1):
        h += site_operator(PAULI_X, n, n_spins) @ site_operator(PAULI_X, n + 1, n_spins)
        h += site_operator(PAULI_Y, n, n_spins) @ site_operator(PAULI_Y, n + 1, n_spins)
    h *= 0.5
    h.setflags(write=False)
    return h


@lru_cache(maxsize=None)
def _z_diagonals(n_spins: int) -> np.ndarray:
    """Row n holds the diagonal of sigma^z on site n."""
    idx = np.arange(2 ** n_spins)
    bits = (idx[None, :] >> (n_spins - 1 - np.arange(n_spins)[:, None])) & 1
    z = 1.0 - 2.0 * bits
    z.setflags(write=False)
    return z


def coupling_operator(n_spins: int) -> np.ndarray:
    """XY hopping term (1/2) sum_n (X_n X_{n+1} + Y_n Y_{n+1}), open chain."""
    return _coupling_term(n_spins).copy()


def total_z(n_spins: int) -> np.ndarray:
    return np.diag(_z_diagonals(n_spins).sum(axis=0)).astype(complex)


def _check_fields(spec: SpinChainSpec, fields) -> np.ndarray:
    b = np.asarray(fields, dtype=float)
    if b.shape != (spec.n_spins,):
        raise ContractViolation(f"expected {spec.n_spins} field values, got shape {b.shape}")
    if not np.all(np.isfinite(b)):
        raise ContractViolation("field values must be finite")
    return b


def build_hamiltonian(spec: SpinChainSpec, fields) -> np.ndarray:
    b = _check_fields(spec, fields)
    h = spec.coupling * _coupling_term(spec.n_spins)
    h = h + np.diag(b @ _z_diagonals(spec.n_spins))
    return h


def perturb_fields(fields, spec: SpinChainSpec, rng: np.random.Generator) -> np.ndarray:
    """Add independent Gaussian noise with std ``noise_level * field_on_strength``."""
    b = _check_fields(spec, fields)
    sigma = spec.noise_level * spec.field_on_strength
    if sigma == 0.0:
        return b.copy()
    return b + rng.normal(0.0, sigma, size=b.shape)


# ---------------------------------------------------------------------------
# states

def make_basis_state(n_spins: int, index: int) -> np.ndarray:
    dim = 2 ** n_spins
    if not 0 <= index < dim:
        raise ContractViolation(f"basis index {index} out of range for {n_spins} spins")
    psi = np.zeros(dim, dtype=complex)
    psi[index] = 1.0
    return psi


def make_w_state(n_spins: int) -> np.ndarray:
    dim = 2 ** n_spins
    psi = np.zeros(dim, dtype=complex)
    for n in range(n_spins):
        psi[1 << (n_spins - 1 - n)] = 1.0
    return psi / math.sqrt(n_spins)


def initial_state(n_spins: int) -> np.ndarray:
    """Single excitation on the first site, |10...0>."""
    return make_basis_state(n_spins, 1 << (n_spins - 1))


def fidelity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ContractViolation(f"state dimensions differ: {a.shape} vs {b.shape}")
    f = abs(np.vdot(b, a)) ** 2
    return float(min(max(f, 0.0), 1.0))


# ---------------------------------------------------------------------------
# dynamics

def is_hermitian(m: np.ndarray, tol: float = 1e-12) -> bool:
    return m.ndim == 2 and m.shape[0] == m.shape[1] and np.allclose(m, m.conj().T, rtol=0.0, atol=tol)


def propagator(hamiltonian: np.ndarray, dt: float) -> np.ndarray:
    """exp(-i H dt) from the Hermitian eigendecomposition of H."""
    if not is_hermitian(hamiltonian):
        raise ContractViolation("hamiltonian is not Hermitian")
    w, v = np.linalg.eigh(hamiltonian)
    return (v * np.exp(-1j * w * dt)) @ v.conj().T


def evolve(state: np.ndarray, hamiltonian: np.ndarray, dt: float) -> np.ndarray:
    if hamiltonian.shape != (state.shape[0], state.shape[0]):
        raise ContractViolation(f"hamiltonian shape {hamiltonian.shape} does not match state {state.shape}")
    out = propagator(hamiltonian, dt) @ state
    return out / np.linalg.norm(out)


def _apply_pauli(state: np.ndarray, pauli: str, site: int, n_spins: int) -> np.ndarray:
    # view the amplitude vector as a rank-N tensor and act on one axis
    t = state.reshape((2,) * n_spins)
    if pauli == "X":
        t = np.flip(t, axis=site)
    elif pauli == "Z":
        t = t * _z_diagonals(n_spins)[site].reshape((2,) * n_spins)
    elif pauli == "Y":
        # Y = i X Z
        t = 1j * np.flip(t * _z_diagonals(n_spins)[site].reshape((2,) * n_spins), axis=site)
    else:
        raise ValueError(pauli)
    return np.ascontiguousarray(t).reshape(-1)


def apply_noise_channel(state: np.ndarray, channel: NoiseChannelSpec, rng: np.random.Generator) -> np.ndarray:
    """Sample one quantum-jump trajectory of a per-qubit Pauli channel.

    One uniform draw per qubit is always consumed (two for depolarizing), so
    the stream position does not depend on ``probability``.
    """
    n_spins = int(round(math.log2(state.shape[0])))
    if channel.kind is NoiseKind.NONE:
        return state.copy()
    out = state
    for site in range(n_spins):
        hit = rng.random() < channel.probability
        if channel.kind is NoiseKind.DEPOLARIZING:
            which = "XYZ"[int(rng.integers(3))]
        else:
            which = "X" if channel.kind is NoiseKind.BIT_FLIP else "Z"
        if hit:
            out = _apply_pauli(out, which, site, n_spins)
    return out.copy() if out is state else out


# ---------------------------------------------------------------------------
# controllability probe

def lie_algebra_rank(generators, tolerance: float = 1e-10, max_dim: int | None = None) -> int:
    """Real dimension of the Lie algebra generated by ``{i G_k}``.

    Generators are projected onto their traceless parts, then the span is
    closed under commutators with Gram-Schmidt in the Hilbert-Schmidt inner
    product. ``tolerance`` is relative to each candidate's norm.
    """
    gens = [np.asarray(g, dtype=complex) for g in generators]
    if not gens:
        raise ContractViolation("lie_algebra_rank needs at least one generator")
    d = gens[0].shape[0]
    if any(g.shape != (d, d) for g in gens):
        raise ContractViolation("generators must share one square shape")
    cap = d * d - 1 if max_dim is None else max_dim

    basis: list[np.ndarray] = []

    def _add(m: np.ndarray) -> bool:
        m = m - np.trace(m) / d * np.eye(d)
        scale = np.linalg.norm(m)
        if scale == 0.0:
            return False
        r = m / scale
        # twice for numerical stability (classical GS loses orthogonality)
        for _ in range(2):
            for q in basis:
                r = r - np.real(np.vdot(q, r)) * q
        nrm = np.linalg.norm(r)
        if nrm < tolerance:
            return False
        basis.append(r / nrm)
        return True

    for g in gens:
        _add(1j * g)

    frontier = list(range(len(basis)))
    while frontier and len(basis) < cap:
        new = []
        current = len(basis)
        for i in frontier:
            for j in range(current):
                if i == j:
                    continue
                if _add(basis[i] @ basis[j] - basis[j] @ basis[i]):
                    new.append(len(basis) - 1)
                if len(basis) >= cap:
                    break
            if len(basis) >= cap:
                break
        frontier = new
    return len(basis)


def xy_control_generators(n_spins: int, coupling: float = 1.0) -> list[np.ndarray]:
    """Drift (XY hopping) plus one sigma^z control per site."""
    gens = [coupling * _coupling_term(n_spins).copy()]
    for n in range(n_spins):
        gens.append(np.diag(_z_diagonals(n_spins)[n]).astype(complex))
    return gens
