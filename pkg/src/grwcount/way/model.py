"""Finite-dimensional measurement models with an additive conserved quantity.

Conventions: ``hbar = 1`` and spin operators ``S_k = sigma_k / 2``.  The
system ``S`` comes first in every tensor product, so ``|m> (x) |A>`` is
``np.kron(m, A)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import linalg

HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-12
#: Eigenvalues of M closer than this (relative to its norm) count as degenerate.
DEGENERACY_TOL = 1e-9
#: Outcome projections with squared norm at or below this are distorting.
PROJECTION_FLOOR = 1e-12
#: Tolerance used by the chain identity preconditions.
CHAIN_PRECONDITION_TOL = 1e-9


class DimensionError(ValueError):
    pass


class DegenerateObservableError(ValueError):
    pass


class DistortingMeasurementError(ValueError):
    """``U`` moves an eigenstate of M (almost) entirely out of its ray."""

    def __init__(self, msg, fidelities):
        super().__init__(msg)
        self.fidelities = fidelities


class PreconditionsUnmet(ValueError):
    """The model is not both ideal and conserving; carries the residuals."""

    def __init__(self, msg, residuals: dict):
        super().__init__(msg)
        self.residuals = residuals


def spin_matrices(j: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """``(J_x, J_y, J_z)`` for spin ``j`` in the basis ``m = j, j-1, ..., -j``."""
    dim = int(round(2 * j)) + 1
    if abs((dim - 1) / 2 - j) > 1e-12 or j < 0:
        raise ValueError(f"j must be a non-negative half-integer, got {j!r}")
    m = j - np.arange(dim)
    # <m+1|J_+|m> = sqrt(j(j+1) - m(m+1))
    up = np.sqrt(j * (j + 1) - m[1:] * (m[1:] + 1))
    jp = np.diag(up, 1).astype(complex)
    jx = (jp + jp.conj().T) / 2
    jy = (jp - jp.conj().T) / (2j)
    jz = np.diag(m).astype(complex)
    return jx, jy, jz


def hermiticity_residual(A: np.ndarray) -> float:
    return float(np.linalg.norm(A - A.conj().T, 2))


def unitarity_residual(U: np.ndarray) -> float:
    return float(np.linalg.norm(U.conj().T @ U - np.eye(U.shape[0]), 2))


def _square(A, name) -> np.ndarray:
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError(f"{name} must be a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError(f"{name} has non-finite entries")
    return A


def total_conserved(Gamma_S: np.ndarray, Gamma_A: np.ndarray) -> np.ndarray:
    """``Gamma_S (x) 1 + 1 (x) Gamma_A``."""
    return np.kron(Gamma_S, np.eye(Gamma_A.shape[0])) + np.kron(np.eye(Gamma_S.shape[0]), Gamma_A)


@dataclass(frozen=True, eq=False)
class WAYModel:
    """Observable ``M`` and conserved parts ``Gamma_S``, ``Gamma_A`` with coupling ``U``."""

    M: np.ndarray
    Gamma_S: np.ndarray
    Gamma_A: np.ndarray
    U: np.ndarray
    ready_state: np.ndarray

    def __post_init__(self):
        M = _square(self.M, "M")
        GS = _square(self.Gamma_S, "Gamma_S")
        GA = _square(self.Gamma_A, "Gamma_A")
        U = _square(self.U, "U")
        a0 = np.asarray(self.ready_state, dtype=complex).ravel()
        if GS.shape != M.shape:
            raise DimensionError("M and Gamma_S act on different spaces")
        if U.shape[0] != M.shape[0] * GA.shape[0]:
            raise DimensionError("U does not act on S (x) A")
        if a0.size != GA.shape[0]:
            raise DimensionError("ready state does not live on A")
        for name, A in (("M", M), ("Gamma_S", GS), ("Gamma_A", GA)):
            r = hermiticity_residual(A)
            if r > HERMITIAN_TOL * max(1.0, np.linalg.norm(A, 2)):
                raise ValueError(f"{name} is not Hermitian (residual {r:.3e})")
        r = unitarity_residual(U)
        if r > UNITARY_TOL:
            raise ValueError(f"U is not unitary (residual {r:.3e})")
        if abs(np.linalg.norm(a0) - 1) > 1e-12:
            raise ValueError("ready state must be a unit vector")
        for name, val in (("M", M), ("Gamma_S", GS), ("Gamma_A", GA), ("U", U), ("ready_state", a0)):
            object.__setattr__(self, name, val)

    @property
    def dim_s(self) -> int:
        return self.M.shape[0]

    @property
    def dim_a(self) -> int:
        return self.Gamma_A.shape[0]

    @property
    def Gamma(self) -> np.ndarray:
        return total_conserved(self.Gamma_S, self.Gamma_A)

    def eigenbasis(self) -> tuple[np.ndarray, np.ndarray]:
        """Eigenvalues (ascending) and eigenvectors of the nondegenerate ``M``."""
        vals, vecs = np.linalg.eigh(self.M)
        scale = max(1.0, float(np.max(np.abs(vals))))
        if vals.size > 1 and np.min(np.diff(vals)) < DEGENERACY_TOL * scale:
            raise DegenerateObservableError("M has a degenerate spectrum")
        return vals, vecs

    def gamma_a_moment(self, power: int = 2) -> float:
        """``<A0|Gamma_A**power|A0>``."""
        a = self.ready_state
        return float(np.real(a.conj() @ np.linalg.matrix_power(self.Gamma_A, power) @ a))


def conservation_residual(U, Gamma) -> float:
    """Spectral norm of ``U^dagger Gamma U - Gamma``."""
    U = _square(U, "U")
    Gamma = _square(Gamma, "Gamma")
    if U.shape != Gamma.shape:
        raise DimensionError(f"U is {U.shape} but Gamma is {Gamma.shape}")
    return float(np.linalg.norm(U.conj().T @ Gamma @ U - Gamma, 2))


def commutator_obstruction(M, Gamma_S) -> float:
    """Spectral norm of ``[Gamma_S, M]``; nonzero rules out ideal orthogonal measurements."""
    M = _square(M, "M")
    Gamma_S = _square(Gamma_S, "Gamma_S")
    if M.shape != Gamma_S.shape:
        raise DimensionError("M and Gamma_S have different dimensions")
    return float(np.linalg.norm(Gamma_S @ M - M @ Gamma_S, 2))


@dataclass(frozen=True)
class OutcomeState:
    eigenvalue: float
    state: np.ndarray
    fidelity: float


def outcome_states(model: WAYModel) -> dict[int, OutcomeState]:
    """For each eigenvector ``|m>`` of M: the apparatus state ``|A_m>`` and its fidelity.

    ``U |m>|A0>`` is projected onto ``|m> (x) (.)``; the fidelity is the
    squared norm of that projection and ``|A_m>`` the normalized projection.
    Keys index the eigenvalues in ascending order.
    """
    vals, vecs = model.eigenbasis()
    out, fids = {}, []
    for idx in range(model.dim_s):
        m = vecs[:, idx]
        final = (model.U @ np.kron(m, model.ready_state)).reshape(model.dim_s, model.dim_a)
        proj = m.conj() @ final
        fid = float(np.real(np.vdot(proj, proj)))
        fids.append(fid)
        out[idx] = OutcomeState(float(vals[idx]), proj / np.sqrt(fid) if fid > PROJECTION_FLOOR else None, fid)
    if min(fids) <= PROJECTION_FLOOR:
        raise DistortingMeasurementError(
            f"an eigenstate of M is almost fully distorted (fidelities {fids})", fids
        )
    return out


def outcome_overlaps(states: dict[int, OutcomeState]) -> np.ndarray:
    """``|<A_m'|A_m>|`` for all pairs."""
    keys = sorted(states)
    vecs = np.array([states[k].state for k in keys])
    return np.abs(vecs.conj() @ vecs.T)


def chain_identity_residual(model: WAYModel, m: int, m_prime: int) -> float:
    """``|left - right|`` for the two ends of the conservation chain.

    Left: ``<m'|[Gamma_S, M]|m>``.  Right: ``(m - m')[<m'|m><A_m'|Gamma_A|A_m>
    + <A_m'|A_m><m'|Gamma_S|m>]``.  Both are evaluated independently.  The
    identity only holds for ideal conserving models; otherwise
    :class:`PreconditionsUnmet` is raised with the offending residuals.
    """
    cons = conservation_residual(model.U, model.Gamma)
    try:
        states = outcome_states(model)
        worst = max(1 - s.fidelity for s in states.values())
    except DistortingMeasurementError as exc:
        states, worst = None, 1 - min(exc.fidelities)
    if cons >= CHAIN_PRECONDITION_TOL or worst >= CHAIN_PRECONDITION_TOL:
        raise PreconditionsUnmet(
            f"chain identity needs an ideal conserving model "
            f"(conservation residual {cons:.3e}, max distortion {worst:.3e})",
            {"conservation": cons, "distortion": worst},
        )
    vals, vecs = model.eigenbasis()
    vm, vmp = vecs[:, m], vecs[:, m_prime]
    comm = model.Gamma_S @ model.M - model.M @ model.Gamma_S
    left = vmp.conj() @ comm @ vm
    A, Ap = states[m].state, states[m_prime].state
    right = (vals[m] - vals[m_prime]) * (
        np.vdot(vmp, vm) * (Ap.conj() @ model.Gamma_A @ A)
        + np.vdot(Ap, A) * (vmp.conj() @ model.Gamma_S @ vm)
    )
    return float(abs(left - right))


# --------------------------------------------------------------------------
# constructions


def haar_unitary(dim: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2)
    q, r = np.linalg.qr(z)
    d = np.diag(r)
    return q * (d / np.abs(d))


def eigenspaces(H: np.ndarray, tol: float = 1e-9) -> list[np.ndarray]:
    """Orthonormal bases of the eigenspaces of a Hermitian matrix."""
    vals, vecs = np.linalg.eigh(H)
    groups, start = [], 0
    for i in range(1, vals.size + 1):
        if i == vals.size or vals[i] - vals[i - 1] > tol * max(1.0, abs(vals[i])):
            groups.append(vecs[:, start:i])
            start = i
    return groups


def commutant_basis(Gamma: np.ndarray, tol: float = 1e-9) -> list[np.ndarray]:
    """Hermitian generators spanning the matrices that commute with ``Gamma``."""
    basis = []
    for V in eigenspaces(Gamma, tol):
        d = V.shape[1]
        for a in range(d):
            for b in range(a, d):
                E = np.zeros((d, d), complex)
                if a == b:
                    E[a, a] = 1
                    basis.append(V @ E @ V.conj().T)
                else:
                    E[a, b] = E[b, a] = 1 / np.sqrt(2)
                    basis.append(V @ E @ V.conj().T)
                    E[a, b], E[b, a] = -1j / np.sqrt(2), 1j / np.sqrt(2)
                    basis.append(V @ E @ V.conj().T)
    return basis


def random_conserving_unitary(Gamma: np.ndarray, rng: np.random.Generator, tol: float = 1e-9) -> np.ndarray:
    """Haar-random unitary inside each eigenspace of ``Gamma``."""
    U = np.zeros(Gamma.shape, complex)
    for V in eigenspaces(Gamma, tol):
        U += V @ haar_unitary(V.shape[1], rng) @ V.conj().T
    return U


def conserving_exponential(Gamma: np.ndarray, coeffs: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """``exp(-i sum_k c_k G_k)`` over the commutant generators of ``Gamma``."""
    basis = commutant_basis(Gamma, tol)
    if len(coeffs) != len(basis):
        raise ValueError(f"need {len(basis)} coefficients")
    H = sum(c * G for c, G in zip(coeffs, basis))
    return linalg.expm(-1j * H)


def shift_operator(n: int) -> np.ndarray:
    """Cyclic shift ``|a> -> |a + 1 mod n>``."""
    return np.roll(np.eye(n), 1, axis=0).astype(complex)


def shift_generator(n: int) -> np.ndarray:
    """Hermitian ``K`` with ``exp(-2 pi i K / n)`` equal to the cyclic shift."""
    F = np.fft.fft(np.eye(n)) / np.sqrt(n)
    # the shift is diagonal in the discrete Fourier basis with eigenvalues exp(-2 pi i k / n)
    return F.conj().T @ np.diag(np.arange(n).astype(float)) @ F


def controlled_shift_model(dim_a: int = 8) -> WAYModel:
    """A spin-1/2 ``S_z`` meter that shifts a cyclic pointer by ``2 m`` cells.

    ``Gamma_S = M`` and ``Gamma_A = -K`` with ``K`` the generator of the
    pointer shift, so the total is conserved exactly; the outcome states
    ``|+1>`` and ``|-1>`` are orthogonal.
    """
    _, _, sz = spin_matrices(0.5)
    X = shift_operator(dim_a)
    up, down = np.diag([1.0, 0.0]), np.diag([0.0, 1.0])
    U = np.kron(up, X) + np.kron(down, X.conj().T)
    a0 = np.zeros(dim_a, complex)
    a0[0] = 1
    return WAYModel(M=sz, Gamma_S=sz, Gamma_A=-shift_generator(dim_a), U=U, ready_state=a0)


def uncoupled_model(M, Gamma_S, Gamma_A, V, ready_state) -> WAYModel:
    """``U = 1 (x) V``: ideal, conserving when ``[V, Gamma_A] = 0``, never informative."""
    return WAYModel(M, Gamma_S, Gamma_A, np.kron(np.eye(np.asarray(M).shape[0]), V), ready_state)


# --------------------------------------------------------------------------
# serialization


def _pairs(A: np.ndarray):
    A = np.asarray(A, dtype=complex)
    return np.stack([A.real, A.imag], axis=-1).tolist()


def _unpairs(obj) -> np.ndarray:
    arr = np.asarray(obj, dtype=float)
    if arr.shape[-1] != 2:
        raise ValueError("complex entries must be [re, im] pairs")
    return arr[..., 0] + 1j * arr[..., 1]


def model_to_json(model: WAYModel) -> dict:
    return {
        "dim_s": model.dim_s,
        "dim_a": model.dim_a,
        "M": _pairs(model.M),
        "Gamma_S": _pairs(model.Gamma_S),
        "Gamma_A": _pairs(model.Gamma_A),
        "U": _pairs(model.U),
        "ready_state": _pairs(model.ready_state),
    }


def model_from_json(obj) -> WAYModel:
    if isinstance(obj, (str, bytes)):
        obj = json.loads(obj)
    known = {"dim_s", "dim_a", "M", "Gamma_S", "Gamma_A", "U", "ready_state"}
    if set(obj) - known:
        raise ValueError(f"unknown keys in model: {sorted(set(obj) - known)}")
    model = WAYModel(
        _unpairs(obj["M"]),
        _unpairs(obj["Gamma_S"]),
        _unpairs(obj["Gamma_A"]),
        _unpairs(obj["U"]),
        _unpairs(obj["ready_state"]),
    )
    if obj.get("dim_s", model.dim_s) != model.dim_s or obj.get("dim_a", model.dim_a) != model.dim_a:
        raise DimensionError("declared dimensions disagree with the matrices")
    return model
