"""Randomized search for counterexamples to the conservation obstruction.

A counterexample would be a model that conserves ``Gamma``, measures ideally,
has mutually orthogonal outcome states, and yet has ``[Gamma_S, M] != 0``.
Random models rarely satisfy even the first three conditions, so the
generators below also build families that meet some of them by
construction:

``random``       random integer-spectrum ``Gamma``'s, Haar-random conserving ``U``.
``controlled``   ``U = sum_m |m><m| (x) V_m`` with ``[M, Gamma_S] = 0`` and
                 ``V_m`` conserving ``Gamma_A``: ideal, conserving, orthogonal.
``noncommuting`` the same controlled form with ``Gamma_S`` not commuting with
                 ``M``: ideal and orthogonal, tested for conservation.
``uncoupled``    ``U = 1 (x) V`` with non-commuting ``Gamma_S``: ideal and
                 conserving, with identical outcome states.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import model as wm

TOL = 1e-9
OBSTRUCTION_TOL = 1e-6
MAX_DIM = 64
MODES = ("random", "controlled", "noncommuting", "uncoupled")


@dataclass
class ModelVerdict:
    mode: str
    dim_s: int
    dim_a: int
    conserving: bool
    ideal: bool
    orthogonal: bool
    obstruction: float

    @property
    def counterexample(self) -> bool:
        return self.conserving and self.ideal and self.orthogonal and self.obstruction > OBSTRUCTION_TOL


@dataclass
class SearchReport:
    models: int = 0
    by_mode: dict = field(default_factory=dict)
    all_three: int = 0
    max_obstruction_all_three: float = 0.0
    counterexamples: list = field(default_factory=list)

    def add(self, v: ModelVerdict) -> None:
        self.models += 1
        row = self.by_mode.setdefault(v.mode, {"models": 0, "conserving": 0, "ideal": 0, "orthogonal": 0, "all_three": 0})
        row["models"] += 1
        row["conserving"] += v.conserving
        row["ideal"] += v.ideal
        row["orthogonal"] += v.orthogonal
        if v.conserving and v.ideal and v.orthogonal:
            row["all_three"] += 1
            self.all_three += 1
            self.max_obstruction_all_three = max(self.max_obstruction_all_three, v.obstruction)
        if v.counterexample:
            self.counterexamples.append(v)


def _dims(rng, min_a=2):
    while True:
        ds = int(rng.integers(2, 5))
        da = int(rng.integers(max(min_a, ds), 17))
        if ds * da <= MAX_DIM:
            return ds, da


def _integer_hermitian(dim, rng, levels=3):
    # small integer spectra make the total Gamma degenerate, so conserving U are nontrivial
    W = wm.haar_unitary(dim, rng)
    return W @ np.diag(rng.integers(-levels, levels + 1, dim).astype(float)) @ W.conj().T, W


def _distinct_spectrum(dim, rng):
    return np.sort(rng.normal(size=dim)) + np.arange(dim)


def _unit(dim, rng):
    v = rng.normal(size=dim) + 1j * rng.normal(size=dim)
    return v / np.linalg.norm(v)


def _random_model(rng):
    ds, da = _dims(rng)
    GS, _ = _integer_hermitian(ds, rng)
    GA, _ = _integer_hermitian(da, rng)
    W = wm.haar_unitary(ds, rng)
    M = W @ np.diag(_distinct_spectrum(ds, rng)) @ W.conj().T
    U = wm.random_conserving_unitary(wm.total_conserved(GS, GA), rng)
    return wm.WAYModel(M, GS, GA, U, _unit(da, rng))


def _controlled(rng, commuting: bool):
    ds, da = _dims(rng)
    W = wm.haar_unitary(ds, rng)
    M = W @ np.diag(_distinct_spectrum(ds, rng)) @ W.conj().T
    if commuting:
        GS = W @ np.diag(rng.integers(-2, 3, ds).astype(float)) @ W.conj().T
    else:
        GS, _ = _integer_hermitian(ds, rng)
    # Gamma_A with one eigenspace of dimension >= ds that hosts the pointer
    Q = wm.haar_unitary(da, rng)
    spec = rng.integers(-3, 4, da).astype(float)
    spec[:ds] = spec[0]
    GA = Q @ np.diag(spec) @ Q.conj().T
    a0 = Q[:, 0]
    block = Q[:, :ds]
    outs = wm.haar_unitary(ds, rng)  # orthonormal targets inside the block
    U = np.zeros((ds * da, ds * da), complex)
    for m in range(ds):
        # V_m: conserving Gamma_A, sends a0 to the m-th target
        T = _unitary_with_first_column(outs[:, m], rng)
        Vm = np.eye(da, dtype=complex) + block @ (T - np.eye(ds)) @ block.conj().T
        other = Q[:, ds:]
        if other.shape[1]:
            Vm = Vm + other @ (wm.random_conserving_unitary(np.diag(spec[ds:]), rng) - np.eye(da - ds)) @ other.conj().T
        Pm = np.outer(W[:, m], W[:, m].conj())
        U += np.kron(Pm, Vm)
    return wm.WAYModel(M, GS, GA, U, a0)


def _unitary_with_first_column(col, rng):
    d = col.size
    Z = np.column_stack([col, rng.normal(size=(d, d - 1)) + 1j * rng.normal(size=(d, d - 1))])
    q, r = np.linalg.qr(Z)
    # fix the phase so the first column is exactly col
    return q * (np.diag(r) / np.abs(np.diag(r)))


def _uncoupled(rng):
    ds, da = _dims(rng)
    GS, _ = _integer_hermitian(ds, rng)
    GA, _ = _integer_hermitian(da, rng)
    W = wm.haar_unitary(ds, rng)
    M = W @ np.diag(_distinct_spectrum(ds, rng)) @ W.conj().T
    V = wm.random_conserving_unitary(GA, rng)
    return wm.uncoupled_model(M, GS, GA, V, _unit(da, rng))


def generate(mode: str, rng: np.random.Generator) -> wm.WAYModel:
    if mode == "random":
        return _random_model(rng)
    if mode == "controlled":
        return _controlled(rng, commuting=True)
    if mode == "noncommuting":
        return _controlled(rng, commuting=False)
    if mode == "uncoupled":
        return _uncoupled(rng)
    raise ValueError(f"unknown mode {mode!r}")


def classify(model: wm.WAYModel, mode: str = "") -> ModelVerdict:
    conserving = wm.conservation_residual(model.U, model.Gamma) < TOL
    try:
        states = wm.outcome_states(model)
        ideal = all(1 - s.fidelity < TOL for s in states.values())
        ov = wm.outcome_overlaps(states)
        orthogonal = bool(np.all(ov[~np.eye(model.dim_s, dtype=bool)] < TOL))
    except wm.DistortingMeasurementError:
        ideal = orthogonal = False
    return ModelVerdict(
        mode, model.dim_s, model.dim_a, conserving, ideal, orthogonal,
        wm.commutator_obstruction(model.M, model.Gamma_S),
    )


def counterexample_search(n_models: int = 10_000, seed: int = 0) -> SearchReport:
    """Classify ``n_models`` generated models, cycling through the modes."""
    report = SearchReport()
    for i in range(n_models):
        mode = MODES[i % len(MODES)]
        rng = np.random.default_rng([seed, i])
        report.add(classify(generate(mode, rng), mode))
    return report
