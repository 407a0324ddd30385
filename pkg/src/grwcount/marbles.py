"""The n-marble counting model.

Each marble is in the superposition ``a|in> + b|out>``; the product state of
``n`` marbles expands into ``2**n`` branches grouped by the number ``k`` of
marbles inside the box.  Analytic operations work for astronomically large
``n`` through :mod:`grwcount.qmath`.  The stochastic reduction of the
superposition is simulated by a Poisson hit process, one counter-based
Philox stream per trajectory.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import qmath
from .qmath import LogProb

#: Monte Carlo operations refuse ensembles larger than this.
MC_MAX_MARBLES = 10**7
#: Largest n for which :func:`count_distribution` builds a dense table.
DENSE_MAX_N = 10**6
#: Largest n for which a branch carries an explicit marble bitmask.
MASK_MAX_N = 64

IN, OUT, UNRESOLVED = 1, 0, -1


class MonteCarloLimitError(ValueError):
    """Raised when a simulation would exceed the marble cap."""


# --------------------------------------------------------------------------
# parameters


@dataclass(frozen=True)
class MarbleAmplitudes:
    """Squared moduli ``|a|**2`` (in) and ``|b|**2`` (out) of one marble.

    The relative phase of ``a`` and ``b`` plays no role in any count
    statistic and is not stored.
    """

    b2: LogProb
    a2: LogProb

    def __post_init__(self):
        if self.a2.is_zero:
            raise ValueError("the in-box weight |a|^2 must be nonzero")
        if not (self.a2.log10_value < -1e-300 and self.b2.log10_value < -1e-300):
            return
        a, b = self.a2.value, self.b2.value
        if a > 1e-300 and b > 1e-300 and abs(a + b - 1.0) > 1e-12:
            raise ValueError(f"|a|^2 + |b|^2 = {a + b!r}, not 1")

    @classmethod
    def from_b2(cls, b2) -> "MarbleAmplitudes":
        b2 = qmath.as_logprob(b2)
        return cls(b2=b2, a2=qmath.one_minus(b2))

    @classmethod
    def from_a2(cls, a2) -> "MarbleAmplitudes":
        a2 = qmath.as_logprob(a2)
        return cls(b2=qmath.one_minus(a2), a2=a2)

    @classmethod
    def from_log10_b2(cls, log10_b2: float) -> "MarbleAmplitudes":
        return cls.from_b2(qmath.from_log10(log10_b2))

    @classmethod
    def tail_free(cls) -> "MarbleAmplitudes":
        """The ``b = 0`` limit: no tails and no anomaly."""
        return cls(b2=qmath.ZERO, a2=qmath.ONE)

    @property
    def is_tail_free(self) -> bool:
        return self.b2.is_zero


@dataclass(frozen=True)
class GrwParameters:
    """Hit-process parameters.

    The defaults (``lambda = 1e-16`` per nucleon per second, ``1e24``
    nucleons per marble, width ``1e-5`` cm) are the usual GRW choices; the
    derived marble hit rate ``1e8`` per second resolves a marble in a few
    hundredths of a microsecond.
    """

    lambda_per_nucleon: float = 1e-16
    nucleons_per_marble: float = 1e24
    localization_width: float = 1e-5

    def __post_init__(self):
        for name in ("lambda_per_nucleon", "nucleons_per_marble", "localization_width"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive and finite, got {v!r}")

    @property
    def hit_rate(self) -> float:
        """Marble hit rate ``Lambda = lambda * N`` in 1/s."""
        return self.lambda_per_nucleon * self.nucleons_per_marble


def _as_count(n) -> int:
    if isinstance(n, str):
        n = n.strip().replace("_", "")
        if "e" in n.lower():
            mant, exp = n.lower().split("e")
            if "." in mant or int(exp) < 0:
                raise ValueError(f"marble count must be an integer, got {n!r}")
            return int(mant) * 10 ** int(exp)
        return int(n)
    if isinstance(n, float):
        if not n.is_integer():
            raise ValueError(f"marble count must be an integer, got {n!r}")
    return int(n)


@dataclass(frozen=True)
class EnsembleSpec:
    """``n`` identical marbles; ``n`` is a Python int and may be huge."""

    n: int
    amplitudes: MarbleAmplitudes
    grw: GrwParameters = field(default_factory=GrwParameters)

    def __post_init__(self):
        object.__setattr__(self, "n", _as_count(self.n))
        if self.n < 1:
            raise ValueError(f"need at least one marble, got n={self.n}")

    def require_simulable(self) -> None:
        if self.n > MC_MAX_MARBLES:
            raise MonteCarloLimitError(
                f"Monte Carlo is capped at {MC_MAX_MARBLES:.0e} marbles, got n={self.n}; "
                "use the analytic operations for larger ensembles"
            )


@dataclass(frozen=True)
class BranchOutcome:
    """One definite term of the product-state expansion."""

    k_in: int
    log_weight: LogProb
    in_mask: int | None = None

    def __post_init__(self):
        if self.k_in < 0:
            raise ValueError("k_in must be >= 0")
        if self.in_mask is not None and bin(self.in_mask).count("1") != self.k_in:
            raise ValueError("in_mask population differs from k_in")


@dataclass(frozen=True)
class ReductionTrajectory:
    """One realization of the hit process.

    ``outcomes`` holds 1 (in), 0 (out) or -1 (not hit before ``t_max``);
    unresolved marbles have an infinite ``hit_times`` entry.
    """

    hit_times: np.ndarray
    outcomes: np.ndarray
    seed: int
    index: int

    @property
    def total_reduction_time(self) -> float:
        return float(self.hit_times.max())

    @property
    def final_k_in(self) -> int:
        return int(np.count_nonzero(self.outcomes == IN))

    @property
    def unresolved_count(self) -> int:
        return int(np.count_nonzero(self.outcomes == UNRESOLVED))

    @property
    def all_resolved(self) -> bool:
        return self.unresolved_count == 0


# --------------------------------------------------------------------------
# analytic branch statistics


def branch_class_weight(spec: EnsembleSpec, k: int) -> LogProb:
    """Total weight ``C(n,k) a2**k b2**(n-k)`` of branches with ``k`` marbles in."""
    n = spec.n
    k = int(k)
    if not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n, got k={k}, n={n}")
    a2, b2 = spec.amplitudes.a2, spec.amplitudes.b2
    if k == n:
        return qmath.power(a2, n)
    if b2.is_zero:
        return qmath.ZERO
    if k == 0:
        return qmath.power(b2, n)
    log10_w = (
        qmath.log_binomial_coeff(n, k)
        + qmath.power(a2, k).log10_value
        + qmath.power(b2, n - k).log10_value
    )
    return qmath.from_log10(min(log10_w, 0.0))


def branch_outcome(spec: EnsembleSpec, in_mask: int) -> BranchOutcome:
    """A single branch named by the bitmask of marbles found inside."""
    if spec.n > MASK_MAX_N:
        raise ValueError(f"explicit masks need n <= {MASK_MAX_N}")
    if not 0 <= in_mask < 1 << spec.n:
        raise ValueError("mask out of range")
    k = bin(in_mask).count("1")
    w = qmath.power(spec.amplitudes.a2, k) * qmath.power(spec.amplitudes.b2, spec.n - k)
    return BranchOutcome(k_in=k, log_weight=w, in_mask=in_mask)


def prob_all_in(spec: EnsembleSpec) -> LogProb:
    """``P(N_in = n) = |a|**(2n)``."""
    return qmath.power(spec.amplitudes.a2, spec.n)


def prob_not_all_in(spec: EnsembleSpec) -> LogProb:
    """``P(N_in != n) = 1 - (1 - |b|**2)**n``."""
    return qmath.complement_power(spec.amplitudes.b2, spec.n)


def _open_interval(p: LogProb, name: str) -> None:
    if p.is_zero or p.is_one:
        raise ValueError(f"{name} must lie strictly between 0 and 1")


def log10_anomaly_threshold_n(tau, b2) -> float:
    """Decimal log of :func:`anomaly_threshold_n`; finite for any magnitudes."""
    tau, b2 = qmath.as_logprob(tau), qmath.as_logprob(b2)
    _open_interval(tau, "tau")
    _open_interval(b2, "b2")
    # ln(1 - tau) / ln(1 - b2), both logs negative
    return qmath.one_minus(tau).loglog - qmath.one_minus(b2).loglog


def anomaly_threshold_n(tau, b2) -> float:
    """Smallest real ``n`` with ``1 - (1 - b2)**n > tau``.

    Equals ``ln(1 - tau) / ln(1 - b2)``, which tends to ``tau / b2`` when
    both are small.  Returns ``inf`` if the value overflows a float; use
    :func:`log10_anomaly_threshold_n` then.
    """
    x = log10_anomaly_threshold_n(tau, b2)
    return math.inf if x > 308.25 else 10.0 ** x


def max_tau_for_n(n, b2) -> LogProb:
    """Largest tolerance ``tau`` still exceeded by ``P(N_in != n)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return qmath.complement_power(qmath.as_logprob(b2), n)


class CountDistribution:
    """Distribution of the in-box count ``k``, as decimal-log weights.

    Behaves as a read-only mapping ``k -> LogProb``.
    """

    def __init__(self, n: int, ks: np.ndarray, log10_weights: np.ndarray, dense: bool,
                 exact: dict | None = None):
        self.n = n
        # LogProbs whose information is lost in log10 alone (weights near one)
        self._exact = exact or {}
        self.ks = ks
        self.log10_weights = log10_weights
        self.dense = dense
        self._index = {int(k): i for i, k in enumerate(ks)} if ks.size <= 10**5 else None

    def __len__(self):
        return len(self.ks)

    def __iter__(self):
        return (int(k) for k in self.ks)

    def __contains__(self, k):
        return k in self.keys()

    def keys(self):
        return [int(k) for k in self.ks]

    def __getitem__(self, k) -> LogProb:
        if int(k) in self._exact:
            return self._exact[int(k)]
        if self._index is not None:
            i = self._index[int(k)]
        else:
            hits = np.flatnonzero(self.ks == k)
            if hits.size == 0:
                raise KeyError(k)
            i = hits[0]
        return qmath.from_log10(min(self.log10_weights[i], 0.0))

    def items(self):
        return [(int(k), self[k]) for k in self.ks]

    def probabilities(self) -> np.ndarray:
        """Linear weights (may underflow to zero)."""
        return 10.0 ** self.log10_weights

    def total(self) -> float:
        return math.fsum(self.probabilities())

    def normalization_error(self) -> float:
        """``|sum - 1|`` over the stored weights."""
        return abs(self.total() - 1.0)

    def as_dict(self) -> dict:
        return {int(k): float(p) for k, p in zip(self.ks, self.probabilities())}


def _log10_class_weights(n: int, ks: np.ndarray, amp: MarbleAmplitudes) -> np.ndarray:
    if amp.b2.is_zero:
        return np.where(ks == n, 0.0, -np.inf)
    la, lb = amp.a2.log10_value, amp.b2.log10_value
    out = qmath.log_binomial_coeffs(n, ks) + ks * la + (n - ks) * lb
    # the end classes are pure powers; take them from the exact path
    out[ks == n] = qmath.power(amp.a2, n).log10_value
    out[ks == 0] = qmath.power(amp.b2, n).log10_value
    return np.minimum(out, 0.0)


def count_distribution(spec: EnsembleSpec, ks=None) -> CountDistribution:
    """Weights of every in-count class (or of the requested ``ks``)."""
    n = spec.n
    if ks is None:
        if n > DENSE_MAX_N:
            raise MemoryError(
                f"dense count distribution limited to n <= {DENSE_MAX_N:.0e}; pass explicit ks"
            )
        ks = np.arange(n + 1, dtype=np.int64)
        dense = True
    else:
        ks = np.asarray(ks)
        dense = False
    if n < 2**62:
        ks = ks.astype(np.int64)
        if ks.size and (ks.min() < 0 or ks.max() > n):
            raise ValueError("every k must satisfy 0 <= k <= n")
        if spec.amplitudes.b2.is_zero:
            w = np.where(ks == n, 0.0, -np.inf)
        else:
            w = _log10_class_weights(n, ks, spec.amplitudes)
    else:
        ks = np.array([int(k) for k in ks], dtype=object)
        w = np.array([branch_class_weight(spec, int(k)).log10_value for k in ks])
    exact = {k: branch_class_weight(spec, k) for k in (0, n)}
    return CountDistribution(n, ks, w, dense, exact)


def window_normalization_error(spec: EnsembleSpec, width: int = 10) -> float:
    """``|sum - 1|`` over the ``width`` classes around the mode ``n a2``.

    Meaningful when the count spread is narrow compared with ``width``,
    e.g. the tail regime ``n b2 << 1`` where the mass sits at ``k = n``.
    """
    n = spec.n
    amp = spec.amplitudes
    # place the window from the smaller branch so huge n stays exact
    small, from_top = (amp.b2, True) if amp.b2 <= amp.a2 else (amp.a2, False)
    log10_mean = math.log10(n) + small.log10_value
    if log10_mean > 15:
        raise ValueError("count spread too wide for a fixed window")
    offset = int(round(10.0 ** log10_mean))
    mode = n - offset if from_top else offset
    lo = max(0, min(mode - width // 2, n - width + 1))
    ks = [lo + i for i in range(width) if lo + i <= n]
    weights = [branch_class_weight(spec, k) for k in ks]
    return abs(math.fsum(w.value for w in weights) - 1.0)


# --------------------------------------------------------------------------
# Monte Carlo


def _philox_state(seed: int, index: int) -> dict:
    return {
        "bit_generator": "Philox",
        "state": {
            "counter": np.zeros(4, dtype=np.uint64),
            "key": np.array([seed, index], dtype=np.uint64),
        },
        "buffer": np.zeros(4, dtype=np.uint64),
        "buffer_pos": 4,
        "has_uint32": 0,
        "uinteger": 0,
    }


def trajectory_rng(seed: int, index: int) -> np.random.Generator:
    """The generator of trajectory ``index``: Philox keyed by ``(seed, index)``."""
    _check_seed(seed)
    return np.random.Generator(np.random.Philox(key=[seed, index]))


def _check_seed(seed) -> None:
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must be an integer in [0, 2**64)")


def _check_t_max(t_max: float) -> None:
    if not t_max > 0:
        raise ValueError(f"t_max must be positive, got {t_max!r}")


def _draw(rng: np.random.Generator, n: int, scale: float, log10_b2: float, t_max: float):
    # draw order is part of the reproducibility contract
    times = rng.exponential(scale, n)
    u = rng.random(n)
    # out iff a uniform in (0, 1] falls below b2, compared in decimal logs
    with np.errstate(divide="ignore"):
        outcomes = np.where(np.log10(1.0 - u) < log10_b2, OUT, IN).astype(np.int8)
    late = times > t_max
    if late.any():
        times[late] = np.inf
        outcomes[late] = UNRESOLVED
    return times, outcomes


def simulate_reduction(
    spec: EnsembleSpec, seed: int, t_max: float = math.inf, index: int = 0
) -> ReductionTrajectory:
    """One trajectory of the hit process.

    Every marble gets an exponential first-hit time at rate ``Lambda``; its
    first hit resolves it to in (probability ``a2``) or out (``b2``).
    Marbles not hit by ``t_max`` stay unresolved.
    """
    spec.require_simulable()
    _check_t_max(t_max)
    rng = trajectory_rng(seed, index)
    times, outcomes = _draw(
        rng, spec.n, 1.0 / spec.grw.hit_rate, spec.amplitudes.b2.log10_value, t_max
    )
    return ReductionTrajectory(times, outcomes, int(seed), int(index))


@dataclass(frozen=True)
class EnsembleResult:
    """Per-trajectory summaries of :func:`simulate_ensemble`."""

    seed: int
    start_index: int
    total_reduction_time: np.ndarray
    final_k_in: np.ndarray
    unresolved_count: np.ndarray

    def __len__(self):
        return len(self.final_k_in)

    def to_csv(self, fh=None) -> str | None:
        """Write ``seed_index, total_reduction_time, final_k_in, unresolved_count``."""
        sink = io.StringIO() if fh is None else fh
        w = csv.writer(sink, lineterminator="\n")
        w.writerow(["seed_index", "total_reduction_time", "final_k_in", "unresolved_count"])
        for i in range(len(self)):
            w.writerow([
                self.start_index + i,
                repr(float(self.total_reduction_time[i])),
                int(self.final_k_in[i]),
                int(self.unresolved_count[i]),
            ])
        return sink.getvalue() if fh is None else None


def simulate_ensemble(
    spec: EnsembleSpec,
    trajectories: int,
    seed: int,
    t_max: float = math.inf,
    start_index: int = 0,
) -> EnsembleResult:
    """Trajectories ``start_index, start_index + 1, ...`` summarized.

    Trajectory ``i`` is bit-identical to ``simulate_reduction(spec, seed,
    t_max, index=i)``, so disjoint index ranges can be run anywhere and
    concatenated.
    """
    spec.require_simulable()
    _check_t_max(t_max)
    _check_seed(seed)
    if trajectories < 0:
        raise ValueError("trajectories must be >= 0")
    n = spec.n
    scale = 1.0 / spec.grw.hit_rate
    log10_b2 = spec.amplitudes.b2.log10_value
    total = np.empty(trajectories)
    k_in = np.empty(trajectories, dtype=np.int64)
    unresolved = np.empty(trajectories, dtype=np.int64)

    bitgen = np.random.Philox(key=[seed, 0])
    rng = np.random.Generator(bitgen)
    state = _philox_state(seed, 0)
    key, counter = state["state"]["key"], state["state"]["counter"]
    for j in range(trajectories):
        key[1] = start_index + j
        counter[:] = 0
        bitgen.state = state
        times, outcomes = _draw(rng, n, scale, log10_b2, t_max)
        total[j] = times.max()
        k_in[j] = np.count_nonzero(outcomes == IN)
        unresolved[j] = np.count_nonzero(outcomes == UNRESOLVED)
    return EnsembleResult(int(seed), int(start_index), total, k_in, unresolved)


def harmonic_number(n) -> float:
    """``H_n = 1 + 1/2 + ... + 1/n``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n <= 64:
        return math.fsum(1.0 / k for k in range(1, int(n) + 1))
    return float(special.digamma(float(n) + 1.0) + np.euler_gamma)


def expected_reduction_time(spec: EnsembleSpec) -> float:
    """Mean of the largest of ``n`` exponential hit times, ``H_n / Lambda``."""
    return harmonic_number(spec.n) / spec.grw.hit_rate


def reduction_time_stats(spec: EnsembleSpec, samples: int, seed: int) -> dict:
    """Mean, median and 99th percentile of the full-reduction time.

    Also returns the standard error of the mean and the analytic mean
    ``H_n / Lambda`` for comparison.
    """
    if samples < 100:
        raise ValueError("need at least 100 samples")
    res = simulate_ensemble(spec, samples, seed)
    t = res.total_reduction_time
    q50, q99 = np.quantile(t, [0.5, 0.99])
    return {
        "mean": float(t.mean()),
        "q50": float(q50),
        "q99": float(q99),
        "stderr": float(t.std(ddof=1) / math.sqrt(samples)),
        "expected_mean": expected_reduction_time(spec),
        "samples": int(samples),
    }


def total_variation(counts: np.ndarray, pmf: np.ndarray) -> float:
    """Total-variation distance between an empirical histogram and a pmf."""
    counts = np.asarray(counts, dtype=float)
    return 0.5 * float(np.abs(counts / counts.sum() - pmf).sum())


# --------------------------------------------------------------------------
# serialization


def spec_to_json(spec: EnsembleSpec, t_max: float | None = None) -> dict:
    out = {
        "n": spec.n if spec.n < 2**53 else str(spec.n),
        "log10_b2": spec.amplitudes.b2.log10_value if not spec.amplitudes.is_tail_free else None,
        "lambda": spec.grw.lambda_per_nucleon,
        "nucleons": spec.grw.nucleons_per_marble,
    }
    if t_max is not None:
        out["t_max"] = t_max
    return out


def spec_from_json(obj) -> tuple[EnsembleSpec, float]:
    """Parse ``{"n", "log10_b2", "lambda", "nucleons", "t_max"}``.

    ``n`` may be a decimal string for counts beyond float precision.  A
    ``log10_b2`` of ``null`` is the tail-free limit.  Returns the spec and
    ``t_max`` (``inf`` when absent).
    """
    if isinstance(obj, (str, bytes)):
        obj = json.loads(obj)
    known = {"n", "log10_b2", "lambda", "nucleons", "t_max", "localization_width"}
    unknown = set(obj) - known
    if unknown:
        raise ValueError(f"unknown keys in ensemble spec: {sorted(unknown)}")
    if "n" not in obj or "log10_b2" not in obj:
        raise ValueError("ensemble spec needs 'n' and 'log10_b2'")
    defaults = GrwParameters()
    grw = GrwParameters(
        float(obj.get("lambda", defaults.lambda_per_nucleon)),
        float(obj.get("nucleons", defaults.nucleons_per_marble)),
        float(obj.get("localization_width", defaults.localization_width)),
    )
    amp = (
        MarbleAmplitudes.tail_free()
        if obj["log10_b2"] is None
        else MarbleAmplitudes.from_log10_b2(obj["log10_b2"])
    )
    return EnsembleSpec(obj["n"], amp, grw), float(obj.get("t_max", math.inf))
