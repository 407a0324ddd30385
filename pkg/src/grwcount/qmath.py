"""Extended-range probabilities stored in the decimal-log domain.

A :class:`LogProb` holds ``log10(p)`` as an ordinary float, which covers
``10**-(10**15)`` with room to spare.  Probabilities so close to one that
``log10(p)`` itself underflows (``1 - 10**-(10**15)``, say) are carried by a
second number, ``loglog = log10(-log10(p))``, so that ``one_minus`` of a tiny
tail never rounds to exactly one.

Exact zero and exact one are reserved sentinels, never saturated finite
values.
"""

from __future__ import annotations

import functools
import math

import numpy as np

LN10 = math.log(10.0)
LOG10_LN10 = math.log10(LN10)

#: Complement evaluations switch to the series form below this value of
#: ``y = -n * ln(1 - p)`` (which is ``n * p`` to leading order).
SERIES_CROSSOVER = 1e-6

#: Positive log10 values up to this size are treated as rounding noise.
POSITIVE_LOG_TOLERANCE = 1e-12

_LOG10_HALF = math.log10(0.5)
# below this |log10 p| the double logarithm is the authoritative field
_TINY_LOG = 1e-290
# log10 of the smallest probability still handled through ordinary floats
_LINEAR_FLOOR_LOG10 = -300.0
_EXACT_BINOMIAL_MAX_N = 60
_SMALL_CLASS_MAX = 30


@functools.total_ordering
class LogProb:
    """A probability held through its decimal logarithm.

    ``log10_value`` is the primary field.  ``loglog = log10(-log10_value)`` is
    kept alongside it and takes over when ``log10_value`` is too close to zero
    for a float.  Use :func:`from_real`, :func:`from_log10`, :meth:`zero` and
    :meth:`one` rather than calling the class directly.
    """

    __slots__ = ("log10_value", "loglog")

    def __init__(self, log10_value: float, loglog: float | None = None):
        log10_value = float(log10_value)
        if math.isnan(log10_value) or log10_value > 0.0:
            raise ValueError(f"invalid log10 probability {log10_value!r}")
        if loglog is None:
            if log10_value == 0.0:
                loglog = -math.inf
            elif log10_value == -math.inf:
                loglog = math.inf
            else:
                loglog = math.log10(-log10_value)
        elif math.isnan(loglog):
            raise ValueError("loglog is NaN")
        object.__setattr__(self, "log10_value", log10_value)
        object.__setattr__(self, "loglog", float(loglog))

    def __setattr__(self, name, value):
        raise AttributeError("LogProb is immutable")

    @classmethod
    def from_loglog(cls, loglog: float) -> "LogProb":
        """Build from ``log10(-log10 p)``; used near one."""
        if loglog == math.inf:
            return cls(-math.inf)
        if loglog > 308.25:
            # below 10**-(1.8e308): underflows to exact zero
            return cls.zero()
        return cls(-(10.0 ** loglog), loglog)

    @classmethod
    def zero(cls) -> "LogProb":
        return cls(-math.inf)

    @classmethod
    def one(cls) -> "LogProb":
        return cls(0.0)

    @property
    def is_zero(self) -> bool:
        return self.log10_value == -math.inf

    @property
    def is_one(self) -> bool:
        return self.loglog == -math.inf

    @property
    def _tiny(self) -> bool:
        # log10 has underflowed (or nearly): trust loglog
        return -_TINY_LOG < self.log10_value

    @property
    def ln_value(self) -> float:
        return self.log10_value * LN10

    @property
    def value(self) -> float:
        """Linear value; underflows to ``0.0`` for very small probabilities."""
        return 10.0 ** self.log10_value

    def __float__(self) -> float:
        return self.value

    def __mul__(self, other: "LogProb") -> "LogProb":
        if not isinstance(other, LogProb):
            return NotImplemented
        if self.is_zero or other.is_zero:
            return LogProb.zero()
        if self.is_one:
            return other
        if other.is_one:
            return self
        if self._tiny or other._tiny:
            hi, lo = max(self.loglog, other.loglog), min(self.loglog, other.loglog)
            return LogProb.from_loglog(hi + math.log10(1.0 + 10.0 ** (lo - hi)))
        return LogProb(self.log10_value + other.log10_value)

    def __pow__(self, n) -> "LogProb":
        return power(self, n)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LogProb):
            return NotImplemented
        if self._tiny and other._tiny:
            return self.loglog == other.loglog
        return self.log10_value == other.log10_value

    def __lt__(self, other: "LogProb") -> bool:
        if not isinstance(other, LogProb):
            return NotImplemented
        if self._tiny and other._tiny:
            # larger loglog means further from one
            return self.loglog > other.loglog
        return self.log10_value < other.log10_value

    def __hash__(self) -> int:
        if self._tiny:
            return hash(("LogProb~1", self.loglog))
        return hash(("LogProb", self.log10_value))

    def __repr__(self) -> str:
        if self.is_zero:
            return "LogProb(0)"
        if self.is_one:
            return "LogProb(1)"
        if self._tiny:
            return f"LogProb(loglog={self.loglog!r})"
        return f"LogProb(log10={self.log10_value!r})"

    def order_of_magnitude(self) -> str:
        """Human-readable ``10^(...)`` rendering."""
        if self.is_zero:
            return "0"
        if self.is_one:
            return "1"
        if self._tiny:
            return f"1 - 10^({self.loglog + LOG10_LN10:.15g})"
        log10 = self.log10_value
        if abs(log10) >= 1e6:
            return f"10^({log10:.15e})"
        return f"10^({log10:.12g})"

    def to_json(self) -> dict:
        """``{"log10": x}``; exact zero serializes as ``{"log10": null}``.

        Within ~1e-290 of one the double logarithm is added under
        ``"loglog"`` so nothing is lost.
        """
        if self.is_zero:
            return {"log10": None}
        out = {"log10": self.log10_value}
        if not self.is_one and self._tiny:
            out["loglog"] = self.loglog
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "LogProb":
        if obj.get("loglog") is not None:
            return cls.from_loglog(obj["loglog"])
        if obj["log10"] is None:
            return cls.zero()
        return from_log10(obj["log10"])


ZERO = LogProb.zero()
ONE = LogProb.one()


def from_log10(log10_value: float) -> LogProb:
    """Build a probability from its decimal logarithm."""
    log10_value = float(log10_value)
    if math.isnan(log10_value):
        raise ValueError("log10 probability is NaN")
    if log10_value > POSITIVE_LOG_TOLERANCE:
        raise ValueError(f"log10 probability must be <= 0, got {log10_value!r}")
    if log10_value >= 0.0:
        return ONE
    if log10_value == -math.inf:
        return ZERO
    return LogProb(log10_value)


def from_real(p: float) -> LogProb:
    """Convert an ordinary probability in ``[0, 1]``."""
    p = float(p)
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"probability must lie in [0, 1], got {p!r}")
    if p == 0.0:
        return ZERO
    return from_log10(math.log10(p))


def as_logprob(p) -> LogProb:
    """Accept either a :class:`LogProb` or a real probability."""
    return p if isinstance(p, LogProb) else from_real(p)


def _check_exponent(n) -> None:
    if isinstance(n, (int, np.integer)):
        if n < 0:
            raise ValueError(f"exponent must be >= 0, got {n!r}")
        return
    n = float(n)
    if not math.isfinite(n) or n < 0:
        raise ValueError(f"exponent must be finite and >= 0, got {n!r}")


def _log10_count(n) -> float:
    # math.log10 accepts arbitrarily large Python ints
    return math.log10(int(n)) if isinstance(n, (int, np.integer)) else math.log10(n)


def power(p: LogProb, n) -> LogProb:
    """``p ** n`` for real ``n >= 0`` (ints may be arbitrarily large)."""
    _check_exponent(n)
    if n == 0:
        return ONE
    if p.is_zero or p.is_one:
        return p
    if not p._tiny:
        out = p.log10_value * float(n) if _log10_count(n) < 300 else -math.inf
        if -math.inf < out < -_TINY_LOG:
            return LogProb(out)
    return LogProb.from_loglog(p.loglog + _log10_count(n))


def one_minus(p: LogProb) -> LogProb:
    """``1 - p`` with full relative accuracy near both ends of ``[0, 1]``."""
    if p.is_zero:
        return ONE
    if p.is_one:
        return ZERO
    log10_p = p.log10_value
    if log10_p < _LINEAR_FLOOR_LOG10:
        # log10(1 - p) = -p / ln10 to relative accuracy p / 2
        return LogProb.from_loglog(log10_p - LOG10_LN10)
    if log10_p < _LOG10_HALF:
        ln_q = math.log1p(-(10.0 ** log10_p))
        return LogProb(ln_q / LN10, math.log10(-ln_q) - LOG10_LN10)
    # p close to one: x = -ln p, 1 - p = -expm1(-x)
    log10_x = p.loglog + LOG10_LN10
    if log10_x < _LINEAR_FLOOR_LOG10:
        return from_log10(log10_x)
    return from_log10(math.log10(-math.expm1(-(10.0 ** log10_x))))


def _complement_series(log10_y: float) -> LogProb:
    # 1 - exp(-y) = y (1 - y/2 + y^2/6 - y^3/24 + ...), y below the crossover
    y = 10.0 ** log10_y
    return from_log10(log10_y + math.log1p(-y / 2 + y * y / 6 - y ** 3 / 24) / LN10)


def _complement_direct(log10_y: float) -> LogProb:
    # (1 - p)^n = exp(-y), whose log10 is -y / ln10
    return one_minus(LogProb.from_loglog(log10_y - LOG10_LN10))


def _log10_hazard(p: LogProb, n) -> float:
    """log10 of ``y = -n ln(1 - p)``."""
    return _log10_count(n) + one_minus(p).loglog + LOG10_LN10


def complement_power(p_tail: LogProb, n) -> LogProb:
    """``1 - (1 - p_tail) ** n``, the chance that any of ``n`` tails fires.

    Below ``y = -n ln(1 - p) < SERIES_CROSSOVER`` the result is evaluated as
    a series in ``y`` (so ``n p`` is returned to ~1e-15 relative); above it,
    through :func:`one_minus` of the power.
    """
    _check_exponent(n)
    if n == 0 or p_tail.is_zero:
        return ZERO
    if p_tail.is_one:
        return ONE
    log10_y = _log10_hazard(p_tail, n)
    if log10_y < math.log10(SERIES_CROSSOVER):
        return _complement_series(log10_y)
    return _complement_direct(log10_y)


def _check_binomial_args(n, k):
    if int(n) != n or int(k) != k:
        raise ValueError("binomial arguments must be integers")
    n, k = int(n), int(k)
    if n < 0 or not 0 <= k <= n:
        raise ValueError(f"need 0 <= k <= n, got n={n}, k={k}")
    return n, k


def _stirling_remainder(x):
    """``ln Gamma(x + 1)`` minus its Stirling approximation, for ``x > 30``."""
    x = np.asarray(x, dtype=float)
    inv = 1.0 / x
    inv2 = inv * inv
    return inv * (1 / 12 - inv2 * (1 / 360 - inv2 * (1 / 1260 - inv2 / 1680)))


def _log10_binom_large(n, k):
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    k = np.minimum(k, n - k)
    rest = n - k
    ln_c = (
        k * np.log(n / k)
        - rest * np.log1p(-k / n)
        + 0.5 * np.log(n / (k * rest))
        - 0.5 * math.log(2 * math.pi)
        + _stirling_remainder(n)
        - _stirling_remainder(k)
        - _stirling_remainder(rest)
    )
    return ln_c / LN10


def log_binomial_coeff(n: int, k: int) -> float:
    """Decimal log of ``C(n, k)``.

    Exact integer arithmetic for ``n <= 60``; a direct sum when the smaller
    class has at most 30 members; a Stirling form with remainder series
    otherwise, accurate to about 1e-16 relative.
    """
    n, k = _check_binomial_args(n, k)
    if n <= _EXACT_BINOMIAL_MAX_N:
        return math.log10(math.comb(n, k))
    m = min(k, n - k)
    if m == 0:
        return 0.0
    if m <= _SMALL_CLASS_MAX:
        return math.fsum(math.log10(n - i) - math.log10(i + 1) for i in range(m))
    return float(_log10_binom_large(n, m))


def log_binomial_coeffs(n: int, ks) -> np.ndarray:
    """Vectorized :func:`log_binomial_coeff` over an array of ``k``."""
    n = int(n)
    ks = np.asarray(ks, dtype=np.int64)
    if ks.size and (ks.min() < 0 or ks.max() > n):
        raise ValueError("every k must satisfy 0 <= k <= n")
    if n <= _EXACT_BINOMIAL_MAX_N:
        table = np.array([math.log10(math.comb(n, k)) for k in range(n + 1)])
        return table[ks]
    m = np.minimum(ks, n - ks)
    small = min(_SMALL_CLASS_MAX, n // 2)
    table = np.array([log_binomial_coeff(n, i) for i in range(small + 1)])
    out = np.empty(ks.shape, dtype=float)
    is_small = m <= small
    out[is_small] = table[m[is_small]]
    if np.any(~is_small):
        out[~is_small] = _log10_binom_large(n, m[~is_small])
    return out


def log10_sum(log10_values) -> float:
    """log10 of a sum of terms given by their log10 (``-inf`` allowed)."""
    arr = np.asarray(log10_values, dtype=float)
    if arr.size == 0 or np.all(arr == -np.inf):
        return -math.inf
    top = arr.max()
    return float(top + np.log10(np.sum(10.0 ** (arr - top))))
