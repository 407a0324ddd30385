"""Von Neumann pointer on a uniform 1-D grid.

The pointer coordinate starts in a Gaussian of width ``delta``.  Coupling to
an eigenvalue ``omega`` through ``H = -gamma * Omega * P`` translates it by
``gamma * omega * T``; free evolution spreads it.  Both are applied exactly in
the wavenumber domain.  :func:`tail_decompose` splits a state into the part
inside ``(-D, D)`` and the tail outside, and reports the tail weight as a
:class:`~grwcount.qmath.LogProb` so that it never rounds to zero.

No unit system is assumed; ``hbar`` and ``mass`` are explicit.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import qmath
from .qmath import LogProb

NORM_TOLERANCE = 1e-10
#: Edge density must stay below this fraction of the peak density.
EDGE_TOLERANCE = 1e-12
EDGE_POINTS = 4
#: Gaussians must be sampled at least this far from centre on each side.
GAUSSIAN_HALF_SPAN = 12.0
#: Tail weights below this are taken from the Gaussian closed form.
QUADRATURE_FLOOR = 1e-30
#: Pieces lighter than this are returned as absent.
DEGENERATE_WEIGHT = 1e-300

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(8)
_STENCIL = 8
_STENCIL_OFFSETS = np.arange(_STENCIL)
_STENCIL_DENOM = np.array(
    [np.prod([m - l for l in range(_STENCIL) if l != m]) for m in range(_STENCIL)], dtype=float
)


class GridError(ValueError):
    """Grid too small or too coarse for the requested state."""


class SupportEscapeError(GridError):
    """An evolved state reaches the grid boundary."""


class GridMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform grid ``x_min + dx * arange(n)``."""

    x_min: float
    dx: float
    n: int

    def __post_init__(self):
        if not self.dx > 0:
            raise GridError("dx must be positive")
        if self.n < 2 * _STENCIL:
            raise GridError(f"grid needs at least {2 * _STENCIL} points")

    @classmethod
    def spanning(cls, lo: float, hi: float, dx: float) -> "Grid":
        """Smallest grid starting at ``lo`` with spacing ``dx`` that reaches ``hi``."""
        n = int(math.ceil((hi - lo) / dx - 1e-9)) + 1
        return cls(float(lo), float(dx), n)

    @property
    def x(self) -> np.ndarray:
        return self.x_min + self.dx * np.arange(self.n)

    @property
    def x_max(self) -> float:
        return self.x_min + self.dx * (self.n - 1)

    @property
    def k(self) -> np.ndarray:
        """Angular wavenumbers in FFT order."""
        return 2 * np.pi * np.fft.fftfreq(self.n, self.dx)


@dataclass(frozen=True, eq=False)
class GridWavefunction:
    """Complex amplitudes of the pointer coordinate on a uniform grid.

    Construction checks the normalization and that the density at the edge
    points is negligible; set ``check_edges=False`` only for pieces that are
    not evolved further.
    """

    amplitudes: np.ndarray
    x_min: float
    dx: float
    mass: float
    hbar: float
    check_edges: bool = field(default=True, repr=False)

    def __post_init__(self):
        amp = np.array(self.amplitudes, dtype=complex)
        amp.setflags(write=False)
        object.__setattr__(self, "amplitudes", amp)
        if not (self.mass > 0 and self.hbar > 0):
            raise ValueError("mass and hbar must be positive")
        if not np.all(np.isfinite(amp)):
            raise ValueError("amplitudes must be finite")
        norm = self.norm()
        if abs(norm - 1.0) > NORM_TOLERANCE:
            raise ValueError(f"wavefunction norm {norm!r} differs from 1 by more than {NORM_TOLERANCE}")
        if self.check_edges:
            _check_edges(self.density())

    @property
    def grid(self) -> Grid:
        return Grid(self.x_min, self.dx, self.amplitudes.size)

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def density(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2) * self.dx)

    def mean(self) -> float:
        return float(np.sum(self.x * self.density()) * self.dx)

    def variance(self) -> float:
        rho = self.density()
        mu = np.sum(self.x * rho) * self.dx
        return float(np.sum((self.x - mu) ** 2 * rho) * self.dx)

    def _replace(self, amplitudes, check_edges=True) -> "GridWavefunction":
        return GridWavefunction(amplitudes, self.x_min, self.dx, self.mass, self.hbar, check_edges)

    def to_csv(self, fh=None):
        """Profile with columns ``x, re, im, density``."""
        sink = io.StringIO() if fh is None else fh
        w = csv.writer(sink, lineterminator="\n")
        w.writerow(["x", "re", "im", "density"])
        for x, a, d in zip(self.x, self.amplitudes, self.density()):
            w.writerow([repr(float(x)), repr(float(a.real)), repr(float(a.imag)), repr(float(d))])
        return sink.getvalue() if fh is None else None


def _check_edges(rho: np.ndarray) -> None:
    peak = rho.max()
    edge = max(rho[:EDGE_POINTS].max(), rho[-EDGE_POINTS:].max())
    if edge > EDGE_TOLERANCE * peak:
        raise SupportEscapeError(
            f"density at the grid edge is {edge / peak:.3e} of the peak (limit {EDGE_TOLERANCE:g})"
        )


def _same_grid(a: GridWavefunction, b: GridWavefunction) -> None:
    if a.amplitudes.size != b.amplitudes.size or a.x_min != b.x_min or a.dx != b.dx:
        raise GridMismatchError("wavefunctions live on different grids")


# --------------------------------------------------------------------------
# preparation


def gaussian_pointer(
    delta: float, center: float, grid: Grid, mass: float, hbar: float
) -> GridWavefunction:
    """Sampled ``(delta sqrt(2 pi))**-1/2 exp(-(x - center)**2 / (4 delta**2))``.

    The samples are renormalized on the grid; for ``dx <= delta / 8`` the
    correction is far below 1e-10.
    """
    if not delta > 0:
        raise ValueError("delta must be positive")
    if grid.dx > delta / 4:
        raise GridError(f"dx = {grid.dx:g} too coarse for delta = {delta:g}; need dx <= delta/4")
    half = GAUSSIAN_HALF_SPAN * delta
    if grid.x_min > center - half or grid.x_max < center + half:
        raise GridError(
            f"grid [{grid.x_min:g}, {grid.x_max:g}] must span center +- {GAUSSIAN_HALF_SPAN:g} delta"
        )
    x = grid.x
    psi = (delta * math.sqrt(2 * math.pi)) ** -0.5 * np.exp(-((x - center) ** 2) / (4 * delta**2))
    psi = psi / math.sqrt(np.sum(psi**2) * grid.dx)
    return GridWavefunction(psi.astype(complex), grid.x_min, grid.dx, mass, hbar)


def clipped(psi: GridWavefunction, lo: float, hi: float) -> GridWavefunction:
    """``psi`` set to zero outside ``[lo, hi]`` and renormalized."""
    x = psi.x
    amp = np.where((x >= lo) & (x <= hi), psi.amplitudes, 0.0)
    norm = np.sum(np.abs(amp) ** 2) * psi.dx
    if norm <= 0:
        raise ValueError("nothing left inside the clipping window")
    return psi._replace(amp / math.sqrt(norm))


# --------------------------------------------------------------------------
# dynamics


@dataclass(frozen=True)
class MeasurementCoupling:
    """Coupling ``H = -gamma * Omega * P`` switched on for a time ``T``."""

    gamma: float
    omega1: float
    omega2: float
    T: float

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")

    def shift(self, omega: float) -> float:
        return self.gamma * omega * self.T

    @property
    def separation(self) -> float:
        """Distance between the two outcome positions."""
        return abs(self.gamma * (self.omega2 - self.omega1) * self.T)


def _support(rho: np.ndarray) -> tuple[int, int]:
    idx = np.flatnonzero(rho > EDGE_TOLERANCE * rho.max())
    return int(idx[0]), int(idx[-1])


def translate(psi: GridWavefunction, distance: float) -> GridWavefunction:
    """``psi(x - distance)`` via an exact roll plus a spectral sub-cell shift."""
    n = psi.amplitudes.size
    lo, hi = _support(psi.density())
    cells = distance / psi.dx
    if lo + cells < EDGE_POINTS or hi + cells > n - 1 - EDGE_POINTS:
        raise SupportEscapeError(
            f"shift {distance:g} moves the state off the grid "
            f"[{psi.x_min:g}, {psi.grid.x_max:g}]; widen the grid"
        )
    whole = int(np.round(cells))
    frac = cells - whole
    amp = np.roll(psi.amplitudes, whole)
    if frac != 0.0:
        k = psi.grid.k
        amp = np.fft.ifft(np.fft.fft(amp) * np.exp(-1j * k * frac * psi.dx))
    return psi._replace(amp)


def evolve_measurement(
    psi: GridWavefunction, coupling: MeasurementCoupling, omega: float
) -> GridWavefunction:
    """Evolve under ``-gamma * omega * P`` for time ``T``: a rigid shift by ``gamma omega T``."""
    return translate(psi, coupling.shift(omega))


def evolve_free(psi: GridWavefunction, t: float) -> GridWavefunction:
    """Free Schrodinger evolution ``exp(-i hbar k**2 t / 2m)`` in wavenumber space."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0:
        return psi
    k = psi.grid.k
    phase = np.exp(-1j * psi.hbar * k**2 * t / (2 * psi.mass))
    amp = np.fft.ifft(np.fft.fft(psi.amplitudes) * phase)
    try:
        return psi._replace(amp)
    except SupportEscapeError as exc:
        # rough size needed: current spread plus ballistic growth
        var = psi.variance()
        sigma_k = 1 / (2 * math.sqrt(var)) if var > 0 else 0.0
        sigma_t = math.sqrt(var + (psi.hbar * t * sigma_k / psi.mass) ** 2)
        need = abs(psi.mean()) + GAUSSIAN_HALF_SPAN * sigma_t
        raise SupportEscapeError(
            f"{exc}; free spreading over t = {t:g} needs a grid of about "
            f"[{-need:.4g}, {need:.4g}]"
        ) from None


def spreading_variance(delta: float, t: float, mass: float, hbar: float) -> float:
    """``delta**2 (1 + (hbar t / (2 m delta**2))**2)``."""
    return delta**2 * (1 + (hbar * t / (2 * mass * delta**2)) ** 2)


def doubling_time(delta: float, mass: float, hbar: float) -> float:
    """Time at which a Gaussian's position variance has doubled."""
    return 2 * mass * delta**2 / hbar


# --------------------------------------------------------------------------
# integration of the density over sub-intervals


def _segment_integral(rho: np.ndarray, x_min: float, dx: float, a: float, b: float) -> float:
    """Integral of the density over ``[a, b]``.

    Each grid cell is integrated by 8-point Gauss-Legendre on an 8-point
    Lagrange interpolant of ``log(rho)`` (exact for Gaussian envelopes).
    Stencils that touch a zero fall back to linear interpolation of ``rho``.
    """
    n = rho.size
    ta = max((a - x_min) / dx, 0.0)
    tb = min((b - x_min) / dx, n - 1.0)
    if tb <= ta:
        return 0.0
    cells = np.arange(int(math.floor(ta)), min(int(math.ceil(tb)), n - 1))
    lo = np.maximum(cells, ta)
    hi = np.minimum(cells + 1, tb)
    keep = hi > lo
    cells, lo, hi = cells[keep], lo[keep], hi[keep]
    half = (hi - lo) / 2
    t = (hi + lo)[:, None] / 2 + half[:, None] * _GL_NODES[None, :]

    start = np.clip(cells - (_STENCIL // 2 - 1), 0, n - _STENCIL)
    vals = rho[start[:, None] + _STENCIL_OFFSETS]
    u = t - start[:, None]
    diff = u[:, :, None] - _STENCIL_OFFSETS
    basis = np.prod(diff, axis=2)[:, :, None] / (diff * _STENCIL_DENOM)

    positive = np.all(vals > 0, axis=1)
    logv = np.log(np.where(vals > 0, vals, 1.0))
    f_log = np.exp(np.einsum("cqm,cm->cq", basis, logv))
    frac = t - cells[:, None]
    f_lin = rho[cells][:, None] * (1 - frac) + rho[cells + 1][:, None] * frac
    f = np.where(positive[:, None], f_log, f_lin)
    return float(np.sum(f * _GL_WEIGHTS * half[:, None]) * dx)


def interval_probability(psi: GridWavefunction, a: float, b: float) -> float:
    """Probability of finding the pointer in ``[a, b]`` (high-order quadrature)."""
    return _segment_integral(psi.density(), psi.x_min, psi.dx, a, b)


def grid_leakage(psi: GridWavefunction, lo: float, hi: float) -> float:
    """Grid weight at nodes strictly outside ``[lo, hi]``.

    Exactly zero for a state clipped to ``[lo, hi]``; use this rather than the
    interpolating quadrature when the density is discontinuous at the cut.
    """
    x = psi.x
    out = (x < lo) | (x > hi)
    return float(np.sum(psi.density()[out]) * psi.dx)


def outside_probability(psi: GridWavefunction, lo: float, hi: float) -> float:
    """Probability of finding the pointer outside ``[lo, hi]``."""
    rho = psi.density()
    g = psi.grid
    return _segment_integral(rho, g.x_min, g.dx, g.x_min, lo) + _segment_integral(
        rho, g.x_min, g.dx, hi, g.x_max
    )


@dataclass(frozen=True)
class GaussianFit:
    mean: float
    variance: float


def gaussian_fit(psi: GridWavefunction, rtol: float = 1e-6) -> GaussianFit | None:
    """Moments of ``|psi|**2`` if the density is Gaussian to ``rtol``, else None."""
    rho = psi.density()
    x = psi.x
    mu = np.sum(x * rho) * psi.dx
    var = np.sum((x - mu) ** 2 * rho) * psi.dx
    if not var > 0:
        return None
    model = np.exp(-((x - mu) ** 2) / (2 * var)) / math.sqrt(2 * math.pi * var)
    sig = model > 1e-100 * model.max()
    if np.max(np.abs(rho[sig] / model[sig] - 1)) > rtol:
        return None
    return GaussianFit(float(mu), float(var))


def _log10_gaussian_outside(fit: GaussianFit, D: float) -> float:
    s = math.sqrt(fit.variance)
    ln = np.logaddexp(special.log_ndtr((-D - fit.mean) / s), special.log_ndtr((fit.mean - D) / s))
    return float(ln) / qmath.LN10


@dataclass(frozen=True)
class TailDecomposition:
    """Split of a state into the box ``(-D, D)`` and the tail outside it.

    ``N_in`` and ``N_out`` are continuum integrals of the density (high-order
    quadrature, or the Gaussian closed form when the tail is below 1e-30).
    The pieces are normalized on the grid; ``grid_weights`` holds the
    discrete weights used for exact reconstruction.  A piece lighter than
    1e-300 is ``None``.
    """

    D: float
    N_in: LogProb
    N_out: LogProb
    in_state: GridWavefunction | None
    out_state: GridWavefunction | None
    grid_weights: tuple[float, float]
    method: str

    def reconstruct(self) -> np.ndarray:
        parts = []
        for w, piece in zip(self.grid_weights, (self.in_state, self.out_state)):
            if piece is not None:
                parts.append(math.sqrt(w) * piece.amplitudes)
        return np.sum(parts, axis=0)

    def to_json(self) -> dict:
        return {
            "D": self.D,
            "N_in": self.N_in.to_json(),
            "N_out": self.N_out.to_json(),
            "method": self.method,
        }


def tail_decompose(psi: GridWavefunction, D: float) -> TailDecomposition:
    """Pieces of ``psi`` inside ``(-D, D)`` and outside it, with their weights.

    Both pieces keep the pointwise phase of ``psi``.
    """
    if not D > 0:
        raise ValueError("D must be positive")
    g = psi.grid
    n_out = outside_probability(psi, -D, D)
    method = "quadrature"
    if n_out < QUADRATURE_FLOOR:
        fit = gaussian_fit(psi)
        if fit is not None:
            N_out = qmath.from_log10(_log10_gaussian_outside(fit, D))
            method = "gaussian-closed-form"
        else:
            N_out = qmath.from_real(max(n_out, 0.0))
    else:
        N_out = qmath.from_real(min(n_out, 1.0))
    N_in = qmath.one_minus(N_out)

    inside = np.abs(g.x) < D
    pieces, weights = [], []
    for mask in (inside, ~inside):
        amp = np.where(mask, psi.amplitudes, 0.0)
        w = float(np.sum(np.abs(amp) ** 2) * psi.dx)
        weights.append(w)
        pieces.append(psi._replace(amp / math.sqrt(w), check_edges=False) if w >= DEGENERATE_WEIGHT else None)
    return TailDecomposition(float(D), N_in, N_out, pieces[0], pieces[1], tuple(weights), method)


# --------------------------------------------------------------------------
# overlaps


def overlap(psi1: GridWavefunction, psi2: GridWavefunction) -> complex:
    """``<psi1|psi2> = sum(conj(psi1) psi2) dx``; exactly Hermitian."""
    _same_grid(psi1, psi2)
    return complex(np.sum(np.conj(psi1.amplitudes) * psi2.amplitudes) * psi1.dx)


def _phase_is_constant(psi: GridWavefunction, fit: GaussianFit) -> bool:
    x = psi.x
    sig = np.abs(x - fit.mean) < 6 * math.sqrt(fit.variance)
    a = psi.amplitudes[sig]
    ref = a[np.argmax(np.abs(a))]
    rel = a * np.conj(ref) / np.abs(ref)
    return bool(np.max(np.abs(rel.imag) / np.abs(a)) < 1e-8)


def log10_abs_overlap(psi1: GridWavefunction, psi2: GridWavefunction) -> float:
    """``log10 |<psi1|psi2>|``, finite even when the overlap underflows.

    Uses the direct sum when it is comfortably representable; otherwise the
    closed form for two real Gaussian envelopes (both states must pass a
    Gaussian fit with flat phase).
    """
    direct = abs(overlap(psi1, psi2))
    if direct > 1e-250:
        return math.log10(direct)
    fits = [gaussian_fit(p) for p in (psi1, psi2)]
    if any(f is None for f in fits) or not all(_phase_is_constant(p, f) for p, f in zip((psi1, psi2), fits)):
        raise ValueError("overlap underflows and the states are not flat-phase Gaussians")
    f1, f2 = fits
    s = f1.variance + f2.variance
    ln = 0.5 * math.log(2 * math.sqrt(f1.variance * f2.variance) / s) - (f1.mean - f2.mean) ** 2 / (4 * s)
    return ln / qmath.LN10


def gaussian_overlap(d: float, delta: float) -> float:
    """Closed-form overlap ``exp(-d**2 / (8 delta**2))`` of two shifted Eq.-20 Gaussians."""
    return math.exp(-(d**2) / (8 * delta**2))


def distinguishability_report(coupling: MeasurementCoupling, delta: float) -> dict:
    """Pointer separation, its ratio to ``delta`` and the log10 outcome overlap."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    d = coupling.separation
    return {
        "shift": d,
        "ratio": d / delta,
        "overlap_log10": -(d**2) / (8 * delta**2) / qmath.LN10,
    }


# --------------------------------------------------------------------------
# superposed inputs


@dataclass(frozen=True)
class PointerBranch:
    """One term ``c |label> (x) |pointer>`` of the post-measurement state."""

    label: str
    amplitude: complex
    state: GridWavefunction


def measure_superposition(
    psi0: GridWavefunction, coupling: MeasurementCoupling, amplitudes: dict
) -> list[PointerBranch]:
    """Entangle a two-level system ``c1|1> + c2|2>`` with the pointer.

    ``amplitudes`` maps ``"1"``/``"2"`` (eigenvalues ``omega1``/``omega2``)
    to complex coefficients whose squared moduli sum to one.
    """
    omegas = {"1": coupling.omega1, "2": coupling.omega2}
    if set(amplitudes) - set(omegas):
        raise ValueError("labels must be '1' and/or '2'")
    total = sum(abs(c) ** 2 for c in amplitudes.values())
    if abs(total - 1) > NORM_TOLERANCE:
        raise ValueError(f"squared amplitudes sum to {total!r}")
    return [
        PointerBranch(label, complex(c), evolve_measurement(psi0, coupling, omegas[label]))
        for label, c in amplitudes.items()
    ]


def branch_overlaps(branches: list[PointerBranch]) -> np.ndarray:
    """Matrix of pointer overlaps between branches."""
    m = len(branches)
    out = np.empty((m, m), dtype=complex)
    for i in range(m):
        for j in range(m):
            out[i, j] = overlap(branches[i].state, branches[j].state)
    return out
