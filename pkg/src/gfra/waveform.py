"""Pulse-shaping waveforms and their autocorrelation.

The transmit pulse s(t) has unit energy on [0, T_s] and is zero outside.
Its autocorrelation rho(tau) = integral of s(t) s(t - tau) dt drives both
the effective-pilot mixing and the cross-filter noise correlation, and the
pair rho(delta)^2 + rho(T_s - delta)^2 is the interference energy one
asynchronous user leaks into another's matched filter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DomainError

RECTANGULAR = "rectangular"
SAMPLED = "sampled"

# unit-energy check tolerance on construction
_ENERGY_TOL = 1e-9


@dataclass(frozen=True)
class PulseShape:
    """A unit-energy pulse supported on [0, symbol_period].

    kind="rectangular" uses closed forms throughout; kind="sampled" stores
    amplitudes on a uniform time grid over [0, symbol_period] and is
    evaluated by linear interpolation (zero outside the support).
    """

    kind: str
    symbol_period: float = 1.0
    samples: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.kind not in (RECTANGULAR, SAMPLED):
            raise ContractViolation(f"unknown pulse kind {self.kind!r}")
        if self.symbol_period <= 0:
            raise ContractViolation("symbol_period must be positive")
        if self.kind == SAMPLED:
            if self.samples is None or len(self.samples) < 2:
                raise ContractViolation("sampled pulse needs >= 2 amplitudes")
            amps = np.asarray(self.samples, dtype=float)
            energy = np.trapezoid(amps**2, dx=self.grid_step)
            if energy <= 0:
                raise ContractViolation("sampled pulse has zero energy")
            # re-normalize to unit energy on construction
            object.__setattr__(self, "samples", amps / np.sqrt(energy))
            if abs(self.energy() - 1.0) > _ENERGY_TOL:
                raise ContractViolation("pulse energy normalization failed")
        elif self.samples is not None:
            raise ContractViolation("rectangular pulse takes no samples")

    @property
    def grid_step(self) -> float:
        if self.kind != SAMPLED:
            raise ContractViolation("grid_step only defined for sampled kind")
        return self.symbol_period / (len(self.samples) - 1)

    @property
    def amplitude(self) -> float:
        """Constant amplitude of the rectangular kind, 1/sqrt(T_s)."""
        if self.kind != RECTANGULAR:
            raise ContractViolation("amplitude only defined for rectangular kind")
        return 1.0 / np.sqrt(self.symbol_period)

    def __call__(self, t):
        """Evaluate s(t); zero outside [0, symbol_period]."""
        t = np.asarray(t, dtype=float)
        if self.kind == RECTANGULAR:
            inside = (t >= 0.0) & (t <= self.symbol_period)
            return np.where(inside, self.amplitude, 0.0)
        grid = np.linspace(0.0, self.symbol_period, len(self.samples))
        vals = np.interp(t, grid, self.samples, left=0.0, right=0.0)
        return np.where((t >= 0.0) & (t <= self.symbol_period), vals, 0.0)

    def energy(self) -> float:
        """Numerical integral of s^2 over the support (should be 1)."""
        if self.kind == RECTANGULAR:
            return 1.0
        return float(np.trapezoid(np.asarray(self.samples) ** 2, dx=self.grid_step))

    @classmethod
    def rectangular(cls, symbol_period: float = 1.0) -> "PulseShape":
        return cls(kind=RECTANGULAR, symbol_period=symbol_period)

    @classmethod
    def sampled(cls, amplitudes, symbol_period: float = 1.0) -> "PulseShape":
        return cls(kind=SAMPLED, symbol_period=symbol_period,
                   samples=np.asarray(amplitudes, dtype=float))

    @classmethod
    def from_text_file(cls, path, symbol_period: float = 1.0) -> "PulseShape":
        """Load a sampled pulse from a two-column (time, amplitude) text file.

        Columns are whitespace separated; times must be strictly increasing.
        The file's time span is mapped onto [0, symbol_period] and the
        amplitudes are resampled onto a uniform grid and re-normalized.
        """
        data = np.loadtxt(path, dtype=float)
        if data.ndim != 2 or data.shape[1] != 2 or data.shape[0] < 2:
            raise ContractViolation(
                f"{path}: expected two whitespace-separated columns (time, amplitude)")
        times, amps = data[:, 0], data[:, 1]
        if np.any(np.diff(times) <= 0):
            raise ContractViolation(f"{path}: times must be strictly increasing")
        uniform_t = np.linspace(times[0], times[-1], len(times))
        resampled = np.interp(uniform_t, times, amps)
        return cls.sampled(resampled, symbol_period=symbol_period)


def autocorrelation(shape: PulseShape, tau) -> float | np.ndarray:
    """Pulse autocorrelation rho(tau) = integral s(t) s(t - tau) dt.

    Symmetric in the sign of tau. Requires |tau| <= symbol_period; delays
    must be folded into [0, T_s) by the caller before taking differences.
    Rectangular pulses use the closed form 1 - |tau|/T_s; sampled pulses
    use trapezoidal quadrature on the union of the stored grid and its
    shifted copy (exact for piecewise-linear integrands).
    """
    ts = shape.symbol_period
    tau_arr = np.abs(np.asarray(tau, dtype=float))
    if np.any(tau_arr > ts * (1 + 1e-12)):
        raise DomainError(f"|tau| exceeds the symbol period {ts}")
    tau_arr = np.minimum(tau_arr, ts)
    if shape.kind == RECTANGULAR:
        rho = 1.0 - tau_arr / ts
    else:
        rho = np.empty_like(tau_arr)
        for idx, t0 in np.ndenumerate(tau_arr):
            rho[idx] = _sampled_autocorr(shape, t0)
    if np.isscalar(tau) or np.ndim(tau) == 0:
        return float(rho)
    return rho


def _sampled_autocorr(shape: PulseShape, tau: float) -> float:
    # overlap region of s(t) and s(t - tau) for tau >= 0 is [tau, T_s]
    ts = shape.symbol_period
    if tau >= ts:
        return 0.0
    grid = np.linspace(0.0, ts, len(shape.samples))
    nodes = np.union1d(grid, grid + tau)
    nodes = nodes[(nodes >= tau) & (nodes <= ts)]
    vals = shape(nodes) * shape(nodes - tau)
    return float(np.trapezoid(vals, nodes))


def mui_factor(shape: PulseShape, delta) -> float | np.ndarray:
    """Interference energy factor rho(delta)^2 + rho(T_s - delta)^2.

    For a relative delay delta in [0, T_s] this is the average energy a
    unit-power interferer contributes through a matched filter offset by
    delta. It equals 1 only at delta in {0, T_s} for the rectangular pulse.
    """
    ts = shape.symbol_period
    d = np.asarray(delta, dtype=float)
    if np.any((d < -1e-12) | (d > ts * (1 + 1e-12))):
        raise DomainError(f"delta must lie in [0, {ts}]")
    d = np.clip(d, 0.0, ts)
    rho_d = autocorrelation(shape, d)
    rho_c = autocorrelation(shape, ts - d)
    return rho_d**2 + rho_c**2


def mean_mui_factor(shape: PulseShape, quadrature_points: int) -> float:
    """Average of mui_factor over delta uniform on [0, symbol_period].

    Evaluates on a uniform grid with the given number of points (>= 2);
    2/3 for the rectangular pulse in the fine-grid limit.
    """
    if quadrature_points < 2:
        raise DomainError("quadrature_points must be >= 2")
    grid = np.linspace(0.0, shape.symbol_period, quadrature_points)
    return float(np.mean(mui_factor(shape, grid)))
