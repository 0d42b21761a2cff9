"""Random-access scenario synthesis at the matched-filter output.

One round of grant-free access is described by a ScenarioRealization:
complex pilots, per-user transmission delays (nominal = known to the
receiver, actual = truth), Bernoulli activity and i.i.d. channel gains.
The receiver runs one matched filter per user, aligned to that user's
nominal delay, so a user's pilot leaks into neighboring filters through
the pulse autocorrelation at the relative delay. Samples are produced
two ways: a closed form built from effective pilots, and a slow
continuous-time quadrature oracle used to validate it.

All time quantities are in units of the pulse symbol_period; the default
scenario generator uses symbol_period = 1, so delays are fractions of a
symbol.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .errors import ConfigError, ContractViolation, NumericalGuardError, SizeLimitError
from .waveform import PulseShape, autocorrelation

DELAY_MODELS = ("uniform_in_symbol", "explicit")
PILOT_MODELS = ("gaussian_unit_variance", "unit_modulus_random_phase")

# default cap on total oracle grid cells (K filters x L_p symbols x cells/symbol)
ORACLE_CELL_CAP = 20_000_000


@dataclass
class ScenarioConfig:
    """Parameters of one random-access scenario family."""

    num_ues: int
    num_antennas: int
    pilot_length: int
    activation_prob: float
    snr_db: float
    seed: int
    delay_model: str = "uniform_in_symbol"
    delay_error_sigma: float = 0.0
    pilot_model: str = "gaussian_unit_variance"
    delays: list[float] | None = None

    def __post_init__(self):
        if self.num_ues < 1:
            raise ConfigError("num_ues must be >= 1")
        if self.num_antennas < 1:
            raise ConfigError("num_antennas must be >= 1")
        if self.pilot_length < 2:
            raise ConfigError("pilot_length must be >= 2")
        if not 0.0 <= self.activation_prob <= 1.0:
            raise ConfigError("activation_prob must lie in [0, 1]")
        if self.delay_error_sigma < 0:
            raise ConfigError("delay_error_sigma must be >= 0")
        if self.delay_model not in DELAY_MODELS:
            raise ConfigError(f"delay_model must be one of {DELAY_MODELS}")
        if self.pilot_model not in PILOT_MODELS:
            raise ConfigError(f"pilot_model must be one of {PILOT_MODELS}")
        if self.delay_model == "explicit":
            if self.delays is None or len(self.delays) != self.num_ues:
                raise ConfigError("explicit delay_model needs one delay per UE")
        elif self.delays is not None:
            raise ConfigError("delays only allowed with the explicit delay_model")
        if not isinstance(self.seed, (int, np.integer)) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must fit in 64 bits")

    @property
    def noise_variance(self) -> float:
        """Per-sample noise power sigma_n^2 = 10^(-snr_db/10)."""
        return 10.0 ** (-self.snr_db / 10.0)

    def to_dict(self) -> dict:
        out = {
            "num_ues": self.num_ues,
            "num_antennas": self.num_antennas,
            "pilot_length": self.pilot_length,
            "activation_prob": self.activation_prob,
            "snr_db": self.snr_db,
            "delay_model": self.delay_model,
            "delay_error_sigma": self.delay_error_sigma,
            "pilot_model": self.pilot_model,
            "seed": int(self.seed),
        }
        if self.delays is not None:
            out["delays"] = list(self.delays)
        return out

    @classmethod
    def from_dict(cls, doc: dict) -> "ScenarioConfig":
        doc = dict(doc)
        unknown = set(doc) - {
            "num_ues", "num_antennas", "pilot_length", "activation_prob",
            "snr_db", "delay_model", "delay_error_sigma", "pilot_model",
            "seed", "delays"}
        if unknown:
            raise ConfigError(f"unknown scenario fields: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "ScenarioConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(doc)


@dataclass
class ScenarioRealization:
    """One drawn random-access round.

    Users are indexed by increasing nominal delay; effective_channel row k
    is activity[k] * gains[k] and is all-zero exactly for inactive users.
    """

    pilots: np.ndarray            # (L_p, K) complex
    nominal_delays: np.ndarray    # (K,) sorted, in [0, T_s)
    actual_delays: np.ndarray     # (K,) nominal + timing error
    activity: np.ndarray          # (K,) in {0, 1}
    gains: np.ndarray             # (K, M) complex
    effective_channel: np.ndarray  # (K, M) complex, row-sparse

    @property
    def num_ues(self) -> int:
        return self.pilots.shape[1]

    @property
    def num_antennas(self) -> int:
        return self.gains.shape[1]

    @property
    def pilot_length(self) -> int:
        return self.pilots.shape[0]


@dataclass
class EffectivePilotSet:
    """Per-matched-filter pilot matrices.

    stack[k] is the L_p x K matrix seen by filter k: column k is the raw
    pilot of user k, column k' is user k''s pilot mixed across two adjacent
    symbols by the autocorrelation at the relative nominal delay.
    """

    stack: np.ndarray  # (K, L_p, K) complex

    def matrix(self, k: int) -> np.ndarray:
        return self.stack[k]

    @property
    def num_ues(self) -> int:
        return self.stack.shape[0]

    @property
    def pilot_length(self) -> int:
        return self.stack.shape[1]


@dataclass
class NoiseCovariance:
    """Cross-filter noise correlation structure.

    matrix is the K*L_p x K*L_p unit-diagonal correlation of the stacked
    matched-filter noise (stacked index k*L_p + l); the physical covariance
    is matrix * noise_variance. Samples of the same filter are independent;
    filters k' <= k correlate at same sample index through rho(tau_k -
    tau_k') and at the (l, l+1) offset through rho(T_s - (tau_k - tau_k')).
    """

    matrix: np.ndarray
    noise_variance: float
    delays: np.ndarray
    pilot_length: int
    _factor_cache: tuple | None = field(default=None, repr=False, compare=False)

    @property
    def num_ues(self) -> int:
        return len(self.delays)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    # -- internal banded machinery ------------------------------------
    #
    # Reordering samples by time (index l*K + k) makes the correlation
    # banded with half-bandwidth K, so Cholesky and solves cost
    # O(K^2 * K*L_p) instead of O((K*L_p)^3).

    def _time_permutation(self) -> np.ndarray:
        K, L = self.num_ues, self.pilot_length
        l_idx, k_idx = np.divmod(np.arange(K * L), K)
        return k_idx * L + l_idx  # perm[t] = stacked index of time slot t

    def _factor(self):
        """Cached factorization; banded Cholesky with jitter retries,
        symmetric eigendecomposition square root as a last resort."""
        if self._factor_cache is not None:
            return self._factor_cache
        n, K = self.size, self.num_ues
        perm = self._time_permutation()
        sig_time = self.matrix[np.ix_(perm, perm)]
        band = np.zeros((K + 1, n))
        for d in range(K + 1):
            band[d, :n - d] = np.diagonal(sig_time, -d)
        jitter = 1e-10
        for _ in range(3):
            try:
                chol = sla.cholesky_banded(band, lower=True)
                self._factor_cache = ("banded", chol, perm)
                return self._factor_cache
            except np.linalg.LinAlgError:
                band[0] += jitter
                jitter *= 10
        w, v = np.linalg.eigh(self.matrix)
        if w[-1] <= 0:
            raise NumericalGuardError("noise correlation has no positive spectrum")
        root = (v * np.sqrt(np.clip(w, 0.0, None))) @ v.T
        self._factor_cache = ("eigh", root, None)
        return self._factor_cache

    def color(self, white: np.ndarray) -> np.ndarray:
        """Map white rows (…, K*L_p) to rows with correlation `matrix`."""
        kind, fac, perm = self._factor()
        if kind == "eigh":
            return white @ fac.T
        n, K = self.size, self.num_ues
        w_time = white[..., perm]
        out_time = np.zeros_like(w_time)
        for d in range(K + 1):
            out_time[..., d:] += fac[d, :n - d] * w_time[..., :n - d]
        out = np.empty_like(out_time)
        out[..., perm] = out_time
        return out

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """matrix^{-1} @ rhs for the unit-variance correlation."""
        kind, fac, perm = self._factor()
        if kind == "eigh":
            return np.linalg.solve(self.matrix + 1e-10 * np.eye(self.size), rhs)
        sol_time = sla.cho_solve_banded((fac, True), rhs[perm])
        out = np.empty_like(sol_time)
        out[perm] = sol_time
        return out

    def whiten(self, rhs: np.ndarray) -> np.ndarray:
        """Apply a whitening map W with W @ matrix @ W^T = I to the rows."""
        kind, fac, perm = self._factor()
        if kind == "eigh":
            w, v = np.linalg.eigh(self.matrix)
            inv_root = (v / np.sqrt(np.clip(w, 1e-10, None))) @ v.T
            return inv_root @ rhs
        K = self.num_ues
        sol_time = sla.solve_banded((K, 0), fac, rhs[perm])
        out = np.empty_like(sol_time)
        out[perm] = sol_time
        return out


@dataclass
class ReceivedSamples:
    """Matched-filter sample tensor, entry [m, l, k] = sample l of filter k
    on antenna m."""

    tensor: np.ndarray  # (M, L_p, K) complex

    def __post_init__(self):
        if self.tensor.ndim != 3:
            raise ContractViolation("sample tensor must be M x L_p x K")
        if not np.all(np.isfinite(self.tensor)):
            raise ContractViolation("sample tensor contains non-finite entries")

    @property
    def num_antennas(self) -> int:
        return self.tensor.shape[0]

    @property
    def pilot_length(self) -> int:
        return self.tensor.shape[1]

    @property
    def num_ues(self) -> int:
        return self.tensor.shape[2]


# ---------------------------------------------------------------------------
# scenario generation


def generate_scenario(config: ScenarioConfig) -> ScenarioRealization:
    """Draw one scenario realization, deterministic in config.seed.

    Pilots are i.i.d. circular Gaussian with unit variance (or unit-modulus
    random phase), nominal delays i.i.d. uniform on [0, 1) folded and
    sorted ascending, activity i.i.d. Bernoulli, gains i.i.d. circular
    Gaussian, and actual delays add a zero-mean Gaussian timing error with
    standard deviation delay_error_sigma (in symbol periods, untruncated).
    """
    rng = np.random.default_rng(int(config.seed))
    K, M, L = config.num_ues, config.num_antennas, config.pilot_length

    if config.pilot_model == "gaussian_unit_variance":
        pilots = (rng.standard_normal((L, K)) + 1j * rng.standard_normal((L, K)))
        pilots /= np.sqrt(2.0)
    else:
        pilots = np.exp(2j * np.pi * rng.random((L, K)))

    if config.delay_model == "uniform_in_symbol":
        delays = rng.uniform(0.0, 1.0, K)
    else:
        delays = np.mod(np.asarray(config.delays, dtype=float), 1.0)
    delays = np.sort(delays)

    activity = (rng.random(K) < config.activation_prob).astype(np.int64)
    gains = (rng.standard_normal((K, M)) + 1j * rng.standard_normal((K, M)))
    gains /= np.sqrt(2.0)
    errors = rng.normal(0.0, config.delay_error_sigma, K)

    return ScenarioRealization(
        pilots=pilots,
        nominal_delays=delays,
        actual_delays=delays + errors,
        activity=activity,
        gains=gains,
        effective_channel=activity[:, None] * gains,
    )


def _check_delays(delays: np.ndarray, symbol_period: float):
    delays = np.asarray(delays, dtype=float)
    if np.any(np.diff(delays) < 0):
        raise ContractViolation("delays must be sorted ascending")
    if delays.size and delays[-1] - delays[0] >= symbol_period:
        raise ContractViolation(
            "maximum relative delay must be below one symbol period")
    return delays


def _shift_rows(pilots: np.ndarray, shift: int) -> np.ndarray:
    """Row-shifted pilot matrix with zero padding: out[l] = pilots[l - shift].

    Symbols before the frame start and after the guard interval carry no
    pilot energy, so out-of-range indices are zero.
    """
    out = np.zeros_like(pilots)
    L = pilots.shape[0]
    if shift >= 0:
        out[shift:] = pilots[:L - shift]
    else:
        out[:L + shift] = pilots[-shift:]
    return out


def build_effective_pilots(realization: ScenarioRealization,
                           shape: PulseShape) -> EffectivePilotSet:
    """Per-filter effective pilot matrices from the nominal delays.

    Filter k sees its own user's pilot unchanged; an earlier-delay user
    k' < k contributes p[l, k'] rho(d) + p[l+1, k'] rho(T_s - d) and a
    later-delay user the mirrored combination, with d the relative delay.
    """
    ts = shape.symbol_period
    tau = _check_delays(realization.nominal_delays, ts)
    P = realization.pilots
    K = P.shape[1]

    diff = np.abs(tau[:, None] - tau[None, :])      # (K, K)
    rho_d = np.asarray(autocorrelation(shape, diff))
    rho_c = np.asarray(autocorrelation(shape, ts - diff))

    # A user offset by d from the filter keeps overlap T_s - d with the
    # same-index symbol window (weight rho(d) on p[l]); the remaining
    # overlap d falls on the next symbol when the user arrives earlier and
    # on the previous symbol when it arrives later, weight rho(T_s - d).
    # Ties put zero weight on either neighbor.
    eye = np.eye(K, dtype=bool)
    earlier = (tau[None, :] <= tau[:, None]) & ~eye  # user k' arrives first
    later = (tau[None, :] > tau[:, None])            # user k' arrives later
    p_next = _shift_rows(P, -1)
    p_prev = _shift_rows(P, +1)

    stack = P[None, :, :] * np.where(~eye, rho_d, 0.0)[:, None, :]
    stack = stack + p_next[None, :, :] * np.where(earlier, rho_c, 0.0)[:, None, :]
    stack = stack + p_prev[None, :, :] * np.where(later, rho_c, 0.0)[:, None, :]
    idx = np.arange(K)
    stack[idx, :, idx] = P.T  # diagonal alignment: own pilot unchanged
    return EffectivePilotSet(stack=stack)


def build_noise_covariance(delays, shape: PulseShape, pilot_length: int,
                           noise_variance: float = 1.0) -> NoiseCovariance:
    """Unit-diagonal correlation of the stacked matched-filter noise."""
    ts = shape.symbol_period
    tau = _check_delays(np.asarray(delays, dtype=float), ts)
    K, L = len(tau), pilot_length
    if L < 2:
        raise ContractViolation("pilot_length must be >= 2")
    if noise_variance < 0:
        raise ContractViolation("noise_variance must be >= 0")

    lower = np.zeros((K * L, K * L))
    l_idx = np.arange(L)
    for k in range(K):
        for kp in range(k + 1):
            d = tau[k] - tau[kp]
            rows = k * L + l_idx
            lower[rows, kp * L + l_idx] = autocorrelation(shape, d)
            lower[rows[:-1], kp * L + l_idx[:-1] + 1] = autocorrelation(shape, ts - d)
    matrix = lower + lower.T
    np.fill_diagonal(matrix, 1.0)
    return NoiseCovariance(matrix=matrix, noise_variance=float(noise_variance),
                           delays=tau, pilot_length=L)


def draw_correlated_noise(cov: NoiseCovariance, num_antennas: int,
                          seed: int) -> np.ndarray:
    """Circular Gaussian noise tensor (M, L_p, K) with per-antenna stacked
    covariance matrix * noise_variance; antennas independent."""
    K, L = cov.num_ues, cov.pilot_length
    if cov.noise_variance == 0.0:
        return np.zeros((num_antennas, L, K), dtype=complex)
    rng = np.random.default_rng(int(seed))
    scale = np.sqrt(cov.noise_variance / 2.0)
    white = scale * (rng.standard_normal((num_antennas, K * L))
                     + 1j * rng.standard_normal((num_antennas, K * L)))
    stacked = cov.color(white)
    return stacked.reshape(num_antennas, K, L).transpose(0, 2, 1)


# ---------------------------------------------------------------------------
# closed-form synthesis


def _mix(dictionary: np.ndarray, channel: np.ndarray,
         noise: np.ndarray | None) -> ReceivedSamples:
    # dictionary (K, L_p, K'), channel (K', M) -> tensor (M, L_p, K)
    tensor = np.einsum("klj,jm->mlk", dictionary, channel)
    if noise is not None:
        tensor = tensor + noise
    return ReceivedSamples(tensor=np.ascontiguousarray(tensor))


def synthesize_samples(realization: ScenarioRealization,
                       pilots: EffectivePilotSet,
                       cov: NoiseCovariance,
                       num_antennas: int,
                       seed: int) -> ReceivedSamples:
    """Matched-filter samples under perfect delay knowledge:
    y[m, l, k] = sum_k' h[k', m] pbar_k[l, k'] + correlated noise."""
    if not np.array_equal(realization.nominal_delays, realization.actual_delays):
        raise ContractViolation(
            "perfect-delay synthesis requires actual delays == nominal delays")
    K, L = realization.num_ues, realization.pilot_length
    if pilots.stack.shape != (K, L, K):
        raise ContractViolation("effective pilot set does not match the scenario")
    if cov.size != K * L:
        raise ContractViolation("noise covariance does not match the scenario")
    if num_antennas != realization.num_antennas:
        raise ContractViolation("antenna count does not match the realization")
    noise = draw_correlated_noise(cov, num_antennas, seed)
    return _mix(pilots.stack, realization.effective_channel, noise)


def _imperfect_dictionary(realization: ScenarioRealization,
                          shape: PulseShape) -> np.ndarray:
    """Effective mixing tensor when filters sit at nominal delays while
    signals arrive at the actual delays (all timing errors within half a
    symbol)."""
    ts = shape.symbol_period
    tau = realization.nominal_delays
    tau_act = realization.actual_delays
    P = realization.pilots
    K, L = P.shape[1], P.shape[0]

    def rho(x):
        return np.asarray(autocorrelation(shape, x))

    dictionary = np.zeros((K, L, K), dtype=complex)

    # self term: attenuated own pilot plus one pilot shifted against the
    # sign of the timing error
    err = tau_act - tau
    rho_self = rho(np.abs(err))
    rho_shift = rho(ts - np.abs(err))
    idx = np.arange(K)
    dictionary[idx, :, idx] = (rho_self[:, None] * P.T)
    for k in range(K):
        s = int(np.sign(err[k]))
        if s != 0:
            dictionary[k, :, k] += rho_shift[k] * _shift_rows(P, s)[:, k]

    # interference: relative offset of user k''s actual arrival vs filter k
    u = tau_act[None, :] - tau[:, None]   # (K filters, K' users)
    off = ~np.eye(K, dtype=bool)
    branches = [
        ((u > ts) & (u <= 2 * ts) & off, 2, lambda x: 2 * ts - x, 1, lambda x: x - ts),
        ((u > 0) & (u <= ts) & off, 1, lambda x: ts - x, 0, lambda x: x),
        ((u > -ts) & (u <= 0) & off, 0, lambda x: -x, -1, lambda x: ts + x),
        ((u > -2 * ts) & (u <= -ts) & off, -1, lambda x: -x - ts, -2, lambda x: 2 * ts + x),
    ]
    for mask, shift_a, rho_a, shift_b, rho_b in branches:
        if not np.any(mask):
            continue
        wa = np.where(mask, rho(np.where(mask, rho_a(u), 0.0)), 0.0)
        wb = np.where(mask, rho(np.where(mask, rho_b(u), 0.0)), 0.0)
        dictionary += _shift_rows(P, shift_a)[None, :, :] * wa[:, None, :]
        dictionary += _shift_rows(P, shift_b)[None, :, :] * wb[:, None, :]
    return dictionary


def synthesize_samples_imperfect(realization: ScenarioRealization,
                                 shape: PulseShape,
                                 cov: NoiseCovariance,
                                 num_antennas: int,
                                 seed: int) -> ReceivedSamples:
    """Matched-filter samples when the filters use the nominal delays but
    the signals carry the actual delays.

    Uses the closed form (own pilot attenuated by rho(|error|), one
    shifted own-pilot term, and four relative-offset interference
    branches) when every timing error is within half a symbol; otherwise
    falls back to the quadrature oracle, which handles any offset.
    """
    ts = shape.symbol_period
    err = realization.actual_delays - realization.nominal_delays
    noise = draw_correlated_noise(cov, num_antennas, seed)
    if np.max(np.abs(err)) > ts / 2:
        return synthesize_oracle(realization, shape, grid_step=1e-4 * ts,
                                 noise=noise)
    dictionary = _imperfect_dictionary(realization, shape)
    return _mix(dictionary, realization.effective_channel, noise)


# ---------------------------------------------------------------------------
# continuous-time quadrature oracle


def _pulse_antiderivative(shape: PulseShape, x: np.ndarray) -> np.ndarray:
    """Exact integral of the pulse from 0 to x (x clipped to the support)."""
    ts = shape.symbol_period
    if shape.kind == "rectangular":
        return shape.amplitude * np.clip(x, 0.0, ts)
    samples = shape.samples
    h = shape.grid_step
    cum = np.concatenate([[0.0], np.cumsum((samples[1:] + samples[:-1]) * h / 2)])
    xc = np.clip(x, 0.0, ts)
    j = np.clip((xc // h).astype(int), 0, len(samples) - 2)
    frac = xc - j * h
    slope = (samples[j + 1] - samples[j]) / h
    return cum[j] + samples[j] * frac + 0.5 * slope * frac**2


def _cell_averages(shape: PulseShape, edges: np.ndarray) -> np.ndarray:
    """Exact mean of the pulse over each cell delimited by edges."""
    anti = _pulse_antiderivative(shape, edges)
    return np.diff(anti) / np.diff(edges)


def synthesize_oracle(realization: ScenarioRealization,
                      shape: PulseShape,
                      grid_step: float,
                      noise: np.ndarray | None = None,
                      cell_cap: int = ORACLE_CELL_CAP) -> ReceivedSamples:
    """Brute-force reference synthesis from the continuous-time waveform.

    Builds the baseband superposition of every active user's pilot train
    at its actual delay as exact per-cell averages on a uniform grid
    aligned to each matched filter (area sampling keeps cell averages
    exact even across pulse edges), then evaluates each filter's
    correlation integral cell by cell. Noiseless unless a noise tensor of
    matching shape is supplied. grid_step at or below 1e-3 of the symbol
    period gives acceptance-grade accuracy.
    """
    ts = shape.symbol_period
    K, L, M = realization.num_ues, realization.pilot_length, realization.num_antennas
    cells_per_symbol = max(1, round(ts / grid_step))
    if K * L * cells_per_symbol > cell_cap:
        raise SizeLimitError(
            f"oracle grid of {K * L * cells_per_symbol} cells exceeds the cap "
            f"of {cell_cap}; increase grid_step or cell_cap")
    dt = ts / cells_per_symbol
    n_cells = L * cells_per_symbol
    H = realization.effective_channel  # (K, M)
    P = realization.pilots

    # filter pulse as exact per-cell averages over one symbol window
    filt = _cell_averages(shape, dt * np.arange(cells_per_symbol + 1))

    tensor = np.empty((M, L, K), dtype=complex)
    for k in range(K):
        t0 = realization.nominal_delays[k]
        edges = t0 + dt * np.arange(n_cells + 1)
        # superpose all users' pilot trains as cell averages on this grid
        signal = np.zeros((M, n_cells), dtype=complex)
        for kp in range(K):
            if not np.any(H[kp] != 0):
                continue
            for i in range(L):
                start = i * ts + realization.actual_delays[kp]
                c0 = max(0, int(np.floor((start - t0) / dt)))
                c1 = min(n_cells, int(np.ceil((start + ts - t0) / dt)) + 1)
                if c1 <= c0:
                    continue
                avg = _cell_averages(shape, edges[c0:c1 + 1] - start)
                signal[:, c0:c1] += np.outer(H[kp], P[i, kp] * avg)
        tensor[:, :, k] = dt * (
            signal.reshape(M, L, cells_per_symbol) @ filt)
    if noise is not None:
        if noise.shape != tensor.shape:
            raise ContractViolation("noise tensor shape mismatch")
        tensor = tensor + noise
    return ReceivedSamples(tensor=tensor)
