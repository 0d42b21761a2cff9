"""Joint user-activity detection and channel estimation.

Sparse-Bayesian-learning message passing on a per-user matched-filter
bank. Each user's channel belief is formed only from its own filter's
samples (cross-filter noise is correlated, so foreign samples would be
double counted); other users enter solely through backward interference
messages. Per-user precisions gamma_k act as activity indicators (a
diverging gamma_k flags an inactive user), a learned Gamma-prior shape
parameter sharpens the separation between active and inactive users, and
per-filter noise precisions lambda_k absorb both thermal noise and model
mismatch such as residual timing error.

Internally all message arrays are oriented (antenna m, user/filter k,
sample l); the public entry point run_detector accepts the (m, l, k)
sample tensor produced by the simulator.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .airsim import EffectivePilotSet, ReceivedSamples
from .errors import ConfigError, ContractViolation, NumericalGuardError

MEAN_SCALINGS = ("extrinsic", "belief")

# keep the inactive-user limits finite; the exact fixed points diverge
GAMMA_MAX = 1e12
LAMBDA_MAX = 1e12

# self-pilot magnitude below this indicates a broken pilot model
DEGENERATE_PILOT_TOL = 1e-12


@dataclass
class DetectorConfig:
    """Iteration schedule, decision threshold and initialization."""

    num_iterations: int = 80
    uad_threshold: float = 10.0
    rate_param: float = 0.0
    init_epsilon: float = 1e-3
    init_lambda: float = 1.0
    init_gamma: float = 1.0
    init_message_variance: float = 1.0
    init_message_mean: float = 0.0
    mean_scaling: str = "extrinsic"

    def __post_init__(self):
        if self.num_iterations < 1:
            raise ConfigError("num_iterations must be >= 1")
        if self.uad_threshold <= 0:
            raise ConfigError("uad_threshold must be > 0")
        if self.rate_param < 0:
            raise ConfigError("rate_param must be >= 0")
        if self.init_epsilon < 0:
            raise ConfigError("init_epsilon must be >= 0")
        if self.init_lambda <= 0 or self.init_gamma <= 0:
            raise ConfigError("init_lambda and init_gamma must be > 0")
        if self.init_message_variance <= 0:
            raise ConfigError("init_message_variance must be > 0")
        if self.mean_scaling not in MEAN_SCALINGS:
            raise ConfigError(f"mean_scaling must be one of {MEAN_SCALINGS}")

    def to_dict(self) -> dict:
        return {
            "num_iterations": self.num_iterations,
            "uad_threshold": self.uad_threshold,
            "rate_param": self.rate_param,
            "init_epsilon": self.init_epsilon,
            "init_lambda": self.init_lambda,
            "init_gamma": self.init_gamma,
            "init_message_variance": self.init_message_variance,
            "init_message_mean": self.init_message_mean,
            "mean_scaling": self.mean_scaling,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "DetectorConfig":
        unknown = set(doc) - set(cls().to_dict())
        if unknown:
            raise ConfigError(f"unknown detector fields: {sorted(unknown)}")
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "DetectorConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(doc)


@dataclass
class MessageState:
    """All Gaussian message parameters of one detector run.

    Array orientation is (M, K, L_p) for per-sample quantities and (M, K)
    for channel beliefs; gamma and lam are per-user vectors, epsilon a
    scalar. Every variance is strictly positive throughout the run.
    """

    forward_mean: np.ndarray
    forward_var: np.ndarray
    belief_mean: np.ndarray
    belief_var: np.ndarray
    backward_mean: np.ndarray
    backward_var: np.ndarray
    pred_mean: np.ndarray
    pred_var: np.ndarray
    z_mean: np.ndarray
    z_var: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray
    epsilon: float


@dataclass
class DetectionResult:
    """Detector output: hard activity decisions, channel estimates and
    per-iteration hyper-parameter traces."""

    activity_estimate: np.ndarray   # (K,) in {0, 1}
    channel_estimate: np.ndarray    # (K, M) complex, zero rows when inactive
    gamma_trace: np.ndarray         # (N_it, K)
    lambda_trace: np.ndarray        # (N_it, K)
    epsilon_trace: np.ndarray       # (N_it,)

    def to_json_dict(self) -> dict:
        return {
            "activity_estimate": self.activity_estimate.astype(int).tolist(),
            "gamma": self.gamma_trace[-1].tolist(),
            "gamma_trace": self.gamma_trace.tolist(),
            "lambda_trace": self.lambda_trace.tolist(),
            "epsilon_trace": self.epsilon_trace.tolist(),
        }


def _mix_over_users(weights_lkj: np.ndarray, x_mkl: np.ndarray) -> np.ndarray:
    """out[m, k, l] = sum_j weights[l, k, j] * x[m, j, l] via batched matmul."""
    xt = x_mkl.transpose(0, 2, 1)[..., None]          # (M, L, K', 1)
    out = np.matmul(weights_lkj, xt)[..., 0]          # (M, L, K)
    return out.transpose(0, 2, 1)


def update_forward_messages(y, pbar_t, pbar_abs2_t, self_pilot, lam,
                            backward_mean, backward_var):
    """Per-sample channel evidence from filter k's observation.

    The residual after cancelling every interferer's backward mean is
    divided by the user's own pilot symbol; interferer uncertainty and the
    observation noise 1/lam_k land in the variance. y, backward_* are
    (M, K, L_p); pbar_t / pbar_abs2_t are (L_p, K, K') transposes of the
    effective pilots; self_pilot is (K, L_p).
    """
    self_abs2 = np.abs(self_pilot) ** 2
    if np.any(np.abs(self_pilot) < DEGENERATE_PILOT_TOL):
        raise NumericalGuardError("degenerate self-pilot entry (|p| < 1e-12)")
    total_var = _mix_over_users(pbar_abs2_t, backward_var)
    total_mean = _mix_over_users(pbar_t, backward_mean)
    interf_var = total_var - self_abs2[None] * backward_var
    interf_mean = total_mean - self_pilot[None] * backward_mean
    v = (1.0 / lam[None, :, None] + interf_var) / self_abs2[None]
    mu = (y - interf_mean) / self_pilot[None]
    return mu, v


def update_channel_beliefs(forward_mean, forward_var, gamma):
    """Combine the L_p per-sample messages of a user's own filter with the
    zero-mean prior of precision gamma_k."""
    prec = 1.0 / forward_var
    v = 1.0 / (prec.sum(axis=-1) + gamma[None, :])
    mu = v * (forward_mean * prec).sum(axis=-1)
    return mu, v


def update_activity_precision(belief_mean, belief_var, epsilon, rate_param=0.0):
    """Per-user prior precision from the posterior channel energy across
    antennas; small energy drives gamma_k large (inactive)."""
    num_antennas = belief_mean.shape[0]
    energy = (np.abs(belief_mean) ** 2 + belief_var).sum(axis=0)
    denom = rate_param + energy
    with np.errstate(divide="ignore"):
        gamma = np.where(denom > 0, (epsilon + num_antennas) / denom, np.inf)
    return np.minimum(gamma, GAMMA_MAX)


def update_prior_shape(gamma) -> float:
    """Learned Gamma-prior shape from the spread of the log precisions.

    Zero when all gamma_k agree; grows with heterogeneity, sharpening the
    active/inactive separation. The log-mean minus mean-log argument is
    nonnegative by Jensen's inequality and invariant to rescaling gamma.
    """
    gap = np.log(np.mean(gamma)) - np.mean(np.log(gamma))
    return 0.5 * float(np.sqrt(max(gap, 0.0)))


def update_backward_messages(belief_mean, belief_var, forward_mean, forward_var,
                             mean_scaling="extrinsic"):
    """Interference report from user k toward sample l of any filter.

    Removes the three own-filter messages around sample index l (the
    destination's correlated neighborhood) from the belief; out-of-range
    neighbors contribute nothing. The residual precision stays positive
    whenever gamma_k > 0. mean_scaling picks the variance multiplying the
    residual mean: "extrinsic" (the removed-message variance, standard
    Gaussian division) or "belief".
    """
    prec = 1.0 / forward_var
    weighted = forward_mean * prec
    win_prec = prec.copy()
    win_prec[..., 1:] += prec[..., :-1]
    win_prec[..., :-1] += prec[..., 1:]
    win_mean = weighted.copy()
    win_mean[..., 1:] += weighted[..., :-1]
    win_mean[..., :-1] += weighted[..., 1:]

    resid_prec = 1.0 / belief_var[..., None] - win_prec
    if np.any(resid_prec <= 0):
        raise NumericalGuardError("non-positive backward-message precision")
    v = 1.0 / resid_prec
    resid_mean = belief_mean[..., None] / belief_var[..., None] - win_mean
    scale = v if mean_scaling == "extrinsic" else belief_var[..., None]
    return scale * resid_mean, v


def update_signal_predictions(pbar_t, pbar_abs2_t, backward_mean, backward_var):
    """Predicted noiseless filter output from all users' backward messages
    (full sum, own term included)."""
    v = _mix_over_users(pbar_abs2_t, backward_var)
    mu = _mix_over_users(pbar_t, backward_mean)
    return mu, v


def update_signal_beliefs(y, pred_mean, pred_var, lam):
    """Fuse the prediction with the observation at noise precision lam."""
    v = 1.0 / (1.0 / pred_var + lam)
    mu = v * (y * lam + pred_mean / pred_var)
    return mu, v


def update_noise_precision(y, z_mean, z_var):
    """Per-filter noise precision from the residual energy plus posterior
    signal uncertainty across all antennas and samples."""
    num_antennas, _, pilot_length = y.shape
    denom = (np.abs(y - z_mean) ** 2 + z_var).sum(axis=(0, 2))
    with np.errstate(divide="ignore"):
        lam = np.where(denom > 0, num_antennas * pilot_length / denom, np.inf)
    return np.minimum(lam, LAMBDA_MAX)


def initial_state(num_antennas, num_ues, pilot_length,
                  config: DetectorConfig) -> MessageState:
    shape = (num_antennas, num_ues, pilot_length)
    return MessageState(
        forward_mean=np.zeros(shape, dtype=complex),
        forward_var=np.ones(shape),
        belief_mean=np.zeros(shape[:2], dtype=complex),
        belief_var=np.ones(shape[:2]),
        backward_mean=np.full(shape, complex(config.init_message_mean)),
        backward_var=np.full(shape, float(config.init_message_variance)),
        pred_mean=np.zeros(shape, dtype=complex),
        pred_var=np.ones(shape),
        z_mean=np.zeros(shape, dtype=complex),
        z_var=np.ones(shape),
        gamma=np.full(num_ues, float(config.init_gamma)),
        lam=np.full(num_ues, float(config.init_lambda)),
        epsilon=float(config.init_epsilon),
    )


def run_detector(samples: ReceivedSamples, pilots: EffectivePilotSet,
                 config: DetectorConfig) -> DetectionResult:
    """Run the full iteration schedule and apply the activity decision.

    Each iteration performs, in order: per-sample forward messages (using
    the previous iteration's backward messages), channel beliefs, the
    activity-precision and prior-shape updates, backward messages, signal
    predictions and beliefs, and the noise-precision update. After the
    last iteration user k is declared active iff gamma_k stayed below the
    threshold, in which case its belief means become the channel estimate.
    """
    M, L, K = samples.tensor.shape
    if pilots.stack.shape != (K, L, K):
        raise ContractViolation("pilot set does not match the sample tensor")

    y = np.ascontiguousarray(samples.tensor.transpose(0, 2, 1))  # (M, K, L)
    pbar_t = np.ascontiguousarray(pilots.stack.transpose(1, 0, 2))  # (L, K, K')
    pbar_abs2_t = np.abs(pbar_t) ** 2
    self_pilot = np.ascontiguousarray(
        pilots.stack[np.arange(K), :, np.arange(K)])  # (K, L)

    state = initial_state(M, K, L, config)
    gamma_trace = np.empty((config.num_iterations, K))
    lambda_trace = np.empty((config.num_iterations, K))
    epsilon_trace = np.empty(config.num_iterations)

    for it in range(1, config.num_iterations + 1):
        step = 0
        try:
            step = 1
            state.forward_mean, state.forward_var = update_forward_messages(
                y, pbar_t, pbar_abs2_t, self_pilot, state.lam,
                state.backward_mean, state.backward_var)
            step = 2
            state.belief_mean, state.belief_var = update_channel_beliefs(
                state.forward_mean, state.forward_var, state.gamma)
            step = 3
            state.gamma = update_activity_precision(
                state.belief_mean, state.belief_var, state.epsilon,
                config.rate_param)
            step = 4
            state.epsilon = update_prior_shape(state.gamma)
            step = 5
            state.backward_mean, state.backward_var = update_backward_messages(
                state.belief_mean, state.belief_var,
                state.forward_mean, state.forward_var, config.mean_scaling)
            step = 6
            state.pred_mean, state.pred_var = update_signal_predictions(
                pbar_t, pbar_abs2_t, state.backward_mean, state.backward_var)
            step = 7
            state.z_mean, state.z_var = update_signal_beliefs(
                y, state.pred_mean, state.pred_var, state.lam[None, :, None])
            step = 8
            state.lam = update_noise_precision(y, state.z_mean, state.z_var)
        except NumericalGuardError as exc:
            raise NumericalGuardError(str(exc), iteration=it, step=step) from exc
        gamma_trace[it - 1] = state.gamma
        lambda_trace[it - 1] = state.lam
        epsilon_trace[it - 1] = state.epsilon

    active = state.gamma < config.uad_threshold
    channel = np.where(active[:, None], state.belief_mean.T, 0.0 + 0.0j)
    return DetectionResult(
        activity_estimate=active.astype(np.int64),
        channel_estimate=channel,
        gamma_trace=gamma_trace,
        lambda_trace=lambda_trace,
        epsilon_trace=epsilon_trace,
    )
