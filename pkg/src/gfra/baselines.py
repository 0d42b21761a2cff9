"""Comparison algorithms: synchronous message passing, genie-aided MMSE
and block orthogonal matching pursuit on the stacked linear model.

The synchronous variant models all users through one shared matched
filter (white noise, a single noise precision), so every user's belief
reads all samples and the backward message excludes exactly one. GA-MMSE
receives the true activity and provides the channel-estimation error
floor; BOMP receives the true number of active users as an ideal
stopping criterion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .airsim import EffectivePilotSet, NoiseCovariance, ReceivedSamples
from .detector import (
    DEGENERATE_PILOT_TOL,
    LAMBDA_MAX,
    DetectionResult,
    DetectorConfig,
    update_activity_precision,
    update_channel_beliefs,
    update_prior_shape,
    update_signal_beliefs,
)
from .errors import ContractViolation, NumericalGuardError


def run_mp_bsbl_sync(samples: np.ndarray, pilots: np.ndarray,
                     config: DetectorConfig) -> DetectionResult:
    """Message-passing detector for the symbol-synchronized model
    y[l] = sum_k p[l, k] h_k + white noise.

    samples is L_p x M (one shared matched filter), pilots is the raw
    L_p x K matrix. Follows the same schedule and decision rule as the
    asynchronous detector, with one shared noise precision and
    single-message exclusion in the backward update.
    """
    samples = np.asarray(samples)
    P = np.asarray(pilots)
    if samples.ndim != 2 or P.ndim != 2 or samples.shape[0] != P.shape[0]:
        raise ContractViolation("samples must be L_p x M and pilots L_p x K")
    if np.any(np.abs(P) < DEGENERATE_PILOT_TOL):
        raise NumericalGuardError("degenerate pilot entry (|p| < 1e-12)")
    L, M = samples.shape
    K = P.shape[1]
    y = np.ascontiguousarray(samples.T)           # (M, L)
    A2 = np.abs(P) ** 2                           # (L, K)

    lam = float(config.init_lambda)
    gamma = np.full(K, float(config.init_gamma))
    epsilon = float(config.init_epsilon)
    backward_mean = np.full((M, K, L), complex(config.init_message_mean))
    backward_var = np.full((M, K, L), float(config.init_message_variance))

    gamma_trace = np.empty((config.num_iterations, K))
    lambda_trace = np.empty((config.num_iterations, K))
    epsilon_trace = np.empty(config.num_iterations)

    for it in range(1, config.num_iterations + 1):
        try:
            total_v = np.einsum("lj,mjl->ml", A2, backward_var)
            total_m = np.einsum("lj,mjl->ml", P, backward_mean)
            interf_v = total_v[:, None, :] - A2.T[None] * backward_var
            interf_m = total_m[:, None, :] - P.T[None] * backward_mean
            forward_var = (1.0 / lam + interf_v) / A2.T[None]
            forward_mean = (y[:, None, :] - interf_m) / P.T[None]

            belief_mean, belief_var = update_channel_beliefs(
                forward_mean, forward_var, gamma)
            gamma = update_activity_precision(belief_mean, belief_var,
                                              epsilon, config.rate_param)
            epsilon = update_prior_shape(gamma)

            prec_f = 1.0 / forward_var
            resid_prec = 1.0 / belief_var[..., None] - prec_f
            if np.any(resid_prec <= 0):
                raise NumericalGuardError("non-positive backward-message precision")
            backward_var = 1.0 / resid_prec
            resid_mean = (belief_mean[..., None] / belief_var[..., None]
                          - forward_mean * prec_f)
            scale = (backward_var if config.mean_scaling == "extrinsic"
                     else belief_var[..., None])
            backward_mean = scale * resid_mean

            pred_var = np.einsum("lj,mjl->ml", A2, backward_var)
            pred_mean = np.einsum("lj,mjl->ml", P, backward_mean)
            z_mean, z_var = update_signal_beliefs(y, pred_mean, pred_var, lam)
            denom = float(np.sum(np.abs(y - z_mean) ** 2 + z_var))
            lam = M * L / denom if denom > 0 else LAMBDA_MAX
            lam = min(lam, LAMBDA_MAX)
        except NumericalGuardError as exc:
            raise NumericalGuardError(str(exc), iteration=it, step=None) from exc
        gamma_trace[it - 1] = gamma
        lambda_trace[it - 1] = lam
        epsilon_trace[it - 1] = epsilon

    active = gamma < config.uad_threshold
    channel = np.where(active[:, None], belief_mean.T, 0.0 + 0.0j)
    return DetectionResult(
        activity_estimate=active.astype(np.int64),
        channel_estimate=channel,
        gamma_trace=gamma_trace,
        lambda_trace=lambda_trace,
        epsilon_trace=epsilon_trace,
    )


@dataclass
class StackedModel:
    """All filters' samples stacked into one linear mixing model
    observations = dictionary @ H + noise, noise covariance
    cov.matrix * cov.noise_variance. Row block k holds filter k's L_p rows."""

    observations: np.ndarray   # (K*L_p, M)
    dictionary: np.ndarray     # (K*L_p, K)
    cov: NoiseCovariance

    @property
    def covariance(self) -> np.ndarray:
        return self.cov.matrix * self.cov.noise_variance

    @property
    def noise_variance(self) -> float:
        return self.cov.noise_variance

    @property
    def num_ues(self) -> int:
        return self.dictionary.shape[1]

    @property
    def num_antennas(self) -> int:
        return self.observations.shape[1]


def build_stacked_model(samples: ReceivedSamples, pilots: EffectivePilotSet,
                        cov: NoiseCovariance) -> StackedModel:
    """Reorganize the (M, L_p, K) sample tensor and per-filter pilot
    matrices into the stacked model."""
    M, L, K = samples.tensor.shape
    if pilots.stack.shape != (K, L, K):
        raise ContractViolation("pilot set does not match the sample tensor")
    if cov.size != K * L:
        raise ContractViolation("noise covariance does not match the scenario")
    observations = samples.tensor.transpose(2, 1, 0).reshape(K * L, M)
    dictionary = pilots.stack.reshape(K * L, K)
    return StackedModel(observations=np.ascontiguousarray(observations),
                        dictionary=np.ascontiguousarray(dictionary), cov=cov)


def _solve_correlation(cov: NoiseCovariance, rhs: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(rhs):
        return cov.solve(rhs.real) + 1j * cov.solve(rhs.imag)
    return cov.solve(rhs)


def _whiten_rows(cov: NoiseCovariance, rhs: np.ndarray) -> np.ndarray:
    if np.iscomplexobj(rhs):
        return cov.whiten(rhs.real) + 1j * cov.whiten(rhs.imag)
    return cov.whiten(rhs)


def run_ga_mmse(model: StackedModel, true_activity) -> np.ndarray:
    """Channel estimate given genie knowledge of the active set.

    Restricts the dictionary to the active columns and applies the
    unit-variance-prior MMSE estimator under the correlated noise
    covariance; inactive rows are zero. Noiseless models reduce to least
    squares (the MMSE limit), which is exact for consistent systems.
    """
    active = np.flatnonzero(np.asarray(true_activity))
    K, M = model.num_ues, model.num_antennas
    estimate = np.zeros((K, M), dtype=complex)
    if active.size == 0:
        return estimate
    Pa = model.dictionary[:, active]
    if model.noise_variance <= 0:
        sol, *_ = np.linalg.lstsq(Pa, model.observations, rcond=None)
        estimate[active] = sol
        return estimate
    sigma_inv_pa = _solve_correlation(model.cov, Pa)
    gram = (Pa.conj().T @ sigma_inv_pa) / model.noise_variance
    rhs = (sigma_inv_pa.conj().T @ model.observations) / model.noise_variance
    estimate[active] = np.linalg.solve(gram + np.eye(active.size), rhs)
    return estimate


def run_bomp(model: StackedModel, num_active: int,
             whiten: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Block orthogonal matching pursuit over user blocks.

    Each block is one dictionary column scored jointly across the M
    antenna columns by normalized residual correlation energy; after
    every selection the channel is re-estimated by least squares on the
    selected support. The model is noise-whitened first (skipped for
    noiseless models, where whitening is undefined and unnecessary).
    Returns (support indices in selection order, K x M estimate).
    """
    K, M = model.num_ues, model.num_antennas
    estimate = np.zeros((K, M), dtype=complex)
    support: list[int] = []
    if num_active == 0:
        return np.array([], dtype=int), estimate
    if num_active > K:
        raise ContractViolation("num_active exceeds the number of users")

    if whiten and model.noise_variance > 0:
        dictionary = _whiten_rows(model.cov, model.dictionary)
        observations = _whiten_rows(model.cov, model.observations)
    else:
        dictionary = model.dictionary
        observations = model.observations

    col_energy = np.sum(np.abs(dictionary) ** 2, axis=0)
    col_energy = np.maximum(col_energy, 1e-300)
    residual = observations
    sol = None
    for _ in range(num_active):
        scores = np.sum(np.abs(dictionary.conj().T @ residual) ** 2, axis=1)
        scores = scores / col_energy
        scores[support] = -np.inf
        support.append(int(np.argmax(scores)))
        sub = dictionary[:, support]
        sol, *_ = np.linalg.lstsq(sub, observations, rcond=None)
        residual = observations - sub @ sol
    estimate[support] = sol
    return np.array(support, dtype=int), estimate
