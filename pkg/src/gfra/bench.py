"""Metrics, SINR comparison and seeded Monte-Carlo parameter sweeps.

A sweep walks the Cartesian product of the requested axes, derives one
child seed per (grid point, trial) from the master seed, synthesizes a
scenario, runs the requested algorithms and aggregates activity-error
rate and channel mean-square error per point. Rows serialize to a fixed
CSV schema consumed by the figures tool.
"""

from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass, replace

import numpy as np

from .airsim import (
    ScenarioConfig,
    build_effective_pilots,
    build_noise_covariance,
    generate_scenario,
    synthesize_samples,
    synthesize_samples_imperfect,
)
from .baselines import build_stacked_model, run_bomp, run_ga_mmse, run_mp_bsbl_sync
from .detector import DetectorConfig, run_detector
from .errors import ConfigError, ContractViolation
from .waveform import PulseShape

AXIS_NAMES = ("snr_db", "l_p", "m", "p_a", "sigma_tau", "n_it")
ALGORITHMS = ("pudmp", "mp_bsbl_sync", "ga_mmse", "bomp")
CSV_COLUMNS = AXIS_NAMES + ("algorithm", "aer", "ce_mse", "ce_mse_db",
                            "trials", "errors", "wall_time_s")


def aer(truth, estimate) -> float:
    """Activity-detection error rate: fraction of mismatched indicators."""
    truth = np.asarray(truth)
    estimate = np.asarray(estimate)
    if truth.shape != estimate.shape:
        raise ContractViolation("activity vectors differ in length")
    return float(np.mean(np.abs(truth - estimate)))


def ce_mse(truth, estimate) -> float:
    """Mean squared channel-estimation error over all K*M entries."""
    truth = np.asarray(truth)
    estimate = np.asarray(estimate)
    if truth.shape != estimate.shape:
        raise ContractViolation("channel matrices differ in shape")
    return float(np.mean(np.abs(truth - estimate) ** 2))


def _to_db(value: float) -> float:
    with np.errstate(divide="ignore"):
        return float(10.0 * np.log10(value))


def sinr_pair(pilots, raw_pilots, lam, backward_var):
    """Per-user forward-message SINR under the asynchronous and the
    synchronous observation model, sharing the same noise precision and
    interferer variances (averaged over the pilot samples).

    The asynchronous case weights interferers by the effective pilots,
    whose mean energy is the pulse interference factor (< 1); the
    synchronous case uses the raw pilot energy (mean 1).
    """
    stack = pilots.stack if hasattr(pilots, "stack") else np.asarray(pilots)
    K, L, _ = stack.shape
    P = np.asarray(raw_pilots)
    v = np.broadcast_to(np.asarray(backward_var, dtype=float), (K,))
    inv_lam = 1.0 / float(lam)

    abs2 = np.abs(stack) ** 2                    # (K, L, K')
    idx = np.arange(K)
    self_energy = abs2[idx, :, idx]              # (K, L)
    interf = np.einsum("klj,j->kl", abs2, v) - self_energy * v[:, None]
    sinr_asy = np.mean(self_energy / (inv_lam + interf), axis=1)

    p_abs2 = np.abs(P) ** 2                      # (L, K)
    total = p_abs2 @ v                           # (L,)
    interf_syn = total[None, :].T - p_abs2 * v[None, :]
    sinr_syn = np.mean(p_abs2.T / (inv_lam + interf_syn.T), axis=1)
    return sinr_asy, sinr_syn


def sinr_comparison(num_ues=8, pilot_length=16, draws=1000, snr_db=20.0,
                    backward_var=1.0, seed=0):
    """Monte-Carlo comparison of the two SINRs over random Gaussian pilots
    and uniform delays; also reports the mean interferer pilot energies."""
    lam = 10.0 ** (snr_db / 10.0)
    sum_asy = sum_syn = 0.0
    sum_factor_asy = sum_factor_syn = 0.0
    shape = PulseShape.rectangular()
    root = np.random.SeedSequence(int(seed))
    for child in root.spawn(draws):
        cfg = ScenarioConfig(num_ues=num_ues, num_antennas=1,
                             pilot_length=pilot_length, activation_prob=1.0,
                             snr_db=snr_db,
                             seed=int(child.generate_state(1, np.uint64)[0]))
        r = generate_scenario(cfg)
        eff = build_effective_pilots(r, shape)
        asy, syn = sinr_pair(eff, r.pilots, lam, backward_var)
        sum_asy += float(np.mean(asy))
        sum_syn += float(np.mean(syn))
        abs2 = np.abs(eff.stack) ** 2
        off = ~np.eye(num_ues, dtype=bool)
        sum_factor_asy += float(np.mean(abs2.transpose(0, 2, 1)[off]))
        sum_factor_syn += float(np.mean(np.abs(r.pilots) ** 2))
    return {
        "draws": draws,
        "mean_sinr_asynchronous": sum_asy / draws,
        "mean_sinr_synchronous": sum_syn / draws,
        "mean_interference_factor_asynchronous": sum_factor_asy / draws,
        "mean_interference_factor_synchronous": sum_factor_syn / draws,
    }


@dataclass
class SweepSpec:
    """One benchmark campaign: base configs, axes, trial count, seed."""

    scenario: ScenarioConfig
    detector: DetectorConfig
    axes: dict[str, list]
    trials_per_point: int
    algorithms: tuple[str, ...]
    master_seed: int
    record_timing: bool = False

    def __post_init__(self):
        if not self.axes:
            raise ConfigError("at least one sweep axis is required")
        for name, values in self.axes.items():
            if name not in AXIS_NAMES:
                raise ConfigError(f"unknown axis {name!r}; valid: {AXIS_NAMES}")
            if not values:
                raise ConfigError(f"axis {name!r} has no values")
        if self.trials_per_point < 1:
            raise ConfigError("trials_per_point must be >= 1")
        if not self.algorithms:
            raise ConfigError("at least one algorithm is required")
        for algo in self.algorithms:
            if algo not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {algo!r}; valid: {ALGORITHMS}")

    def to_dict(self) -> dict:
        return {
            "base": {"scenario": self.scenario.to_dict(),
                     "detector": self.detector.to_dict()},
            "axes": {k: list(v) for k, v in self.axes.items()},
            "trials_per_point": self.trials_per_point,
            "algorithms": list(self.algorithms),
            "master_seed": int(self.master_seed),
            "record_timing": self.record_timing,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SweepSpec":
        doc = dict(doc)
        unknown = set(doc) - {"base", "axes", "trials_per_point", "algorithms",
                              "master_seed", "record_timing"}
        if unknown:
            raise ConfigError(f"unknown sweep fields: {sorted(unknown)}")
        base = doc.get("base")
        if not isinstance(base, dict) or "scenario" not in base:
            raise ConfigError("sweep spec needs base.scenario")
        return cls(
            scenario=ScenarioConfig.from_dict(base["scenario"]),
            detector=DetectorConfig.from_dict(base.get("detector", {})),
            axes=doc.get("axes", {}),
            trials_per_point=doc.get("trials_per_point", 1),
            algorithms=tuple(doc.get("algorithms", ())),
            master_seed=int(doc.get("master_seed", 0)),
            record_timing=bool(doc.get("record_timing", False)),
        )

    @classmethod
    def from_json(cls, text: str) -> "SweepSpec":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from exc
        return cls.from_dict(doc)


@dataclass
class MetricRow:
    """Aggregated metrics of one (grid point, algorithm) cell."""

    axis_values: dict[str, float]
    algorithm: str
    aer: float
    ce_mse: float
    ce_mse_db: float
    trials: int
    errors: int
    wall_time: float


def derive_trial_seeds(master_seed: int, point_index: int,
                       trial_index: int) -> tuple[int, int, int]:
    """Collision-free child seeds for (scenario, async noise, sync noise),
    independent of execution order."""
    ss = np.random.SeedSequence(entropy=(int(master_seed), int(point_index),
                                         int(trial_index)))
    state = ss.generate_state(3, dtype=np.uint64)
    return int(state[0]), int(state[1]), int(state[2])


def _grid_points(axes: dict[str, list]):
    names = [n for n in AXIS_NAMES if n in axes]
    for combo in itertools.product(*(axes[n] for n in names)):
        yield dict(zip(names, combo))


def _apply_point(scenario: ScenarioConfig, detector: DetectorConfig, point: dict):
    scen_fields = {}
    if "snr_db" in point:
        scen_fields["snr_db"] = float(point["snr_db"])
    if "l_p" in point:
        scen_fields["pilot_length"] = int(point["l_p"])
    if "m" in point:
        scen_fields["num_antennas"] = int(point["m"])
    if "p_a" in point:
        scen_fields["activation_prob"] = float(point["p_a"])
    if "sigma_tau" in point:
        scen_fields["delay_error_sigma"] = float(point["sigma_tau"])
    scenario = replace(scenario, **scen_fields) if scen_fields else scenario
    if "n_it" in point:
        detector = replace(detector, num_iterations=int(point["n_it"]))
    return scenario, detector


def _synchronous_observation(realization, noise_variance, seed):
    """Matched single-filter observation: with equal delays every filter
    output coincides and its noise is white, so P @ h plus white noise is
    exact. Returns (L_p, M)."""
    rng = np.random.default_rng(int(seed))
    L, M = realization.pilot_length, realization.num_antennas
    clean = realization.pilots @ realization.effective_channel
    noise = np.sqrt(noise_variance / 2) * (
        rng.standard_normal((L, M)) + 1j * rng.standard_normal((L, M)))
    return clean + noise


def run_sweep(spec: SweepSpec) -> list[MetricRow]:
    """Execute the campaign; one MetricRow per (grid point, algorithm)."""
    shape = PulseShape.rectangular()
    rows = []
    for point_index, point in enumerate(_grid_points(spec.axes)):
        scen_base, det_cfg = _apply_point(spec.scenario, spec.detector, point)
        sums = {a: {"aer": 0.0, "ce": 0.0, "ok": 0, "errors": 0, "time": 0.0}
                for a in spec.algorithms}
        for trial in range(spec.trials_per_point):
            scen_seed, noise_seed, sync_seed = derive_trial_seeds(
                spec.master_seed, point_index, trial)
            scen_cfg = replace(scen_base, seed=scen_seed)
            realization = generate_scenario(scen_cfg)
            cov = build_noise_covariance(
                realization.nominal_delays, shape, scen_cfg.pilot_length,
                noise_variance=scen_cfg.noise_variance)
            pilots = build_effective_pilots(realization, shape)
            if scen_cfg.delay_error_sigma > 0:
                samples = synthesize_samples_imperfect(
                    realization, shape, cov, scen_cfg.num_antennas, noise_seed)
            else:
                samples = synthesize_samples(
                    realization, pilots, cov, scen_cfg.num_antennas, noise_seed)
            model = None
            if "ga_mmse" in spec.algorithms or "bomp" in spec.algorithms:
                model = build_stacked_model(samples, pilots, cov)

            truth_act = realization.activity
            truth_h = realization.effective_channel
            for algo in spec.algorithms:
                start = time.perf_counter() if spec.record_timing else 0.0
                try:
                    if algo == "pudmp":
                        res = run_detector(samples, pilots, det_cfg)
                        act, est = res.activity_estimate, res.channel_estimate
                    elif algo == "mp_bsbl_sync":
                        y_sync = _synchronous_observation(
                            realization, scen_cfg.noise_variance, sync_seed)
                        res = run_mp_bsbl_sync(y_sync, realization.pilots, det_cfg)
                        act, est = res.activity_estimate, res.channel_estimate
                    elif algo == "ga_mmse":
                        est = run_ga_mmse(model, truth_act)
                        act = truth_act
                    else:  # bomp
                        support, est = run_bomp(model, int(truth_act.sum()))
                        act = np.zeros_like(truth_act)
                        act[support] = 1
                except Exception:
                    sums[algo]["errors"] += 1
                    continue
                finally:
                    if spec.record_timing:
                        sums[algo]["time"] += time.perf_counter() - start
                sums[algo]["aer"] += aer(truth_act, act)
                sums[algo]["ce"] += ce_mse(truth_h, est)
                sums[algo]["ok"] += 1

        axis_values = {
            "snr_db": float(scen_base.snr_db),
            "l_p": int(scen_base.pilot_length),
            "m": int(scen_base.num_antennas),
            "p_a": float(scen_base.activation_prob),
            "sigma_tau": float(scen_base.delay_error_sigma),
            "n_it": int(det_cfg.num_iterations),
        }
        for algo in spec.algorithms:
            agg = sums[algo]
            ok = max(agg["ok"], 1)
            mean_ce = agg["ce"] / ok
            rows.append(MetricRow(
                axis_values=dict(axis_values),
                algorithm=algo,
                aer=agg["aer"] / ok,
                ce_mse=mean_ce,
                ce_mse_db=_to_db(mean_ce),
                trials=spec.trials_per_point,
                errors=agg["errors"],
                wall_time=agg["time"],
            ))
    return rows


def _format_value(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        raise ContractViolation("boolean metric values are not serializable")
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def write_csv(rows, path) -> None:
    """Serialize metric rows with the fixed column schema; UTF-8,
    newline-terminated, decimal points, no thousands separators."""
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(CSV_COLUMNS) + "\n")
            for row in rows:
                cells = [_format_value(row.axis_values[a]) for a in AXIS_NAMES]
                cells.append(row.algorithm)
                cells.extend([
                    _format_value(row.aer),
                    _format_value(row.ce_mse),
                    _format_value(row.ce_mse_db),
                    _format_value(row.trials),
                    _format_value(row.errors),
                    _format_value(row.wall_time),
                ])
                fh.write(",".join(cells) + "\n")
    except OSError as exc:
        raise OSError(f"failed to write CSV to {path}: {exc}") from exc
