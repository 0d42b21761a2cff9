"""Command-line entry point.

Commands:
  simulate      synthesize a scenario and save a sample bundle
  detect        run a detector on a saved bundle
  sweep         run a Monte-Carlo parameter sweep and write the CSV
  sinr          Monte-Carlo SINR comparison (asynchronous vs synchronous)
  oracle-check  closed-form vs continuous-time quadrature agreement

Exit codes: 0 success, 1 failure, 2 usage error, 3 invalid configuration,
4 numerical guard tripped.

GFRA_THREADS caps the BLAS thread pools; it is applied before numpy is
imported, which is why the compute modules are imported lazily.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .errors import ConfigError, GfraError, NumericalGuardError

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS")


def _apply_thread_cap():
    cap = os.environ.get("GFRA_THREADS", "").strip()
    if cap.isdigit() and int(cap) > 0:
        for var in _THREAD_VARS:
            os.environ.setdefault(var, cap)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gfra",
        description="Asynchronous grant-free random access simulator and "
                    "detector benchmark")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_out):
        p.add_argument("--config", help="JSON configuration file")
        p.add_argument("--out", required=needs_out, help="output path")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE",
                       help="override a config field (dotted keys allowed, "
                            "repeatable)")
        p.add_argument("--seed", type=int, default=None,
                       help="override the resolved seed")
        p.add_argument("--quiet", action="store_true",
                       help="suppress informational output")

    add_common(sub.add_parser("simulate", help="synthesize and save a bundle"),
               needs_out=True)

    p_detect = sub.add_parser("detect", help="run a detector on a bundle")
    p_detect.add_argument("bundle", help="bundle directory from `simulate`")
    p_detect.add_argument("--algo", default="pudmp",
                          choices=["pudmp", "mp_bsbl_sync", "ga_mmse", "bomp"])
    add_common(p_detect, needs_out=True)

    add_common(sub.add_parser("sweep", help="run a parameter sweep"),
               needs_out=True)
    add_common(sub.add_parser("sinr", help="SINR Monte-Carlo comparison"),
               needs_out=False)
    add_common(sub.add_parser("oracle-check",
                              help="verify closed form against quadrature"),
               needs_out=False)
    return parser


def parse_overrides(pairs):
    out = {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not KEY=VALUE")
        key, raw = pair.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        out[key.strip()] = value
    return out


def apply_overrides(doc: dict, overrides: dict) -> dict:
    for key, value in overrides.items():
        node = doc
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    return doc


def load_config_doc(path, overrides) -> dict:
    doc = {}
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: top-level JSON object expected")
    return apply_overrides(doc, parse_overrides(overrides))


def _dump_json(payload, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _complex_to_lists(arr):
    import numpy as np
    stacked = np.stack([arr.real, arr.imag], axis=-1)
    return stacked.tolist()


def _complex_from_lists(data):
    import numpy as np
    arr = np.asarray(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def save_bundle(out_dir, config, realization, samples, pulse_kind="rectangular"):
    """Bundle layout: scenario.json (config + realization), samples.bin
    (little-endian interleaved complex128, C order) and samples_meta.json
    (shape sidecar)."""
    os.makedirs(out_dir, exist_ok=True)
    scenario_doc = {
        "config": config.to_dict(),
        "pulse": {"kind": pulse_kind},
        "realization": {
            "pilots": _complex_to_lists(realization.pilots),
            "nominal_delays": realization.nominal_delays.tolist(),
            "actual_delays": realization.actual_delays.tolist(),
            "activity": realization.activity.tolist(),
            "gains": _complex_to_lists(realization.gains),
        },
    }
    _dump_json(scenario_doc, os.path.join(out_dir, "scenario.json"))
    tensor = samples.tensor.astype("<c16")
    with open(os.path.join(out_dir, "samples.bin"), "wb") as fh:
        fh.write(tensor.tobytes(order="C"))
    _dump_json({"shape": list(samples.tensor.shape), "dtype": "<c16",
                "order": "C"},
               os.path.join(out_dir, "samples_meta.json"))


def load_bundle(bundle_dir):
    import numpy as np

    from .airsim import ReceivedSamples, ScenarioConfig, ScenarioRealization

    def read_json(name):
        path = os.path.join(bundle_dir, name)
        try:
            with open(path, encoding="utf-8") as fh:
                return json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read bundle file {path}: {exc}") from exc

    scenario_doc = read_json("scenario.json")
    meta = read_json("samples_meta.json")
    config = ScenarioConfig.from_dict(scenario_doc["config"])
    real_doc = scenario_doc["realization"]
    activity = np.asarray(real_doc["activity"], dtype=np.int64)
    gains = _complex_from_lists(real_doc["gains"])
    realization = ScenarioRealization(
        pilots=_complex_from_lists(real_doc["pilots"]),
        nominal_delays=np.asarray(real_doc["nominal_delays"], dtype=float),
        actual_delays=np.asarray(real_doc["actual_delays"], dtype=float),
        activity=activity,
        gains=gains,
        effective_channel=activity[:, None] * gains,
    )
    path = os.path.join(bundle_dir, "samples.bin")
    try:
        raw = np.fromfile(path, dtype=meta["dtype"])
    except OSError as exc:
        raise ConfigError(f"cannot read bundle file {path}: {exc}") from exc
    tensor = raw.reshape(meta["shape"]).astype(complex)
    pulse_kind = scenario_doc.get("pulse", {}).get("kind", "rectangular")
    return config, realization, ReceivedSamples(tensor=tensor), pulse_kind


def _info(args, message):
    if not args.quiet:
        print(message)


def cmd_simulate(args) -> int:
    from .airsim import (
        ScenarioConfig,
        build_effective_pilots,
        build_noise_covariance,
        generate_scenario,
        synthesize_samples,
        synthesize_samples_imperfect,
    )
    from .bench import derive_trial_seeds
    from .waveform import PulseShape

    doc = load_config_doc(args.config, args.overrides)
    if args.seed is not None:
        doc["seed"] = args.seed
    config = ScenarioConfig.from_dict(doc)
    shape = PulseShape.rectangular()
    realization = generate_scenario(config)
    cov = build_noise_covariance(realization.nominal_delays, shape,
                                 config.pilot_length,
                                 noise_variance=config.noise_variance)
    noise_seed = derive_trial_seeds(config.seed, 0, 0)[1]
    if config.delay_error_sigma > 0:
        samples = synthesize_samples_imperfect(
            realization, shape, cov, config.num_antennas, noise_seed)
    else:
        pilots = build_effective_pilots(realization, shape)
        samples = synthesize_samples(realization, pilots, cov,
                                     config.num_antennas, noise_seed)
    save_bundle(args.out, config, realization, samples)
    _info(args, f"bundle written to {args.out}")
    return 0


def cmd_detect(args) -> int:
    import numpy as np

    from .airsim import build_effective_pilots, build_noise_covariance
    from .baselines import (
        build_stacked_model,
        run_bomp,
        run_ga_mmse,
        run_mp_bsbl_sync,
    )
    from .detector import DetectorConfig, run_detector
    from .waveform import PulseShape

    doc = load_config_doc(args.config, args.overrides)
    det_cfg = DetectorConfig.from_dict(doc)
    config, realization, samples, pulse_kind = load_bundle(args.bundle)
    if pulse_kind != "rectangular":
        raise ConfigError(f"unsupported bundle pulse kind {pulse_kind!r}")
    shape = PulseShape.rectangular()
    pilots = build_effective_pilots(realization, shape)

    if args.algo == "pudmp":
        result = run_detector(samples, pilots, det_cfg)
        activity, channel = result.activity_estimate, result.channel_estimate
        payload = result.to_json_dict()
    elif args.algo == "mp_bsbl_sync":
        result = run_mp_bsbl_sync(samples.tensor[:, :, 0].T,
                                  realization.pilots, det_cfg)
        activity, channel = result.activity_estimate, result.channel_estimate
        payload = result.to_json_dict()
    else:
        cov = build_noise_covariance(realization.nominal_delays, shape,
                                     config.pilot_length,
                                     noise_variance=config.noise_variance)
        model = build_stacked_model(samples, pilots, cov)
        if args.algo == "ga_mmse":
            channel = run_ga_mmse(model, realization.activity)
            activity = realization.activity.copy()
        else:
            support, channel = run_bomp(model, int(realization.activity.sum()))
            activity = np.zeros_like(realization.activity)
            activity[support] = 1
        payload = {"activity_estimate": activity.astype(int).tolist()}
    payload["algorithm"] = args.algo

    os.makedirs(args.out, exist_ok=True)
    _dump_json(payload, os.path.join(args.out, "result.json"))
    with open(os.path.join(args.out, "channel_estimate.csv"), "w",
              encoding="utf-8", newline="") as fh:
        fh.write("ue,antenna,re,im\n")
        for k in range(channel.shape[0]):
            for m in range(channel.shape[1]):
                fh.write(f"{k},{m},{channel[k, m].real!r},"
                         f"{channel[k, m].imag!r}\n")
    _info(args, f"detection result written to {args.out}")
    return 0


def cmd_sweep(args) -> int:
    from .bench import SweepSpec, run_sweep, write_csv

    doc = load_config_doc(args.config, args.overrides)
    if args.seed is not None:
        doc["master_seed"] = args.seed
    spec = SweepSpec.from_dict(doc)
    rows = run_sweep(spec)
    write_csv(rows, args.out)
    _info(args, f"{len(rows)} rows written to {args.out}")
    return 0


def cmd_sinr(args) -> int:
    from .bench import sinr_comparison

    doc = load_config_doc(args.config, args.overrides)
    if args.seed is not None:
        doc["seed"] = args.seed
    valid = {"num_ues", "pilot_length", "draws", "snr_db", "backward_var",
             "seed"}
    unknown = set(doc) - valid
    if unknown:
        raise ConfigError(f"unknown sinr fields: {sorted(unknown)}")
    stats = sinr_comparison(**doc)
    if args.out:
        _dump_json(stats, args.out)
    if not args.quiet:
        width = max(len(k) for k in stats)
        for key, value in stats.items():
            print(f"{key:<{width}}  {value:.6g}")
    return 0


def cmd_oracle_check(args) -> int:
    import dataclasses

    import numpy as np

    from .airsim import (
        ScenarioConfig,
        build_effective_pilots,
        build_noise_covariance,
        generate_scenario,
        synthesize_oracle,
        synthesize_samples,
        synthesize_samples_imperfect,
    )
    from .waveform import PulseShape

    doc = load_config_doc(args.config, args.overrides)
    scenarios = int(doc.pop("scenarios", 5))
    grid_step = float(doc.pop("grid_step", 1e-4))
    tolerance = float(doc.pop("tolerance", 1e-6))
    defaults = dict(num_ues=4, num_antennas=2, pilot_length=8,
                    activation_prob=1.0, snr_db=10.0, seed=0)
    defaults.update(doc)
    if args.seed is not None:
        defaults["seed"] = args.seed
    base = ScenarioConfig.from_dict(defaults)
    shape = PulseShape.rectangular()

    rng = np.random.default_rng(base.seed)
    worst_perfect = worst_imperfect = 0.0
    for _ in range(scenarios):
        cfg = dataclasses.replace(base, seed=int(rng.integers(2**63)))
        r = generate_scenario(cfg)
        cov = build_noise_covariance(r.nominal_delays, shape,
                                     cfg.pilot_length, noise_variance=0.0)
        pilots = build_effective_pilots(r, shape)
        closed = synthesize_samples(r, pilots, cov, cfg.num_antennas, seed=0)
        oracle = synthesize_oracle(r, shape, grid_step=grid_step)
        worst_perfect = max(worst_perfect,
                            float(np.max(np.abs(closed.tensor - oracle.tensor))))
        errors = rng.uniform(-0.4, 0.4, cfg.num_ues) * shape.symbol_period
        r_err = dataclasses.replace(r, actual_delays=r.nominal_delays + errors)
        closed_i = synthesize_samples_imperfect(r_err, shape, cov,
                                                cfg.num_antennas, seed=0)
        oracle_i = synthesize_oracle(r_err, shape, grid_step=grid_step)
        worst_imperfect = max(
            worst_imperfect,
            float(np.max(np.abs(closed_i.tensor - oracle_i.tensor))))

    _info(args, f"max |closed - oracle| (perfect delays):   {worst_perfect:.3e}")
    _info(args, f"max |closed - oracle| (imperfect delays): {worst_imperfect:.3e}")
    ok = worst_perfect <= tolerance and worst_imperfect <= tolerance
    if args.out:
        _dump_json({"max_error_perfect": worst_perfect,
                    "max_error_imperfect": worst_imperfect,
                    "tolerance": tolerance, "scenarios": scenarios,
                    "grid_step": grid_step, "passed": ok}, args.out)
    if not ok:
        print(f"oracle check FAILED (tolerance {tolerance:g})", file=sys.stderr)
        return 1
    _info(args, "oracle check passed")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "detect": cmd_detect,
    "sweep": cmd_sweep,
    "sinr": cmd_sinr,
    "oracle-check": cmd_oracle_check,
}


def main(argv=None) -> int:
    _apply_thread_cap()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 3
    except NumericalGuardError as exc:
        print(f"numerical guard tripped: {exc}", file=sys.stderr)
        return 4
    except GfraError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
