"""Tests for scenario generation and matched-filter sample synthesis."""

import dataclasses

import numpy as np
import pytest

from gfra.airsim import (
    NoiseCovariance,
    ScenarioConfig,
    build_effective_pilots,
    build_noise_covariance,
    draw_correlated_noise,
    generate_scenario,
    synthesize_oracle,
    synthesize_samples,
    synthesize_samples_imperfect,
)
from gfra.errors import ConfigError, ContractViolation, SizeLimitError
from gfra.waveform import PulseShape

RECT = PulseShape.rectangular()


def make_config(**kwargs):
    base = dict(num_ues=3, num_antennas=2, pilot_length=6,
                activation_prob=0.5, snr_db=10.0, seed=1234)
    base.update(kwargs)
    return ScenarioConfig(**base)


def make_noiseless(realization, num_antennas, pilot_length):
    cov = build_noise_covariance(realization.nominal_delays, RECT,
                                 pilot_length, noise_variance=0.0)
    return cov


class TestScenarioConfig:
    def test_json_round_trip(self):
        cfg = make_config(delay_model="explicit", delays=[0.1, 0.2, 0.3])
        assert ScenarioConfig.from_json(cfg.to_json()) == cfg

    def test_noise_variance_from_snr(self):
        assert make_config(snr_db=10.0).noise_variance == pytest.approx(0.1)
        assert make_config(snr_db=0.0).noise_variance == pytest.approx(1.0)

    @pytest.mark.parametrize("bad", [
        dict(num_ues=0), dict(num_antennas=0), dict(pilot_length=1),
        dict(activation_prob=1.5), dict(delay_error_sigma=-0.1),
        dict(delay_model="nope"), dict(pilot_model="nope"),
        dict(delay_model="explicit"), dict(delays=[0.1, 0.2, 0.3]),
        dict(seed=-1),
    ])
    def test_validation(self, bad):
        with pytest.raises(ConfigError):
            make_config(**bad)

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError):
            ScenarioConfig.from_dict({**make_config().to_dict(), "bogus": 1})


class TestGenerateScenario:
    def test_deterministic_in_seed(self):
        a = generate_scenario(make_config())
        b = generate_scenario(make_config())
        np.testing.assert_array_equal(a.pilots, b.pilots)
        np.testing.assert_array_equal(a.nominal_delays, b.nominal_delays)
        np.testing.assert_array_equal(a.actual_delays, b.actual_delays)
        np.testing.assert_array_equal(a.activity, b.activity)
        np.testing.assert_array_equal(a.gains, b.gains)

    def test_inactive_scenario_has_zero_channel(self):
        r = generate_scenario(make_config(activation_prob=0.0))
        assert np.all(r.activity == 0)
        assert np.all(r.effective_channel == 0)

    def test_gain_second_moment(self):
        r = generate_scenario(make_config(num_ues=1000, activation_prob=1.0))
        assert np.mean(np.abs(r.gains) ** 2) == pytest.approx(1.0, abs=0.02)

    def test_pilot_second_moment(self):
        r = generate_scenario(make_config(num_ues=500, pilot_length=50))
        assert np.mean(np.abs(r.pilots) ** 2) == pytest.approx(1.0, abs=0.02)

    def test_gains_circularly_symmetric(self):
        # vanishing pseudo-variance is what makes the carrier phase
        # exp(-j 2 pi f_c tau) absorbable into the gains
        r = generate_scenario(make_config(num_ues=2000, num_antennas=4))
        assert abs(np.mean(r.gains**2)) < 0.03

    def test_delays_sorted_and_folded(self):
        r = generate_scenario(make_config(num_ues=50))
        assert np.all(np.diff(r.nominal_delays) >= 0)
        assert r.nominal_delays[0] >= 0 and r.nominal_delays[-1] < 1.0

    def test_explicit_delays_fold_modulo_symbol(self):
        cfg = make_config(delay_model="explicit", delays=[1.5, 0.2, 2.1])
        r = generate_scenario(cfg)
        np.testing.assert_allclose(r.nominal_delays, [0.1, 0.2, 0.5])

    def test_unit_modulus_pilots(self):
        r = generate_scenario(make_config(pilot_model="unit_modulus_random_phase"))
        np.testing.assert_allclose(np.abs(r.pilots), 1.0, atol=1e-12)

    def test_delay_errors_scale(self):
        cfg = make_config(num_ues=4000, delay_error_sigma=0.05)
        r = generate_scenario(cfg)
        errs = r.actual_delays - r.nominal_delays
        assert np.std(errs) == pytest.approx(0.05, rel=0.1)


class TestEffectivePilots:
    def test_diagonal_alignment(self):
        r = generate_scenario(make_config(num_ues=5))
        eff = build_effective_pilots(r, RECT)
        for k in range(5):
            np.testing.assert_allclose(eff.stack[k, :, k], r.pilots[:, k])

    def test_equal_delays_degenerate_to_raw_pilots(self):
        cfg = make_config(delay_model="explicit", delays=[0.3, 0.3, 0.3])
        r = generate_scenario(cfg)
        eff = build_effective_pilots(r, RECT)
        for k in range(3):
            np.testing.assert_allclose(eff.stack[k], r.pilots, atol=1e-12)

    def test_two_ue_hand_value(self):
        # filter of the first user, second user 0.25 later with pilots
        # [1, -1]: the sample-2 window overlaps the second user's symbol 2
        # for 0.75 of a period and its symbol 1 for the remaining 0.25, so
        # pbar[l=2] = p^1 rho(0.75) + p^2 rho(0.25) = 0.25 - 0.75 = -0.5
        # (confirmed against the continuous-time quadrature oracle)
        cfg = make_config(num_ues=2, pilot_length=2, delay_model="explicit",
                          delays=[0.0, 0.25])
        r = generate_scenario(cfg)
        r.pilots[:, 1] = [1.0, -1.0]
        eff = build_effective_pilots(r, RECT)
        assert eff.stack[0, 1, 1] == pytest.approx(-0.5, abs=1e-12)
        # first sample sees only p^1 rho(0.25): the previous symbol is empty
        assert eff.stack[0, 0, 1] == pytest.approx(0.75, abs=1e-12)

    def test_guard_interval_zero_padding(self):
        cfg = make_config(num_ues=2, pilot_length=4, delay_model="explicit",
                          delays=[0.0, 0.4])
        r = generate_scenario(cfg)
        eff = build_effective_pilots(r, RECT)
        # first sample of the earlier filter watching the later user: the
        # previous symbol p^0 does not exist, only p^1 rho(0.4) remains
        assert eff.stack[0, 0, 1] == pytest.approx(r.pilots[0, 1] * 0.6, abs=1e-12)
        # last sample of the later filter watching the earlier user: the
        # next symbol p^(L_p+1) does not exist, only p^L rho(0.4) remains
        assert eff.stack[1, -1, 0] == pytest.approx(r.pilots[-1, 0] * 0.6, abs=1e-12)

    def test_unsorted_delays_rejected(self):
        r = generate_scenario(make_config())
        bad = dataclasses.replace(r, nominal_delays=r.nominal_delays[::-1].copy())
        if np.all(np.diff(bad.nominal_delays) >= 0):  # degenerate draw
            pytest.skip("draw produced constant delays")
        with pytest.raises(ContractViolation):
            build_effective_pilots(bad, RECT)

    def test_relative_delay_above_symbol_rejected(self):
        r = generate_scenario(make_config())
        spread = np.linspace(0.0, 1.2, r.num_ues)
        bad = dataclasses.replace(r, nominal_delays=spread)
        with pytest.raises(ContractViolation):
            build_effective_pilots(bad, RECT)


class TestNoiseCovariance:
    def test_single_filter_is_identity(self):
        cov = build_noise_covariance([0.4], RECT, 5)
        np.testing.assert_allclose(cov.matrix, np.eye(5), atol=1e-12)

    def test_two_filter_hand_values(self):
        cov = build_noise_covariance([0.0, 0.25], RECT, 3)
        L = 3
        for l in range(L):
            assert cov.matrix[L + l, l] == pytest.approx(0.75)
            assert cov.matrix[l, L + l] == pytest.approx(0.75)
        for l in range(L - 1):
            assert cov.matrix[L + l, l + 1] == pytest.approx(0.25)
        # everything outside the specified pattern stays zero
        assert cov.matrix[0, 2] == 0.0       # same filter, two samples apart
        assert cov.matrix[L + 1, 0] == 0.0   # cross filter, sample offset -1
        assert cov.matrix[L + 2, 0] == 0.0

    def test_unit_diagonal_symmetric_psd(self):
        rng = np.random.default_rng(3)
        for _ in range(10):
            K = rng.integers(2, 6)
            delays = np.sort(rng.uniform(0, 1, K))
            cov = build_noise_covariance(delays, RECT, 4)
            np.testing.assert_allclose(np.diag(cov.matrix), 1.0)
            np.testing.assert_allclose(cov.matrix, cov.matrix.T)
            assert np.linalg.eigvalsh(cov.matrix).min() >= -1e-9

    def test_relative_delay_above_symbol_rejected(self):
        with pytest.raises(ContractViolation):
            build_noise_covariance([0.0, 1.2], RECT, 4)


class TestDrawCorrelatedNoise:
    def test_white_case_uncorrelated(self):
        cov = build_noise_covariance([0.2], RECT, 2, noise_variance=1.0)
        noise = draw_correlated_noise(cov, 100_000, seed=5)
        stacked = noise.transpose(0, 2, 1).reshape(100_000, 2)
        emp = (stacked.conj().T @ stacked) / 100_000
        assert abs(emp[0, 1]) < 0.02
        assert emp[0, 0].real == pytest.approx(1.0, abs=0.02)

    def test_correlated_case_matches_structure(self):
        cov = build_noise_covariance([0.0, 0.25], RECT, 3, noise_variance=1.0)
        noise = draw_correlated_noise(cov, 100_000, seed=6)
        stacked = noise.transpose(0, 2, 1).reshape(100_000, 6)
        emp = np.real((stacked.conj().T @ stacked) / 100_000)
        np.testing.assert_allclose(emp, cov.matrix, atol=0.02)

    def test_scaled_by_noise_variance(self):
        cov = build_noise_covariance([0.0, 0.25], RECT, 3, noise_variance=0.25)
        noise = draw_correlated_noise(cov, 50_000, seed=7)
        assert np.mean(np.abs(noise) ** 2) == pytest.approx(0.25, abs=0.01)

    def test_zero_variance_gives_zeros(self):
        cov = build_noise_covariance([0.0, 0.25], RECT, 3, noise_variance=0.0)
        noise = draw_correlated_noise(cov, 4, seed=8)
        assert np.all(noise == 0)

    def test_deterministic_in_seed(self):
        cov = build_noise_covariance([0.0, 0.3], RECT, 4, noise_variance=1.0)
        a = draw_correlated_noise(cov, 3, seed=9)
        b = draw_correlated_noise(cov, 3, seed=9)
        np.testing.assert_array_equal(a, b)

    def test_degenerate_equal_delays_still_factorizes(self):
        # coincident filters make the correlation rank-deficient; the
        # jittered factorization must still deliver the right structure
        cov = build_noise_covariance([0.2, 0.2], RECT, 2, noise_variance=1.0)
        noise = draw_correlated_noise(cov, 20_000, seed=10)
        same_l = np.real(np.mean(noise[:, 0, 0] * np.conj(noise[:, 0, 1])))
        assert same_l == pytest.approx(1.0, abs=0.03)


def noiseless_setup(num_ues, pilot_length, seed, num_antennas=2, **kwargs):
    cfg = make_config(num_ues=num_ues, pilot_length=pilot_length, seed=seed,
                      num_antennas=num_antennas, activation_prob=1.0, **kwargs)
    r = generate_scenario(cfg)
    cov = build_noise_covariance(r.nominal_delays, RECT, pilot_length,
                                 noise_variance=0.0)
    return r, cov


class TestSynthesizeSamples:
    def test_single_ue_zero_delay_recovers_pilot(self):
        cfg = make_config(num_ues=1, pilot_length=4, activation_prob=1.0,
                          delay_model="explicit", delays=[0.0])
        r = generate_scenario(cfg)
        cov = build_noise_covariance(r.nominal_delays, RECT, 4, noise_variance=0.0)
        eff = build_effective_pilots(r, RECT)
        out = synthesize_samples(r, eff, cov, r.num_antennas, seed=0)
        expected = np.einsum("m,l->ml", r.gains[0], r.pilots[:, 0])
        np.testing.assert_allclose(out.tensor[:, :, 0], expected, atol=1e-12)

    def test_equal_delays_reduce_to_synchronous_case(self):
        cfg = make_config(num_ues=3, pilot_length=5, activation_prob=1.0,
                          delay_model="explicit", delays=[0.3, 0.3, 0.3])
        r = generate_scenario(cfg)
        cov = build_noise_covariance(r.nominal_delays, RECT, 5, noise_variance=0.0)
        eff = build_effective_pilots(r, RECT)
        out = synthesize_samples(r, eff, cov, r.num_antennas, seed=0)
        sync = np.einsum("lk,km->ml", r.pilots, r.effective_channel)
        for k in range(3):
            np.testing.assert_allclose(out.tensor[:, :, k], sync, atol=1e-12)

    def test_matches_oracle_on_random_asynchronous_instance(self):
        r, cov = noiseless_setup(num_ues=3, pilot_length=6, seed=42)
        eff = build_effective_pilots(r, RECT)
        closed = synthesize_samples(r, eff, cov, r.num_antennas, seed=0)
        oracle = synthesize_oracle(r, RECT, grid_step=1e-4)
        assert np.max(np.abs(closed.tensor - oracle.tensor)) <= 1e-6

    def test_imperfect_delay_path_rejected(self):
        r, cov = noiseless_setup(3, 6, seed=1, delay_error_sigma=0.05)
        eff = build_effective_pilots(r, RECT)
        with pytest.raises(ContractViolation):
            synthesize_samples(r, eff, cov, r.num_antennas, seed=0)


class TestSynthesizeImperfect:
    def test_zero_error_identical_to_perfect_path(self):
        r, cov = noiseless_setup(3, 6, seed=11)
        cov = build_noise_covariance(r.nominal_delays, RECT, 6, noise_variance=0.1)
        eff = build_effective_pilots(r, RECT)
        perfect = synthesize_samples(r, eff, cov, r.num_antennas, seed=3)
        imperfect = synthesize_samples_imperfect(r, RECT, cov, r.num_antennas, seed=3)
        np.testing.assert_array_equal(perfect.tensor, imperfect.tensor)

    def test_half_symbol_error_splits_energy_evenly(self):
        # at |error| = T_s/2 the own pilot and its shifted copy both carry
        # rho = 0.5 (boundary of the filter-mismatch regime)
        cfg = make_config(num_ues=1, pilot_length=4, activation_prob=1.0,
                          delay_model="explicit", delays=[0.1])
        r = generate_scenario(cfg)
        r = dataclasses.replace(r, actual_delays=r.nominal_delays + 0.5)
        cov = build_noise_covariance(r.nominal_delays, RECT, 4, noise_variance=0.0)
        out = synthesize_samples_imperfect(r, RECT, cov, r.num_antennas, seed=0)
        p, g = r.pilots[:, 0], r.gains[0]
        shifted = np.concatenate([[0.0], p[:-1]])
        expected = np.einsum("m,l->ml", g, 0.5 * p + 0.5 * shifted)
        np.testing.assert_allclose(out.tensor[:, :, 0], expected, atol=1e-9)

    def test_matches_oracle_with_bounded_errors(self):
        rng = np.random.default_rng(21)
        for trial in range(5):
            r, cov = noiseless_setup(3, 6, seed=100 + trial)
            errors = rng.uniform(-0.4, 0.4, 3)
            r = dataclasses.replace(r, actual_delays=r.nominal_delays + errors)
            closed = synthesize_samples_imperfect(r, RECT, cov, r.num_antennas, seed=0)
            oracle = synthesize_oracle(r, RECT, grid_step=1e-4)
            assert np.max(np.abs(closed.tensor - oracle.tensor)) <= 1e-6

    def test_large_error_falls_back_to_oracle(self):
        r, cov = noiseless_setup(2, 4, seed=31)
        errors = np.array([0.8, -0.1])
        r = dataclasses.replace(r, actual_delays=r.nominal_delays + errors)
        out = synthesize_samples_imperfect(r, RECT, cov, r.num_antennas, seed=0)
        oracle = synthesize_oracle(r, RECT, grid_step=1e-4)
        np.testing.assert_allclose(out.tensor, oracle.tensor, atol=1e-9)


class TestSynthesizeOracle:
    def test_all_inactive_gives_zero(self):
        cfg = make_config(activation_prob=0.0)
        r = generate_scenario(cfg)
        out = synthesize_oracle(r, RECT, grid_step=1e-3)
        assert np.all(out.tensor == 0)

    def test_single_ue_zero_delay_exact(self):
        cfg = make_config(num_ues=1, pilot_length=4, activation_prob=1.0,
                          delay_model="explicit", delays=[0.0])
        r = generate_scenario(cfg)
        out = synthesize_oracle(r, RECT, grid_step=1e-4)
        expected = np.einsum("m,l->ml", r.gains[0], r.pilots[:, 0])
        np.testing.assert_allclose(out.tensor[:, :, 0], expected, atol=1e-9)

    def test_memory_guard(self):
        r, _ = noiseless_setup(4, 8, seed=41)
        with pytest.raises(SizeLimitError):
            synthesize_oracle(r, RECT, grid_step=1e-9)

    def test_supplied_noise_added(self):
        r, _ = noiseless_setup(2, 4, seed=51)
        noise = np.full((2, 4, 2), 1.0 + 2.0j)
        out = synthesize_oracle(r, RECT, grid_step=1e-3, noise=noise)
        base = synthesize_oracle(r, RECT, grid_step=1e-3)
        np.testing.assert_allclose(out.tensor - base.tensor, noise)


class TestOracleEquivalenceProperty:
    def test_randomized_noiseless_agreement(self):
        # closed form vs continuous-time quadrature across random scenarios
        rng = np.random.default_rng(77)
        worst = 0.0
        for trial in range(10):
            K = int(rng.integers(2, 5))
            L = int(rng.integers(3, 9))
            cfg = make_config(num_ues=K, pilot_length=L, activation_prob=1.0,
                              seed=int(rng.integers(2**32)))
            r = generate_scenario(cfg)
            cov = build_noise_covariance(r.nominal_delays, RECT, L,
                                         noise_variance=0.0)
            eff = build_effective_pilots(r, RECT)
            closed = synthesize_samples(r, eff, cov, r.num_antennas, seed=0)
            oracle = synthesize_oracle(r, RECT, grid_step=1e-4)
            worst = max(worst, np.max(np.abs(closed.tensor - oracle.tensor)))
        assert worst <= 1e-6
