from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ascon_sca import ascon_core as ac
from ascon_sca import trace_sim as ts_mod
from ascon_sca.trace_sim import SimConfig, simulate_campaign, synth_trace

KEY = 0x000102030405060708090A0B0C0D0E0F


def small(**kw):
    base = dict(num_encryptions=8, samples_per_clock=20, sbox_count=4, baseline_amplitude=1.0)
    base.update(kw)
    return SimConfig(**base)


def test_trace_length_invariant():
    cfg = small()
    ts = simulate_campaign(cfg, KEY)
    assert ts.samples.shape == (8, cfg.sbox_count * cfg.samples_per_clock)


def test_msb_poi_equals_baseline_plus_scaled_leakage():
    cfg = small(leakage_kind="msb", leakage_scale=2.5)
    ts = simulate_campaign(cfg, KEY)
    base = ts_mod.baseline_cycle(cfg)
    xs = ts_mod.sensitive_values(ts)
    for j in range(len(ts)):
        for i in range(cfg.sbox_count):
            poi = i * cfg.samples_per_clock + cfg.samples_per_clock // 2
            expect = base[cfg.samples_per_clock // 2] + 2.5 * (int(xs[j, i]) >> 4)
            assert ts.samples[j, poi] == pytest.approx(expect, abs=1e-6)


def test_equal_hamming_weights_give_identical_traces():
    cfg = small(sbox_count=1)
    # S-box 0 sees (iv_0, k_0, k_64, n_0, n_64); find two nonces with equal Hw outputs
    iv0 = ac.word_bit(ac.iv_bits(), 0)
    kb = ac.key_pair_bits(KEY, 0)
    by_hw = {}
    for z in range(4):
        x = ac.sensitive_data((z >> 1, z & 1), kb, iv0)
        by_hw.setdefault(bin(x).count("1"), []).append(z)
    pair = next(v for v in by_hw.values() if len(v) >= 2)
    nonces = [(z >> 1) << 127 | (z & 1) << 63 for z in pair[:2]]
    rng = np.random.default_rng(0)
    t0 = synth_trace(KEY, nonces[0], cfg, rng).samples
    t1 = synth_trace(KEY, nonces[1], cfg, rng).samples
    np.testing.assert_array_equal(t0, t1)


def test_noisy_mean_converges_to_noiseless():
    cfg = small(sbox_count=1, noise_sigma=0.7)
    nonce = 0x1234 << 64
    clean = synth_trace(KEY, nonce, replace(cfg, noise_sigma=0.0), np.random.default_rng(0)).samples
    rng = np.random.default_rng(5)
    acc = np.mean([synth_trace(KEY, nonce, cfg, rng).samples for _ in range(10000)], axis=0)
    poi = cfg.samples_per_clock // 2
    assert abs(acc[poi] - clean[poi]) < 5 * 0.7 / np.sqrt(10000)


def test_same_seed_bit_identical():
    cfg = small(noise_sigma=0.3, jitter_max=2)
    a = simulate_campaign(cfg, KEY)
    b = simulate_campaign(cfg, KEY)
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.nonces, b.nonces)


def test_partitioned_generation_matches_serial():
    cfg = small(num_encryptions=10, noise_sigma=0.3, jitter_max=3)
    full = simulate_campaign(cfg, KEY)
    part = simulate_campaign(cfg, KEY, indices=[7, 2, 9])
    np.testing.assert_array_equal(part.samples, full.samples[[7, 2, 9]])
    np.testing.assert_array_equal(part.nonces, full.nonces[[7, 2, 9]])


def test_zero_encryptions_gives_empty_set_with_metadata():
    ts = simulate_campaign(small(num_encryptions=0), KEY)
    assert len(ts) == 0
    assert ts.config["sim"]["num_encryptions"] == 0
    assert ts.ground_truth_key == KEY


def test_nonce_bit_bias_small():
    cfg = SimConfig(num_encryptions=40000, samples_per_clock=2, sbox_count=1)
    ts = simulate_campaign(cfg, KEY)
    bits = np.unpackbits(ts.nonces, axis=1).mean(axis=0)
    assert np.abs(bits - 0.5).max() < 0.02


def test_jitter_preserves_poi_multiset():
    cfg = small(num_encryptions=30, samples_per_clock=21, leakage_kind="msb", leakage_scale=5.0, baseline_amplitude=0.0)
    still = simulate_campaign(cfg, KEY)
    shaken = simulate_campaign(replace(cfg, jitter_max=4), KEY)
    for j in range(len(still)):
        a = np.sort(still.samples[j][still.samples[j] != 0])
        b = np.sort(shaken.samples[j][shaken.samples[j] != 0])
        np.testing.assert_array_equal(a, b)


def test_smeared_leakage_uses_triangular_weights():
    cfg = small(num_encryptions=1, sbox_count=1, leakage_kind="msb", smear_width=2, baseline_amplitude=0.0,
                samples_per_clock=21)
    t = simulate_campaign(cfg, KEY)
    x = int(ts_mod.sensitive_values(t)[0, 0])
    amp = x >> 4
    np.testing.assert_allclose(t.samples[0, 8:13], amp * np.array([1 / 3, 2 / 3, 1, 2 / 3, 1 / 3]), atol=1e-6)


@pytest.mark.parametrize("bad", [
    dict(samples_per_clock=0), dict(noise_sigma=-1.0), dict(jitter_max=10), dict(leakage_kind="hd"),
    dict(sbox_count=65), dict(leakage_kind="nnf"), dict(smear_width=10),
])
def test_invalid_config_rejected(bad):
    with pytest.raises(ValueError):
        small(**bad).validate()


def test_nnf_leakage_table_matches_coefficients():
    from ascon_sca.leakage_est import hamming_weight_model

    coeffs = tuple(hamming_weight_model().coefficients)
    cfg = SimConfig(leakage_kind="nnf", leakage_coefficients=coeffs)
    np.testing.assert_allclose(ts_mod.leakage_table(cfg), [bin(x).count("1") for x in range(32)])


def test_noise_for_snr_oracle():
    # Hw over uniform X has variance 5/4
    assert ts_mod.noise_for_snr(0.0, "hw") == pytest.approx(np.sqrt(1.25))
    assert ts_mod.noise_for_snr(10.0, "msb") == pytest.approx(np.sqrt(0.25 / 10))


@given(st.integers(-5, 5))
def test_shift_edge_keeps_length_and_interior(shift):
    t = np.arange(20, dtype=float)
    s = ts_mod.shift_edge(t, shift)
    assert len(s) == 20
    if shift >= 0:
        np.testing.assert_array_equal(s[shift:], t[:20 - shift])
    else:
        np.testing.assert_array_equal(s[:20 + shift], t[-shift:])


def test_config_roundtrip():
    cfg = small(leakage_kind="nnf", leakage_coefficients=tuple(range(32)))
    assert SimConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        SimConfig.from_dict({"bogus": 1})
