import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from metassd import channel as ch
from metassd.rng import RngStream


def direct_convolution(x, h):
    """Independent oracle: y_i = sum_l h_l x_{i-l}, x_{<0} = 0."""
    N, L = len(x), len(h)
    y = np.zeros(N, dtype=complex)
    for i in range(N):
        for l in range(L):
            if i - l >= 0:
                y[i] += h[l] * x[i - l]
    return y


@pytest.mark.parametrize("snr_db, expected", [(0, 1.0), (10, 0.1), (15, 0.0316228)])
def test_noise_variance_from_snr(snr_db, expected):
    assert ch.noise_variance_from_snr(snr_db) == pytest.approx(expected, abs=1e-7)


def test_exp_pdp_examples():
    assert ch.exp_pdp_profile(1, 3.7).sigma_sq == pytest.approx([1.0])
    assert ch.exp_pdp_profile(2, 0.0).sigma_sq == pytest.approx([0.5, 0.5])
    # direct evaluation: exp(-2(l-1)) / sum
    w = np.exp(-2.0 * np.arange(4))
    assert np.allclose(w / w.sum(), [0.864956, 0.117059, 0.015842, 0.002144], atol=1e-6)
    assert np.allclose(ch.exp_pdp_profile(4, 2.0).sigma_sq, w / w.sum(), atol=1e-15)


def test_exp_pdp_rejects_empty():
    with pytest.raises(ValueError):
        ch.exp_pdp_profile(0, 1.0)


@given(L=st.integers(1, 32), gamma=st.floats(0.0, 20.0))
def test_exp_pdp_normalised_and_monotone(L, gamma):
    s = ch.exp_pdp_profile(L, gamma).sigma_sq
    assert abs(s.sum() - 1.0) < 1e-12
    assert np.all(s > 0)
    assert np.all(np.diff(s) <= 0)


def test_sample_channel_reproducible():
    prof = ch.exp_pdp_profile(4, 2.0)
    a = ch.sample_channel(prof, RngStream(11))
    b = ch.sample_channel(prof, RngStream(11))
    assert a.tobytes() == b.tobytes()
    assert not np.array_equal(a, ch.sample_channel(prof, RngStream(12)))


def test_sample_channel_moments():
    prof = ch.exp_pdp_profile(4, 2.0)
    root = RngStream(5)
    taps = np.stack([ch.sample_channel(prof, root.child(k)) for k in range(100_000)])
    power = np.mean(np.abs(taps) ** 2, axis=0)
    assert np.all(np.abs(power / prof.sigma_sq - 1) < 0.05)
    assert np.all(np.abs(taps.real.mean(axis=0)) < 0.02)
    assert np.all(np.abs(taps.imag.mean(axis=0)) < 0.02)


def test_sample_symbols():
    x = ch.sample_symbols(10_000, RngStream(1))
    assert set(np.unique(x)) <= {-1.0, 1.0}
    assert abs(x.mean()) < 0.03
    assert ch.sample_symbols(1, RngStream(2))[0] in (-1.0, 1.0)
    assert np.array_equal(x, ch.sample_symbols(10_000, RngStream(1)))
    with pytest.raises(ValueError):
        ch.sample_symbols(0, RngStream(1))


def test_transmit_identity_and_delay():
    x = ch.sample_symbols(50, RngStream(3))
    assert np.array_equal(ch.transmit(x, np.array([1 + 0j]), 0.0, RngStream(0)), x)
    y = ch.transmit(np.array([1.0, -1.0, 1.0]), np.array([0, 1 + 0j]), 0.0, RngStream(0))
    assert np.array_equal(y, [0, 1, -1])


def test_transmit_matches_oracle_many():
    rng = np.random.default_rng(0)
    worst = 0.0
    for k in range(200):
        L = int(rng.integers(1, 7))
        N = int(rng.integers(1, 60))
        x = ch.sample_symbols(N, RngStream(k))
        h = ch.sample_channel(ch.exp_pdp_profile(L, 1.0), RngStream(10_000 + k))
        worst = max(worst, np.max(np.abs(ch.transmit(x, h, 0.0, RngStream(0)) - direct_convolution(x, h))))
    assert worst < 1e-12


def test_transmit_noise_power():
    N = 100_000
    x = np.ones(N)
    y = ch.transmit(x, np.array([0j]), 0.25, RngStream(4))
    assert np.mean(np.abs(y) ** 2) == pytest.approx(0.25, rel=0.02)


def test_corrupt_csi():
    h = np.array([0.9 + 0.1j, -0.3j, 0.1, 0.05 + 0.05j])
    assert np.array_equal(ch.corrupt_csi(h, 0.0, RngStream(0)), h)
    draws = np.stack([ch.corrupt_csi(h, 0.4, RngStream(0, (k,))) for k in range(100_000)])
    err = np.sum(np.abs(draws - h) ** 2, axis=1).mean()
    assert abs(err / (0.4 * 4) - 1) < 0.05
    bias = draws.mean(axis=0) - h
    assert np.all(np.abs(bias.real) < 0.02) and np.all(np.abs(bias.imag) < 0.02)


def test_make_task_defaults_and_determinism():
    cfg = ch.TaskConfig()
    assert (cfg.N, cfg.P, cfg.L, cfg.gamma) == (10_000, 100, 4, 2.0)
    small = ch.TaskConfig(N=300, P=20, L=4, sigma_n_sq=0.0)
    a = ch.make_task(small, RngStream(9))
    b = ch.make_task(small, RngStream(9))
    assert a == b
    assert np.array_equal(a.h_est, a.h_true)
    assert 0 <= a.snr_db <= 15
    assert a.noise_var == pytest.approx(10 ** (-a.snr_db / 10))


def test_make_task_rejects_bad_config():
    with pytest.raises(ValueError):
        ch.make_task(ch.TaskConfig(N=10, P=11), RngStream(0))
    with pytest.raises(ValueError):
        ch.make_task(ch.TaskConfig(L=0), RngStream(0))


def test_scenarios_share_everything_but_csi():
    base = ch.TaskConfig(N=200, P=10, L=4, snr_db=8)
    p = ch.make_task(ch.with_scenario(base, "perfect"), RngStream(77))
    n = ch.make_task(ch.with_scenario(base, "noisy"), RngStream(77))
    assert np.array_equal(p.y, n.y) and np.array_equal(p.x, n.x)
    assert np.array_equal(p.h_est, p.h_true)
    assert not np.array_equal(n.h_est, n.h_true)


def test_snr_uniform_over_integer_grid():
    cfg = ch.TaskConfig(N=4, P=0, L=2)
    snrs = [t.snr_db for t in ch.make_task_set(cfg, 0, 2000)]
    counts = np.bincount(snrs, minlength=16)
    assert len(counts) == 16 and counts.min() > 80


def test_child_streams_order_independent():
    cfg = ch.TaskConfig(N=50, P=5, L=3)
    forward = ch.make_task_set(cfg, 3, 6)
    seeds = [ch.task_seed(3, 0, t) for t in range(6)]
    backward = [ch.make_task(cfg, RngStream(s)) for s in reversed(seeds)][::-1]
    assert forward == backward
    assert len(set(seeds)) == 6


def test_task_set_round_trip(tmp_path):
    cfg = ch.TaskConfig(N=64, P=8, L=3, sigma_n_sq=0.4)
    tasks = ch.make_task_set(cfg, 5, 4)
    path = tmp_path / "tasks.mssd"
    ch.save_task_set(tasks, path, cfg, seed=5)
    assert path.read_bytes()[:4] == b"MSSD"
    assert ch.load_task_set(path) == tasks
    manifest = ch.load_manifest(path)
    assert manifest["count"] == 4 and manifest["root_seed"] == 5
    assert manifest["seeds"] == [t.seed for t in tasks]
    assert manifest["config"]["sigma_n_sq"] == 0.4


def test_task_set_rejects_garbage(tmp_path):
    path = tmp_path / "bad.mssd"
    path.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(ValueError):
        ch.load_task_set(path)


@settings(max_examples=50)
@given(seed=st.integers(0, 2**64 - 1), idx=st.integers(0, 1000))
def test_rng_streams_bit_identical(seed, idx):
    a = RngStream(seed).child(idx).normal(size=5)
    b = RngStream(seed, (idx,)).normal(size=5)
    assert a.tobytes() == b.tobytes()
