import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rfbss.chipmodel import ChipConfig, new_chip
from rfbss.metrics import (
    DBM_OFFSET,
    SIR_CAP_DB,
    amari_index,
    attenuation_db,
    bandwidth_3db,
    compression_test,
    db,
    im3_test,
    noise_floor,
    power_spectrum,
    separation_dbc,
    sir_from_global,
    sir_matrix,
    tone_power,
)
from rfbss.mixing import complex_to_real8, steering_matrix
from rfbss.signalgen import dbm_to_vpp, gen_tone

FS = 100e6


def _sine(vpp, freq, n, fs=FS):
    return (vpp / 2) * np.cos(2 * np.pi * freq * np.arange(n) / fs)


# ---------------------------------------------------------------- spectra


def test_spectrum_single_peak():
    x = _sine(1.0, 4e6, 4 * 8192)
    sp = power_spectrum(x, FS, nfft=8192)
    assert sp.peak_frequency() == pytest.approx(4e6, abs=sp.df)
    # clear of the Hann main lobe (off-bin tone) everything is below the first sidelobe
    far = np.abs(sp.freqs - 4e6) > 3 * sp.df
    assert sp.power_db[far].max() < sp.power_db.max() - 31
    assert np.all(np.diff(sp.freqs) > 0)


def test_full_scale_sine_calibration():
    # 1 Vpp: 0.125 V^2 -> -9.03 dBV -> 4 dBm in 50 ohm
    sp = power_spectrum(_sine(1.0, 1e6 + 1234.5, 200_000), FS, nfft=65536)
    p = db(tone_power(sp, 1e6 + 1234.5))
    assert p == pytest.approx(-9.03, abs=0.1)
    assert p + DBM_OFFSET == pytest.approx(4.0, abs=0.1)


@pytest.mark.parametrize("dbm", [-24, -10, 4])
def test_calibration_closes_loop_with_dbm(dbm):
    s = gen_tone(2.5e6, dbm_to_vpp(dbm), 2e-3, FS)
    sp = power_spectrum(s.i_samples, FS, nfft=65536)
    assert db(tone_power(sp, 2.5e6)) + DBM_OFFSET == pytest.approx(dbm, abs=0.1)


@pytest.mark.parametrize("complex_input", [False, True])
def test_parseval(complex_input):
    rng = np.random.default_rng(0)
    x = rng.normal(size=200_000)
    if complex_input:
        x = x + 1j * rng.normal(size=x.size)
    sp = power_spectrum(x, FS, nfft=4096)
    assert sp.total_power() == pytest.approx(np.mean(np.abs(x) ** 2), rel=0.01)


def test_spectrum_rejections():
    with pytest.raises(ValueError, match="power of two"):
        power_spectrum(np.zeros(10000), FS, nfft=1000)
    with pytest.raises(ValueError, match="shorter"):
        power_spectrum(np.zeros(100), FS, nfft=4096)


# ---------------------------------------------------------------- separation


def _tone_channels(gains, n=131072, freq=4e6):
    z = 0.1 * np.exp(2j * np.pi * freq * np.arange(n) / FS)
    return np.column_stack([g * z for g in gains])


def test_separation_constructed_ratio():
    Y = _tone_channels([0.01, 1.0, 0.01, 0.01])
    rep = separation_dbc(Y, 2, (3.95e6, 4.05e6), fs=FS)
    assert rep.separation_dbc == pytest.approx(40.0, abs=0.2)
    assert rep.separation_dbc == rep.target_power_db - rep.worst_other_db
    assert separation_dbc(Y, None, (3.95e6, 4.05e6), fs=FS).target_channel == 2


def test_separation_degenerate_case():
    rep = separation_dbc(_tone_channels([0.0, 1.0, 0.0, 0.0]), 2, (3.95e6, 4.05e6), fs=FS)
    assert rep.separation_dbc > 100
    assert rep.in_channel_sfdr_dbc > 100


def test_separation_empty_band_rejected():
    with pytest.raises(ValueError):
        separation_dbc(_tone_channels([1, 0, 0, 0]), 1, (4e6, 4e6), fs=FS)


# ---------------------------------------------------------------- SIR / Amari


def test_sir_exact_inverse_is_capped():
    A = steering_matrix([-40.0, -10.0, 15.0, 45.0])
    W = np.linalg.inv(A.real_form)
    perm, sir, _ = sir_matrix(W, A)
    assert perm == [0, 1, 2, 3]
    assert sir == [SIR_CAP_DB] * 4


def test_sir_recovers_permutation():
    G = np.eye(4)[[2, 0, 3, 1]] * np.array([1.0, 2.0, 0.5, 3.0])[:, None]
    perm, sir = sir_from_global(G)
    assert perm == [2, 0, 3, 1]
    assert sir == [SIR_CAP_DB] * 4


def test_sir_two_by_two():
    _, sir = sir_from_global(np.array([[1.0, 0.1], [0.1, 1.0]]))
    np.testing.assert_allclose(sir, 20.0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.permutations(range(4)), arrays(float, (4, 4), elements=st.floats(0.0, 0.3)))
def test_sir_assignment_is_row_argmax_when_dominant(perm, off):
    G = off.copy()
    for i, j in enumerate(perm):
        G[i, j] = 1.0 + off[i, j]
    assert sir_from_global(G)[0] == list(np.argmax(G, axis=1))


def test_sir_matrix_complex_fold():
    A = steering_matrix([-40.0, -10.0, 15.0, 45.0])
    W = complex_to_real8(np.linalg.inv(A.complex_entries)[[1, 0, 3, 2]])
    perm, _, G = sir_matrix(W, A)
    assert perm == [1, 0, 3, 2]
    np.testing.assert_allclose(np.abs(G), np.eye(4)[[1, 0, 3, 2]], atol=1e-12)


def test_amari_examples():
    assert amari_index(np.eye(4)) == 0.0
    P = np.eye(4)[[3, 1, 0, 2]] * np.array([2.0, -0.5, 1j, 7.0])
    assert amari_index(P) == pytest.approx(0.0, abs=1e-12)
    assert amari_index(np.ones((4, 4))) == pytest.approx(1.0, abs=1e-15)


def test_amari_zero_row_rejected():
    G = np.eye(4)
    G[2] = 0
    with pytest.raises(ValueError):
        amari_index(G)


unit = st.floats(-np.pi, np.pi).map(lambda t: np.exp(1j * t))
positive = st.lists(st.floats(0.1, 10.0), min_size=4, max_size=4)
matrices = arrays(float, (4, 4), elements=st.floats(-5, 5)).filter(
    lambda G: np.all(np.abs(G).max(axis=0) > 0) and np.all(np.abs(G).max(axis=1) > 0)
)


@settings(max_examples=200, deadline=None)
@given(
    matrices,
    st.permutations(range(4)),
    st.permutations(range(4)),
    st.lists(unit, min_size=4, max_size=4),
    st.lists(unit, min_size=4, max_size=4),
)
def test_amari_invariance(G, p1, p2, d1, d2):
    # invariant to permutations and unit-modulus (sign/phase) scalings
    H = np.diag(d1) @ np.eye(4)[list(p1)] @ G @ np.eye(4)[list(p2)] @ np.diag(d2)
    assert amari_index(H) == pytest.approx(amari_index(G), abs=1e-10)
    assert 0.0 <= amari_index(G) <= 1.0 + 1e-12


@settings(max_examples=100, deadline=None)
@given(st.permutations(range(4)), positive, positive)
def test_amari_zero_for_any_scaled_permutation(p, d1, d2):
    G = np.diag(d1) @ np.eye(4)[list(p)] @ np.diag(d2)
    assert amari_index(G) == pytest.approx(0.0, abs=1e-12)


def test_amari_not_invariant_to_general_rescaling():
    # row scaling changes the column terms: the metric is a scale-sensitive
    # summary away from a scaled permutation
    G = np.array([[1.0, 1.0], [0.0, 1.0]])
    assert amari_index(G) == pytest.approx(0.5)
    assert amari_index(np.diag([1.0, 10.0]) @ G) == pytest.approx(0.275)


# ---------------------------------------------------------------- chip characterization


@pytest.fixture(scope="module")
def nominal():
    return new_chip(ChipConfig())


def test_im3_linear_path_below_floor():
    chip = new_chip(ChipConfig(a3=0.0, noise_vrms=0.0))
    assert im3_test(chip, 1e6, 1.1e6, 1.0) <= -100


def test_im3_calibrated(nominal):
    assert im3_test(nominal, 1e6, 1.1e6, 1.0) == pytest.approx(-63.0, abs=1.0)


def test_im3_slope_law():
    chip = new_chip(ChipConfig(noise_vrms=0.0))
    drives = 10 ** (-np.arange(0, 21, 5) / 20)  # 20 dB sweep
    im3 = np.array([im3_test(chip, 1e6, 1.1e6, v) for v in drives])
    # 2 dB of dBc per dB of drive; halving the drive is -12 dB
    np.testing.assert_allclose(np.diff(im3), -10.0, atol=0.5)
    half = im3_test(chip, 1e6, 1.1e6, 0.5)
    assert im3[0] - half == pytest.approx(12.0, abs=0.5)


def test_im3_rejections(nominal):
    with pytest.raises(ValueError):
        im3_test(nominal, 1e6, 1e6, 1.0)
    with pytest.raises(ValueError, match="collide"):
        im3_test(nominal, 1e6, 1.001e6, 1.0)


def test_compression_examples(nominal):
    assert compression_test(new_chip(ChipConfig(a3=0.0)), 1e6, 1.0) == pytest.approx(0.0, abs=0.01)
    assert abs(compression_test(nominal, 1e6, 1.0)) < 0.1
    comp = [compression_test(nominal, 1e6, v) for v in (0.25, 0.5, 1.0, 2.0)]
    assert np.all(np.diff(np.abs(comp)) > 0)


def test_bandwidth_passthrough(nominal):
    assert bandwidth_3db(nominal, "passthrough") == pytest.approx(15.4e6, rel=0.02)


def test_bandwidth_six_pole(nominal):
    assert bandwidth_3db(nominal, "six_pole") == pytest.approx(6.5e6, rel=0.02)


def test_bandwidth_self_consistent_wideband():
    # pole at half the Nyquist frequency of the probe rate
    chip = new_chip(ChipConfig.ideal(passthrough_bw=25e6))
    assert bandwidth_3db(chip, "passthrough", fs=FS) == pytest.approx(25e6, rel=0.02)


def test_attenuation_at_twice_cutoff(nominal):
    analog = 10 * np.log10(1 + 2.0**12)
    assert attenuation_db(nominal, 13e6, "six_pole", fs=400e6) == pytest.approx(analog, abs=1.0)
    with pytest.raises(ValueError):
        attenuation_db(nominal, 300e6, "six_pole", fs=400e6)


@pytest.mark.parametrize("vrms", [0.15e-3, 0.3e-3])
def test_noise_floor(vrms):
    rms = noise_floor(new_chip(ChipConfig(noise_vrms=vrms)), 1e-2)
    np.testing.assert_allclose(rms, vrms, rtol=0.05)


def test_noise_floor_zero():
    assert np.all(noise_floor(new_chip(ChipConfig(noise_vrms=0.0)), 1e-3) <= 1e-9)
