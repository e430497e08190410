"""Measurement procedures: Welch spectra, cross-channel separation, SIR,
Amari index, two-tone IM3, compression, -3 dB bandwidth and noise floor.

Power is reported in dB relative to 1 V RMS (dBV); add ``DBM_OFFSET`` for
dBm into 50 ohm.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import signal

from rfbss._validation import check_sample_rate, check_square
from rfbss.chipmodel import N_COLS, N_ROWS, MAX_WEIGHT
from rfbss.mixing import MixingMatrix, real_to_complex
from rfbss.signalgen import ComplexStream

DBM_OFFSET = 10.0 * math.log10(1e3 / 50.0)
SIR_CAP_DB = 200.0
POWER_FLOOR = 1e-30


def db(p):
    return 10.0 * np.log10(np.maximum(p, POWER_FLOOR))


@dataclass
class Spectrum:
    """Welch spectrum. ``power`` is per-bin power (V^2), ``psd`` is V^2/Hz."""

    freqs: np.ndarray
    power: np.ndarray
    psd: np.ndarray
    resolution_bw: float
    window: str
    averages: int

    @property
    def power_db(self):
        return db(self.power)

    @property
    def power_dbm(self):
        return self.power_db + DBM_OFFSET

    @property
    def df(self):
        return float(self.freqs[1] - self.freqs[0])

    def band_power(self, f_lo, f_hi):
        """Integrated power over [f_lo, f_hi] (V^2)."""
        sel = (self.freqs >= f_lo) & (self.freqs <= f_hi)
        if not np.any(sel):
            raise ValueError(f"band [{f_lo}, {f_hi}] Hz contains no spectral bins")
        return float(np.sum(self.psd[sel]) * self.df)

    def total_power(self):
        return float(np.sum(self.psd) * self.df)

    def peak_frequency(self):
        return float(self.freqs[np.argmax(self.power)])


def power_spectrum(x, fs=None, nfft=65536, window="hann", overlap=0.5):
    """Welch-averaged periodogram of a real stream or a ComplexStream.

    Real input gives a one-sided spectrum; complex input a two-sided one
    (fftshifted, negative frequencies first).
    """
    if isinstance(x, ComplexStream):
        fs = x.sample_rate
        data = x.iq
    else:
        data = np.asarray(x)
        if data.ndim != 1:
            raise ValueError("power_spectrum expects a single stream")
    fs = check_sample_rate(fs)
    nfft = int(nfft)
    if nfft < 2 or nfft & (nfft - 1):
        raise ValueError(f"nfft must be a power of two, got {nfft}")
    if data.size < nfft:
        raise ValueError(f"stream of {data.size} samples is shorter than nfft={nfft}")
    noverlap = int(round(overlap * nfft))
    is_complex = np.iscomplexobj(data)
    f, psd = signal.welch(
        data,
        fs=fs,
        window=window,
        nperseg=nfft,
        noverlap=noverlap,
        nfft=nfft,
        detrend=False,
        return_onesided=not is_complex,
        scaling="density",
    )
    if is_complex:
        f = np.fft.fftshift(f)
        psd = np.fft.fftshift(psd)
    w = signal.get_window(window, nfft)
    enbw = fs * np.sum(w**2) / np.sum(w) ** 2
    averages = 1 + (data.size - nfft) // (nfft - noverlap)
    return Spectrum(f, psd * enbw, psd, enbw, window, averages)


def tone_power(spec, freq, half_width_bins=6):
    """Power of a tone integrated over its window main lobe plus margin."""
    half = half_width_bins * spec.df
    return spec.band_power(freq - half, freq + half)


@dataclass
class SeparationReport:
    target_channel: int
    target_power_db: float
    worst_other_db: float
    separation_dbc: float
    in_channel_sfdr_dbc: float
    permutation: Optional[list] = None
    per_channel_sir_db: Optional[list] = None
    amari_index: Optional[float] = None

    def to_dict(self):
        return asdict(self)


def _as_complex_channels(Y, fs):
    if isinstance(Y, (list, tuple)) and Y and isinstance(Y[0], ComplexStream):
        return Y
    Y = np.asarray(Y)
    if not np.iscomplexobj(Y):
        raise ValueError("expected complex channel data (n_samples, n_channels)")
    return [ComplexStream.from_complex(Y[:, k], fs) for k in range(Y.shape[1])]


def separation_dbc(Y, target, signal_band, fs=None, nfft=65536, guard_bins=8):
    """Cross-channel separation of an in-band signal, plus in-channel SFDR.

    ``target`` is a 1-based channel number or ``None`` to pick the channel
    with the most in-band power. The SFDR excludes the signal band widened
    by ``guard_bins`` and the DC bin.
    """
    chans = _as_complex_channels(Y, fs)
    f_lo, f_hi = signal_band
    if not f_hi > f_lo:
        raise ValueError("signal band is empty")
    spectra = [power_spectrum(c, nfft=nfft) for c in chans]
    band = np.array([s.band_power(f_lo, f_hi) for s in spectra])
    if target is None:
        target = int(np.argmax(band)) + 1
    t = target - 1
    others = np.delete(band, t)
    target_db = float(db(band[t]))
    worst_db = float(db(others.max())) if others.size else float(db(0.0))
    spec = spectra[t]
    guard = guard_bins * spec.df
    in_band = (spec.freqs >= f_lo) & (spec.freqs <= f_hi)
    excluded = (spec.freqs >= f_lo - guard) & (spec.freqs <= f_hi + guard)
    excluded |= np.abs(spec.freqs) <= guard
    peak = spec.power[in_band].max()
    spur = spec.power[~excluded].max() if np.any(~excluded) else 0.0
    sfdr = float(db(peak) - db(spur))
    return SeparationReport(
        target_channel=target,
        target_power_db=target_db,
        worst_other_db=worst_db,
        separation_dbc=target_db - worst_db,
        in_channel_sfdr_dbc=sfdr,
    )


def amari_index(G):
    """Amari index normalised to [0, 1]; zero iff G is a scaled permutation."""
    P = np.abs(check_square(np.asarray(G), "G"))
    n = P.shape[0]
    if n < 2:
        return 0.0
    row_max = P.max(axis=1)
    col_max = P.max(axis=0)
    if np.any(row_max == 0) or np.any(col_max == 0):
        raise ValueError("G has an all-zero row or column")
    rows = np.sum(P.sum(axis=1) / row_max - 1.0)
    cols = np.sum(P.sum(axis=0) / col_max - 1.0)
    return float((rows + cols) / (2.0 * n * (n - 1)))


def greedy_assignment(P):
    """Pair outputs to sources by repeatedly taking the largest remaining |entry|."""
    P = np.array(P, dtype=float)
    n = P.shape[0]
    perm = [-1] * n
    work = P.copy()
    for _ in range(n):
        i, j = np.unravel_index(np.argmax(work), work.shape)
        perm[i] = int(j)
        work[i, :] = -np.inf
        work[:, j] = -np.inf
    return perm


def sir_from_global(G):
    """Best assignment and per-output SIR (dB, capped) of a global matrix."""
    P = np.abs(np.asarray(G)) ** 2
    perm = greedy_assignment(P)
    sir = []
    for i, j in enumerate(perm):
        interference = P[i].sum() - P[i, j]
        if interference <= 0:
            sir.append(SIR_CAP_DB)
        else:
            sir.append(float(min(10.0 * np.log10(P[i, j] / interference), SIR_CAP_DB)))
    return perm, sir


def sir_matrix(W_loaded, A):
    """Separation quality from the ground-truth mixing matrix.

    Returns ``(permutation, per_channel_sir_db, G)`` with G the complex
    global matrix ``W_loaded @ real_form(A)`` folded back to complex form.
    """
    if not isinstance(A, MixingMatrix):
        A = MixingMatrix(A)
    G = real_to_complex(np.asarray(W_loaded) @ A.real_form)[0]
    perm, sir = sir_from_global(G)
    return perm, sir, G


def _identity_row_chip(chip, fs, rail=0, **overrides):
    """Clone with one identity weight on row 0 from ``rail``; config overrides applied."""
    c = chip.clone()
    for k, v in overrides.items():
        setattr(c.config, k, v)
    c.config.validate()
    c.a3 = c.config.resolved_a3()
    W = np.zeros((N_ROWS, N_COLS))
    W[0, rail] = MAX_WEIGHT
    c.load_weights(W, fs)
    return c


def _drive(chip, x, fs, settle):
    X = np.zeros((x.size, N_COLS))
    X[:, 0] = x
    out = chip.apply(X, rng=np.random.default_rng([chip.config.seed, 0x3A]))
    return out.y[settle:, 0]


def _tone_amplitudes(y, freqs, fs, offset):
    """Amplitudes of sinusoids at ``freqs`` from a joint least-squares fit.

    Fitting all known frequencies together has no window leakage, so weak
    products next to strong tones are measured down to the noise.
    """
    n = np.arange(y.size) + offset
    cols = []
    for f in freqs:
        ph = 2 * np.pi * np.mod(n * (f / fs), 1.0)
        cols += [np.cos(ph), np.sin(ph)]
    coef, *_ = np.linalg.lstsq(np.column_stack(cols), y, rcond=None)
    return np.hypot(coef[0::2], coef[1::2])


def _tone_amplitude(y, freq, fs, offset):
    return float(_tone_amplitudes(y, [freq], fs, offset)[0])


def im3_test(chip, f1, f2, per_tone_vpp, fs=100e6, n=131072):
    """Two-tone IM3 in dBc through an identity-weight row.

    Returns the larger of the products at 2f1-f2 and 2f2-f1 relative to
    the weaker tone, from a coherent fit of all four frequencies over
    ``n`` settled samples.
    """
    fs = check_sample_rate(fs)
    if f1 == f2:
        raise ValueError("two-tone test needs distinct frequencies")
    lo, hi = sorted((f1, f2))
    im_lo, im_hi = 2 * lo - hi, 2 * hi - lo
    if im_lo <= 0 or im_hi >= fs / 2:
        raise ValueError("IM3 products fall outside (0, fs/2)")
    if hi - lo <= 4 * fs / n:
        raise ValueError("IM3 products collide with the tones at this record length")
    c = _identity_row_chip(chip, fs)
    settle = 4096
    t = np.arange(settle + n)
    amp = per_tone_vpp / 2.0
    x = amp * (np.cos(2 * np.pi * np.mod(t * f1 / fs, 1)) + np.cos(2 * np.pi * np.mod(t * f2 / fs, 1)))
    y = _drive(c, x, fs, settle)
    a_lo, a_hi, p_lo, p_hi = _tone_amplitudes(y, [lo, hi, im_lo, im_hi], fs, settle)
    return float(20.0 * np.log10(max(p_lo, p_hi, 1e-300) / min(a_lo, a_hi)))


def compression_test(chip, freq, vpp, fs=100e6, n=16384):
    """Large-signal minus small-signal (-40 dB drive) gain in dB."""
    fs = check_sample_rate(fs)
    c = _identity_row_chip(chip, fs, noise_vrms=0.0)
    settle = 4096
    t = np.arange(settle + n)

    def gain(a):
        x = (a / 2.0) * np.cos(2 * np.pi * np.mod(t * freq / fs, 1))
        y = _drive(c, x, fs, settle)
        return _tone_amplitude(y, freq, fs, settle) / (a / 2.0)

    return float(20.0 * np.log10(gain(vpp) / gain(vpp * 0.01)))


def _small_signal_probe(chip, mode, fs, n, settle=8192):
    cfg = chip.config
    mode = cfg.filter_mode if mode is None else mode
    corner = cfg.filter_cutoff if mode == "six_pole" else cfg.passthrough_bw
    fs = check_sample_rate(fs if fs is not None else max(100e6, 8 * corner))
    c = _identity_row_chip(chip, fs, filter_mode=mode, noise_vrms=0.0, a3=0.0)
    t = np.arange(settle + n)

    def gain(f):
        x = 0.01 * np.cos(2 * np.pi * np.mod(t * f / fs, 1))
        return _tone_amplitude(_drive(c, x, fs, settle), f, fs, settle) / 0.01

    return gain, corner, fs


def attenuation_db(chip, freq, mode=None, fs=None, n=8192):
    """Small-signal attenuation at ``freq`` relative to a tone at corner/100."""
    gain, corner, fs = _small_signal_probe(chip, mode, fs, n)
    if not 0 < freq < fs / 2:
        raise ValueError(f"probe frequency {freq} Hz outside (0, fs/2)")
    return float(20.0 * np.log10(gain(corner / 100.0) / gain(freq)))


def bandwidth_3db(chip, mode=None, fs=None, n=8192, xtol=1e-4):
    """Swept-tone -3 dB frequency of an identity-weight row, by bisection."""
    gain, corner, fs = _small_signal_probe(chip, mode, fs, n)
    ref = gain(corner / 100.0)
    target = ref / math.sqrt(2.0)
    lo, hi = corner / 100.0, 0.49 * fs
    while (hi - lo) / lo > xtol:
        mid = 0.5 * (lo + hi)
        if gain(mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def noise_floor(chip, duration, fs=100e6):
    """Per-row output RMS with zero weights and grounded inputs."""
    fs = check_sample_rate(fs)
    c = chip.clone()
    c.load_weights(np.zeros((N_ROWS, N_COLS)), fs)
    n = int(round(duration * fs))
    out = c.apply(np.zeros((n, N_COLS)), rng=np.random.default_rng([c.config.seed, 0x4E]))
    y = out.y[out.valid]
    if y.shape[0] < 1:
        raise ValueError("duration shorter than the post-load blanking interval")
    return np.sqrt(np.mean(y**2, axis=0))
