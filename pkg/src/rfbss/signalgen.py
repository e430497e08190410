"""Seeded baseband source waveforms: complex tone, BPSK, 16-QAM, GMSK and
Walsh-spread single-carrier CDMA.

Every generator is a pure function of its ``WaveformSpec`` and the sample
rate. Output streams are steady state from the first sample (symbols are
drawn to cover the pulse-shaping span on both sides of the window).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import hadamard
from scipy.special import erf

from rfbss._validation import check_choice, check_sample_rate

LOAD_OHMS = 50.0

WAVEFORM_KINDS = ("tone", "bpsk", "qam16", "gmsk", "sccdma")

DEFAULT_SYMBOL_RATES = {
    "tone": 0.0,
    "bpsk": 250e3,
    "qam16": 250e3,
    "gmsk": 270.833e3,
    "sccdma": 31.25e3,
}


@dataclass(frozen=True)
class ComplexStream:
    """Uniformly sampled I/Q baseband stream (volts per rail)."""

    i_samples: np.ndarray
    q_samples: np.ndarray
    sample_rate: float

    def __post_init__(self):
        i = np.asarray(self.i_samples, dtype=np.float64)
        q = np.asarray(self.q_samples, dtype=np.float64)
        if i.ndim != 1 or i.shape != q.shape or i.size < 1:
            raise ValueError("i_samples and q_samples must be 1-D, equal length, non-empty")
        object.__setattr__(self, "i_samples", i)
        object.__setattr__(self, "q_samples", q)
        object.__setattr__(self, "sample_rate", check_sample_rate(self.sample_rate))

    @classmethod
    def from_complex(cls, z, sample_rate):
        z = np.asarray(z)
        return cls(z.real.copy(), z.imag.copy(), sample_rate)

    @property
    def iq(self):
        return self.i_samples + 1j * self.q_samples

    def __len__(self):
        return self.i_samples.size

    def scaled(self, factor):
        return ComplexStream(self.i_samples * factor, self.q_samples * factor, self.sample_rate)


@dataclass(frozen=True)
class WaveformSpec:
    """Parameters of one source waveform.

    ``symbol_rate`` of ``None`` selects the per-kind default; it is ignored
    for tones. ``rolloff`` applies to the RRC-shaped kinds, ``bt`` to GMSK,
    ``spreading_factor``/``walsh_index`` to SC-CDMA.
    """

    kind: str
    centre_freq: float
    amplitude_vpp: float
    seed: int = 0
    duration: float = 1e-3
    symbol_rate: Optional[float] = None
    rolloff: float = 0.35
    bt: float = 0.3
    spreading_factor: int = 16
    walsh_index: int = 1
    span_symbols: int = 32

    def __post_init__(self):
        check_choice(self.kind, WAVEFORM_KINDS, "kind")
        if not self.amplitude_vpp > 0:
            raise ValueError(f"amplitude_vpp must be positive, got {self.amplitude_vpp}")
        if not self.duration > 0:
            raise ValueError(f"duration must be positive, got {self.duration}")
        if self.symbol_rate is None:
            object.__setattr__(self, "symbol_rate", DEFAULT_SYMBOL_RATES[self.kind])
        if self.kind != "tone" and not self.symbol_rate > 0:
            raise ValueError(f"symbol_rate must be positive, got {self.symbol_rate}")
        if not 0 < self.rolloff <= 1:
            raise ValueError(f"rolloff must be in (0, 1], got {self.rolloff}")


def dbm_to_vpp(power_dbm):
    """Peak-to-peak voltage of a sine delivering ``power_dbm`` into 50 ohm."""
    p_watts = 1e-3 * 10.0 ** (np.asarray(power_dbm, dtype=float) / 10.0)
    vpp = 2.0 * np.sqrt(2.0) * np.sqrt(LOAD_OHMS * p_watts)
    return float(vpp) if vpp.ndim == 0 else vpp


def vpp_to_dbm(vpp):
    vrms = np.asarray(vpp, dtype=float) / (2.0 * np.sqrt(2.0))
    out = 10.0 * np.log10(vrms**2 / LOAD_OHMS / 1e-3)
    return float(out) if out.ndim == 0 else out


def _n_samples(duration, fs):
    n = int(round(duration * fs))
    if n < 1:
        raise ValueError(f"duration {duration} s is shorter than one sample at {fs} Hz")
    return n


def _check_centre(freq, fs):
    if not abs(freq) < fs / 2:
        raise ValueError(f"frequency {freq} Hz is at or above Nyquist ({fs / 2} Hz)")


def gen_tone(freq, amplitude_vpp, duration, fs):
    """Complex exponential (A/2)*exp(j*2*pi*freq*n/fs)."""
    fs = check_sample_rate(fs)
    _check_centre(freq, fs)
    if not amplitude_vpp > 0:
        raise ValueError(f"amplitude_vpp must be positive, got {amplitude_vpp}")
    n = np.arange(_n_samples(duration, fs))
    # phase computed modulo one cycle to keep long streams exact
    cycles = np.mod(n * (freq / fs), 1.0)
    z = 0.5 * amplitude_vpp * np.exp(2j * np.pi * cycles)
    return ComplexStream.from_complex(z, fs)


def rrc_pulse(t, rolloff):
    """Root-raised-cosine impulse response at times ``t`` in symbol periods.

    Unit energy per symbol period (integral of p(t)^2 dt = 1 for T = 1).
    """
    t = np.asarray(t, dtype=float)
    b = rolloff
    out = np.empty_like(t)
    zero = np.abs(t) < 1e-10
    sing = np.abs(np.abs(4 * b * t) - 1.0) < 1e-10
    reg = ~(zero | sing)
    tr = t[reg]
    out[reg] = (np.sin(np.pi * tr * (1 - b)) + 4 * b * tr * np.cos(np.pi * tr * (1 + b))) / (
        np.pi * tr * (1 - (4 * b * tr) ** 2)
    )
    out[zero] = 1.0 + b * (4.0 / np.pi - 1.0)
    out[sing] = (b / np.sqrt(2.0)) * (
        (1 + 2 / np.pi) * np.sin(np.pi / (4 * b)) + (1 - 2 / np.pi) * np.cos(np.pi / (4 * b))
    )
    return out


def _pulse_train(symbols, first_index, rate, fs, n, pulse, half_span):
    """Sum of symbols[k] * pulse((t - (first_index + k)/rate) * rate) on n samples."""
    out = np.zeros(n, dtype=np.result_type(symbols, np.float64))
    sps = fs / rate
    for k, a in enumerate(symbols):
        centre = (first_index + k) * sps
        lo = max(int(np.ceil(centre - half_span * sps)), 0)
        hi = min(int(np.floor(centre + half_span * sps)) + 1, n)
        if hi <= lo:
            continue
        idx = np.arange(lo, hi)
        out[lo:hi] += a * pulse((idx - centre) / sps)
    return out


def _symbol_window(duration, rate, half_span):
    """Index range of symbols whose pulses touch [0, duration)."""
    first = -int(np.ceil(half_span))
    last = int(np.ceil(duration * rate + half_span))
    return first, last - first + 1


def _finish(baseband, spec, fs):
    """Unit-power normalise, shift to the centre frequency, scale to amplitude."""
    baseband = baseband / np.sqrt(np.mean(np.abs(baseband) ** 2))
    n = np.arange(baseband.size)
    cycles = np.mod(n * (spec.centre_freq / fs), 1.0)
    z = 0.5 * spec.amplitude_vpp * baseband * np.exp(2j * np.pi * cycles)
    return ComplexStream.from_complex(z, fs)


def _rng(spec):
    return np.random.default_rng(spec.seed)


def draw_symbols(kind, n, rng):
    """Unit-average-power constellation symbols for ``kind``."""
    if kind == "bpsk":
        return rng.choice(np.array([-1.0, 1.0]), size=n)
    if kind == "qam16":
        levels = np.array([-3.0, -1.0, 1.0, 3.0])
        return (rng.choice(levels, size=n) + 1j * rng.choice(levels, size=n)) / np.sqrt(10.0)
    if kind in ("qpsk", "sccdma"):
        pm = np.array([-1.0, 1.0])
        return (rng.choice(pm, size=n) + 1j * rng.choice(pm, size=n)) / np.sqrt(2.0)
    if kind == "gmsk":
        return rng.choice(np.array([-1.0, 1.0]), size=n)
    raise ValueError(f"no symbol alphabet for kind {kind!r}")


def _check_rate(spec, fs, rate):
    if rate > fs / 4:
        raise ValueError(
            f"{spec.kind}: rate {rate} Hz too high for fs={fs} Hz (limit fs/4)"
        )


def _linear(spec, fs, expected_kind, return_symbols):
    fs = check_sample_rate(fs)
    if spec.kind != expected_kind:
        raise ValueError(f"expected a {expected_kind} spec, got {spec.kind}")
    _check_centre(spec.centre_freq, fs)
    _check_rate(spec, fs, spec.symbol_rate)
    n = _n_samples(spec.duration, fs)
    half = spec.span_symbols / 2
    first, count = _symbol_window(spec.duration, spec.symbol_rate, half)
    symbols = draw_symbols(expected_kind, count, _rng(spec))
    bb = _pulse_train(
        symbols, first, spec.symbol_rate, fs, n, lambda t: rrc_pulse(t, spec.rolloff), half
    )
    stream = _finish(bb, spec, fs)
    return (stream, symbols) if return_symbols else stream


def gen_bpsk(spec, fs, return_symbols=False):
    return _linear(spec, fs, "bpsk", return_symbols)


def gen_qam16(spec, fs, return_symbols=False):
    return _linear(spec, fs, "qam16", return_symbols)


def gaussian_frequency_pulse(t, bt):
    """Rectangular NRZ pulse convolved with a Gaussian of bandwidth-time ``bt``.

    ``t`` in symbol periods; the pulse integrates to one symbol period.
    """
    k = np.pi * bt * np.sqrt(2.0 / np.log(2.0))
    return 0.5 * (erf(k * (t + 0.5)) - erf(k * (t - 0.5)))


def gen_gmsk(spec, fs, return_symbols=False):
    """Gaussian minimum-shift keying, modulation index 0.5."""
    fs = check_sample_rate(fs)
    if spec.kind != "gmsk":
        raise ValueError(f"expected a gmsk spec, got {spec.kind}")
    _check_centre(spec.centre_freq, fs)
    _check_rate(spec, fs, spec.symbol_rate)
    n = _n_samples(spec.duration, fs)
    half = 3.0
    first, count = _symbol_window(spec.duration, spec.symbol_rate, half)
    # leading symbols fill the Gaussian memory before t = 0
    symbols = draw_symbols("gmsk", count, _rng(spec))
    inst = _pulse_train(
        symbols, first, spec.symbol_rate, fs, n, lambda t: gaussian_frequency_pulse(t, spec.bt), half
    )
    # pi/2 phase advance per symbol period for a full +-1 symbol
    phase = np.cumsum(inst) * (np.pi / 2.0) * (spec.symbol_rate / fs)
    stream = _finish(np.exp(1j * phase), spec, fs)
    return (stream, symbols) if return_symbols else stream


def walsh_code(spreading_factor, index):
    """Row ``index`` of the sequency-ordered Walsh matrix (entries +-1)."""
    sf = int(spreading_factor)
    if sf < 1 or sf & (sf - 1):
        raise ValueError(f"spreading factor must be a power of two, got {sf}")
    if not 0 <= index < sf:
        raise ValueError(f"walsh index must be in [0, {sf}), got {index}")
    h = hadamard(sf)
    changes = np.count_nonzero(np.diff(h, axis=1), axis=1)
    return h[np.argsort(changes, kind="stable")][index].astype(float)


def gen_sccdma(spec, fs, return_symbols=False):
    """QPSK symbols spread by a Walsh code, RRC shaped at the chip rate."""
    fs = check_sample_rate(fs)
    if spec.kind != "sccdma":
        raise ValueError(f"expected an sccdma spec, got {spec.kind}")
    _check_centre(spec.centre_freq, fs)
    code = walsh_code(spec.spreading_factor, spec.walsh_index)
    chip_rate = spec.spreading_factor * spec.symbol_rate
    _check_rate(spec, fs, chip_rate)
    n = _n_samples(spec.duration, fs)
    half = spec.span_symbols / 2
    # whole symbols only, so chip index 0 is a symbol boundary
    sym_half = int(np.ceil(half / spec.spreading_factor))
    first_sym, n_sym = _symbol_window(spec.duration, spec.symbol_rate, sym_half)
    symbols = draw_symbols("sccdma", n_sym, _rng(spec))
    chips = (symbols[:, None] * code[None, :]).ravel()
    bb = _pulse_train(
        chips,
        first_sym * spec.spreading_factor,
        chip_rate,
        fs,
        n,
        lambda t: rrc_pulse(t, spec.rolloff),
        half,
    )
    stream = _finish(bb, spec, fs)
    return (stream, symbols) if return_symbols else stream


def generate(spec, fs):
    """Dispatch on ``spec.kind``."""
    if spec.kind == "tone":
        return gen_tone(spec.centre_freq, spec.amplitude_vpp, spec.duration, fs)
    return {
        "bpsk": gen_bpsk,
        "qam16": gen_qam16,
        "gmsk": gen_gmsk,
        "sccdma": gen_sccdma,
    }[spec.kind](spec, fs)
