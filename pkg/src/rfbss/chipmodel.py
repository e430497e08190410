"""Behavioral model of the 8x8 mixed-signal matrix multiplier.

Each weight is a sign-magnitude 13-bit multiplying DAC: a 6-bit thermometer
array of unit capacitor pairs (MSBs) and a 6-bit thermometer resistor
ladder (LSBs) whose attenuated output drives the next unit pair. With unit
elements enabled in index order, code ``m*64 + l`` realises::

    (sum_{k<m} c_k + (l/64) * c_m) / 64,    c_k = 1 + e_k

which is monotone in the code whenever every c_k is positive.

Signal path per output row: input filter (six-pole Butterworth or the
single-pole pass-through) -> weighted sum -> odd cubic ``u - a3*u**3`` ->
feedback-cap gain x PGA gain x (1 + row gain error) -> output-referred
white Gaussian noise.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import numpy as np
from scipy import signal

from rfbss._validation import check_choice, check_sample_rate, check_streams

N_ROWS = 8
N_COLS = 8
N_DACS = N_ROWS * N_COLS
N_UNITS = 64
FULL_SCALE_CODE = 4096
MAX_CODE = 4095
MAX_WEIGHT = MAX_CODE / FULL_SCALE_CODE
INL_BOUND = 2.0**-8
WEIGHT_UPDATE_S = 3.564e-6
RESET_S = 256e-9

FILTER_MODES = ("six_pole", "passthrough")
FB_GAINS_DB = (0, 6)
PGA_GAINS_DB = (0, 6, 12, 18, 24)
IM3_POWER_MODES = ("per_tone", "combined")


@dataclass(frozen=True)
class WeightCode:
    sign: int
    msb: int
    lsb: int

    def __post_init__(self):
        if self.sign not in (0, 1):
            raise ValueError(f"sign bit must be 0 or 1, got {self.sign}")
        if not (0 <= self.msb < 64 and 0 <= self.lsb < 64):
            raise ValueError(f"msb/lsb must be in [0, 63], got ({self.msb}, {self.lsb})")

    @property
    def magnitude(self):
        return self.msb * 64 + self.lsb

    @property
    def signed(self):
        return -self.magnitude if self.sign else self.magnitude


def _quantize_magnitude(w):
    w = np.clip(np.asarray(w, dtype=float), -1.0, 1.0)
    # round half away from zero on |w|
    mag = np.minimum(np.floor(np.abs(w) * FULL_SCALE_CODE + 0.5), MAX_CODE).astype(np.int64)
    sign = np.where(mag == 0, 0, (w < 0)).astype(np.int64)
    return sign, mag


def quantize_weight(w):
    """Saturating sign-magnitude quantization of one weight in [-1, 1]."""
    sign, mag = _quantize_magnitude(w)
    mag = int(mag)
    return WeightCode(int(sign), mag // 64, mag % 64)


@dataclass(frozen=True)
class QuantizedMatrix:
    """Codes of all DACs as parallel (rows, cols) integer arrays."""

    sign: np.ndarray
    msb: np.ndarray
    lsb: np.ndarray

    @classmethod
    def from_weights(cls, W):
        sign, mag = _quantize_magnitude(W)
        return cls(sign, mag // 64, mag % 64)

    @property
    def shape(self):
        return self.sign.shape

    @property
    def magnitude(self):
        return self.msb * 64 + self.lsb

    @property
    def signed(self):
        return np.where(self.sign == 1, -self.magnitude, self.magnitude)

    def ideal(self):
        return self.signed / FULL_SCALE_CODE

    def code(self, i, j):
        return WeightCode(int(self.sign[i, j]), int(self.msb[i, j]), int(self.lsb[i, j]))


@dataclass(frozen=True)
class MismatchRealization:
    """Unit-capacitor errors per DAC (row-major DAC index) and row gain errors."""

    unit_cap_errors: np.ndarray
    row_gain_errors: np.ndarray
    seed: Optional[int] = None

    @classmethod
    def ideal(cls, n_dacs=N_DACS, n_rows=N_ROWS):
        return cls(np.zeros((n_dacs, N_UNITS)), np.zeros(n_rows), None)

    def cumulative_units(self):
        """(n_dacs, 65) running sums of unit capacitances, starting at 0."""
        c = 1.0 + self.unit_cap_errors
        return np.concatenate([np.zeros((c.shape[0], 1)), np.cumsum(c, axis=1)], axis=1)

    def msb_inl(self):
        """Per-DAC max |INL| of the MSB array, in fractions of full scale."""
        cum = self.cumulative_units()
        return np.max(np.abs(cum - np.arange(N_UNITS + 1)[None, :]), axis=1) / N_UNITS


def dac_values(sign, msb, lsb, mismatch, dac_index):
    """Vectorised transfer function; ``dac_index`` broadcasts with the codes."""
    sign = np.asarray(sign)
    msb = np.asarray(msb)
    lsb = np.asarray(lsb)
    dac_index = np.asarray(dac_index)
    c = 1.0 + mismatch.unit_cap_errors
    cum = mismatch.cumulative_units()
    mag = cum[dac_index, msb] + (lsb / 64.0) * c[dac_index, msb]
    return np.where(sign == 1, -mag, mag) / N_UNITS


def dac_value(code, mismatch, dac_index):
    return float(dac_values(code.sign, code.msb, code.lsb, mismatch, dac_index))


def transfer_curve(mismatch, dac_index):
    """DAC output for every signed code -4095..+4095 (8191 points)."""
    signed = np.arange(-MAX_CODE, MAX_CODE + 1)
    mag = np.abs(signed)
    return dac_values((signed < 0).astype(int), mag // 64, mag % 64, mismatch, dac_index)


def is_monotone(mismatch, dac_index=None):
    """Strict monotonicity of the full signed sweep for one or all DACs."""
    indices = range(mismatch.unit_cap_errors.shape[0]) if dac_index is None else [dac_index]
    return all(np.all(np.diff(transfer_curve(mismatch, d)) > 0) for d in indices)


@dataclass
class ChipConfig:
    filter_mode: str = "passthrough"
    fb_gain_db: int = 0
    pga_gain_db: int = 0
    noise_vrms: float = 0.15e-3
    a3: Optional[float] = None
    im3_target_dbc: float = -63.0
    im3_drive_vpp: float = 1.0
    im3_power_mode: str = "per_tone"
    passthrough_bw: float = 15.4e6
    filter_cutoff: float = 6.5e6
    full_scale_vpp: float = 1.0
    unit_mismatch: float = 0.01
    row_mismatch: float = 0.004
    quantize: bool = True
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        check_choice(self.filter_mode, FILTER_MODES, "filter_mode")
        check_choice(self.fb_gain_db, FB_GAINS_DB, "fb_gain_db")
        check_choice(self.pga_gain_db, PGA_GAINS_DB, "pga_gain_db")
        check_choice(self.im3_power_mode, IM3_POWER_MODES, "im3_power_mode")
        if self.noise_vrms < 0:
            raise ValueError("noise_vrms must be non-negative")
        if self.a3 is not None and self.a3 < 0:
            raise ValueError("a3 must be non-negative")
        for name in ("passthrough_bw", "filter_cutoff", "full_scale_vpp", "im3_drive_vpp"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.row_mismatch < 0.01:
            raise ValueError("row_mismatch must be in [0, 0.01) (channel matching better than 1%)")
        if self.unit_mismatch < 0:
            raise ValueError("unit_mismatch must be non-negative")

    @property
    def gain(self):
        return 10.0 ** ((self.fb_gain_db + self.pga_gain_db) / 20.0)

    def resolved_a3(self):
        if self.a3 is not None:
            return float(self.a3)
        return calibrate_a3(self.im3_target_dbc, self.im3_drive_vpp, self.im3_power_mode)

    def corner(self):
        return self.filter_cutoff if self.filter_mode == "six_pole" else self.passthrough_bw

    def to_dict(self):
        d = asdict(self)
        d["a3"] = self.resolved_a3()
        return d

    @classmethod
    def ideal(cls, **overrides):
        """Linear, noiseless, unquantized, perfectly matched chip."""
        base = dict(noise_vrms=0.0, a3=0.0, unit_mismatch=0.0, row_mismatch=0.0, quantize=False)
        base.update(overrides)
        return cls(**base)


def calibrate_a3(im3_dbc=-63.0, drive_vpp=1.0, power_mode="per_tone"):
    """Cubic coefficient giving ``im3_dbc`` for a two-tone test.

    For u = A cos(w1 t) + A cos(w2 t), the cubic term puts (3/4) a3 A^3 at
    2w1 - w2 and 2w2 - w1, so IM3 = (3/4) a3 A^2 relative to a tone.
    ``drive_vpp`` is per tone, or the combined two-tone power in
    ``combined`` mode (each tone then carries half the power).
    """
    check_choice(power_mode, IM3_POWER_MODES, "im3_power_mode")
    amp = drive_vpp / 2.0
    if power_mode == "combined":
        amp /= math.sqrt(2.0)
    return (4.0 / 3.0) * 10.0 ** (im3_dbc / 20.0) / amp**2


def draw_mismatch(unit_mismatch, row_mismatch, seed, n_dacs=N_DACS, n_rows=N_ROWS, max_tries=1000):
    """Uniform unit-element errors, rejection-sampled per DAC to the INL bound."""
    if unit_mismatch >= 1.0:
        raise ValueError("unit_mismatch >= 1 allows non-positive unit capacitors")
    if not 0 <= row_mismatch < 0.01:
        raise ValueError("row_mismatch must be in [0, 0.01)")
    rng = np.random.default_rng(seed)
    errors = np.empty((n_dacs, N_UNITS))
    ideal_cum = np.arange(1, N_UNITS + 1)
    for d in range(n_dacs):
        for _ in range(max_tries):
            e = rng.uniform(-unit_mismatch, unit_mismatch, N_UNITS)
            if np.max(np.abs(np.cumsum(1.0 + e) - ideal_cum)) / N_UNITS <= INL_BOUND:
                errors[d] = e
                break
        else:
            raise ValueError(
                f"unit_mismatch={unit_mismatch} cannot meet the 2^-8 INL bound "
                f"within {max_tries} draws"
            )
    row = rng.uniform(-row_mismatch, row_mismatch, n_rows)
    return MismatchRealization(errors, row, seed)


class LoadResult(NamedTuple):
    codes: QuantizedMatrix
    blanked_samples: int
    min_interval_samples: int


class ChipOutput(NamedTuple):
    y: np.ndarray
    valid: np.ndarray


def _samples_for(seconds, fs):
    # guard against 356.40000000000003-style float noise before ceil
    return int(math.ceil(round(seconds * fs, 9)))


def blanked_samples(fs):
    return _samples_for(RESET_S, fs)


def min_interval_samples(fs):
    return _samples_for(WEIGHT_UPDATE_S, fs)


def six_pole_sos(cutoff, fs):
    """Three-biquad Butterworth low-pass, bilinear with prewarping at ``cutoff``."""
    fs = check_sample_rate(fs)
    if fs <= 4 * cutoff:
        raise ValueError(f"sample rate {fs} Hz must exceed 4x the filter cutoff {cutoff} Hz")
    return signal.butter(6, cutoff, btype="low", fs=fs, output="sos")


def passthrough_sos(bandwidth, fs):
    """Single-pole low-pass modelling the pass-through amplifier bandwidth."""
    fs = check_sample_rate(fs)
    if fs < 4 * bandwidth:
        raise ValueError(f"sample rate {fs} Hz must be at least 4x the pass-through bandwidth {bandwidth} Hz")
    return signal.butter(1, bandwidth, btype="low", fs=fs, output="sos")


def input_sos(cfg, fs):
    if cfg.filter_mode == "six_pole":
        return six_pole_sos(cfg.filter_cutoff, fs)
    return passthrough_sos(cfg.passthrough_bw, fs)


def input_filter(x, cfg, fs):
    return signal.sosfilt(six_pole_sos(cfg.filter_cutoff, fs), np.asarray(x, dtype=float), axis=0)


def passthrough(x, cfg, fs):
    return signal.sosfilt(passthrough_sos(cfg.passthrough_bw, fs), np.asarray(x, dtype=float), axis=0)


class MatrixMultiplierChip:
    """Stateful chip instance: a configuration, a mismatch draw and loaded codes.

    Only :meth:`load_weights` mutates the instance. ``transform`` follows the
    scikit-learn convention of (n_samples, 8) inputs.
    """

    def __init__(self, config, mismatch):
        self.config = config
        self.mismatch = mismatch
        self.a3 = config.resolved_a3()
        self.codes = None
        self.weights = None
        self.fs = None
        self.n_loads = 0

    def __repr__(self):
        return f"MatrixMultiplierChip(config={self.config!r}, loads={self.n_loads})"

    def clone(self):
        """Fresh instance with identical configuration and mismatch, nothing loaded."""
        return MatrixMultiplierChip(copy.deepcopy(self.config), self.mismatch)

    @property
    def shape(self):
        return (N_ROWS, N_COLS)

    def effective_weights(self, W):
        """Analog weights realised for a normalised matrix ``W`` (no state change)."""
        W = np.asarray(W, dtype=float)
        if not self.config.quantize:
            return W.copy()
        q = QuantizedMatrix.from_weights(W)
        idx = np.arange(N_DACS).reshape(N_ROWS, N_COLS)
        return dac_values(q.sign, q.msb, q.lsb, self.mismatch, idx)

    def load_weights(self, W, fs):
        W = np.asarray(W, dtype=float)
        if W.shape != self.shape:
            raise ValueError(f"weight matrix must be {self.shape}, got {W.shape}")
        if not np.all(np.isfinite(W)):
            raise ValueError("weight matrix contains non-finite entries")
        if np.any(np.abs(W) > 1.0):
            raise ValueError(
                f"weights must lie in [-1, 1] (max |w| = {np.max(np.abs(W)):.6g}); rescale before loading"
            )
        fs = check_sample_rate(fs)
        codes = QuantizedMatrix.from_weights(W)
        self.codes = codes
        self.weights = self.effective_weights(W)
        self.fs = fs
        self.n_loads += 1
        return LoadResult(codes, blanked_samples(fs), min_interval_samples(fs))

    def filter_inputs(self, X, fs=None):
        fs = self.fs if fs is None else fs
        if fs is None:
            raise ValueError("sample rate unknown: load weights first or pass fs")
        X = check_streams(X, N_COLS)
        return signal.sosfilt(input_sos(self.config, fs), X, axis=0)

    def row_outputs(self, Xf, rng=None):
        """Rows after filtering: weighted sum, cubic, gain, noise."""
        if self.weights is None:
            raise ValueError("no weights loaded")
        u = Xf @ self.weights.T
        if self.a3:
            u = u - self.a3 * (u * u * u)
        y = u * (self.config.gain * (1.0 + self.mismatch.row_gain_errors))[None, :]
        if self.config.noise_vrms > 0:
            if rng is None:
                rng = np.random.default_rng([self.config.seed, self.n_loads])
            y = y + rng.normal(0.0, self.config.noise_vrms, size=y.shape)
        return y

    def apply(self, X, rng=None):
        """Full path for streams starting at a weight load; first samples flagged invalid."""
        if self.weights is None:
            raise ValueError("no weights loaded")
        y = self.row_outputs(self.filter_inputs(X), rng)
        valid = np.ones(y.shape[0], dtype=bool)
        valid[: blanked_samples(self.fs)] = False
        return ChipOutput(y, valid)

    def transform(self, X):
        return self.apply(X).y

    def loaded_matrix(self):
        """Dequantized loaded weights including DAC mismatch."""
        if self.weights is None:
            raise ValueError("no weights loaded")
        return self.weights.copy()


def new_chip(cfg=None):
    cfg = ChipConfig() if cfg is None else cfg
    cfg.validate()
    if cfg.quantize:
        mm = draw_mismatch(cfg.unit_mismatch, cfg.row_mismatch, cfg.seed)
    else:
        mm = MismatchRealization(
            np.zeros((N_DACS, N_UNITS)),
            np.random.default_rng(cfg.seed).uniform(-cfg.row_mismatch, cfg.row_mismatch, N_ROWS)
            if cfg.row_mismatch
            else np.zeros(N_ROWS),
            cfg.seed,
        )
    return MatrixMultiplierChip(cfg, mm)


def load_weights(W, chip, fs):
    return chip.load_weights(W, fs)


def apply_chip(chip, X, rng=None):
    return chip.apply(X, rng)


def dynamic_range_db(cfg):
    """Full-scale sine RMS over the configured output noise RMS."""
    full_scale_rms = cfg.full_scale_vpp / 2.0 / math.sqrt(2.0)
    if cfg.noise_vrms == 0:
        return math.inf
    return 20.0 * math.log10(full_scale_rms / cfg.noise_vrms)
