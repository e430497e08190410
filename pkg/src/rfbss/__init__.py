"""Behavioral simulation of blind source separation through a quantized
mixed-signal 8x8 matrix multiplier."""

from rfbss.chipmodel import ChipConfig, MatrixMultiplierChip, new_chip
from rfbss.ica import IcaConfig, InfomaxUnmixer, run_bss
from rfbss.mixing import MixingMatrix, mix, steering_matrix
from rfbss.signalgen import ComplexStream, WaveformSpec, generate

__version__ = "0.1.0"

__all__ = [
    "ChipConfig",
    "ComplexStream",
    "IcaConfig",
    "InfomaxUnmixer",
    "MatrixMultiplierChip",
    "MixingMatrix",
    "WaveformSpec",
    "generate",
    "mix",
    "new_chip",
    "run_bss",
    "steering_matrix",
]
