"""Antenna-array mixing and the complex <-> real-rail matrix isomorphism.

Rails are interleaved per channel: (I1, Q1, I2, Q2, ...). A complex entry
a + jb occupies the 2x2 block [[a, -b], [b, a]] of the real form, so that
``complex_to_real(M) @ stack(x) == stack(M @ x)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rfbss._validation import check_square
from rfbss.signalgen import ComplexStream

MAX_CONDITION = 1e6


def complex_to_real(M):
    """Real 2n x 2n form of an n x n complex matrix."""
    M = np.asarray(M, dtype=complex)
    if M.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {M.shape}")
    n, m = M.shape
    R = np.empty((2 * n, 2 * m))
    R[0::2, 0::2] = M.real
    R[0::2, 1::2] = -M.imag
    R[1::2, 0::2] = M.imag
    R[1::2, 1::2] = M.real
    return R


def real_to_complex(R):
    """Nearest complex-structured matrix and the relative residual.

    Returns ``(M, residual)`` where residual is the Frobenius norm of the
    part of ``R`` that is not complex-structured, relative to ``||R||``.
    """
    R = np.asarray(R, dtype=float)
    if R.ndim != 2 or R.shape[0] % 2 or R.shape[1] % 2:
        raise ValueError(f"real form must have even dimensions, got shape {R.shape}")
    a = 0.5 * (R[0::2, 0::2] + R[1::2, 1::2])
    b = 0.5 * (R[1::2, 0::2] - R[0::2, 1::2])
    M = a + 1j * b
    norm = np.linalg.norm(R)
    residual = 0.0 if norm == 0 else float(np.linalg.norm(R - complex_to_real(M)) / norm)
    return M, residual


def complex_to_real8(M):
    M = np.asarray(M, dtype=complex)
    if M.shape != (4, 4):
        raise ValueError(f"expected a 4x4 complex matrix, got shape {M.shape}")
    return complex_to_real(M)


def real8_to_complex(M8):
    M8 = np.asarray(M8, dtype=float)
    if M8.shape != (8, 8):
        raise ValueError(f"expected an 8x8 real matrix, got shape {M8.shape}")
    return real_to_complex(M8)


def project_complex(R):
    """Orthogonal projection of a real form onto complex structure."""
    return complex_to_real(real_to_complex(R)[0])


def stack_rails(Z):
    """(n_samples, n_channels) complex -> (n_samples, 2*n_channels) real."""
    Z = np.asarray(Z)
    out = np.empty((Z.shape[0], 2 * Z.shape[1]))
    out[:, 0::2] = Z.real
    out[:, 1::2] = Z.imag
    return out


def unstack_rails(X):
    X = np.asarray(X, dtype=float)
    if X.shape[1] % 2:
        raise ValueError("rail count must be even")
    return X[:, 0::2] + 1j * X[:, 1::2]


@dataclass(frozen=True)
class MixingMatrix:
    """Square complex mixing matrix with its cached real form."""

    complex_entries: np.ndarray
    real_form: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        M = check_square(np.asarray(self.complex_entries, dtype=complex), "mixing matrix")
        cond = np.linalg.cond(M)
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            raise ValueError(f"mixing matrix is singular (condition number {cond:.3g})")
        object.__setattr__(self, "complex_entries", M)
        object.__setattr__(self, "real_form", complex_to_real(M))

    @property
    def condition_number(self):
        return float(np.linalg.cond(self.complex_entries))

    @property
    def n_channels(self):
        return self.complex_entries.shape[0]

    def scaled(self, factor):
        return MixingMatrix(self.complex_entries * factor)


def steering_vectors(angles_deg, element_spacing_wavelengths=0.5):
    """Raw 4x4 uniform-linear-array steering entries, one column per angle.

    No conditioning check; see :func:`steering_matrix` for a usable mixing matrix.
    """
    angles = np.asarray(angles_deg, dtype=float)
    if angles.ndim != 1 or angles.size != 4:
        raise ValueError(f"expected 4 arrival angles, got {angles.size}")
    if np.any(np.abs(angles) >= 90):
        raise ValueError("arrival angles must lie in (-90, 90) degrees")
    if not element_spacing_wavelengths > 0:
        raise ValueError("element spacing must be positive")
    m = np.arange(4)[:, None]
    phase = 2 * np.pi * element_spacing_wavelengths * m * np.sin(np.deg2rad(angles))[None, :]
    return np.exp(1j * phase)


def steering_matrix(angles_deg, element_spacing_wavelengths=0.5):
    """Steering matrix as a :class:`MixingMatrix`; near-duplicate angles are rejected."""
    return MixingMatrix(steering_vectors(angles_deg, element_spacing_wavelengths))


@dataclass(frozen=True)
class SourceBundle:
    sources: tuple

    def __post_init__(self):
        sources = tuple(self.sources)
        if not sources:
            raise ValueError("source bundle is empty")
        n = len(sources[0])
        fs = sources[0].sample_rate
        for k, s in enumerate(sources):
            if len(s) != n:
                raise ValueError(f"source {k + 1} has {len(s)} samples, expected {n}")
            if s.sample_rate != fs:
                raise ValueError(f"source {k + 1} sample rate {s.sample_rate} != {fs}")
        object.__setattr__(self, "sources", sources)

    @property
    def sample_rate(self):
        return self.sources[0].sample_rate

    def complex_matrix(self):
        """(n_samples, n_sources) complex array."""
        return np.column_stack([s.iq for s in self.sources])

    def rails(self):
        return stack_rails(self.complex_matrix())


def mix(A, s):
    """X = A S on stacked rails; returns (n_samples, 2*n_sources) real."""
    if not isinstance(s, SourceBundle):
        s = SourceBundle(tuple(s))
    if len(s.sources) != A.n_channels:
        raise ValueError(
            f"mixing matrix expects {A.n_channels} sources, got {len(s.sources)}"
        )
    return s.rails() @ A.real_form.T


def rails_to_streams(X, fs):
    """Split stacked rails back into ComplexStream objects."""
    Z = unstack_rails(X)
    return [ComplexStream(Z[:, k].real.copy(), Z[:, k].imag.copy(), fs) for k in range(Z.shape[1])]
