"""Input validation helpers shared by the estimators and measurement code."""

import numpy as np
from sklearn.utils.validation import check_array


def check_streams(X, n_channels=None, min_samples=1, name="X"):
    """Validate a multichannel real stream laid out as (n_samples, n_channels)."""
    X = check_array(
        X,
        dtype=np.float64,
        ensure_all_finite=True,
        ensure_min_samples=min_samples,
        input_name=name,
    )
    if n_channels is not None and X.shape[1] != n_channels:
        raise ValueError(
            f"{name} must have {n_channels} channels (columns), got {X.shape[1]}"
        )
    return X


def check_sample_rate(fs):
    fs = float(fs)
    if not np.isfinite(fs) or fs <= 0:
        raise ValueError(f"sample rate must be positive and finite, got {fs}")
    return fs


def check_square(M, name="matrix"):
    M = np.asarray(M)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    return M


def check_choice(value, choices, name):
    if value not in choices:
        raise ValueError(f"{name} must be one of {sorted(choices)}, got {value!r}")
    return value
