"""Hardware-in-the-loop natural-gradient infomax for sub-Gaussian sources.

The loop repeatedly rescales the working unmixing matrix so its largest
row entry sits at the top DAC code, loads it into the chip, observes one
batch of chip output, undoes the row scaling digitally and applies one
natural-gradient step.
"""

from __future__ import annotations

import collections
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple, Optional

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from rfbss._validation import check_choice, check_sample_rate, check_streams
from rfbss.chipmodel import MAX_WEIGHT, min_interval_samples
from rfbss.mixing import complex_to_real, project_complex, real_to_complex

RULES = ("extended_sub", "cubic")


@dataclass
class IcaConfig:
    rule: str = "extended_sub"
    lr_initial: float = 0.2
    lr_decay: float = 0.01
    batch_samples: int = 16384
    max_epochs: int = 3000
    complex_structured: bool = True
    whiten: bool = True
    convergence_tol: float = 5e-5
    convergence_window: int = 100
    min_epochs: int = 0
    init_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        check_choice(self.rule, RULES, "rule")
        if self.lr_initial < 0 or self.lr_decay < 0:
            raise ValueError("learning-rate parameters must be non-negative")
        if self.batch_samples < 1 or self.max_epochs < 1 or self.convergence_window < 1:
            raise ValueError("batch_samples, max_epochs and convergence_window must be positive")
        if not 0 <= self.min_epochs <= self.max_epochs:
            raise ValueError("min_epochs must lie in [0, max_epochs]")
        if self.convergence_tol < 0 or self.init_jitter < 0:
            raise ValueError("convergence_tol and init_jitter must be non-negative")

    def learning_rate(self, epoch):
        return self.lr_initial / (1.0 + self.lr_decay * epoch)

    def to_dict(self):
        return asdict(self)


@dataclass
class UnmixState:
    W: np.ndarray
    row_scales: np.ndarray
    lr: float
    iteration: int = 0
    history: list = field(default_factory=list)
    converged: bool = False
    W_loaded: Optional[np.ndarray] = None
    blanked_samples: int = 0


def relative_gradient(y, rule="extended_sub"):
    """Natural-gradient direction H with dW = lr * H @ W."""
    n = y.shape[0]
    eye = np.eye(y.shape[1])
    if rule == "extended_sub":
        return eye + (np.tanh(y).T @ y) / n - (y.T @ y) / n
    return eye - ((y * y * y).T @ y) / n


def stationarity_residual(y, rule="extended_sub", complex_structured=False):
    H = relative_gradient(y, rule)
    if complex_structured:
        H = project_complex(H)
    return float(np.linalg.norm(H))


def infomax_step(state, Y_batch, cfg):
    """One natural-gradient update on a batch of unmixed outputs ``y = W x``."""
    y = np.asarray(Y_batch, dtype=float)
    if y.ndim != 2 or y.shape[0] == 0:
        raise ValueError("batch must be a non-empty (n_samples, n_channels) array")
    if not np.all(np.isfinite(y)):
        bad = np.argwhere(~np.isfinite(y))[0]
        raise ValueError(f"non-finite value in batch at sample {bad[0]}, channel {bad[1]}")
    H = relative_gradient(y, cfg.rule)
    if cfg.complex_structured:
        H = project_complex(H)
    dW = state.lr * H @ state.W
    W = state.W + dW
    if cfg.complex_structured:
        W = project_complex(W)
    norm = np.linalg.norm(state.W)
    record = {
        "epoch": state.iteration,
        "lr": state.lr,
        "update_norm": float(np.linalg.norm(dW) / norm) if norm else float(np.linalg.norm(dW)),
        "stationarity": float(np.linalg.norm(H)),
    }
    return replace(
        state,
        W=W,
        lr=cfg.learning_rate(state.iteration + 1),
        iteration=state.iteration + 1,
        history=state.history + [record],
    )


def whiten(X, complex_structured=False):
    """Symmetric inverse square root of the sample covariance.

    Returns ``(V, Z)`` with ``Z = X @ V.T`` white. In complex-structured mode
    the covariance is first projected onto complex structure so V is the
    real form of a Hermitian matrix.
    """
    X = check_streams(X)
    n, m = X.shape
    if n < 8 * m:
        raise ValueError(f"whitening needs at least {8 * m} samples, got {n}")
    C = np.cov(X, rowvar=False, bias=True)
    if complex_structured:
        C = project_complex(C)
    evals, evecs = np.linalg.eigh(C)
    if evals[0] <= 1e-12 * max(evals[-1], 1e-300):
        raise ValueError("covariance is singular; mixing is degenerate")
    V = (evecs / np.sqrt(evals)) @ evecs.T
    V = 0.5 * (V + V.T)
    return V, X @ V.T


def scale_rows(W):
    """Row scales putting each row's largest |entry| at the top DAC code."""
    peak = np.max(np.abs(W), axis=1)
    scales = np.where(peak > 0, peak / MAX_WEIGHT, 1.0)
    return scales, W / scales[:, None]


def _initial_W(X, cfg, rng):
    m = X.shape[1]
    W = np.eye(m)
    if cfg.whiten:
        W, _ = whiten(X, cfg.complex_structured)
    if cfg.init_jitter:
        J = np.eye(m) + cfg.init_jitter * rng.standard_normal((m, m))
        if cfg.complex_structured:
            J = project_complex(J)
        W = J @ W
    return W


def run_bss(X, chip=None, cfg=None, fs=100e6, A=None):
    """Estimate the unmixing matrix in the loop with ``chip``.

    ``chip=None`` uses an ideal digital matrix product. ``A`` (real form of
    the mixing matrix), when given, adds the Amari index of ``W_loaded @ A``
    to the history. Returns ``(state, Y)`` where ``Y`` is the raw chip
    output for the whole stream under the final loaded weights; its first
    ``state.blanked_samples`` rows are invalid.
    """
    from rfbss.metrics import amari_index

    cfg = IcaConfig() if cfg is None else cfg
    cfg.validate()
    fs = check_sample_rate(fs)
    X = check_streams(X)
    n, m = X.shape
    if cfg.complex_structured and m % 2:
        raise ValueError("complex-structured mode needs an even rail count")
    if chip is not None:
        if m != chip.shape[1]:
            raise ValueError(f"chip has {chip.shape[1]} inputs, X has {m} channels")
        need = min_interval_samples(fs)
        if cfg.batch_samples < need:
            raise ValueError(
                f"batch_samples={cfg.batch_samples} is shorter than the minimum "
                f"weight update interval ({need} samples at {fs:g} Hz)"
            )
    rng = np.random.default_rng(cfg.seed)
    noise_seeds = np.random.SeedSequence([cfg.seed, 0x1CA])

    if chip is None:
        Xf = X
    else:
        probe = chip.clone()
        probe.load_weights(np.zeros(chip.shape), fs)
        Xf = probe.filter_inputs(X)

    W0 = _initial_W(Xf, cfg, rng)
    scales, _ = scale_rows(W0)
    state = UnmixState(W=W0, row_scales=scales, lr=cfg.learning_rate(0))

    batch = min(cfg.batch_samples, n)
    pos = 0
    # W snapshots for the windowed drift used as the stopping statistic
    trail = collections.deque([W0], maxlen=cfg.convergence_window + 1)
    for epoch in range(cfg.max_epochs):
        scales, Wn = scale_rows(state.W)
        idx = (pos + np.arange(batch)) % n
        pos = (pos + batch) % n
        xb = Xf[idx]
        if chip is None:
            y = xb @ state.W.T
            W_loaded = state.W
        else:
            load = chip.load_weights(Wn, fs)
            rng_e = np.random.default_rng(noise_seeds.spawn(1)[0])
            raw = chip.row_outputs(xb, rng_e)[load.blanked_samples :]
            y = raw * (scales / chip.config.gain)[None, :]
            W_loaded = scales[:, None] * chip.loaded_matrix()
        state = replace(state, row_scales=scales, W_loaded=W_loaded)
        state = infomax_step(state, y, cfg)
        if A is not None:
            state.history[-1]["amari"] = amari_index(_complex_or_real(W_loaded @ A, cfg))
        trail.append(state.W)
        # mean per-epoch relative change over the last `convergence_window`
        # epochs (fewer while the trail is still filling)
        span = len(trail) - 1
        drift = np.linalg.norm(trail[-1] - trail[0]) / (span * np.linalg.norm(trail[-1]))
        state.history[-1]["drift"] = float(drift)
        if drift < cfg.convergence_tol and epoch + 1 >= cfg.min_epochs:
            break
    state = replace(state, converged=bool(drift < cfg.convergence_tol))

    scales, Wn = scale_rows(state.W)
    if chip is None:
        Y = X @ state.W.T
        state = replace(state, row_scales=scales, W_loaded=state.W.copy(), blanked_samples=0)
    else:
        load = chip.load_weights(Wn, fs)
        rng_f = np.random.default_rng(noise_seeds.spawn(1)[0])
        Y = chip.row_outputs(Xf, rng_f)
        state = replace(
            state,
            row_scales=scales,
            W_loaded=scales[:, None] * chip.loaded_matrix(),
            blanked_samples=load.blanked_samples,
        )
    return state, Y


def _complex_or_real(G, cfg):
    return real_to_complex(G)[0] if cfg.complex_structured else G


class PairingReport(NamedTuple):
    pairs: tuple
    coherence: tuple
    residual: float


def _quadrature_coherence(W):
    """c[p, q] = <row_q, row_p K> / (|row_p| |row_q|), K rotating each rail pair by 90 deg."""
    m = W.shape[1]
    K = complex_to_real(np.eye(m // 2) * 1j).T
    norms = np.linalg.norm(W, axis=1)
    norms[norms == 0] = 1.0
    rot = W @ K
    return (W @ rot.T).T / np.outer(norms, norms)


def _perfect_matchings(items):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for k, other in enumerate(rest):
        for tail in _perfect_matchings(rest[:k] + rest[k + 1 :]):
            yield [(first, other)] + tail


def pair_outputs(W, complex_structured=False):
    """Group 2n real output rows into n complex outputs (1-based row pairs).

    A complex output (p, q) has row q equal to row p with every rail pair
    rotated by 90 degrees. The best perfect matching by |coherence| is
    returned; the residual is 1 minus the mean matched |coherence|.
    """
    W = np.asarray(W, dtype=float)
    m = W.shape[0]
    if m % 2:
        raise ValueError("need an even number of output rows")
    if complex_structured:
        pairs = tuple((2 * k + 1, 2 * k + 2) for k in range(m // 2))
        return PairingReport(pairs, tuple(1.0 for _ in pairs), real_to_complex(W)[1])
    C = _quadrature_coherence(W)
    best, best_score = None, -np.inf
    for matching in _perfect_matchings(list(range(m))):
        score = sum(abs(C[p, q]) for p, q in matching)
        if score > best_score:
            best, best_score = matching, score
    pairs, coh = [], []
    for p, q in best:
        if C[p, q] < 0:
            p, q = q, p
        pairs.append((p + 1, q + 1))
        coh.append(float(C[p, q]))
    pairs, coh = zip(*sorted(zip(pairs, coh)))
    return PairingReport(tuple(pairs), tuple(coh), float(1.0 - np.mean(np.abs(coh))))


class InfomaxUnmixer(TransformerMixin, BaseEstimator):
    """Infomax unmixing estimator, optionally trained through a chip model.

    Parameters mirror :class:`IcaConfig`. ``chip`` is a
    :class:`~rfbss.chipmodel.MatrixMultiplierChip` or ``None`` for an ideal
    digital path; ``fs`` is the stream sample rate.

    Attributes
    ----------
    unmixing_ : ndarray of shape (n_channels, n_channels)
        Dequantized matrix actually loaded (row scales applied).
    state_ : UnmixState
    n_iter_ : int
    converged_ : bool
    """

    def __init__(
        self,
        rule="extended_sub",
        lr_initial=0.2,
        lr_decay=0.01,
        batch_samples=16384,
        max_epochs=3000,
        complex_structured=True,
        whiten=True,
        convergence_tol=5e-5,
        convergence_window=100,
        min_epochs=0,
        init_jitter=0.0,
        seed=0,
        chip=None,
        fs=100e6,
    ):
        self.rule = rule
        self.lr_initial = lr_initial
        self.lr_decay = lr_decay
        self.batch_samples = batch_samples
        self.max_epochs = max_epochs
        self.complex_structured = complex_structured
        self.whiten = whiten
        self.convergence_tol = convergence_tol
        self.convergence_window = convergence_window
        self.min_epochs = min_epochs
        self.init_jitter = init_jitter
        self.seed = seed
        self.chip = chip
        self.fs = fs

    @classmethod
    def from_config(cls, cfg, chip=None, fs=100e6):
        return cls(**cfg.to_dict(), chip=chip, fs=fs)

    def _config(self):
        return IcaConfig(
            rule=self.rule,
            lr_initial=self.lr_initial,
            lr_decay=self.lr_decay,
            batch_samples=self.batch_samples,
            max_epochs=self.max_epochs,
            complex_structured=self.complex_structured,
            whiten=self.whiten,
            convergence_tol=self.convergence_tol,
            convergence_window=self.convergence_window,
            min_epochs=self.min_epochs,
            init_jitter=self.init_jitter,
            seed=self.seed,
        )

    def fit(self, X, y=None, mixing=None):
        X = check_streams(X)
        self.n_features_in_ = X.shape[1]
        state, _ = run_bss(X, self.chip, self._config(), self.fs, A=mixing)
        self.state_ = state
        self.unmixing_ = state.W_loaded
        self.n_iter_ = state.iteration
        self.converged_ = state.converged
        return self

    def transform(self, X):
        check_is_fitted(self, "unmixing_")
        X = check_streams(X, self.n_features_in_)
        return X @ self.unmixing_.T

    def pairing(self):
        check_is_fitted(self, "unmixing_")
        return pair_outputs(self.unmixing_, self.complex_structured)
