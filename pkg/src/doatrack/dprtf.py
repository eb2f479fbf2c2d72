"""Online direct-path relative transfer function (DP-RTF) estimation.

Per frequency bin, the room response is modeled as a short FIR filter in
the STFT domain (Q taps across frames).  Cross-relation equations between
microphone pairs are solved online by recursive least squares with
exponential forgetting; the ratio of first filter taps between a channel
and the reference channel is the DP-RTF, a reverberation-robust
localization feature.  Noise is handled by recursive PSD smoothing,
minimum-statistics speech/noise classification and inter-frame spectral
subtraction.  Features estimated against two different reference channels
are cross-validated before being emitted.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InputError

logger = logging.getLogger(__name__)

# Guard against a degenerate reference-channel estimate in the consistency
# test and against a vanishing gain denominator in the RLS recursion.
REF_GUARD = 1e-12
DENOM_GUARD = 1e-12


def normalize_feature(c: np.ndarray) -> np.ndarray:
    """Map a complex feature into the unit disk: ``c / sqrt(1 + |c|^2)``.

    Monotone and bijective on magnitude; observed and predicted features
    both pass through this map so they live in the same space.
    """
    c = np.asarray(c)
    return c / np.sqrt(1.0 + np.abs(c) ** 2)


def relative_ctf_length(channel_count: int, ctf_frames: int) -> int:
    """Length of the relative filter vector: I*Q - 1."""
    return channel_count * ctf_frames - 1


def microphone_pairs(channel_count: int) -> list[tuple[int, int]]:
    """All distinct channel pairs (i, j), i < j, 0-based, M = I(I-1)/2."""
    return [
        (i, j)
        for i in range(channel_count - 1)
        for j in range(i + 1, channel_count)
    ]


def forgetting_factor(channel_count: int, ctf_frames: int, rho: float = 1.0) -> float:
    """Forgetting factor from the estimation-window rule.

    The estimator needs ``rho * (I*Q - 1)`` equations and each frame
    supplies ``I(I-1)/2`` of them, so the memory is
    ``P = rho * (I*Q - 1) / (I(I-1)/2)`` frames and
    ``lambda = (P - 1) / (P + 1)``.
    """
    pairs = channel_count * (channel_count - 1) / 2
    window = rho * relative_ctf_length(channel_count, ctf_frames) / pairs
    lam = (window - 1.0) / (window + 1.0)
    if not 0.0 < lam <= 1.0:
        raise InputError(
            f"forgetting factor {lam:.4f} outside (0, 1]; "
            f"increase rho or the filter length"
        )
    return lam


# ---------------------------------------------------------------------------
# Cross-relation system
# ---------------------------------------------------------------------------

def build_cross_relations(
    vectors: np.ndarray, ref: int = 0
) -> tuple[np.ndarray, np.ndarray]:
    """Build one cross-relation row per microphone pair.

    Parameters
    ----------
    vectors : np.ndarray
        Per-channel Q-vectors, shape ``(..., I, Q)``; entry ``[..., i, q]``
        is the value at frame lag ``q`` for channel ``i`` (current frame
        first).  Either raw STFT convolution vectors or noise-subtracted
        PSD vectors.
    ref : int
        Reference channel whose first filter tap is constrained to 1.

    Returns
    -------
    regressors : np.ndarray, shape ``(M, ..., I*Q - 1)``
    targets : np.ndarray, shape ``(M, ...)``
        For pair (i, j) the stacked length-I*Q vector holds ``vectors[j]``
        in block i and ``-vectors[i]`` in block j; the entry multiplying
        the constrained tap (index ``ref*Q``) is removed and negated into
        the target.
    """
    vectors = np.asarray(vectors)
    ichans, q = vectors.shape[-2], vectors.shape[-1]
    lead = vectors.shape[:-2]
    pairs = microphone_pairs(ichans)
    full = np.zeros((len(pairs),) + lead + (ichans * q,), dtype=vectors.dtype)
    for m, (i, j) in enumerate(pairs):
        full[m, ..., i * q:(i + 1) * q] = vectors[..., j, :]
        full[m, ..., j * q:(j + 1) * q] = -vectors[..., i, :]
    drop = ref * q
    targets = -full[..., drop]
    regressors = np.delete(full, drop, axis=-1)
    return regressors, targets


def dprtf_indices(channel_count: int, ctf_frames: int, ref: int = 0) -> np.ndarray:
    """Positions of the first-tap ratios inside the relative filter vector.

    Returns the index of ``a^i_0 / a^ref_0`` for every channel ``i != ref``
    (ascending channel order) after the constrained entry was removed.
    """
    idx = []
    for i in range(channel_count):
        if i == ref:
            continue
        pos = i * ctf_frames
        if pos > ref * ctf_frames:
            pos -= 1
        idx.append(pos)
    return np.asarray(idx, dtype=np.intp)


def extract_dprtf(estimate: np.ndarray, channel_count: int, ctf_frames: int,
                  ref: int = 0) -> np.ndarray:
    """First-tap ratios for all channels except ``ref`` (implicitly 1)."""
    return np.asarray(estimate)[..., dprtf_indices(channel_count, ctf_frames, ref)]


# ---------------------------------------------------------------------------
# Recursive least squares
# ---------------------------------------------------------------------------

@dataclass
class RlsState:
    """Per-bin RLS state: relative filter estimate and inverse covariance."""

    estimate: np.ndarray      # (I*Q - 1,) complex
    inv_cov: np.ndarray       # (I*Q - 1, I*Q - 1) complex, Hermitian
    forgetting: float
    frames_seen: int = 0

    @classmethod
    def initial(cls, length: int, forgetting: float) -> "RlsState":
        return cls(
            estimate=np.zeros(length, dtype=np.complex128),
            inv_cov=np.eye(length, dtype=np.complex128),
            forgetting=float(forgetting),
        )


def _batched_rls_frame(estimate, inv_cov, regressors, targets):
    """Run one frame of RLS over a batch of independent systems, in place.

    estimate : (B, n) complex, updated in place
    inv_cov : (B, n, n) complex, updated in place; the carry-in forgetting
        scale (``P / lambda``) is the caller's responsibility, since it
        applies only when a previous frame exists.
    regressors : (M, B, n); targets : (M, B)

    Returns a boolean mask of batch entries whose inverse covariance was
    reset to identity because of a degenerate or non-finite update.
    """
    nbatch, n = estimate.shape
    reset = np.zeros(nbatch, dtype=bool)
    for m in range(regressors.shape[0]):
        x = regressors[m]
        err = targets[m] - (x * estimate).sum(axis=1)
        # inv_cov is Hermitian and the rank-one update preserves that
        # (real denominator), so P x* = conj(x^T P): one matvec serves
        # both the gain numerator and the row update.
        xp = np.matmul(x[:, None, :], inv_cov)[:, 0, :]
        denom = 1.0 + (x * np.conj(xp)).sum(axis=1).real
        bad = (np.abs(denom) < DENOM_GUARD) | ~np.isfinite(denom)
        if np.any(bad):
            reset |= bad
            denom = np.where(bad, 1.0, denom)
        gain = np.conj(xp) / denom[:, None]
        if np.any(bad):
            gain[bad] = 0.0
        inv_cov -= gain[:, :, None] * xp[:, None, :]
        estimate += err[:, None] * gain
    # Symmetrize once per frame against floating-point drift.
    np.add(inv_cov, np.conj(np.swapaxes(inv_cov, -1, -2)), out=inv_cov)
    inv_cov *= 0.5
    diagonal = np.einsum("bii->bi", inv_cov)
    nonfinite = ~(
        np.all(np.isfinite(estimate), axis=-1)
        & np.all(np.isfinite(diagonal), axis=-1)
    )
    reset |= nonfinite
    if np.any(reset):
        inv_cov[reset] = np.eye(n)
        estimate[nonfinite] = 0.0
        logger.warning("RLS inverse-covariance reset on %d bins", int(reset.sum()))
    return reset


def rls_frame_update(state: RlsState, regressors: np.ndarray,
                     targets: np.ndarray) -> RlsState:
    """One frame of recursive least squares over all microphone pairs.

    Carries in the previous frame's solution (scaling the inverse
    covariance by ``1/lambda``; the very first frame starts from the
    identity unscaled) and performs one rank-one update per pair
    (Sherman-Morrison).  Returns a new state; the input is not modified.
    """
    est = state.estimate.copy()[None, :]
    cov = state.inv_cov.copy()[None, :, :]
    if state.frames_seen > 0:
        cov *= 1.0 / state.forgetting
    _batched_rls_frame(est, cov, regressors[:, None, :], targets[:, None])
    return RlsState(estimate=est[0], inv_cov=cov[0],
                    forgetting=state.forgetting,
                    frames_seen=state.frames_seen + 1)


# ---------------------------------------------------------------------------
# PSD tracking, speech/noise classification, spectral subtraction
# ---------------------------------------------------------------------------

def recursive_psd(prev: np.ndarray, conv_vectors: np.ndarray,
                  ref_frame_coeff: np.ndarray, beta: float) -> np.ndarray:
    """Recursively averaged cross-/auto-PSD between the per-channel
    convolution vectors and the current reference-channel coefficient.

    Broadcasts over leading axes: ``prev`` and ``conv_vectors`` have shape
    ``(..., I, Q)``, ``ref_frame_coeff`` shape ``(...,)``.
    """
    ref = np.conj(np.asarray(ref_frame_coeff))[..., None, None]
    return beta * prev + (1.0 - beta) * conv_vectors * ref


def classify_frame(ref_auto_psd, min_psd, kappa: float = 3.0):
    """Speech iff the reference auto-PSD strictly exceeds ``kappa`` times
    its sliding minimum (ties classify as noise)."""
    return np.real(ref_auto_psd) > kappa * np.real(min_psd)


def spectral_subtract(psd: np.ndarray, noise_psd: np.ndarray) -> np.ndarray:
    """Subtract the most recent noise-frame PSD, element-wise."""
    return psd - noise_psd


class MinimumTracker:
    """Sliding minimum of the smoothed reference auto-PSD per bin."""

    def __init__(self, bins: int, window_frames: int):
        self.window = max(1, int(window_frames))
        self._ring = np.full((self.window, bins), np.inf)
        self._count = 0
        self._pos = 0

    @property
    def warmed(self) -> bool:
        return self._count >= 1

    def push(self, values: np.ndarray) -> None:
        self._ring[self._pos] = values
        self._pos = (self._pos + 1) % self.window
        self._count = min(self._count + 1, self.window)

    def minimum(self) -> np.ndarray:
        return self._ring[: self._count].min(axis=0) if self._count else None


# ---------------------------------------------------------------------------
# Consistency test
# ---------------------------------------------------------------------------

def consistency_similarity(first: np.ndarray, second: np.ndarray) -> np.ndarray:
    """Cosine of the angle between (1, first) and (1, second)."""
    num = np.abs(1.0 + np.conj(first) * second)
    den = np.sqrt((1.0 + np.abs(first) ** 2) * (1.0 + np.abs(second) ** 2))
    return num / den


def consistency_test(first: np.ndarray, second: np.ndarray,
                     threshold: float = 0.75) -> tuple[np.ndarray, np.ndarray]:
    """Keep features whose two reference estimates agree.

    Parameters
    ----------
    first, second : np.ndarray
        Two estimates of the same first-tap ratio (reference-1 stream and
        re-referenced reference-2 stream), any common shape.
    threshold : float
        Similarity must strictly exceed this value.

    Returns
    -------
    keep : boolean mask
    fused : np.ndarray
        Averaged and disk-normalized features (valid where ``keep``).
    """
    keep = consistency_similarity(first, second) > threshold
    fused = normalize_feature(0.5 * (first + second))
    return keep, fused


# ---------------------------------------------------------------------------
# Streaming extractor
# ---------------------------------------------------------------------------

@dataclass
class FeatureSet:
    """Validated DP-RTF features of one frame.

    ``bins``/``channels`` identify each feature: the FFT bin index and the
    0-based channel index in ``1..I-1`` (channel 0 is the reference whose
    feature is identically 1 and never emitted).  May be empty.
    """

    frame: int
    bins: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))
    channels: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.intp))
    values: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.complex128))

    def __len__(self) -> int:
        return len(self.values)


@dataclass
class ExtractorConfig:
    ctf_frames: int = 8
    rho: float = 1.0
    forgetting: float | None = None     # derived from rho when None
    psd_beta: float = 0.9
    classify_kappa: float = 3.0
    classify_window_s: float = 1.5
    consistency_threshold: float = 0.75
    noise_handling: bool = True


class DpRtfExtractor:
    """Streaming DP-RTF estimator over a set of frequency bins.

    Bins are mutually independent: all state is per-bin and updated with
    vectorized batch operations; within a bin, frames and microphone pairs
    are processed strictly in order.  Two RLS streams are maintained, one
    per reference channel (0 and 1), feeding the consistency test.
    """

    def __init__(self, channel_count: int, bins: np.ndarray, sample_rate: int,
                 hop_samples: int, config: ExtractorConfig | None = None):
        if channel_count < 2:
            raise InputError("need at least 2 channels")
        self.config = config or ExtractorConfig()
        cfg = self.config
        self.channel_count = channel_count
        self.bins = np.asarray(bins, dtype=np.intp)
        if self.bins.size == 0:
            raise InputError("empty frequency-bin selection")
        self.ctf_frames = cfg.ctf_frames
        self.forgetting = (
            cfg.forgetting
            if cfg.forgetting is not None
            else forgetting_factor(channel_count, cfg.ctf_frames, cfg.rho)
        )
        nb = len(self.bins)
        n = relative_ctf_length(channel_count, cfg.ctf_frames)
        self._history = np.zeros((nb, channel_count, cfg.ctf_frames),
                                 dtype=np.complex128)
        self._psd = np.zeros_like(self._history)
        self._noise_psd = np.zeros_like(self._history)
        self._have_noise = np.zeros(nb, dtype=bool)
        window_frames = round(cfg.classify_window_s * sample_rate / hop_samples)
        self._min_tracker = MinimumTracker(nb, window_frames)
        self._estimates = [np.zeros((nb, n), dtype=np.complex128) for _ in range(2)]
        eye = np.eye(n, dtype=np.complex128)
        self._inv_covs = [np.tile(eye, (nb, 1, 1)) for _ in range(2)]
        self._updated = [np.zeros(nb, dtype=bool) for _ in range(2)]
        self._dprtf_idx = [
            dprtf_indices(channel_count, cfg.ctf_frames, ref) for ref in (0, 1)
        ]
        self.frame = 0
        self.skipped_no_noise = 0

    def classify(self) -> np.ndarray:
        """Current speech mask over the configured bins."""
        if not self._min_tracker.warmed:
            return np.zeros(len(self.bins), dtype=bool)
        return classify_frame(self._psd[:, 0, 0], self._min_tracker.minimum(),
                              self.config.classify_kappa)

    def update(self, frame_coeffs: np.ndarray) -> FeatureSet:
        """Consume one STFT frame, ``(channels, all_bins)`` complex.

        Returns the validated feature set of this frame (possibly empty).
        """
        cfg = self.config
        x = frame_coeffs[:, self.bins]          # (I, B)
        self._history[:, :, 1:] = self._history[:, :, :-1]
        self._history[:, :, 0] = x.T

        if cfg.noise_handling:
            self._psd = recursive_psd(self._psd, self._history, x[0], cfg.psd_beta)
            self._min_tracker.push(self._psd[:, 0, 0].real)
            speech = self.classify()
            noise = ~speech
            # Snapshot of the most recent noise frame, per bin.
            self._noise_psd[noise] = self._psd[noise]
            self._have_noise |= noise
            active = speech & self._have_noise
            self.skipped_no_noise += int(np.count_nonzero(speech & ~self._have_noise))
            row_vectors = spectral_subtract(self._psd[active],
                                            self._noise_psd[active])
        else:
            active = np.ones(len(self.bins), dtype=bool)
            row_vectors = self._history

        self.frame += 1
        if not np.any(active):
            return FeatureSet(frame=self.frame - 1)

        ratios = []
        for ref in (0, 1):
            regressors, targets = build_cross_relations(row_vectors, ref=ref)
            est = self._estimates[ref][active]
            cov = self._inv_covs[ref][active]
            seen = self._updated[ref][active]
            cov[seen] *= 1.0 / self.forgetting
            _batched_rls_frame(est, cov, regressors, targets)
            self._estimates[ref][active] = est
            self._inv_covs[ref][active] = cov
            self._updated[ref][active] = True
            ratios.append(est[:, self._dprtf_idx[ref]])

        return self._emit(active, ratios[0], ratios[1])

    def _emit(self, active, ref1_ratios, ref2_ratios) -> FeatureSet:
        """Cross-validate the two reference streams and collect features."""
        cfg = self.config
        ichans = self.channel_count
        # ref-1 stream: columns are channels 1..I-1 (ratios a^i_0 / a^1_0).
        # ref-2 stream: columns are channels 0, 2, .., I-1 (over a^2_0).
        cbar1 = ref2_ratios[:, 0]
        valid = np.abs(cbar1) >= REF_GUARD
        second = np.empty_like(ref1_ratios)
        with np.errstate(divide="ignore", invalid="ignore"):
            second[:, 0] = 1.0 / cbar1
            if ichans > 2:
                second[:, 1:] = ref2_ratios[:, 1:] / cbar1[:, None]
        keep, fused = consistency_test(ref1_ratios, second,
                                       cfg.consistency_threshold)
        keep &= valid[:, None]
        bin_rows = np.nonzero(active)[0]
        rows, cols = np.nonzero(keep)
        return FeatureSet(
            frame=self.frame - 1,
            bins=self.bins[bin_rows[rows]],
            channels=cols + 1,
            values=fused[rows, cols],
        )

    def dprtf_estimates(self, ref: int = 0) -> np.ndarray:
        """Current first-tap ratio estimates, shape ``(bins, I-1)``."""
        return self._estimates[ref][:, self._dprtf_idx[ref]]

    def state_snapshot(self, ref: int = 0):
        """Copies of the per-bin RLS state (for tests and inspection)."""
        return self._estimates[ref].copy(), self._inv_covs[ref].copy()
