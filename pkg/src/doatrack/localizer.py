"""Frame-wise multi-speaker localization over the candidate grid.

Observed features are explained by a complex Gaussian mixture with one
component per candidate direction; the only free parameter is the simplex
of component weights, updated online per frame by an entropy-regularized
exponentiated-gradient step.  Silent frames decay the weights toward
uniform; spatial smoothing couples neighboring directions so peaks track
moving sources smoothly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .dprtf import FeatureSet
from .steering import CandidateGrid

logger = logging.getLogger(__name__)

EXP_CLAMP = 50.0          # exponent bound in the multiplicative update
WEIGHT_FLOOR = 1e-300     # keeps weights strictly positive under underflow
DENSITY_FLOOR = 1e-300


@dataclass
class LocalizerParams:
    variance: float = 0.1            # complex-Gaussian component variance
    step: float = 0.07               # gradient update factor
    entropy_weight: float = 0.1      # sparsity regularization factor
    silent_step: float = 0.065       # decay toward uniform on empty frames
    smooth_weight: float = 0.02      # spatial neighbor coupling
    peak_threshold: float = 0.05
    peak_min_separation_deg: float = 15.0

    def __post_init__(self):
        if min(self.variance, self.step, self.entropy_weight, self.silent_step) <= 0:
            raise ValueError("variance, step, entropy_weight, silent_step must be > 0")


def uniform_weights(count: int) -> np.ndarray:
    return np.full(count, 1.0 / count)


def component_likelihoods(features: FeatureSet, grid: CandidateGrid,
                          variance: float) -> np.ndarray:
    """Complex-Gaussian density of each feature under each candidate.

    Returns shape ``(len(features), D)``:
    ``exp(-|c_obs - c_pred|^2 / variance) / (pi * variance)``, floored to
    stay strictly positive.
    """
    predicted = grid.predicted[features.bins, features.channels - 1, :]
    sq = np.abs(features.values[:, None] - predicted) ** 2
    dens = np.exp(-sq / variance) / (np.pi * variance)
    return np.maximum(dens, DENSITY_FLOOR)


def nll_gradient(weights: np.ndarray, likelihoods: np.ndarray) -> np.ndarray:
    """Gradient of the normalized negative log-likelihood at ``weights``.

    ``g_d = -(1/K) sum_k L[k, d] / sum_d' w_d' L[k, d']``.
    """
    mix = likelihoods @ weights
    return -np.mean(likelihoods / mix[:, None], axis=0)


def eg_update(weights: np.ndarray, likelihoods: np.ndarray,
              params: LocalizerParams) -> np.ndarray:
    """One exponentiated-gradient step on the weight simplex.

    Multiplicative update ``w_d <- w_d * r_d / sum(w r)`` with
    ``r_d = exp(-eta * (dNLL/dw_d + gamma * dH/dw_d))`` evaluated at the
    previous weights; ``dH/dw_d = -(1 + log w_d)``.  Exponents are clamped
    to +-50 to guard overflow for near-zero weights inside the log.
    """
    grad = nll_gradient(weights, likelihoods)
    grad_entropy = -(1.0 + np.log(weights))
    exponent = -params.step * (grad + params.entropy_weight * grad_entropy)
    if np.any(np.abs(exponent) > EXP_CLAMP):
        logger.debug("EG exponent clamped on %d directions",
                     int(np.count_nonzero(np.abs(exponent) > EXP_CLAMP)))
        exponent = np.clip(exponent, -EXP_CLAMP, EXP_CLAMP)
    updated = weights * np.exp(exponent)
    updated = np.maximum(updated, WEIGHT_FLOOR)
    return updated / updated.sum()


def silent_decay(weights: np.ndarray, silent_step: float) -> np.ndarray:
    """Relax the weights toward uniform when no features were observed."""
    count = len(weights)
    return (1.0 - silent_step) * weights + silent_step / count


def spatial_smooth(weights: np.ndarray, smooth_weight: float = 0.02) -> np.ndarray:
    """Circular three-tap smoothing, renormalized to the simplex."""
    smoothed = (
        weights
        + smooth_weight * np.roll(weights, 1)
        + smooth_weight * np.roll(weights, -1)
    ) / (1.0 + 2.0 * smooth_weight)
    return smoothed / smoothed.sum()


def peak_select(weights: np.ndarray, azimuths_deg: np.ndarray, threshold: float,
                min_separation_deg: float = 15.0) -> list[tuple[float, float]]:
    """Circular local maxima above ``threshold``, greedily thinned.

    Peaks are kept in descending weight order subject to a mutual circular
    separation of at least ``min_separation_deg``.  Returns
    ``[(azimuth_deg, weight), ...]``; plateau points (ties with a
    neighbor) are not peaks.
    """
    is_peak = (weights > np.roll(weights, 1)) & (weights > np.roll(weights, -1))
    is_peak &= weights > threshold
    order = np.nonzero(is_peak)[0]
    order = order[np.argsort(-weights[order], kind="stable")]
    kept: list[int] = []
    for d in order:
        az = azimuths_deg[d]
        if all(circular_distance_deg(az, azimuths_deg[k]) >= min_separation_deg
               for k in kept):
            kept.append(d)
    return [(float(azimuths_deg[d]), float(weights[d])) for d in kept]


def circular_distance_deg(a, b):
    """Wrap-aware absolute azimuth difference, in [0, 180]."""
    return np.abs((np.asarray(a) - np.asarray(b) + 180.0) % 360.0 - 180.0)


class OnlineLocalizer:
    """Sequential per-frame weight estimation over a recording.

    The weight vector is initialized uniform; frames with features apply
    the exponentiated-gradient update followed by spatial smoothing,
    frames without features decay toward uniform.
    """

    def __init__(self, grid: CandidateGrid, params: LocalizerParams | None = None):
        self.grid = grid
        self.params = params or LocalizerParams()
        self.weights = uniform_weights(grid.count)

    def update(self, features: FeatureSet) -> np.ndarray:
        """Consume one frame's features; returns a copy of the weights."""
        if len(features) == 0:
            self.weights = silent_decay(self.weights, self.params.silent_step)
        else:
            lik = component_likelihoods(features, self.grid, self.params.variance)
            self.weights = eg_update(self.weights, lik, self.params)
            self.weights = spatial_smooth(self.weights, self.params.smooth_weight)
        return self.weights.copy()

    def peaks(self) -> list[tuple[float, float]]:
        return peak_select(self.weights, self.grid.azimuths_deg,
                           self.params.peak_threshold,
                           self.params.peak_min_separation_deg)
