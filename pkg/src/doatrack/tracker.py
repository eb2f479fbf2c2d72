"""Variational Bayesian multi-speaker tracking over weighted directions.

Each tracked speaker carries a Gaussian posterior over a 3-dimensional
state: a unit 2-vector for the azimuth plus a scalar angular velocity.
Every tracker step consumes all candidate directions with their localizer
weights as observations; a variational EM loop alternates a closed-form
assignment posterior (E-Z), per-speaker Gaussian state updates (E-S) and
re-estimation of the per-speaker dynamics covariance (M).  A birth test
over a short window of consistently unexplained observations spawns new
tracks; per-track speech activity is read off the assignment posterior.
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

STATE_DIM = 3
COV_REGULARIZATION = 1e-8
COV_EIGEN_FLOOR = 1e-10
DYN_EIGEN_FLOOR = 1e-8
DIRECTION_GUARD = 1e-9

# Projection from state space onto the direction observation space.
PROJECTION = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


@dataclass
class TrackerParams:
    """Model constants; defaults follow the reference operating point."""

    obs_cov: np.ndarray = field(default_factory=lambda: 0.03 * np.eye(2))
    max_speakers: int = 5
    dt: float = 0.032
    vem_iterations: int = 5
    # Density of the no-speaker component.  The speaker likelihood is a
    # planar Gaussian while observations live on the unit circle, so this
    # constant is a free likelihood-ratio scale; 1.5 makes the published
    # activity threshold (sum over 3 steps > 0.15) separate a uniform
    # silent-field from a locked-on track.
    outlier_density: float = 1.5
    birth_window: int = 3                          # L: window is L+1 frames
    birth_threshold: float = 0.75
    birth_min_weight: float | None = None          # default 2/D at runtime
    birth_guard_deg: float = 20.0                  # no births this close to a track
    birth_prior_var: float = 1e4
    birth_dynamics_var: float = 1e-3
    activity_window: int = 3                       # L'
    activity_threshold: float = 0.15               # delta

    def __post_init__(self):
        self.obs_cov = np.asarray(self.obs_cov, dtype=float)
        if self.obs_cov.shape != (2, 2):
            raise ValueError("obs_cov must be 2x2")
        if self.dt <= 0:
            raise ValueError("dt must be positive")

    @property
    def obs_precision(self) -> np.ndarray:
        return np.linalg.inv(self.obs_cov)

    @property
    def assignment_prior(self) -> float:
        # Uniform over speakers and the no-speaker case.
        return 1.0 / (self.max_speakers + 1)


@dataclass
class ObservationSet:
    """All candidate directions of one tracker step with their weights."""

    directions: np.ndarray    # (D, 2) unit vectors
    weights: np.ndarray       # (D,) in [0, 1]
    frame: int
    t_seconds: float


@dataclass
class Track:
    mean: np.ndarray          # (3,) [unit direction; angular velocity rad/s]
    cov: np.ndarray           # (3, 3) symmetric positive definite
    dyn_cov: np.ndarray       # (3, 3) symmetric PSD
    identity: int
    birth_frame: int
    activity_scores: list[float] = field(default_factory=list)
    active: bool = False

    @property
    def azimuth_deg(self) -> float:
        return float(np.rad2deg(np.arctan2(self.mean[1], self.mean[0])))

    @property
    def angular_velocity_deg_s(self) -> float:
        return float(np.rad2deg(self.mean[2]))


def transition_matrix(mean_prev: np.ndarray, dt: float) -> np.ndarray:
    """Linearized rotation dynamics around the previous direction."""
    theta = np.arctan2(mean_prev[1], mean_prev[0])
    return np.array([
        [1.0, 0.0, -np.sin(theta) * dt],
        [0.0, 1.0, np.cos(theta) * dt],
        [0.0, 0.0, 1.0],
    ])


def predict(mean: np.ndarray, cov: np.ndarray, dyn_cov: np.ndarray,
            dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Propagate a Gaussian state one step through the dynamics."""
    dmat = transition_matrix(mean, dt)
    mean_pred = dmat @ mean
    cov_pred = dmat @ cov @ dmat.T + dyn_cov
    return mean_pred, symmetrize(cov_pred)


def symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def clamp_psd(mat: np.ndarray, floor: float) -> np.ndarray:
    """Project a symmetric matrix onto the PSD cone with an eigen floor."""
    vals, vecs = np.linalg.eigh(symmetrize(mat))
    if vals[0] >= floor:
        return symmetrize(mat)
    return symmetrize((vecs * np.maximum(vals, floor)) @ vecs.T)


def normalize_direction(mean: np.ndarray,
                        fallback: np.ndarray | None = None) -> np.ndarray:
    """Renormalize the direction part of a state mean to unit length."""
    out = mean.copy()
    norm = np.hypot(out[0], out[1])
    if norm < DIRECTION_GUARD:
        logger.warning("degenerate direction norm %.3g, keeping fallback", norm)
        out[:2] = fallback[:2] if fallback is not None else (1.0, 0.0)
    else:
        out[:2] /= norm
    return out


def e_s_step(mean_prev: np.ndarray, cov_prev: np.ndarray, dyn_cov: np.ndarray,
             obs: ObservationSet, alpha_n: np.ndarray,
             params: TrackerParams) -> tuple[np.ndarray, np.ndarray]:
    """Gaussian state posterior of one speaker given soft assignments.

    Fuses the predicted Gaussian with the assignment-weighted direction
    observations in information form; the direction part of the returned
    mean is renormalized to unit length.
    """
    dmat = transition_matrix(mean_prev, params.dt)
    pred_cov = symmetrize(dmat @ cov_prev @ dmat.T + dyn_cov)
    try:
        pred_info = np.linalg.inv(pred_cov)
    except np.linalg.LinAlgError:
        logger.warning("singular predicted covariance, regularizing")
        pred_info = np.linalg.inv(pred_cov + COV_REGULARIZATION * np.eye(STATE_DIM))
    proj_info = PROJECTION.T @ params.obs_precision @ PROJECTION
    mass = float(np.sum(alpha_n * obs.weights))
    cov = np.linalg.inv(mass * proj_info + pred_info)
    cov = clamp_psd(cov, COV_EIGEN_FLOOR)
    weighted_obs = (alpha_n * obs.weights) @ obs.directions     # (2,)
    mean = cov @ (
        PROJECTION.T @ params.obs_precision @ weighted_obs
        + pred_info @ (dmat @ mean_prev)
    )
    return normalize_direction(mean, fallback=dmat @ mean_prev), symmetrize(cov)


def e_z_step(means: np.ndarray, covs: np.ndarray, obs: ObservationSet,
             params: TrackerParams) -> np.ndarray:
    """Assignment posterior ``alpha[d, n]``, n = 0 meaning no speaker.

    For speakers the responsibility combines the weighted-data Gaussian
    likelihood with a trace correction for state uncertainty; the
    no-speaker case is uniform over the observation space.  Rows
    normalize to 1; a fully underflowed row falls back to the no-speaker
    column.
    """
    count_d = len(obs.weights)
    count_n = len(means)
    rho = np.empty((count_d, count_n + 1))
    rho[:, 0] = params.outlier_density
    if count_n:
        prec = params.obs_precision
        det = np.linalg.det(params.obs_cov)
        w = obs.weights                                          # (D,)
        for n in range(count_n):
            diff = obs.directions - means[n][:2]                 # (D, 2)
            mahal = np.einsum("di,ij,dj->d", diff, prec, diff)
            trace_term = np.trace(prec @ covs[n][:2, :2])
            rho[:, n + 1] = (
                w / (2.0 * np.pi * np.sqrt(det))
                * np.exp(-0.5 * w * (mahal + trace_term))
            )
    scaled = rho * params.assignment_prior
    totals = scaled.sum(axis=1)
    dead = totals <= 0.0
    if np.any(dead):
        logger.warning("assignment underflow on %d observations",
                       int(dead.sum()))
        scaled[dead] = 0.0
        scaled[dead, 0] = 1.0
        totals[dead] = 1.0
    return scaled / totals[:, None]


def m_step(mean_t: np.ndarray, cov_t: np.ndarray, mean_prev: np.ndarray,
           cov_prev: np.ndarray, dt: float) -> np.ndarray:
    """Dynamics covariance maximizing the expected complete-data likelihood.

    ``Lambda = Gamma_t - D Gamma_{t-1} D^T + innov innov^T`` projected to
    the PSD cone with the eigenvalue floor.
    """
    dmat = transition_matrix(mean_prev, dt)
    innovation = mean_t - dmat @ mean_prev
    raw = cov_t - dmat @ cov_prev @ dmat.T + np.outer(innovation, innovation)
    return clamp_psd(raw, DYN_EIGEN_FLOOR)


def birth_test(directions: np.ndarray, weights: np.ndarray,
               params: TrackerParams) -> tuple[float, np.ndarray, np.ndarray]:
    """Score a short observation sequence as a potential new track.

    Runs a Kalman filter from a broad Gaussian prior (velocity mean 0)
    over the sequence and accumulates the peak-normalized predictive
    likelihood of every observation after the first.  The returned score
    is the per-frame geometric mean, in (0, 1]: close to 1 for sequences
    consistent with the dynamics model, small for scattered ones.  Also
    returns the final posterior (mean, cov) used to initialize a track.
    """
    steps = len(weights)
    if steps < 2:
        raise ValueError("birth test needs at least 2 observations")
    mean = np.array([directions[0, 0], directions[0, 1], 0.0])
    cov = params.birth_prior_var * np.eye(STATE_DIM)
    dyn = params.birth_dynamics_var * np.eye(STATE_DIM)
    log_score = 0.0
    mean, cov = _kalman_update(mean, cov, directions[0], weights[0], params)
    for i in range(1, steps):
        mean, cov = predict(mean, cov, dyn, params.dt)
        innov = directions[i] - PROJECTION @ mean
        innov_cov = (
            PROJECTION @ cov @ PROJECTION.T
            + params.obs_cov / max(weights[i], 1e-12)
        )
        log_score += -0.5 * float(innov @ np.linalg.solve(innov_cov, innov))
        mean, cov = _kalman_update(mean, cov, directions[i], weights[i], params)
    score = float(np.exp(log_score / (steps - 1)))
    return score, normalize_direction(mean), symmetrize(cov)


def _kalman_update(mean, cov, direction, weight, params):
    obs_cov = params.obs_cov / max(weight, 1e-12)
    innov_cov = PROJECTION @ cov @ PROJECTION.T + obs_cov
    gain = cov @ PROJECTION.T @ np.linalg.inv(innov_cov)
    mean = mean + gain @ (direction - PROJECTION @ mean)
    cov = symmetrize((np.eye(STATE_DIM) - gain @ PROJECTION) @ cov)
    return mean, cov


def activity_detect(scores: list[float], window: int, threshold: float) -> bool:
    """Speech activity: windowed sum of assignment-weighted weights."""
    return float(np.sum(scores[-window:])) > threshold


class MultiSpeakerTracker:
    """Online tracker consuming one ObservationSet per step."""

    def __init__(self, params: TrackerParams | None = None):
        self.params = params or TrackerParams()
        self.tracks: list[Track] = []
        self._next_identity = 1
        self._birth_buffer: deque = deque(maxlen=self.params.birth_window + 1)
        self.frame = 0

    def step(self, obs: ObservationSet) -> np.ndarray:
        """Run one VEM frame; returns the assignment posterior (D, N+1)."""
        params = self.params
        alpha = self._vem_frame(obs)
        for n, track in enumerate(self.tracks):
            score = float(np.sum(alpha[:, n + 1] * obs.weights))
            track.activity_scores.append(score)
            track.active = activity_detect(
                track.activity_scores, params.activity_window,
                params.activity_threshold,
            )
        self._birth_step(obs, alpha)
        self.frame += 1
        return alpha

    def _vem_frame(self, obs: ObservationSet) -> np.ndarray:
        params = self.params
        if not self.tracks:
            alpha = np.zeros((len(obs.weights), 1))
            alpha[:, 0] = 1.0
            return alpha
        prev = [(tr.mean.copy(), tr.cov.copy()) for tr in self.tracks]
        predictions = [predict(m, c, tr.dyn_cov, params.dt)
                       for (m, c), tr in zip(prev, self.tracks)]
        means = np.stack([p[0] for p in predictions])
        covs = np.stack([p[1] for p in predictions])
        alpha = None
        for _ in range(params.vem_iterations):
            alpha = e_z_step(means, covs, obs, params)
            for n, track in enumerate(self.tracks):
                means[n], covs[n] = e_s_step(
                    prev[n][0], prev[n][1], track.dyn_cov, obs,
                    alpha[:, n + 1], params,
                )
            for n, track in enumerate(self.tracks):
                track.dyn_cov = m_step(means[n], covs[n], prev[n][0],
                                       prev[n][1], params.dt)
        for n, track in enumerate(self.tracks):
            track.mean = means[n]
            track.cov = covs[n]
        return alpha

    def _birth_step(self, obs: ObservationSet, alpha: np.ndarray) -> None:
        params = self.params
        min_weight = (
            params.birth_min_weight
            if params.birth_min_weight is not None
            else 2.0 / len(obs.weights)
        )
        unassigned = np.argmax(alpha, axis=1) == 0
        # A yet-untracked speaker shows up as a heatmap peak; restricting
        # candidates to circular local maxima keeps the skirt of an
        # already-tracked peak (and flat silence) from spawning tracks.
        # Observations are the candidate grid in circular order.
        local_max = (obs.weights > np.roll(obs.weights, 1)) \
            & (obs.weights > np.roll(obs.weights, -1))
        eligible = unassigned & local_max & (obs.weights > min_weight)
        if self.tracks and params.birth_guard_deg > 0:
            # A candidate this close to a live track is a lagging re-capture,
            # not a new speaker; vetoing it avoids stacked twin tracks.
            obs_az = np.degrees(np.arctan2(obs.directions[:, 1],
                                           obs.directions[:, 0]))
            for track in self.tracks:
                sep = np.abs((obs_az - track.azimuth_deg + 180.0) % 360.0 - 180.0)
                eligible &= sep > params.birth_guard_deg
        if np.any(eligible):
            best = np.argmax(np.where(eligible, obs.weights, -np.inf))
            self._birth_buffer.append(
                (obs.directions[best].copy(), float(obs.weights[best]))
            )
        else:
            self._birth_buffer.append(None)
        if (
            len(self._birth_buffer) == params.birth_window + 1
            and all(entry is not None for entry in self._birth_buffer)
            and len(self.tracks) < params.max_speakers
        ):
            dirs = np.stack([entry[0] for entry in self._birth_buffer])
            weights = np.array([entry[1] for entry in self._birth_buffer])
            score, mean, cov = birth_test(dirs, weights, params)
            if score > params.birth_threshold:
                self.tracks.append(Track(
                    mean=mean,
                    cov=clamp_psd(cov, COV_EIGEN_FLOOR),
                    dyn_cov=params.birth_dynamics_var * np.eye(STATE_DIM),
                    identity=self._next_identity,
                    birth_frame=self.frame,
                ))
                self._next_identity += 1
                self._birth_buffer.clear()
