"""Classical event simulators.

Two deterministic baselines: direct log-intensity differencing of a frame
pair, and an affine-warp simulator that renders intermediate frames and
tracks per-pixel reference crossings (with optional Gaussian noise on the
contrast threshold, sampled once per call as a static per-pixel field).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.ndimage as ndi

from .volumes import EventStream, FramePair

# Counts within this relative slack of the next threshold multiple round up:
# the trigger count floor(|dL|/theta) sits exactly at a float boundary for
# analytic fixtures like dL = 3*theta.
_COUNT_SLACK = 1e-4

# Keep simulated timestamps strictly inside the generation interval.
_INTERVAL_SHRINK = 1.0 - 1e-12

MIN_THRESHOLD = 0.01


@dataclass(frozen=True)
class ThresholdModel:
    """Contrast-threshold model: trigger level, per-pixel noise, log offset."""

    theta: float = 0.2
    noise_sigma: float = 0.0
    log_eps: float = 1e-3

    def __post_init__(self):
        if self.theta <= 0:
            raise ValueError(f"theta must be > 0, got {self.theta}")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.log_eps <= 0:
            raise ValueError(f"log_eps must be > 0, got {self.log_eps}")


@dataclass(frozen=True)
class AffineMotion:
    """Affine motion over a simulation interval, about the image center."""

    translation: tuple[float, float] = (0.0, 0.0)  # (dx, dy) pixels
    rotation: float = 0.0  # radians
    scale: float = 1.0
    num_substeps: int = 20

    def __post_init__(self):
        if self.num_substeps < 1:
            raise ValueError(f"num_substeps must be >= 1, got {self.num_substeps}")
        if self.scale <= 0:
            raise ValueError(f"scale must be > 0, got {self.scale}")


def sample_threshold_field(model: ThresholdModel, width: int, height: int,
                           seed: int = 0) -> np.ndarray:
    """Per-pixel contrast thresholds: N(theta, sigma^2), clamped to >= 0.01."""
    if model.noise_sigma == 0:
        return np.full((height, width), model.theta, dtype=np.float64)
    rng = np.random.default_rng(seed)
    field = rng.normal(model.theta, model.noise_sigma, size=(height, width))
    return np.maximum(field, MIN_THRESHOLD)


def _log_image(img: np.ndarray, eps: float) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if np.any(img < 0):
        raise ValueError("pixel values must be non-negative")
    return np.log(img + eps)


def _assemble(xs, ys, ts, ps, width, height) -> EventStream:
    order = np.lexsort((xs, ys, ts))
    return EventStream(xs[order], ys[order], ts[order], ps[order], width, height)


def frame_pair_events(i0: np.ndarray, i1: np.ndarray, dt: float,
                      model: ThresholdModel, seed: int = 0,
                      t_start: float = 0.0) -> EventStream:
    """Events from the log-intensity difference of two frames.

    A pixel with log change dL emits floor(|dL| / theta) events of polarity
    sign(dL), timestamped at the linear crossing fractions i*theta/|dL|
    across [t_start, t_start + dt].
    """
    i0 = np.asarray(i0)
    i1 = np.asarray(i1)
    if i0.shape != i1.shape or i0.ndim != 2:
        raise ValueError(f"frames must be 2D and same shape, got {i0.shape} vs {i1.shape}")
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    height, width = i0.shape
    theta = sample_threshold_field(model, width, height, seed)
    delta = _log_image(i1, model.log_eps) - _log_image(i0, model.log_eps)
    counts = np.floor(np.abs(delta) / theta + _COUNT_SLACK).astype(np.int64)
    total = int(counts.sum())
    if total == 0:
        return EventStream.empty(width, height)
    ys, xs = np.nonzero(counts)
    k = counts[ys, xs]
    rep_x = np.repeat(xs, k)
    rep_y = np.repeat(ys, k)
    rep_p = np.repeat(np.sign(delta[ys, xs]).astype(np.int64), k)
    # per-pixel crossing index 1..k
    idx = np.arange(total) - np.repeat(np.cumsum(k) - k, k) + 1
    frac = idx * np.repeat(theta[ys, xs] / np.abs(delta[ys, xs]), k)
    ts = t_start + dt * np.minimum(frac, _INTERVAL_SHRINK)
    return _assemble(rep_x, rep_y, ts, rep_p, width, height)


def _backward_affine(motion: AffineMotion, fraction: float, shape):
    """(matrix, offset) mapping output (row, col) to input coords at a motion fraction."""
    tx, ty = (fraction * motion.translation[0], fraction * motion.translation[1])
    phi = fraction * motion.rotation
    s = 1.0 + fraction * (motion.scale - 1.0)
    fwd_xy = s * np.array([[np.cos(phi), -np.sin(phi)],
                           [np.sin(phi), np.cos(phi)]])
    if abs(np.linalg.det(fwd_xy)) < 1e-12:
        raise ValueError(f"affine transform is not invertible (scale factor {s})")
    inv_xy = np.linalg.inv(fwd_xy)
    h, w = shape
    center = np.array([(w - 1) / 2.0, (h - 1) / 2.0])
    offset_xy = center - inv_xy @ (center + np.array([tx, ty]))
    return inv_xy[::-1, ::-1].copy(), offset_xy[::-1].copy()


def affine_sim_events(image: np.ndarray, motion: AffineMotion, duration: float,
                      model: ThresholdModel, seed: int = 0) -> tuple[EventStream, FramePair]:
    """Simulate events for an image undergoing an affine motion.

    Renders num_substeps bilinear warps at evenly spaced motion fractions and
    emits an event whenever a pixel's log intensity crosses its running
    reference by a threshold step, advancing the reference per crossing.
    Timestamps interpolate linearly in log intensity within each substep.
    """
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 2:
        raise ValueError(f"image must be 2D, got shape {image.shape}")
    if duration <= 0:
        raise ValueError(f"duration must be > 0, got {duration}")
    height, width = image.shape
    theta = sample_threshold_field(model, width, height, seed)
    log_prev = _log_image(image, model.log_eps)
    reference = log_prev.copy()
    first_frame = image.copy()
    last_frame = image.copy()

    xs_all, ys_all, ts_all, ps_all = [], [], [], []
    n_steps = motion.num_substeps
    undersampled = False
    for step in range(1, n_steps + 1):
        fraction = step / n_steps
        matrix, offset = _backward_affine(motion, fraction, image.shape)
        frame = ndi.affine_transform(image, matrix, offset=offset, order=1, mode="nearest")
        frame = np.maximum(frame, 0.0)
        log_cur = _log_image(frame, model.log_eps)
        step_change = np.abs(log_cur - log_prev)
        changed = int(np.count_nonzero(step_change > 1e-12))
        coarse = int(np.count_nonzero(step_change >= theta))
        if changed and coarse >= max(16, 0.01 * image.size) and coarse / changed > 0.5:
            undersampled = True

        delta = log_cur - reference
        counts = np.floor(np.abs(delta) / theta + _COUNT_SLACK).astype(np.int64)
        total = int(counts.sum())
        if total:
            ys, xs = np.nonzero(counts)
            k = counts[ys, xs]
            sign = np.sign(delta[ys, xs])
            rep_x = np.repeat(xs, k)
            rep_y = np.repeat(ys, k)
            rep_p = np.repeat(sign.astype(np.int64), k)
            idx = np.arange(total) - np.repeat(np.cumsum(k) - k, k) + 1
            levels = np.repeat(reference[ys, xs], k) + idx * np.repeat(sign * theta[ys, xs], k)
            denom = np.repeat(log_cur[ys, xs] - log_prev[ys, xs], k)
            frac = np.clip((levels - np.repeat(log_prev[ys, xs], k)) / denom, 0.0, _INTERVAL_SHRINK)
            t0 = duration * (step - 1) / n_steps
            t1 = duration * step / n_steps
            xs_all.append(rep_x)
            ys_all.append(rep_y)
            ts_all.append(t0 + (t1 - t0) * frac)
            ps_all.append(rep_p)
            reference[ys, xs] += counts[ys, xs] * np.sign(delta[ys, xs]) * theta[ys, xs]
        log_prev = log_cur
        last_frame = frame
    if undersampled:
        warnings.warn(
            "inter-substep log change exceeded the threshold at most moving pixels; "
            "increase num_substeps for faithful timestamps",
            stacklevel=2,
        )
    if xs_all:
        stream = _assemble(np.concatenate(xs_all), np.concatenate(ys_all),
                           np.concatenate(ts_all), np.concatenate(ps_all), width, height)
    else:
        stream = EventStream.empty(width, height)
    scale = max(first_frame.max(), last_frame.max(), 1.0)
    pair = FramePair(first_frame / scale, last_frame / scale, 0.0, duration, stream)
    return stream, pair
