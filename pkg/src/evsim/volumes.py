"""Event streams and their spatiotemporal volume representation.

Events are accumulated into a fixed-size volume with B temporal bins per
polarity (positive-polarity bins first, concatenated along the channel
axis), using a linear temporal kernel. Volumes are clip-normalized against
the 98th percentile of their non-zero values so that hot pixels do not
skew the range.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import BadMagicError, PolarityError, TruncatedFileError

VOLUME_MAGIC = b"EVOL"
_VOLUME_HEADER = struct.Struct("<4sHHHB5x")  # magic, bins, height, width, normalized


@dataclass(frozen=True)
class Event:
    """A single camera event: pixel position, time in seconds, polarity."""

    x: int
    y: int
    t: float
    p: int

    def __post_init__(self):
        if self.p not in (1, -1):
            raise PolarityError(f"polarity must be +1 or -1, got {self.p}")
        if self.x < 0 or self.y < 0:
            raise ValueError(f"event position must be non-negative, got ({self.x}, {self.y})")


class EventStream:
    """An ordered event sequence over a fixed sensor resolution.

    Stored as structure-of-arrays for vectorized processing. Timestamps
    must be non-decreasing; positions must lie inside the sensor.
    """

    def __init__(self, x, y, t, p, width: int, height: int):
        self.x = np.ascontiguousarray(x, dtype=np.int64)
        self.y = np.ascontiguousarray(y, dtype=np.int64)
        self.t = np.ascontiguousarray(t, dtype=np.float64)
        self.p = np.ascontiguousarray(p, dtype=np.int64)
        self.width = int(width)
        self.height = int(height)
        n = len(self.x)
        if not (len(self.y) == len(self.t) == len(self.p) == n):
            raise ValueError("event component arrays must have equal length")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("sensor resolution must be positive")
        if n:
            bad = np.flatnonzero(~np.isin(self.p, (1, -1)))
            if bad.size:
                raise PolarityError(f"event {bad[0]} has polarity {self.p[bad[0]]}, expected +1 or -1")
            oob = np.flatnonzero(
                (self.x < 0) | (self.x >= self.width) | (self.y < 0) | (self.y >= self.height)
            )
            if oob.size:
                i = oob[0]
                raise ValueError(
                    f"event {i} at ({self.x[i]}, {self.y[i]}) outside sensor {self.width}x{self.height}"
                )
            if np.any(np.diff(self.t) < 0):
                i = int(np.flatnonzero(np.diff(self.t) < 0)[0]) + 1
                raise ValueError(f"timestamps must be non-decreasing (violated at event {i})")

    @classmethod
    def empty(cls, width: int, height: int) -> "EventStream":
        return cls([], [], [], [], width, height)

    @classmethod
    def from_events(cls, events, width: int, height: int) -> "EventStream":
        events = list(events)
        return cls(
            [e.x for e in events],
            [e.y for e in events],
            [e.t for e in events],
            [e.p for e in events],
            width,
            height,
        )

    def __len__(self) -> int:
        return len(self.x)

    def __getitem__(self, i: int) -> Event:
        return Event(int(self.x[i]), int(self.y[i]), float(self.t[i]), int(self.p[i]))

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, EventStream):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.y, other.y)
            and np.array_equal(self.t, other.t)
            and np.array_equal(self.p, other.p)
        )

    def slice_time(self, t0: float, t1: float) -> "EventStream":
        """Events with t in the half-open interval [t0, t1)."""
        lo = np.searchsorted(self.t, t0, side="left")
        hi = np.searchsorted(self.t, t1, side="left")
        return EventStream(self.x[lo:hi], self.y[lo:hi], self.t[lo:hi], self.p[lo:hi],
                           self.width, self.height)


@dataclass
class EventVolume:
    """Spatiotemporal event grid: [2B, H, W], positive-polarity bins first."""

    data: np.ndarray
    num_bins: int
    normalized: bool = False

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or self.data.shape[0] != 2 * self.num_bins:
            raise ValueError(
                f"volume must have shape [2B, H, W] with B={self.num_bins}, got {self.data.shape}"
            )
        if self.data.size and float(self.data.min()) < 0:
            raise ValueError("volume values must be non-negative")
        if self.normalized and self.data.size and float(self.data.max()) > 1.0:
            raise ValueError("normalized volume values must lie in [0, 1]")

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def positive(self) -> np.ndarray:
        return self.data[: self.num_bins]

    @property
    def negative(self) -> np.ndarray:
        return self.data[self.num_bins:]


@dataclass
class FramePair:
    """Two grayscale frames in [0, 1] plus the events between them.

    Event timestamps lie in the half-open interval [t0, t1).
    """

    i0: np.ndarray
    i1: np.ndarray
    t0: float
    t1: float
    events: EventStream = field(repr=False)

    def __post_init__(self):
        self.i0 = np.asarray(self.i0, dtype=np.float32)
        self.i1 = np.asarray(self.i1, dtype=np.float32)
        if self.i0.shape != self.i1.shape or self.i0.ndim != 2:
            raise ValueError(f"frames must be 2D and same shape, got {self.i0.shape} vs {self.i1.shape}")
        if not self.t0 < self.t1:
            raise ValueError(f"need t0 < t1, got {self.t0} >= {self.t1}")
        if len(self.events) and (self.events.t[0] < self.t0 or self.events.t[-1] >= self.t1):
            raise ValueError(
                f"event timestamps must lie in [{self.t0}, {self.t1}), "
                f"got range [{self.events.t[0]}, {self.events.t[-1]}]"
            )


def _scatter_linear(t_star, xs, ys, num_bins, height, width):
    """Accumulate max(0, 1 - |bin - t*|) weights into a [B, H, W] grid.

    Contributions are sorted into a canonical (voxel, weight) order before
    accumulation so the float result is independent of event order.
    """
    grid = np.zeros(num_bins * height * width, dtype=np.float64)
    if len(t_star) == 0:
        return grid.reshape(num_bins, height, width)
    lo = np.floor(t_star).astype(np.int64)
    frac = t_star - lo
    idx = np.concatenate([lo, lo + 1])
    w = np.concatenate([1.0 - frac, frac])
    px = np.concatenate([xs, xs])
    py = np.concatenate([ys, ys])
    keep = (idx >= 0) & (idx < num_bins) & (w > 0)
    flat = idx[keep] * (height * width) + py[keep] * width + px[keep]
    w = w[keep]
    order = np.lexsort((w, flat))
    np.add.at(grid, flat[order], w[order])
    return grid.reshape(num_bins, height, width)


def build_volume(stream: EventStream, num_bins: int = 9,
                 width: int | None = None, height: int | None = None) -> EventVolume:
    """Scatter a stream into a [2B, H, W] volume with a linear temporal kernel.

    Bin coordinates are t* = (B-1)(t - t_first) / (t_last - t_first), taken
    over the whole stream so both polarity sub-volumes stay aligned; a
    degenerate time span maps every event to t* = 0. Each polarity is
    scattered independently and the positive sub-volume comes first.
    """
    width = stream.width if width is None else int(width)
    height = stream.height if height is None else int(height)
    if num_bins < 1:
        raise ValueError(f"num_bins must be >= 1, got {num_bins}")
    if len(stream):
        oob = np.flatnonzero((stream.x >= width) | (stream.y >= height))
        if oob.size:
            i = int(oob[0])
            raise ValueError(
                f"event {i} at ({stream.x[i]}, {stream.y[i]}) outside volume {width}x{height}"
            )
    data = np.zeros((2 * num_bins, height, width), dtype=np.float64)
    if len(stream):
        t0, t1 = stream.t[0], stream.t[-1]
        span = t1 - t0
        if span > 0:
            t_star = (num_bins - 1) * (stream.t - t0) / span
        else:
            t_star = np.zeros(len(stream), dtype=np.float64)
        pos = stream.p > 0
        data[:num_bins] = _scatter_linear(t_star[pos], stream.x[pos], stream.y[pos],
                                          num_bins, height, width)
        data[num_bins:] = _scatter_linear(t_star[~pos], stream.x[~pos], stream.y[~pos],
                                          num_bins, height, width)
    return EventVolume(data.astype(np.float32), num_bins=num_bins)


def nonzero_percentile(values: np.ndarray, q: float = 98.0) -> float:
    """Nearest-rank percentile of the non-zero entries: ceil(q/100 * n)-th smallest."""
    nz = values[values != 0]
    if nz.size == 0:
        raise ValueError("no non-zero values")
    rank = int(np.ceil(q / 100.0 * nz.size))
    rank = min(max(rank, 1), nz.size)
    return float(np.sort(nz, kind="stable")[rank - 1])


def normalize_volume(v: EventVolume) -> EventVolume:
    """Clip at the 98th percentile of non-zero values and scale into [0, 1].

    An all-zero volume is returned unchanged (flagged normalized).
    """
    if v.normalized:
        raise ValueError("volume is already normalized")
    if not np.any(v.data):
        return EventVolume(v.data.copy(), num_bins=v.num_bins, normalized=True)
    eta = nonzero_percentile(v.data, 98.0)
    out = np.minimum(v.data, np.float32(eta)) / np.float32(eta)
    return EventVolume(out, num_bins=v.num_bins, normalized=True)


def collapse_time(v: EventVolume, signed: bool = False) -> np.ndarray:
    """Sum the volume along time, returning a [1, H, W] image.

    By default both polarities add (activity magnitude); with signed=True
    the negative sub-volume is subtracted instead.
    """
    if signed:
        img = v.positive.sum(axis=0) - v.negative.sum(axis=0)
    else:
        img = v.data.sum(axis=0)
    return img[None].astype(np.float32)


def average_timestamp_image(stream: EventStream) -> np.ndarray:
    """Per-pixel mean event timestamp, zero where a pixel saw no events."""
    total = np.zeros((stream.height, stream.width), dtype=np.float64)
    count = np.zeros((stream.height, stream.width), dtype=np.float64)
    np.add.at(total, (stream.y, stream.x), stream.t)
    np.add.at(count, (stream.y, stream.x), 1.0)
    with np.errstate(invalid="ignore"):
        img = np.where(count > 0, total / np.maximum(count, 1), 0.0)
    return img


def event_count_image(stream: EventStream) -> np.ndarray:
    """Per-pixel event count."""
    count = np.zeros((stream.height, stream.width), dtype=np.float64)
    np.add.at(count, (stream.y, stream.x), 1.0)
    return count


def volume_average_timestamp_image(v: EventVolume) -> np.ndarray:
    """Mass-weighted mean bin index per pixel, in [0, 1]; zero where empty.

    Volume analogue of average_timestamp_image, used to visualize generated
    volumes the same way recorded streams are.
    """
    bins = np.concatenate([np.arange(v.num_bins), np.arange(v.num_bins)]).astype(np.float64)
    mass = v.data.sum(axis=0)
    weighted = (v.data * bins[:, None, None]).sum(axis=0)
    denom = max(v.num_bins - 1, 1)
    with np.errstate(invalid="ignore"):
        img = np.where(mass > 0, weighted / np.maximum(mass, 1e-30) / denom, 0.0)
    return img


def write_volume(v: EventVolume, path) -> None:
    """Write a volume: 16-byte header then little-endian float32 [2B, H, W] data."""
    header = _VOLUME_HEADER.pack(VOLUME_MAGIC, v.num_bins, v.height, v.width,
                                 1 if v.normalized else 0)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(v.data, dtype="<f4").tobytes())


def read_volume(path) -> EventVolume:
    with open(path, "rb") as f:
        header = f.read(_VOLUME_HEADER.size)
        if len(header) < _VOLUME_HEADER.size:
            raise TruncatedFileError(
                f"volume header truncated at byte {len(header)}", offset=len(header)
            )
        magic, bins, height, width, normalized = _VOLUME_HEADER.unpack(header)
        if magic != VOLUME_MAGIC:
            raise BadMagicError(f"bad volume magic {magic!r}, expected {VOLUME_MAGIC!r}")
        payload = f.read()
    expected = 2 * bins * height * width * 4
    if len(payload) != expected:
        raise TruncatedFileError(
            f"volume payload is {len(payload)} bytes, expected {expected}",
            offset=_VOLUME_HEADER.size + len(payload),
        )
    data = np.frombuffer(payload, dtype="<f4").reshape(2 * bins, height, width)
    return EventVolume(data.copy(), num_bins=bins, normalized=bool(normalized))
