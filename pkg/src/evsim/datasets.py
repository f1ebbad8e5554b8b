"""On-disk formats and dataset sampling.

Event streams are stored in a little-endian binary format (magic
"EVSTRM1\\0", sensor resolution, record count, then packed 13-byte records).
Sequences pair a frame table with one event file via a plain-text manifest.
Samplers draw frame pairs a configurable gap apart together with the events
in between (half-open interval, so consecutive pairs never double-count).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import BadMagicError, ConfigError, PolarityError, TruncatedFileError
from .simulate import AffineMotion, ThresholdModel, affine_sim_events
from .volumes import EventStream, FramePair

EVENTS_MAGIC = b"EVSTRM1\x00"
_EVENTS_HEADER = struct.Struct("<8sHHQ")
EVENT_RECORD = np.dtype([("x", "<u2"), ("y", "<u2"), ("t", "<f8"), ("p", "<i1")])


def write_events(stream: EventStream, path) -> None:
    records = np.empty(len(stream), dtype=EVENT_RECORD)
    records["x"] = stream.x
    records["y"] = stream.y
    records["t"] = stream.t
    records["p"] = stream.p
    with open(path, "wb") as f:
        f.write(_EVENTS_HEADER.pack(EVENTS_MAGIC, stream.width, stream.height, len(stream)))
        f.write(records.tobytes())


def read_events(path) -> EventStream:
    with open(path, "rb") as f:
        header = f.read(_EVENTS_HEADER.size)
        if len(header) < _EVENTS_HEADER.size:
            raise TruncatedFileError(
                f"event header truncated at byte {len(header)}", offset=len(header))
        magic, width, height, count = _EVENTS_HEADER.unpack(header)
        if magic != EVENTS_MAGIC:
            raise BadMagicError(f"bad event-file magic {magic!r}, expected {EVENTS_MAGIC!r}")
        payload = f.read()
    expected = count * EVENT_RECORD.itemsize
    if len(payload) != expected:
        offset = _EVENTS_HEADER.size + len(payload)
        raise TruncatedFileError(
            f"event payload ends at byte {offset}, expected {_EVENTS_HEADER.size + expected} "
            f"({count} records of {EVENT_RECORD.itemsize} bytes)", offset=offset)
    records = np.frombuffer(payload, dtype=EVENT_RECORD)
    bad = np.flatnonzero(~np.isin(records["p"], (1, -1)))
    if bad.size:
        raise PolarityError(f"record {bad[0]} has polarity {records['p'][bad[0]]}")
    return EventStream(records["x"].astype(np.int64), records["y"].astype(np.int64),
                       records["t"].copy(), records["p"].astype(np.int64), width, height)


def load_grayscale(path) -> np.ndarray:
    """8-bit grayscale image file -> float32 array in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("L"), dtype=np.float32)
    return arr / 255.0


def save_grayscale(image: np.ndarray, path) -> None:
    arr = np.clip(np.asarray(image, dtype=np.float64) * 255.0, 0, 255).round().astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


@dataclass
class SequenceRecord:
    """A recorded sequence: ordered (frame path, timestamp) plus one event file."""

    frames: list[tuple[str, float]]
    events_file: str
    width: int
    height: int
    base_dir: Path

    def __post_init__(self):
        ts = [t for _, t in self.frames]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("frame timestamps must be strictly increasing")

    def frame_path(self, i: int) -> Path:
        return self.base_dir / self.frames[i][0]

    @property
    def events_path(self) -> Path:
        return self.base_dir / self.events_file


def write_manifest(record: SequenceRecord, path) -> None:
    lines = ["# evseq 1",
             f"events {record.events_file}",
             f"resolution {record.width} {record.height}"]
    lines += [f"frame {name} {t:.17g}" for name, t in record.frames]
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path) -> SequenceRecord:
    path = Path(path)
    events_file = None
    width = height = None
    frames: list[tuple[str, float]] = []
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        try:
            if fields[0] == "events":
                events_file = fields[1]
            elif fields[0] == "resolution":
                width, height = int(fields[1]), int(fields[2])
            elif fields[0] == "frame":
                frames.append((fields[1], float(fields[2])))
            else:
                raise ConfigError(f"{path}:{lineno}: unknown manifest key {fields[0]!r}")
        except (IndexError, ValueError) as exc:
            raise ConfigError(f"{path}:{lineno}: malformed manifest line {line!r}") from exc
    if events_file is None or width is None:
        raise ConfigError(f"{path}: manifest must name an event file and a resolution")
    if len(frames) < 2:
        raise ConfigError(f"{path}: manifest needs at least two frames")
    return SequenceRecord(frames, events_file, width, height, base_dir=path.parent)


def sample_pair(record: SequenceRecord, anchor: int, gap: int,
                events: EventStream | None = None) -> FramePair:
    """Frames (anchor, anchor + gap) and the events between them.

    Events may be passed in to avoid re-reading the file per call. The event
    interval is half-open: [t_anchor, t_anchor+gap).
    """
    if gap < 1:
        raise ValueError(f"gap must be >= 1, got {gap}")
    if anchor < 0 or anchor + gap >= len(record.frames):
        raise ValueError(
            f"pair ({anchor}, {anchor + gap}) outside sequence of {len(record.frames)} frames")
    if events is None:
        events = read_events(record.events_path)
    t0 = record.frames[anchor][1]
    t1 = record.frames[anchor + gap][1]
    return FramePair(
        load_grayscale(record.frame_path(anchor)),
        load_grayscale(record.frame_path(anchor + gap)),
        t0,
        t1,
        events.slice_time(t0, t1),
    )


class SequenceDataset:
    """Frame-pair sampler over one recorded sequence.

    Draws a uniform gap from gap_range and a uniform anchor, then returns
    the pair with its inter-frame events.
    """

    def __init__(self, record: SequenceRecord, gap_range: tuple[int, int] = (1, 6)):
        lo, hi = gap_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad gap range {gap_range}")
        if hi >= len(record.frames):
            raise ValueError(
                f"gap range {gap_range} exceeds sequence of {len(record.frames)} frames")
        self.record = record
        self.gap_range = (lo, hi)
        self.events = read_events(record.events_path)
        if len(self.events):
            t_first, t_last = record.frames[0][1], record.frames[-1][1]
            if self.events.t[0] < t_first or self.events.t[-1] > t_last:
                raise ValueError(
                    f"events span [{self.events.t[0]}, {self.events.t[-1]}] outside "
                    f"frame interval [{t_first}, {t_last}]")

    def draw(self, rng: np.random.Generator) -> tuple[int, int]:
        gap = int(rng.integers(self.gap_range[0], self.gap_range[1] + 1))
        anchor = int(rng.integers(0, len(self.record.frames) - gap))
        return anchor, gap

    def sample(self, rng: np.random.Generator) -> FramePair:
        anchor, gap = self.draw(rng)
        return sample_pair(self.record, anchor, gap, events=self.events)


class ToyMovingShapes:
    """Synthetic moving-shape pairs with events from the affine simulator.

    Each sample renders a smooth background with one or two high-contrast
    shapes and simulates a random in-plane motion; the crossing-based
    simulator provides the "real" events.
    """

    def __init__(self, size: int = 64, theta: float = 0.25, num_substeps: int = 24,
                 max_shift: float = 6.0, noise_sigma: float = 0.0):
        self.size = size
        self.model = ThresholdModel(theta=theta, noise_sigma=noise_sigma)
        self.num_substeps = num_substeps
        self.max_shift = max_shift

    def _render_scene(self, rng: np.random.Generator) -> np.ndarray:
        import scipy.ndimage as ndi

        s = self.size
        img = ndi.gaussian_filter(rng.uniform(0, 1, size=(s, s)), s / 16.0)
        lo, hi = img.min(), img.max()
        img = 0.35 + 0.2 * (img - lo) / max(hi - lo, 1e-9)
        for _ in range(int(rng.integers(1, 3))):
            value = rng.choice([0.05, 0.95])
            cx, cy = rng.uniform(s * 0.25, s * 0.75, size=2)
            half = rng.uniform(s * 0.08, s * 0.2)
            if rng.random() < 0.5:
                x0, x1 = int(max(cx - half, 0)), int(min(cx + half, s))
                y0, y1 = int(max(cy - half, 0)), int(min(cy + half, s))
                img[y0:y1, x0:x1] = value
            else:
                yy, xx = np.mgrid[0:s, 0:s]
                img[(xx - cx) ** 2 + (yy - cy) ** 2 < half**2] = value
        return img

    def sample(self, rng: np.random.Generator) -> FramePair:
        img = self._render_scene(rng)
        shift = rng.uniform(2.0, self.max_shift) * rng.choice([-1, 1], size=2)
        motion = AffineMotion(
            translation=(float(shift[0]), float(shift[1])),
            rotation=float(rng.uniform(-0.04, 0.04)),
            scale=float(rng.uniform(0.98, 1.02)),
            num_substeps=self.num_substeps,
        )
        seed = int(rng.integers(0, 2**31 - 1))
        _, pair = affine_sim_events(img, motion, 0.1, self.model, seed=seed)
        return pair


class PairPool:
    """Materialized sample pool over another dataset.

    Pregenerates `size` frame pairs once (simulation is the expensive part)
    and serves uniform draws; crop/flip augmentation downstream keeps the
    effective variety up.
    """

    def __init__(self, dataset, size: int, seed: int = 0):
        if size < 1:
            raise ValueError(f"pool size must be >= 1, got {size}")
        rng = np.random.default_rng(seed)
        self.pairs = [dataset.sample(rng) for _ in range(size)]

    def __len__(self) -> int:
        return len(self.pairs)

    def sample(self, rng: np.random.Generator) -> FramePair:
        return self.pairs[int(rng.integers(0, len(self.pairs)))]


def weighted_dataset_sampler(datasets, weights, seed: int = 0):
    """Infinite iterator of frame pairs drawn from weighted datasets."""
    if len(datasets) != len(weights) or not datasets:
        raise ValueError("need matching, non-empty datasets and weights")
    p = np.asarray(weights, dtype=np.float64)
    if np.any(p < 0) or p.sum() <= 0:
        raise ValueError(f"weights must be non-negative with positive sum, got {weights}")
    p = p / p.sum()
    rng = np.random.default_rng(seed)
    while True:
        i = int(rng.choice(len(datasets), p=p))
        yield datasets[i].sample(rng)
