"""Spike encoders and output decoding.

Three encoding schemes:

* poisson: Bernoulli-per-step approximation of a homogeneous Poisson
  process: element with value v fires each step with p = v * lambda_max * dt.
* ttfs: time-to-first-spike: one spike at round((1 - v) * (T - 1));
  zero-valued elements stay silent.
* dvs: emulated event camera: the image is translated along a saccade
  path and each pixel emits ON/OFF events when its log-intensity moves
  more than the contrast threshold away from its reference level.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import PathOutOfBounds, RateOverflow

EVENT_MAGIC = b"SPKB"
EVENT_VERSION = 1
EVENT_CSV_HEADER = "t,neuron,polarity"

SCHEMES = ("poisson", "ttfs", "dvs")


@dataclass
class SpikeEvents:
    """Time-ordered event list. polarity: +1 ON, -1 OFF, 0 unsigned."""

    t: np.ndarray
    neuron: np.ndarray
    polarity: np.ndarray
    horizon_steps: int
    dt: float

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=np.int64)
        self.neuron = np.asarray(self.neuron, dtype=np.int64)
        self.polarity = np.asarray(self.polarity, dtype=np.int8)
        if not (len(self.t) == len(self.neuron) == len(self.polarity)):
            raise ValueError("event column lengths disagree")
        if self.horizon_steps <= 0 or self.dt <= 0:
            raise ValueError("horizon_steps and dt must be positive")
        if len(self.t):
            if self.t.min() < 0 or self.t.max() >= self.horizon_steps:
                raise ValueError("event timestep outside [0, horizon_steps)")
            if not np.all(np.isin(self.polarity, (-1, 0, 1))):
                raise ValueError("polarity must be in {-1, 0, 1}")
            key = np.lexsort((self.polarity, self.neuron, self.t))
            if not np.array_equal(key, np.arange(len(self.t))):
                raise ValueError("events must be sorted by (t, neuron)")
            stacked = np.stack([self.t, self.neuron, self.polarity.astype(np.int64)])
            if np.unique(stacked, axis=1).shape[1] != len(self.t):
                raise ValueError("duplicate (t, neuron, polarity) event")

    def __len__(self):
        return len(self.t)

    def to_dense(self, n_neurons: int, signed: bool = True) -> np.ndarray:
        """(T, n) float array; ON/unsigned events add +1, OFF adds -1 when
        signed, else OFF also adds +1."""
        out = np.zeros((self.horizon_steps, n_neurons))
        vals = self.polarity.astype(np.float64)
        vals[vals == 0] = 1.0
        if not signed:
            vals = np.abs(vals)
        np.add.at(out, (self.t, self.neuron), vals)
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write(EVENT_CSV_HEADER + "\n")
            for t, n, p in zip(self.t, self.neuron, self.polarity):
                f.write(f"{t},{n},{p}\n")

    @classmethod
    def from_csv(cls, path, horizon_steps: int, dt: float) -> "SpikeEvents":
        rows = []
        with open(path) as f:
            header = f.readline().strip()
            if header != EVENT_CSV_HEADER:
                raise ValueError(f"bad event CSV header {header!r}")
            for line in f:
                if line.strip():
                    rows.append(tuple(int(x) for x in line.split(",")))
        cols = np.array(rows, dtype=np.int64).reshape(-1, 3).T
        return cls(cols[0], cols[1], cols[2], horizon_steps, dt)

    def to_binary(self, path) -> None:
        """Fixed-width little-endian container; see docs/formats.md."""
        with open(path, "wb") as f:
            f.write(EVENT_MAGIC)
            f.write(struct.pack("<IIdQ", EVENT_VERSION, self.horizon_steps,
                                self.dt, len(self.t)))
            for t, n, p in zip(self.t, self.neuron, self.polarity):
                f.write(struct.pack("<IIb", t, n, p))

    @classmethod
    def from_binary(cls, path) -> "SpikeEvents":
        with open(path, "rb") as f:
            if f.read(4) != EVENT_MAGIC:
                raise ValueError(f"{path}: not an event container")
            version, horizon, dt, count = struct.unpack("<IIdQ", f.read(24))
            if version != EVENT_VERSION:
                raise ValueError(f"unsupported event container version {version}")
            rec = struct.Struct("<IIb")
            data = f.read()
        if len(data) != rec.size * count:
            raise ValueError(f"{path}: expected {count} records")
        rows = [rec.unpack_from(data, i * rec.size) for i in range(count)]
        cols = np.array(rows, dtype=np.int64).reshape(-1, 3).T
        return cls(cols[0], cols[1], cols[2], horizon, dt)


def _events_from_dense(spikes: np.ndarray, polarity, horizon, dt) -> SpikeEvents:
    """Build events from a boolean (T, n) array; nonzero in row-major order
    is already sorted by (t, neuron)."""
    t_idx, n_idx = np.nonzero(spikes)
    if np.isscalar(polarity):
        pol = np.full(len(t_idx), polarity, dtype=np.int8)
    else:
        pol = polarity[t_idx, n_idx]
    return SpikeEvents(t_idx, n_idx, pol, horizon, dt)


@dataclass
class EncoderConfig:
    lambda_max: float = 300.0  # peak firing rate, Hz
    dt: float = 1e-3
    horizon_steps: int = 100
    seed: int = 0
    scheme: str = "poisson"

    def __post_init__(self):
        if self.dt <= 0 or self.horizon_steps <= 0:
            raise ValueError("dt and horizon_steps must be positive")
        if self.lambda_max < 0:
            raise ValueError("lambda_max must be >= 0")
        if self.lambda_max * self.dt > 1.0 + 1e-12:
            raise RateOverflow(
                f"lambda_max*dt = {self.lambda_max * self.dt} exceeds 1"
            )
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")


def poisson_spike_matrix(values: np.ndarray, cfg: EncoderConfig,
                         rng=None) -> np.ndarray:
    """Boolean (T, n) spike matrix. One uniform draw per (step, element);
    thresholding the shared draws keeps counts monotone in v for a fixed
    seed."""
    v = np.asarray(values, dtype=np.float64).ravel()
    p = v * cfg.lambda_max * cfg.dt
    if np.any(p > 1.0 + 1e-12):
        raise RateOverflow(f"max per-step probability {p.max()} exceeds 1")
    if np.any(p < 0):
        raise ValueError("negative intensity")
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    u = rng.random((cfg.horizon_steps, v.size))
    return u < p


def poisson_encode(values: np.ndarray, cfg: EncoderConfig, rng=None) -> SpikeEvents:
    if cfg.scheme != "poisson":
        raise ValueError(f"poisson_encode called with scheme {cfg.scheme!r}")
    spikes = poisson_spike_matrix(values, cfg, rng)
    return _events_from_dense(spikes, 1, cfg.horizon_steps, cfg.dt)


def ttfs_encode(values: np.ndarray, cfg: EncoderConfig) -> SpikeEvents:
    """One spike per element at round((1 - v) * (T - 1)); v = 0 is silent."""
    if cfg.scheme != "ttfs":
        raise ValueError(f"ttfs_encode called with scheme {cfg.scheme!r}")
    v = np.asarray(values, dtype=np.float64).ravel()
    if np.any((v < 0) | (v > 1)):
        raise ValueError("ttfs values must lie in [0, 1]")
    live = np.nonzero(v > 0)[0]
    times = np.rint((1.0 - v[live]) * (cfg.horizon_steps - 1)).astype(np.int64)
    order = np.lexsort((live, times))
    return SpikeEvents(times[order], live[order],
                       np.ones(len(live), dtype=np.int8),
                       cfg.horizon_steps, cfg.dt)


@dataclass
class SaccadeConfig:
    """Sensor-motion description for the DVS emulator.

    Default path is a three-segment triangle (right-down, left-down,
    up-back), echoing the three saccades used to build N-MNIST.
    """

    path: tuple = ((0, 0), (5, 5), (-5, 10), (0, 0))
    steps_per_segment: int = 10
    contrast_threshold: float = 0.15
    log_epsilon: float = 0.05

    def __post_init__(self):
        if len(self.path) < 2:
            raise ValueError("path needs at least 2 waypoints")
        if self.contrast_threshold <= 0:
            raise ValueError("contrast_threshold must be positive")
        if self.log_epsilon <= 0:
            raise ValueError("log_epsilon must be positive")


def saccade_offsets(sac: SaccadeConfig) -> np.ndarray:
    """Integer (dx, dy) offset per frame along the linearly interpolated
    path; (len(path)-1) * steps_per_segment + 1 frames."""
    pts = np.asarray(sac.path, dtype=np.float64)
    frames = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        for s in range(1, sac.steps_per_segment + 1):
            frames.append(a + (b - a) * (s / sac.steps_per_segment))
    return np.rint(np.array(frames)).astype(np.int64)


def dvs_emulate(image: np.ndarray, sac: SaccadeConfig, cfg: EncoderConfig,
                gain: float = 1.0) -> SpikeEvents:
    """Temporal-contrast event generation from sensor motion over a static
    image.

    Per pixel, a reference log-intensity r tracks e = log(gain * (v + eps));
    when e - r >= theta an ON event fires, when r - e >= theta an OFF event
    fires, and r jumps to the current level either way. The reference is
    initialized from the first frame, so a static scene emits nothing.
    """
    if cfg.scheme != "dvs":
        raise ValueError(f"dvs_emulate called with scheme {cfg.scheme!r}")
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape
    offsets = saccade_offsets(sac)
    if len(offsets) > cfg.horizon_steps:
        raise ValueError(
            f"path spans {len(offsets)} frames > horizon {cfg.horizon_steps}"
        )
    if np.any(np.abs(offsets[:, 0]) >= w) or np.any(np.abs(offsets[:, 1]) >= h):
        raise PathOutOfBounds("displacement exceeds the image extent")
    pad_x = int(np.abs(offsets[:, 0]).max())
    pad_y = int(np.abs(offsets[:, 1]).max())
    canvas = np.pad(img, ((pad_y, pad_y), (pad_x, pad_x)), mode="edge")

    theta = sac.contrast_threshold
    ref = None
    ts, ns, ps = [], [], []
    for step, (dx, dy) in enumerate(offsets):
        # sensor window slides opposite to the commanded sensor motion
        y0 = pad_y + int(dy)
        x0 = pad_x + int(dx)
        frame = canvas[y0:y0 + h, x0:x0 + w]
        e = np.log(gain * (frame + sac.log_epsilon))
        if ref is None:
            ref = e.copy()
            continue
        on = (e - ref) >= theta
        off = (ref - e) >= theta
        fired = on | off
        ref[fired] = e[fired]
        idx = np.nonzero(fired.ravel())[0]
        ts.extend([step] * len(idx))
        ns.extend(idx.tolist())
        ps.extend(np.where(on.ravel()[idx], 1, -1).astype(int).tolist())
    return SpikeEvents(np.array(ts, dtype=np.int64), np.array(ns, dtype=np.int64),
                       np.array(ps, dtype=np.int8), cfg.horizon_steps, cfg.dt)


def encode(values: np.ndarray, cfg: EncoderConfig, sac: SaccadeConfig | None = None,
           rng=None) -> SpikeEvents:
    """Dispatch on cfg.scheme."""
    if cfg.scheme == "poisson":
        return poisson_encode(values, cfg, rng)
    if cfg.scheme == "ttfs":
        return ttfs_encode(values, cfg)
    return dvs_emulate(values, sac or SaccadeConfig(), cfg)


def decode_counts(output_events: SpikeEvents, class_count: int, up_to_step: int):
    """Spike counts per class before up_to_step; argmax label with
    lowest-index tie-break; normalized counts as confidences."""
    if up_to_step > output_events.horizon_steps:
        raise ValueError("up_to_step exceeds the event horizon")
    sel = output_events.t < up_to_step
    counts = np.bincount(output_events.neuron[sel], minlength=class_count)
    if output_events.neuron[sel].size and output_events.neuron[sel].max() >= class_count:
        raise ValueError("output neuron index >= class_count")
    label = int(counts.argmax())  # argmax returns the first (lowest) index on ties
    total = counts.sum()
    confidence = counts / total if total else np.zeros(class_count)
    return counts, label, confidence


def derive_seed(base_seed: int, image_index: int) -> np.random.Generator:
    """Per-image generator independent of processing order."""
    return np.random.default_rng(np.random.SeedSequence((base_seed, image_index)))
