"""Clock-driven simulation of a converted spiking network.

Each timestep, input events (plus constant bias currents) drive stage 1;
spikes emitted by stage l propagate to stage l+1 with a one-step axonal
delay, so a D-stage network has a D-step pipeline fill. Classification is
the argmax of accumulated output spike counts, lowest index winning ties.
"""

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import encoding
from .convert import SpikingNetwork
from .encoding import EncoderConfig, SaccadeConfig, SpikeEvents, decode_counts
from .errors import HorizonMismatch, LayerNotRecorded, RateOverflow, ShapeMismatch
from .neurons import LayerState, step_layer_state

SWEEP_CSV_HEADER = "rate_hz,accuracy,mean_spikes,mean_latency_steps"


@dataclass
class SimConfig:
    dt: float = 1e-3
    horizon_steps: int = 100
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    seed: int = 0
    record_rasters: tuple = ()  # stage indices to keep event rasters for

    def __post_init__(self):
        if self.horizon_steps < 1:
            raise ValueError("horizon_steps must be >= 1")
        if self.encoder.dt != self.dt:
            raise ValueError("encoder.dt must equal sim dt")
        if self.encoder.horizon_steps != self.horizon_steps:
            self.encoder = replace(self.encoder, horizon_steps=self.horizon_steps)


@dataclass
class SimResult:
    step_counts: np.ndarray  # (T, class_count) output spikes per step
    predicted_label: int
    rasters: dict
    wall_time: float
    total_spike_count: int

    def cumulative_counts(self):
        return self.step_counts.cumsum(axis=0)


@dataclass
class RateSweepResult:
    rates_hz: list
    accuracies: list
    mean_spikes: list
    mean_latency_steps: list

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.rates_hz, self.rates_hz[1:])):
            raise ValueError("rates must be strictly increasing")
        if any(not 0 <= a <= 1 for a in self.accuracies):
            raise ValueError("accuracies must lie in [0, 1]")

    def to_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write(SWEEP_CSV_HEADER + "\n")
            for row in zip(self.rates_hz, self.accuracies, self.mean_spikes,
                           self.mean_latency_steps):
                f.write(",".join(f"{x:.6g}" for x in row) + "\n")


def _init_states(net: SpikingNetwork, batch):
    """Per-stage membrane state, replicas staggered at j/k of threshold."""
    params = net.neuron_params
    states = []
    for stage in net.stages:
        k = stage.replication
        v0 = np.zeros((k, batch, stage.n_neurons))
        for j in range(k):
            v0[j] = params.v_reset + (j / k) * (params.v_threshold - params.v_reset)
        state = LayerState(v0.shape)
        state.v_m = v0
        states.append(state)
    return states


def run_batch(net: SpikingNetwork, dense_input: np.ndarray, cfg: SimConfig,
              record_stages=(), record_image=0):
    """Simulate a batch of pre-encoded inputs.

    dense_input: (B, T, n_in) signed spike array (polarity already applied).
    Returns (step_counts (B, T, classes), spike_totals (B,), rasters dict).
    """
    batch, horizon, n_in = dense_input.shape
    if n_in != net.n_inputs:
        raise ShapeMismatch(f"{n_in} input neurons, network wants {net.n_inputs}")
    if horizon != cfg.horizon_steps:
        raise HorizonMismatch(f"input horizon {horizon} != T {cfg.horizon_steps}")
    params = net.neuron_params
    input_scale = cfg.encoder.lambda_max * cfg.dt  # per-step rate of a unit input
    states = _init_states(net, batch)
    prev_out = [np.zeros((batch, s.n_neurons)) for s in net.stages]
    step_counts = np.zeros((batch, horizon, net.class_count), dtype=np.int64)
    spike_totals = dense_input.astype(bool).sum(axis=(1, 2)).astype(np.int64)
    raster_acc = {s: [] for s in record_stages}
    current_gain = params.c_m / cfg.dt  # so charge per step equals the drive

    for t in range(horizon):
        drives = []
        for s, stage in enumerate(net.stages):
            feed = dense_input[:, t, :] if s == 0 else prev_out[s - 1]
            drives.append(stage.apply(feed) + stage.bias_flat.ravel() * input_scale)
        for s, stage in enumerate(net.stages):
            currents = np.broadcast_to(
                drives[s] * current_gain,
                (stage.replication, batch, stage.n_neurons),
            )
            spikes = step_layer_state(states[s], params, currents, cfg.dt)
            out = spikes.sum(axis=0) / stage.replication
            prev_out[s] = out
            spike_totals += spikes.sum(axis=(0, 2)).astype(np.int64)
            if stage.is_output:
                step_counts[:, t, :] = spikes.sum(axis=0)
            if s in raster_acc:
                fired = spikes.any(axis=0)[record_image]
                idx = np.nonzero(fired)[0]
                raster_acc[s].extend((t, int(n)) for n in idx)

    rasters = {}
    for s, rows in raster_acc.items():
        ts = np.array([r[0] for r in rows], dtype=np.int64)
        ns = np.array([r[1] for r in rows], dtype=np.int64)
        rasters[s] = SpikeEvents(ts, ns, np.zeros(len(ts), dtype=np.int8),
                                 horizon, cfg.dt)
    return step_counts, spike_totals, rasters


def run(net: SpikingNetwork, input_events: SpikeEvents, cfg: SimConfig) -> SimResult:
    """Simulate one pre-encoded input."""
    t0 = time.perf_counter()
    if input_events.horizon_steps != cfg.horizon_steps:
        raise HorizonMismatch(
            f"input horizon {input_events.horizon_steps} != T {cfg.horizon_steps}"
        )
    if len(input_events) and input_events.neuron.max() >= net.n_inputs:
        raise ShapeMismatch("input event neuron index exceeds network input width")
    dense = input_events.to_dense(net.n_inputs)[None, :, :]
    step_counts, totals, rasters = run_batch(
        net, dense, cfg, record_stages=tuple(cfg.record_rasters))
    counts = step_counts[0].sum(axis=0)
    return SimResult(
        step_counts=step_counts[0],
        predicted_label=int(counts.argmax()),
        rasters=rasters,
        wall_time=time.perf_counter() - t0,
        total_spike_count=int(totals[0]),
    )


def classify(net: SpikingNetwork, image: np.ndarray, cfg: SimConfig,
             sac: SaccadeConfig | None = None):
    """Encode a normalized image per cfg.encoder, run, decode at step T."""
    events = encoding.encode(np.asarray(image, dtype=np.float64), cfg.encoder, sac)
    result = run(net, events, cfg)
    events_out = _counts_to_events(result.step_counts, cfg)
    counts, label, confidence = decode_counts(events_out, net.class_count,
                                              cfg.horizon_steps)
    assert label == result.predicted_label
    return label, confidence, result


def _counts_to_events(step_counts, cfg):
    """Output stage spikes as SpikeEvents (one per neuron per step at most,
    since the output stage is unreplicated)."""
    ts, ns = np.nonzero(step_counts)
    return SpikeEvents(ts, ns, np.zeros(len(ts), dtype=np.int8),
                       cfg.horizon_steps, cfg.dt)


def _encode_batch(images, cfg: SimConfig, index_offset=0):
    """Per-image seeded Poisson encoding; (B, T, n) dense signed spikes.
    Seeds derive from (cfg.seed, image index) so results are independent of
    chunking and execution order."""
    batch = len(images)
    n = int(np.prod(images[0].shape))
    dense = np.zeros((batch, cfg.horizon_steps, n))
    for b in range(batch):
        rng = encoding.derive_seed(cfg.seed, index_offset + b)
        dense[b] = encoding.poisson_spike_matrix(images[b], cfg.encoder, rng)
    return dense


def classify_batch(net: SpikingNetwork, images, cfg: SimConfig, chunk=128,
                   index_offset=0):
    """Vectorized classification of normalized images.

    Returns (per-step cumulative counts (B, T, classes), spike totals (B,),
    first-output-spike latency (B,))."""
    all_counts, all_totals = [], []
    for start in range(0, len(images), chunk):
        part = images[start:start + chunk]
        dense = _encode_batch(part, cfg, index_offset + start)
        counts, totals, _ = run_batch(net, dense, cfg)
        all_counts.append(counts)
        all_totals.append(totals)
    step_counts = np.concatenate(all_counts)
    totals = np.concatenate(all_totals)
    any_out = step_counts.sum(axis=2) > 0  # (B, T)
    latency = np.where(any_out.any(axis=1), any_out.argmax(axis=1),
                       cfg.horizon_steps)
    return step_counts, totals, latency


def accuracy_curve(net: SpikingNetwork, images, labels, cfg: SimConfig,
                   chunk=128) -> np.ndarray:
    """Accuracy of count-argmax readout truncated at each step; index t is
    the readout step, so curve[0] uses no spikes (everything ties to class 0)
    and curve[T] is the final accuracy. One simulation pass."""
    if len(images) == 0:
        raise ValueError("empty evaluation subset")
    step_counts, _, _ = classify_batch(net, images, cfg, chunk)
    cumulative = step_counts.cumsum(axis=1)  # (B, T, C)
    labels = np.asarray(labels)
    curve = np.empty(cfg.horizon_steps + 1)
    curve[0] = float((labels == 0).mean())
    preds = cumulative.argmax(axis=2)  # (B, T), ties -> lowest index
    curve[1:] = (preds == labels[:, None]).mean(axis=0)
    return curve


def rate_sweep(net: SpikingNetwork, images, labels, rates_hz, cfg: SimConfig,
               chunk=128) -> RateSweepResult:
    """Classify the subset at each peak rate; rates must be strictly
    increasing and satisfy rate * dt <= 1."""
    rates = list(rates_hz)
    if not rates:
        raise ValueError("empty rate list")
    for r in rates:
        if r * cfg.dt > 1.0 + 1e-12:
            raise RateOverflow(f"rate {r} Hz with dt {cfg.dt} gives p > 1")
    labels = np.asarray(labels)
    accs, spikes, lats = [], [], []
    for r in rates:
        rcfg = replace(cfg, encoder=replace(cfg.encoder, lambda_max=float(r)))
        step_counts, totals, latency = classify_batch(net, images, rcfg, chunk)
        preds = step_counts.sum(axis=1).argmax(axis=1)
        accs.append(float((preds == labels).mean()))
        spikes.append(float(totals.mean()))
        lats.append(float(latency.mean()))
    return RateSweepResult(rates, accs, spikes, lats)


def export_raster(result: SimResult, stage_index: int, path):
    """Write a recorded stage raster as event CSV."""
    if stage_index not in result.rasters:
        raise LayerNotRecorded(f"stage {stage_index} was not recorded")
    result.rasters[stage_index].to_csv(path)
