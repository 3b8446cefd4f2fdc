"""ANN-to-SNN conversion.

Pipeline: fold batch normalization into the preceding weights, apply the
post-training structural substitutions (max-pool to avg-pool, dropout
deletion), rescale weights so activation percentiles map into the firing
range, then replace each ReLU with integrate-and-fire neurons and drop the
terminal softmax. Every structural action lands in the ConversionReport.
"""

import copy
import json
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import idx
from .errors import (DegenerateScale, NonCompliantTopology, OrphanBatchNorm,
                     ShapeMismatch)
from .layers import LayerSpec, build_layer
from .network import Network
from .neurons import NeuronParams

FORBIDDEN_SPIKING_KINDS = ("max_pool", "batch_norm", "dropout")

REPORT_MAGIC = "snnkit-conversion-report v1"


@dataclass(frozen=True)
class ConversionConfig:
    neuron_template: NeuronParams = field(
        default_factory=lambda: NeuronParams(reset_mode="subtract_threshold")
    )
    normalization_percentile: float = 99.9
    replication_factor: int = 1  # spiking neurons per analog unit
    calibration_sample_count: int = 100
    pool_before_relu: bool = True
    dropout_rate: float = 0.1  # p used when a batch_norm becomes dropout

    def __post_init__(self):
        if not 0 < self.normalization_percentile <= 100:
            raise ValueError("normalization_percentile must be in (0, 100]")
        if self.replication_factor < 1:
            raise ValueError("replication_factor must be >= 1")
        if self.calibration_sample_count < 1:
            raise ValueError("calibration_sample_count must be >= 1")


@dataclass(frozen=True)
class Substitution:
    rule: str
    layer_index: int
    detail: str = ""


# ---------------------------------------------------------------------------
# pre-training structural pass (operates on specs only)

def prepare_for_conversion(specs, cfg: ConversionConfig):
    """Rewrite an untrained architecture so it trains in a convertible form.

    Rules, in order: every batch_norm becomes dropout unless a pooling layer
    follows it directly (then it is deleted outright); max_pool becomes
    avg_pool; adjacent (relu, avg_pool) pairs are reordered to
    (avg_pool, relu) when cfg.pool_before_relu.
    """
    specs = list(specs)
    subs = []

    out = []
    for i, s in enumerate(specs):
        if s.kind == "batch_norm":
            nxt = specs[i + 1] if i + 1 < len(specs) else None
            if nxt is not None and nxt.kind in ("max_pool", "avg_pool"):
                subs.append(Substitution("delete_batch_norm_before_pool", len(out),
                                         "pooling follows; deleted with no substitute"))
            else:
                out.append(LayerSpec.make("dropout", p=cfg.dropout_rate))
                subs.append(Substitution("replace_batch_norm_with_dropout", len(out) - 1,
                                         f"p={cfg.dropout_rate}"))
        else:
            out.append(s)
    specs = out

    for i, s in enumerate(specs):
        if s.kind == "max_pool":
            specs[i] = LayerSpec.make("avg_pool", window=s.get("window"))
            subs.append(Substitution("swap_max_pool_for_avg_pool", i,
                                     f"window={s.get('window')}"))

    if cfg.pool_before_relu:
        i = 0
        while i < len(specs) - 1:
            if specs[i].kind == "relu" and specs[i + 1].kind == "avg_pool":
                specs[i], specs[i + 1] = specs[i + 1], specs[i]
                subs.append(Substitution("reorder_pool_before_relu", i))
                i += 2
            else:
                i += 1
    return specs, subs


def apply_substitutions(specs, subs):
    """Replay a substitution list against a source spec; used to audit
    report completeness. Indices are interpreted against the evolving list,
    matching the order rules were applied in."""
    specs = list(specs)
    for sub in subs:
        i = sub.layer_index
        if sub.rule == "replace_batch_norm_with_dropout":
            p = float(sub.detail.split("=")[1])
            assert specs[i].kind == "batch_norm"
            specs[i] = LayerSpec.make("dropout", p=p)
        elif sub.rule == "delete_batch_norm_before_pool":
            assert specs[i].kind == "batch_norm"
            del specs[i]
        elif sub.rule in ("fold_batch_norm",):
            assert specs[i].kind == "batch_norm"
            del specs[i]
        elif sub.rule == "swap_max_pool_for_avg_pool":
            assert specs[i].kind == "max_pool"
            specs[i] = LayerSpec.make("avg_pool", window=specs[i].get("window"))
        elif sub.rule == "reorder_pool_before_relu":
            assert specs[i].kind == "relu" and specs[i + 1].kind == "avg_pool"
            specs[i], specs[i + 1] = specs[i + 1], specs[i]
        elif sub.rule == "delete_dropout":
            assert specs[i].kind == "dropout"
            del specs[i]
        elif sub.rule == "drop_softmax":
            assert specs[i].kind == "softmax"
            del specs[i]
        elif sub.rule in ("normalize_weights", "map_relu_to_if", "map_output_to_if"):
            pass  # weight-space actions; no topology change
        else:
            raise ValueError(f"unknown substitution rule {sub.rule!r}")
    return specs


# ---------------------------------------------------------------------------
# post-training passes (operate on trained networks)

def fold_batch_norm(net: Network):
    """Absorb each batch_norm's running statistics and affine parameters
    into the conv/dense layer directly before it. Inference outputs are
    preserved exactly (up to float rounding); the input network is left
    untouched."""
    specs, layers, subs = list(net.specs), copy.deepcopy(list(net.layers)), []
    i = 0
    while i < len(specs):
        if specs[i].kind != "batch_norm":
            i += 1
            continue
        if i == 0 or specs[i - 1].kind not in ("conv2d", "dense"):
            raise OrphanBatchNorm(
                f"batch_norm at index {i} lacks a conv/dense predecessor"
            )
        bn, host = layers[i], layers[i - 1]
        scale = bn.params["gamma"] / np.sqrt(bn.running_var + bn.eps)
        host.params["w"] = host.params["w"] * scale[:, None]
        host.params["b"] = (host.params["b"] - bn.running_mean) * scale + bn.params["beta"]
        del specs[i], layers[i]
        subs.append(Substitution("fold_batch_norm", i,
                                 "statistics folded into the preceding layer"))
    new = Network.from_layers(specs, layers, net.input_shape, net.class_count,
                              net.seed, require_softmax=specs[-1].kind == "softmax")
    return new, subs


def swap_pools_post_training(net: Network):
    """Post-training variant of the max-pool rule: a straight swap, accepted
    as an approximation (max and mean differ on trained features)."""
    specs, layers, subs = list(net.specs), list(net.layers), []
    for i, s in enumerate(specs):
        if s.kind == "max_pool":
            specs[i] = LayerSpec.make("avg_pool", window=s.get("window"))
            layers[i] = build_layer(specs[i])
            subs.append(Substitution("swap_max_pool_for_avg_pool", i,
                                     f"window={s.get('window')} (post-training swap)"))
    new = Network.from_layers(specs, layers, net.input_shape, net.class_count,
                              net.seed, require_softmax=specs[-1].kind == "softmax")
    return new, subs


def delete_dropout(net: Network):
    """Dropout is the identity at inference; deleting it is lossless."""
    specs, layers, subs = list(net.specs), list(net.layers), []
    i = 0
    while i < len(specs):
        if specs[i].kind == "dropout":
            del specs[i], layers[i]
            subs.append(Substitution("delete_dropout", i, "identity at inference"))
        else:
            i += 1
    new = Network.from_layers(specs, layers, net.input_shape, net.class_count,
                              net.seed, require_softmax=specs[-1].kind == "softmax")
    return new, subs


def _scale_point_indices(net: Network):
    """Layer indices whose input (relu) or output (final parametric layer)
    defines a normalization scale."""
    points = [i for i, s in enumerate(net.specs) if s.kind == "relu"]
    last_param = max(i for i, s in enumerate(net.specs)
                     if s.kind in ("conv2d", "dense"))
    points.append(last_param)  # logits scale
    return sorted(points)


def _collect_preactivations(net: Network, images_u8, batch=128):
    """Per scale point, gather the values the percentile is taken over."""
    points = _scale_point_indices(net)
    buckets = {p: [] for p in points}
    for start in range(0, len(images_u8), batch):
        x = idx.normalize(images_u8[start:start + batch])[:, None, :, :]
        acts = []
        for lyr in net.layers:
            x = lyr.forward(x, train=False)
            acts.append(x)
        for p in points:
            src = acts[p - 1] if net.specs[p].kind == "relu" else acts[p]
            buckets[p].append(src.ravel())
    return points, {p: np.concatenate(v) for p, v in buckets.items()}


def normalize_weights(net: Network, calibration: idx.LabeledDataset,
                      cfg: ConversionConfig):
    """Percentile-based weight normalization.

    For each scale point l (relu inputs plus the final logits), take the
    p-th percentile s_l of observed values over the calibration set; the
    parametric layer feeding point l gets weights scaled by s_{l-1} / s_l
    and biases by 1 / s_l. Argmax predictions are unchanged (positive
    per-layer rescaling).
    """
    if len(calibration) == 0:
        raise ValueError("calibration set is empty")
    net = copy.deepcopy(net)
    points, buckets = _collect_preactivations(net, calibration.images)
    scales = []
    for p in points:
        s = float(np.percentile(buckets[p], cfg.normalization_percentile))
        if s <= 0:
            raise DegenerateScale(f"scale point at layer {p} has percentile {s}")
        scales.append(s)

    prev_scale = 1.0
    point_pos = 0
    for i, (spec, lyr) in enumerate(zip(net.specs, net.layers)):
        while point_pos < len(points) and i > points[point_pos]:
            prev_scale = scales[point_pos]
            point_pos += 1
        if point_pos >= len(points):
            break  # past the logits point; nothing parametric remains
        if spec.kind in ("conv2d", "dense"):
            lyr.params["w"] *= prev_scale / scales[point_pos]
            lyr.params["b"] *= 1.0 / scales[point_pos]
    return net, scales


# ---------------------------------------------------------------------------
# spiking mapping

class SpikingStage:
    """One linear transform chain feeding one IF/LIF population.

    Biases are lifted out of the transform layers and injected by the
    simulator as per-step currents scaled by the input spike rate.
    """

    def __init__(self, transforms, in_shape, out_shape, replication, is_output):
        self.transforms = transforms
        self.in_shape = tuple(in_shape)
        self.out_shape = tuple(out_shape)
        self.n_neurons = int(np.prod(out_shape))
        self.replication = replication
        self.is_output = is_output
        self.bias_flat = self._extract_bias()

    def _extract_bias(self):
        zero = np.zeros((1,) + self.in_shape)
        bias = self.apply(zero)[0].copy()
        for t in self.transforms:
            if "b" in t.params:
                t.params["b"] = np.zeros_like(t.params["b"])
        return bias

    def apply(self, flat_or_shaped):
        """Run the linear chain on a batch; accepts flat (B, n) input."""
        x = np.asarray(flat_or_shaped, dtype=np.float64)
        x = x.reshape((x.shape[0],) + self.in_shape)
        for t in self.transforms:
            x = t.forward(x, train=False)
        return x.reshape(x.shape[0], -1)


class SpikingNetwork:
    def __init__(self, stages, neuron_params, scales, input_shape, class_count,
                 source_specs):
        self.stages = stages
        self.neuron_params = neuron_params
        self.scales = list(scales)
        self.input_shape = tuple(input_shape)
        self.class_count = class_count
        self.source_specs = list(source_specs)  # linear+relu skeleton, audit aid
        if any(s <= 0 for s in self.scales):
            raise ValueError("scale factors must be strictly positive")
        for spec in self.source_specs:
            if spec.kind in FORBIDDEN_SPIKING_KINDS or spec.kind == "softmax":
                raise NonCompliantTopology(f"{spec.kind} in spiking topology")

    @property
    def n_inputs(self):
        return int(np.prod(self.input_shape))


def map_to_spiking(net: Network, cfg: ConversionConfig, scales=None):
    """Replace each ReLU with replication_factor IF/LIF neurons and the
    terminal softmax with spike-count readout.

    Replicas share input weights and split output weight by k; their initial
    membranes are staggered at j/k of threshold so the ensemble desynchronizes
    and the summed rate is smoother than a single neuron's.
    """
    subs = []
    for i, s in enumerate(net.specs):
        if s.kind in ("max_pool", "batch_norm", "dropout"):
            raise NonCompliantTopology(
                f"{s.kind} at layer {i} has no spiking equivalent; run the "
                "substitution passes first"
            )
    if net.specs[-1].kind != "softmax":
        raise NonCompliantTopology("expected a terminal softmax to drop")

    specs = net.specs[:-1]
    layers = copy.deepcopy(net.layers[:-1])
    subs.append(Substitution("drop_softmax", len(net.specs) - 1,
                             "classification reads output spike counts"))

    stages = []
    pending_specs, pending_layers = [], []
    shape = net.input_shape
    stage_in_shape = shape
    for i, (spec, lyr) in enumerate(zip(specs, layers)):
        if spec.kind == "relu":
            if not pending_layers:
                raise NonCompliantTopology(f"relu at {i} with no transform before it")
            stages.append(SpikingStage(pending_layers, stage_in_shape, shape,
                                       cfg.replication_factor, is_output=False))
            subs.append(Substitution(
                "map_relu_to_if", i,
                f"k={cfg.replication_factor} {cfg.neuron_template.model} neurons per unit"))
            pending_specs, pending_layers = [], []
            stage_in_shape = shape
        else:
            pending_specs.append(spec)
            pending_layers.append(lyr)
            shape = lyr.out_shape(shape)
    if not pending_layers:
        raise NonCompliantTopology("no output transform after the last relu")
    stages.append(SpikingStage(pending_layers, stage_in_shape, shape,
                               1, is_output=True))
    subs.append(Substitution("map_output_to_if", len(specs) - 1,
                             "output spikes accumulated per class"))
    if stages[-1].n_neurons != net.class_count:
        raise ShapeMismatch("output stage width != class_count")

    snn = SpikingNetwork(stages, cfg.neuron_template,
                         scales if scales is not None else [1.0] * len(stages),
                         net.input_shape, net.class_count, specs)
    return snn, subs


# ---------------------------------------------------------------------------
# report + full pipeline

@dataclass
class ConversionReport:
    substitutions: list
    scales: list
    config: dict
    source_fingerprint: str

    def to_text(self) -> str:
        lines = [REPORT_MAGIC,
                 f"source_fingerprint = {self.source_fingerprint}"]
        for key, value in sorted(self.config.items()):
            lines.append(f"config.{key} = {value}")
        for n, s in enumerate(self.scales):
            lines.append(f"scale.{n} = {s:.12g}")
        for n, sub in enumerate(self.substitutions):
            lines.append(f"substitution.{n} = {sub.rule} | {sub.layer_index} | {sub.detail}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ConversionReport":
        lines = [l for l in text.splitlines() if l.strip()]
        if lines[0] != REPORT_MAGIC:
            raise ValueError("not a conversion report")
        config, scales, subs, fingerprint = {}, [], [], ""
        for line in lines[1:]:
            key, _, value = line.partition(" = ")
            if key == "source_fingerprint":
                fingerprint = value
            elif key.startswith("config."):
                config[key[len("config."):]] = value
            elif key.startswith("scale."):
                scales.append(float(value))
            elif key.startswith("substitution."):
                rule, index, detail = (part.strip() for part in value.split("|", 2))
                subs.append(Substitution(rule, int(index), detail))
        return cls(subs, scales, config, fingerprint)


def _config_snapshot(cfg: ConversionConfig) -> dict:
    d = asdict(cfg)
    d["neuron_template"] = json.dumps(asdict(cfg.neuron_template), sort_keys=True)
    return d


def convert(net: Network, calibration: idx.LabeledDataset, cfg: ConversionConfig):
    """Full trained-network conversion; returns (SpikingNetwork, report)."""
    fingerprint = net.fingerprint()
    subs = []
    if any(s.kind == "batch_norm" for s in net.specs):
        net, folded = fold_batch_norm(net)
        subs += folded
    if any(s.kind == "max_pool" for s in net.specs):
        net, swapped = swap_pools_post_training(net)
        subs += swapped
    if any(s.kind == "dropout" for s in net.specs):
        net, dropped = delete_dropout(net)
        subs += dropped
    take = min(cfg.calibration_sample_count, len(calibration))
    net, scales = normalize_weights(net, calibration.subset(np.arange(take)), cfg)
    subs.append(Substitution("normalize_weights", -1,
                             f"percentile={cfg.normalization_percentile} over {take} samples"))
    snn, map_subs = map_to_spiking(net, cfg, scales)
    subs += map_subs
    report = ConversionReport(subs, scales, _config_snapshot(cfg), fingerprint)
    snn.compliant_net = net  # normalized pre-mapping network, kept for persistence
    return snn, report


# ---------------------------------------------------------------------------
# persistence: the normalized compliant network plus scales and config; the
# spiking form is rebuilt deterministically by map_to_spiking on load.

SPIKING_MAGIC = b"SSNN"
SPIKING_VERSION = 1


def save_spiking(snn: SpikingNetwork, report: ConversionReport, path):
    import io
    import struct as _struct
    import tempfile
    import os
    from .network import save_network

    if not hasattr(snn, "compliant_net"):
        raise ValueError("spiking network lacks its source compliant network")
    fd, tmp = tempfile.mkstemp()
    os.close(fd)
    try:
        save_network(snn.compliant_net, tmp)
        with open(tmp, "rb") as f:
            net_blob = f.read()
    finally:
        os.unlink(tmp)
    header = {
        "scales": [float(s) for s in snn.scales],
        "config": report.config,
        "report": report.to_text(),
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(SPIKING_MAGIC)
        f.write(_struct.pack("<III", SPIKING_VERSION, len(blob), len(net_blob)))
        f.write(blob)
        f.write(net_blob)


def load_spiking(path):
    import struct as _struct
    import tempfile
    import os
    from .network import load_network

    with open(path, "rb") as f:
        if f.read(4) != SPIKING_MAGIC:
            raise ValueError(f"{path}: not a spiking network file")
        version, hlen, nlen = _struct.unpack("<III", f.read(12))
        if version != SPIKING_VERSION:
            raise ValueError(f"unsupported spiking container version {version}")
        header = json.loads(f.read(hlen))
        net_blob = f.read(nlen)
    fd, tmp = tempfile.mkstemp()
    os.close(fd)
    try:
        with open(tmp, "wb") as f:
            f.write(net_blob)
        net = load_network(tmp)
    finally:
        os.unlink(tmp)
    cfg_dict = dict(header["config"])
    template = NeuronParams(**{k: (None if v is None else v)
                               for k, v in json.loads(cfg_dict["neuron_template"]).items()})
    cfg = ConversionConfig(
        neuron_template=template,
        normalization_percentile=float(cfg_dict["normalization_percentile"]),
        replication_factor=int(cfg_dict["replication_factor"]),
        calibration_sample_count=int(cfg_dict["calibration_sample_count"]),
        pool_before_relu=str(cfg_dict["pool_before_relu"]) in ("True", "true"),
        dropout_rate=float(cfg_dict["dropout_rate"]),
    )
    snn, _ = map_to_spiking(net, cfg, header["scales"])
    snn.compliant_net = net
    report = ConversionReport.from_text(header["report"])
    return snn, report


def topology_specs(snn: SpikingNetwork):
    """Flattened linear+relu skeleton of a spiking network, comparable to a
    replayed source spec list."""
    out = []
    for stage in snn.stages:
        for t in stage.transforms:
            out.append(t.spec)
        if not stage.is_output:
            out.append(LayerSpec.make("relu"))
    return out
