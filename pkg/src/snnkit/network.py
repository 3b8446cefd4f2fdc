"""Network assembly, SGD training, evaluation, and persistence.

A network is an ordered list of LayerSpec entries instantiated into layer
objects with seeded weights. Training is plain cross-entropy SGD over
shuffled mini-batches; identical seed + config + data gives bit-identical
weights.
"""

import hashlib
import json
import struct
import time
from dataclasses import dataclass, asdict

import numpy as np

from . import idx
from .errors import Divergence, EmptyDataset, ShapeMismatch
from .layers import LayerSpec, build_layer

NETWORK_MAGIC = b"SNET"
NETWORK_VERSION = 1


@dataclass
class TrainConfig:
    learning_rate: float = 0.05
    batch_size: int = 64  # experiment default mini-batch size
    epochs: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


class Network:
    """Instantiated layer stack with weights.

    Requires exactly one softmax, at the end, and logits width equal to
    class_count, verified by shape inference from input_shape.
    """

    def __init__(self, specs, input_shape=(1, 28, 28), class_count=10, seed=0,
                 require_softmax=True):
        self.specs = list(specs)
        self.input_shape = tuple(input_shape)
        self.class_count = class_count
        self.seed = seed
        if require_softmax:
            softmax_at = [i for i, s in enumerate(self.specs) if s.kind == "softmax"]
            if softmax_at != [len(self.specs) - 1]:
                raise ShapeMismatch("network must end with exactly one softmax")
        rng = np.random.default_rng(seed)
        self.layers = [build_layer(s, rng) for s in self.specs]
        self._train_rng = rng  # continues the same stream for dropout masks
        for lyr in self.layers:
            if lyr.spec.kind == "dropout":
                lyr.rng = self._train_rng
        shape = self.input_shape
        for lyr in self.layers:
            shape = lyr.out_shape(shape)
        self.output_shape = shape
        if require_softmax and shape != (class_count,):
            raise ShapeMismatch(f"output width {shape} != class_count {class_count}")

    @classmethod
    def from_layers(cls, specs, layers, input_shape, class_count, seed,
                    require_softmax=True):
        """Rewire existing (already weighted) layer objects into a network;
        used by conversion passes that edit topology without re-initializing."""
        net = cls.__new__(cls)
        net.specs = list(specs)
        net.input_shape = tuple(input_shape)
        net.class_count = class_count
        net.seed = seed
        net.layers = list(layers)
        net._train_rng = np.random.default_rng(seed)
        if require_softmax:
            softmax_at = [i for i, s in enumerate(net.specs) if s.kind == "softmax"]
            if softmax_at != [len(net.specs) - 1]:
                raise ShapeMismatch("network must end with exactly one softmax")
        shape = net.input_shape
        for lyr in net.layers:
            shape = lyr.out_shape(shape)
        net.output_shape = shape
        return net

    def forward(self, x, train=False):
        for lyr in self.layers:
            x = lyr.forward(x, train=train)
        return x

    def parametric_layers(self):
        return [l for l in self.layers if l.params]

    def fingerprint(self) -> str:
        """Content hash over specs and weights."""
        h = hashlib.sha256()
        h.update(json.dumps([s.as_dict() for s in self.specs]).encode())
        for lyr in self.layers:
            for name in sorted(lyr.params):
                h.update(lyr.params[name].tobytes())
            if lyr.spec.kind == "batch_norm":
                h.update(lyr.running_mean.tobytes())
                h.update(lyr.running_var.tobytes())
        return h.hexdigest()


def build_vgg_mini(channels=(16, 32), hidden=128, pool_kind="max",
                   with_batch_norm=True, dropout_p=0.0, input_shape=(1, 28, 28),
                   class_count=10):
    """Scaled-down VGG-style spec: (conv3x3 [+ bn] + relu + pool) blocks,
    flatten, one hidden dense layer, classifier dense, softmax.

    Defaults include batch_norm and max_pool so the conversion rules have
    material to act on; pool_kind="avg" with with_batch_norm=False builds an
    already-compliant stack.
    """
    specs = []
    cin = input_shape[0]
    side = input_shape[1]
    for cout in channels:
        specs.append(LayerSpec.make("conv2d", in_channels=cin, out_channels=cout,
                                    kernel_size=3, stride=1, padding=1))
        if with_batch_norm:
            specs.append(LayerSpec.make("batch_norm", num_features=cout))
        specs.append(LayerSpec.make("relu"))
        specs.append(LayerSpec.make(f"{pool_kind}_pool", window=2))
        cin = cout
        side //= 2
    specs.append(LayerSpec.make("flatten"))
    specs.append(LayerSpec.make("dense", in_features=cin * side * side, out_features=hidden))
    specs.append(LayerSpec.make("relu"))
    if dropout_p > 0:
        specs.append(LayerSpec.make("dropout", p=dropout_p))
    specs.append(LayerSpec.make("dense", in_features=hidden, out_features=class_count))
    specs.append(LayerSpec.make("softmax"))
    return specs


def _forward_backward(net, images, labels):
    """One mini-batch step; returns (loss, correct). Gradient of
    cross-entropy wrt logits is (p - onehot)/N, injected below the softmax."""
    probs = net.forward(images, train=True)
    n = len(labels)
    picked = probs[np.arange(n), labels]
    loss = -np.log(np.clip(picked, 1e-300, None)).mean()
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    for lyr in reversed(net.layers[:-1]):
        grad = lyr.backward(grad)
    correct = int((probs.argmax(axis=1) == labels).sum())
    return loss, correct


def train(net: Network, data: idx.LabeledDataset, cfg: TrainConfig):
    """SGD with per-epoch shuffling; returns (net, history).

    History rows: dicts with epoch, mean loss, train accuracy, seconds.
    """
    if len(data) == 0:
        raise EmptyDataset("cannot train on an empty dataset")
    if cfg.batch_size > len(data):
        raise ValueError("batch_size exceeds dataset size")
    images = idx.normalize(data.images)[:, None, :, :]  # (N,1,H,W)
    labels = data.labels
    shuffle_rng = np.random.default_rng(cfg.seed + 1)
    history = []
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        order = shuffle_rng.permutation(len(data))
        losses, correct = [], 0
        for start in range(0, len(data) - cfg.batch_size + 1, cfg.batch_size):
            sel = order[start:start + cfg.batch_size]
            loss, c = _forward_backward(net, images[sel], labels[sel])
            if not np.isfinite(loss):
                raise Divergence(f"loss {loss} at epoch {epoch}")
            losses.append(loss)
            correct += c
            for lyr in net.parametric_layers():
                for name, g in lyr.grads.items():
                    lyr.params[name] -= cfg.learning_rate * g
        seen = (len(data) // cfg.batch_size) * cfg.batch_size
        history.append({
            "epoch": epoch,
            "loss": float(np.mean(losses)),
            "train_accuracy": correct / seen,
            "seconds": time.perf_counter() - t0,
        })
    return net, history


def predict(net: Network, images_u8: np.ndarray, chunk=256) -> np.ndarray:
    """Argmax class per image; ties break toward the lowest index."""
    out = []
    for start in range(0, len(images_u8), chunk):
        x = idx.normalize(images_u8[start:start + chunk])[:, None, :, :]
        probs = net.forward(x, train=False)
        out.append(probs.argmax(axis=1))
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def evaluate(net: Network, data: idx.LabeledDataset) -> float:
    if len(data) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    return float((predict(net, data.images) == data.labels).mean())


# ---------------------------------------------------------------------------
# persistence (layout documented in docs/formats.md)

def _collect_arrays(net):
    arrays = []
    for i, lyr in enumerate(net.layers):
        for name in sorted(lyr.params):
            arrays.append((f"layer{i}.{name}", lyr.params[name]))
        if lyr.spec.kind == "batch_norm":
            arrays.append((f"layer{i}.running_mean", lyr.running_mean))
            arrays.append((f"layer{i}.running_var", lyr.running_var))
    return arrays


def save_network(net: Network, path, train_config: TrainConfig | None = None) -> None:
    arrays = _collect_arrays(net)
    header = {
        "specs": [s.as_dict() for s in net.specs],
        "input_shape": list(net.input_shape),
        "class_count": net.class_count,
        "seed": net.seed,
        "require_softmax": net.specs[-1].kind == "softmax" if net.specs else False,
        "train_config": asdict(train_config) if train_config else None,
        "arrays": [{"name": n, "shape": list(a.shape)} for n, a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(NETWORK_MAGIC)
        f.write(struct.pack("<II", NETWORK_VERSION, len(blob)))
        f.write(blob)
        for _, a in arrays:
            f.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_network(path) -> Network:
    with open(path, "rb") as f:
        if f.read(4) != NETWORK_MAGIC:
            raise ShapeMismatch(f"{path}: not a network file")
        version, hlen = struct.unpack("<II", f.read(8))
        if version != NETWORK_VERSION:
            raise ShapeMismatch(f"unsupported network container version {version}")
        header = json.loads(f.read(hlen))
        specs = [LayerSpec.make(s["kind"], **{k: v for k, v in s.items() if k != "kind"})
                 for s in header["specs"]]
        net = Network(specs, tuple(header["input_shape"]), header["class_count"],
                      header["seed"], require_softmax=header["require_softmax"])
        arrays = _collect_arrays(net)
        if [a["name"] for a in header["arrays"]] != [n for n, _ in arrays]:
            raise ShapeMismatch("array manifest does not match layer specs")
        for meta, (name, target) in zip(header["arrays"], arrays):
            n = int(np.prod(meta["shape"]))
            buf = f.read(n * 8)
            if len(buf) != n * 8:
                raise ShapeMismatch(f"{path}: truncated array {name}")
            target[...] = np.frombuffer(buf, dtype="<f8").reshape(meta["shape"])
        if f.read(1):
            raise ShapeMismatch(f"{path}: trailing bytes")
    return net
