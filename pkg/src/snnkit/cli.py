"""Command-line orchestration: train, convert, sweep, encode-dvs.

Config file: ``key = value`` lines, ``#`` comments, keys namespaced by stage
(train.lr, sim.horizon_steps, ...). Flags win over file values. Exit codes:
0 success, 2 usage/config, 3 conversion, 4 simulation.
"""

import os

# Pin BLAS threading before numpy loads so outputs are byte-identical
# regardless of the parallelism the host would otherwise pick.
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import convert as conv
from . import encoding, idx, network, sim
from .errors import SnnkitError

EXIT_USAGE = 2
EXIT_CONVERSION = 3
EXIT_SIMULATION = 4


class ConfigError(SnnkitError):
    pass


def parse_config_file(path) -> dict:
    cfg = {}
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config file {path}: {e}")
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        cfg[key] = value
    return cfg


class RunConfig:
    """Flat key-value view with typed getters."""

    def __init__(self, values: dict):
        self.values = dict(values)

    def get(self, key, default=None):
        return self.values.get(key, default)

    def get_float(self, key, default):
        return float(self.get(key, default))

    def get_int(self, key, default):
        return int(self.get(key, default))

    def get_bool(self, key, default):
        v = str(self.get(key, default)).lower()
        if v not in ("true", "false", "1", "0", "yes", "no"):
            raise ConfigError(f"{key}: expected a boolean, got {v!r}")
        return v in ("true", "1", "yes")

    def path(self, key):
        v = self.get(key)
        if v is None:
            raise ConfigError(f"missing required config key {key}")
        p = Path(v)
        if not p.exists():
            raise ConfigError(f"{key}: path does not exist: {p}")
        return p


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir: Path, cfg: RunConfig, inputs: dict, timings: dict,
                   metrics: dict):
    files = sorted(p for p in out_dir.iterdir()
                   if p.is_file() and p.name != "manifest.json")
    manifest = {
        "tool_version": "snnkit 0.1.0",
        "config": cfg.values,
        "input_fingerprints": inputs,
        "stage_seconds": timings,
        "metrics": metrics,
        "outputs": {p.name: sha256_file(p) for p in files},
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2,
                                                      sort_keys=True) + "\n")


def _load_datasets(cfg: RunConfig):
    train = idx.load_mnist(cfg.path("data.train_images"),
                           cfg.path("data.train_labels"), "train")
    test = idx.load_mnist(cfg.path("data.test_images"),
                          cfg.path("data.test_labels"), "test")
    return train, test


def _conversion_config(cfg: RunConfig) -> conv.ConversionConfig:
    from .neurons import NeuronParams
    template = NeuronParams(
        reset_mode=cfg.get("convert.reset_mode", "subtract_threshold"),
        model=cfg.get("convert.model", "IF"),
        r_m=cfg.get_float("convert.r_m", float("inf")),
    )
    return conv.ConversionConfig(
        neuron_template=template,
        normalization_percentile=cfg.get_float("convert.percentile", 99.9),
        replication_factor=cfg.get_int("convert.replication", 1),
        calibration_sample_count=cfg.get_int("convert.calibration", 100),
        pool_before_relu=cfg.get_bool("convert.pool_before_relu", "true"),
        dropout_rate=cfg.get_float("convert.dropout_rate", 0.1),
    )


def _sim_config(cfg: RunConfig, horizon_key, horizon_default) -> sim.SimConfig:
    dt = cfg.get_float("sim.dt", 1e-3)
    horizon = cfg.get_int(horizon_key, horizon_default)
    encoder = encoding.EncoderConfig(
        lambda_max=cfg.get_float("sim.lambda_max", 300.0),
        dt=dt, horizon_steps=horizon,
        seed=cfg.get_int("sim.seed", 0), scheme="poisson")
    return sim.SimConfig(dt=dt, horizon_steps=horizon, encoder=encoder,
                         seed=cfg.get_int("sim.seed", 0))


def cmd_train(cfg: RunConfig, out_dir: Path) -> int:
    t0 = time.perf_counter()
    train_set, test_set = _load_datasets(cfg)
    channels = tuple(int(c) for c in str(cfg.get("model.channels", "16,32")).split(","))
    specs = network.build_vgg_mini(
        channels=channels,
        hidden=cfg.get_int("model.hidden", 128),
        pool_kind=cfg.get("model.pool", "max"),
        with_batch_norm=cfg.get_bool("model.batch_norm", "true"),
    )
    if cfg.get_bool("model.prepare", "true"):
        specs, _ = conv.prepare_for_conversion(specs, _conversion_config(cfg))
    tcfg = network.TrainConfig(
        learning_rate=cfg.get_float("train.lr", 0.05),
        batch_size=cfg.get_int("train.batch_size", 64),
        epochs=cfg.get_int("train.epochs", 3),
        seed=cfg.get_int("train.seed", 0),
    )
    net = network.Network(specs, seed=tcfg.seed)
    t_load = time.perf_counter() - t0

    t0 = time.perf_counter()
    net, history = network.train(net, train_set, tcfg)
    t_train = time.perf_counter() - t0

    t0 = time.perf_counter()
    accuracy = network.evaluate(net, test_set)
    t_eval = time.perf_counter() - t0

    network.save_network(net, out_dir / "network.snet", tcfg)
    with open(out_dir / "train_metrics.csv", "w", newline="") as f:
        f.write("epoch,loss,train_accuracy,seconds\n")
        for row in history:
            f.write(f"{row['epoch']},{row['loss']:.6g},"
                    f"{row['train_accuracy']:.6g},{row['seconds']:.6g}\n")
    write_manifest(out_dir, cfg, _input_fingerprints(cfg), {
        "load": t_load, "train": t_train, "evaluate": t_eval,
    }, {"test_accuracy": accuracy})
    print(f"test accuracy: {accuracy:.4f}")
    return 0


def _input_fingerprints(cfg: RunConfig) -> dict:
    out = {}
    for key in ("data.train_images", "data.train_labels",
                "data.test_images", "data.test_labels"):
        v = cfg.get(key)
        if v and Path(v).exists():
            out[key] = sha256_file(v)
    return out


def cmd_convert(cfg: RunConfig, out_dir: Path, network_path) -> int:
    t0 = time.perf_counter()
    path = Path(network_path or out_dir / "network.snet")
    if not path.exists():
        raise ConfigError(f"network file not found: {path}")
    try:
        net = network.load_network(path)
    except Exception as e:
        print(f"error: cannot parse network file {path}: {e}", file=sys.stderr)
        return EXIT_CONVERSION
    train_set, _ = _load_datasets(cfg)
    ccfg = _conversion_config(cfg)
    try:
        snn, report = conv.convert(net, train_set, ccfg)
    except SnnkitError as e:
        print(f"conversion error: {e}", file=sys.stderr)
        return EXIT_CONVERSION
    conv.save_spiking(snn, report, out_dir / "spiking.ssnn")
    (out_dir / "conversion_report.txt").write_text(report.to_text())
    write_manifest(out_dir, cfg, _input_fingerprints(cfg),
                   {"convert": time.perf_counter() - t0},
                   {"stages": len(snn.stages), "scales": report.scales})
    print(f"converted: {len(snn.stages)} spiking stages, "
          f"{len(report.substitutions)} substitutions")
    return 0


def cmd_sweep(cfg: RunConfig, out_dir: Path, spiking_path, rates_arg,
              subset_arg) -> int:
    t0 = time.perf_counter()
    path = Path(spiking_path or out_dir / "spiking.ssnn")
    if not path.exists():
        raise ConfigError(f"spiking network file not found: {path}")
    snn, _ = conv.load_spiking(path)
    _, test_set = _load_datasets(cfg)
    rates_text = rates_arg if rates_arg is not None else cfg.get("sweep.rates", "")
    rates = [float(r) for r in str(rates_text).split(",") if r.strip()]
    if not rates:
        raise ConfigError("empty rate list; pass --rates or set sweep.rates")
    subset = int(subset_arg) if subset_arg is not None else cfg.get_int("sweep.subset", 1000)
    subset = min(subset, len(test_set))
    images = idx.normalize(test_set.images[:subset])
    labels = test_set.labels[:subset]
    scfg = _sim_config(cfg, "sweep.horizon_steps", 100)
    try:
        result = sim.rate_sweep(snn, images, labels, rates, scfg)
        result.to_csv(out_dir / "sweep.csv")
        for rate, acc in zip(result.rates_hz, result.accuracies):
            from dataclasses import replace
            rcfg = replace(scfg, encoder=replace(scfg.encoder, lambda_max=rate))
            curve = sim.accuracy_curve(snn, images, labels, rcfg)
            with open(out_dir / f"curve_{rate:g}hz.csv", "w", newline="") as f:
                f.write("step,accuracy\n")
                for step, a in enumerate(curve):
                    f.write(f"{step},{a:.6g}\n")
    except SnnkitError as e:
        print(f"simulation error: {e}", file=sys.stderr)
        return EXIT_SIMULATION
    write_manifest(out_dir, cfg, _input_fingerprints(cfg),
                   {"sweep": time.perf_counter() - t0},
                   {"rates_hz": result.rates_hz, "accuracies": result.accuracies})
    for rate, acc in zip(result.rates_hz, result.accuracies):
        print(f"{rate:g} Hz: accuracy {acc:.4f}")
    return 0


def cmd_encode_dvs(cfg: RunConfig, out_dir: Path, index_spec) -> int:
    t0 = time.perf_counter()
    train_set, _ = _load_datasets(cfg)
    text = str(index_spec if index_spec is not None else cfg.get("dvs.index", "0"))
    if ".." in text:
        lo, hi = (int(x) for x in text.split("..", 1))
        indices = list(range(lo, hi + 1))
    else:
        indices = [int(text)]
    if not indices or min(indices) < 0 or max(indices) >= len(train_set):
        raise ConfigError(f"image index out of range: {text}")
    sac = encoding.SaccadeConfig(
        path=tuple(tuple(int(c) for c in pt.split(":"))
                   for pt in str(cfg.get("dvs.path", "0:0,5:5,-5:10,0:0")).split(",")),
        steps_per_segment=cfg.get_int("dvs.steps_per_segment", 10),
        contrast_threshold=cfg.get_float("dvs.contrast_threshold", 0.15),
        log_epsilon=cfg.get_float("dvs.log_epsilon", 0.05),
    )
    frames = (len(sac.path) - 1) * sac.steps_per_segment + 1
    ecfg = encoding.EncoderConfig(
        lambda_max=cfg.get_float("sim.lambda_max", 300.0),
        dt=cfg.get_float("sim.dt", 1e-3),
        horizon_steps=max(frames, cfg.get_int("sim.horizon_steps", 100)),
        seed=cfg.get_int("sim.seed", 0), scheme="dvs")
    try:
        for i in indices:
            events = encoding.dvs_emulate(idx.normalize(train_set.images[i]), sac, ecfg)
            events.to_csv(out_dir / f"events_{i:05d}.csv")
            events.to_binary(out_dir / f"events_{i:05d}.spkb")
    except SnnkitError as e:
        print(f"simulation error: {e}", file=sys.stderr)
        return EXIT_SIMULATION
    write_manifest(out_dir, cfg, _input_fingerprints(cfg),
                   {"encode": time.perf_counter() - t0},
                   {"images": len(indices)})
    print(f"encoded {len(indices)} image(s)")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="snnkit")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("train", "convert", "sweep", "encode-dvs"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out")
        if name == "convert":
            sp.add_argument("--network")
        if name == "sweep":
            sp.add_argument("--spiking")
            sp.add_argument("--rates")
            sp.add_argument("--subset", type=int)
        if name == "encode-dvs":
            sp.add_argument("--index")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig(parse_config_file(args.config))
        if args.seed is not None:
            for key in ("train.seed", "sim.seed"):
                cfg.values[key] = str(args.seed)
        out_value = args.out or os.environ.get("SNNKIT_OUT") or cfg.get("out.dir")
        if not out_value:
            raise ConfigError("no output directory; pass --out or set out.dir")
        out_dir = Path(out_value)
        out_dir.mkdir(parents=True, exist_ok=True)
        if args.command == "train":
            return cmd_train(cfg, out_dir)
        if args.command == "convert":
            return cmd_convert(cfg, out_dir, args.network)
        if args.command == "sweep":
            return cmd_sweep(cfg, out_dir, args.spiking, args.rates, args.subset)
        return cmd_encode_dvs(cfg, out_dir, args.index)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SnnkitError as e:
        print(f"error: {e}", file=sys.stderr)
        if args.command == "convert":
            return EXIT_CONVERSION
        if args.command in ("sweep", "encode-dvs"):
            return EXIT_SIMULATION
        return 1


if __name__ == "__main__":
    sys.exit(main())
