# end_to_end_digits.py
#
# The full pipeline on a small dataset: train a convertible CNN on the
# digits bundled with scikit-learn (upsampled to 28x28), convert it to a
# spiking network, and compare accuracies at several input rates. With the
# official MNIST IDX files the same flow runs through the CLI; this script
# keeps everything in-process so it finishes in about a minute.

import numpy as np
from sklearn.datasets import load_digits

from snnkit import convert, idx, network, sim
from snnkit.encoding import EncoderConfig


def load_dataset():
    digits = load_digits()
    up = np.kron(digits.images, np.ones((1, 3, 3)))  # 8x8 -> 24x24
    up = np.pad(up, ((0, 0), (2, 2), (2, 2)))
    images = np.clip(up * (255.0 / 16.0), 0, 255).astype(np.uint8)
    labels = digits.target.astype(np.int64)
    order = np.random.default_rng(7).permutation(len(images))
    images, labels = images[order], labels[order]
    train = idx.LabeledDataset(images[:1500], labels[:1500], "train")
    test = idx.LabeledDataset(images[1500:], labels[1500:], "test")
    return train, test


def main():
    train, test = load_dataset()
    print(f"{len(train)} training / {len(test)} test images")

    # build a batch-norm VGG-style model, rewrite it into the convertible
    # form (dropout instead of batch norm, average pooling before relu),
    # then train it
    ccfg = convert.ConversionConfig()
    specs = network.build_vgg_mini(channels=(8, 16), hidden=64)
    specs, subs = convert.prepare_for_conversion(specs, ccfg)
    print("pre-training substitutions:")
    for s in subs:
        print(f"  {s.rule} at layer {s.layer_index}")

    net = network.Network(specs, seed=11)
    tcfg = network.TrainConfig(learning_rate=0.08, batch_size=32, epochs=6,
                               seed=11)
    net, history = network.train(net, train, tcfg)
    ann_acc = network.evaluate(net, test)
    print(f"\nANN test accuracy: {ann_acc:.4f}")

    # convert: percentile weight normalization + relu -> IF mapping
    snn, report = convert.convert(net, train, ccfg)
    print(f"spiking stages: {len(snn.stages)}, "
          f"scales: {[round(s, 3) for s in report.scales]}")

    # simulate at three peak input rates
    images = idx.normalize(test.images)
    for rate in (100.0, 200.0, 300.0):
        cfg = sim.SimConfig(horizon_steps=200,
                            encoder=EncoderConfig(lambda_max=rate,
                                                  horizon_steps=200))
        counts, totals, latency = sim.classify_batch(snn, images, cfg)
        preds = counts.sum(axis=1).argmax(axis=1)
        acc = (preds == test.labels).mean()
        print(f"  {rate:5.0f} Hz: accuracy {acc:.4f}, "
              f"mean spikes {totals.mean():8.1f}, "
              f"mean latency {latency.mean():.1f} steps")


if __name__ == "__main__":
    main()
