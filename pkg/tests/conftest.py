"""Shared fixtures.

MNIST-dependent tests look for the official IDX files under $MNIST_DIR
(default ./data/mnist) and skip when absent. Everything else runs on a
surrogate built from sklearn's bundled 8x8 handwritten digits, upsampled to
28x28 and written through the package's own IDX serializer so the full file
path is exercised.
"""

import os
from pathlib import Path

import numpy as np
import pytest

from snnkit import convert, idx, network

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def mnist_dir():
    return Path(os.environ.get("MNIST_DIR", "data/mnist"))


def find_mnist():
    """Return {name: path} if all four files exist (plain or .gz), else None."""
    d = mnist_dir()
    out = {}
    for key, stem in MNIST_FILES.items():
        for candidate in (d / stem, d / (stem + ".gz")):
            if candidate.exists():
                out[key] = candidate
                break
        else:
            return None
    return out


@pytest.fixture(scope="session")
def mnist():
    paths = find_mnist()
    if paths is None:
        pytest.skip(f"MNIST IDX files not found under {mnist_dir()} "
                    "(set MNIST_DIR to enable)")
    train = idx.load_mnist(paths["train_images"], paths["train_labels"], "train")
    test = idx.load_mnist(paths["test_images"], paths["test_labels"], "test")
    return train, test


def make_surrogate_arrays():
    """28x28 uint8 digit images from sklearn's bundled dataset."""
    from sklearn.datasets import load_digits

    digits = load_digits()
    imgs8 = digits.images  # (N, 8, 8) floats in [0, 16]
    up = np.kron(imgs8, np.ones((1, 3, 3)))  # (N, 24, 24)
    up = np.pad(up, ((0, 0), (2, 2), (2, 2)))
    images = np.clip(up * (255.0 / 16.0), 0, 255).astype(np.uint8)
    labels = digits.target.astype(np.int64)
    order = np.random.default_rng(7).permutation(len(images))
    return images[order], labels[order]


@pytest.fixture(scope="session")
def surrogate():
    """(train, test) LabeledDataset pair; 1500 train / 297 test."""
    images, labels = make_surrogate_arrays()
    train = idx.LabeledDataset(images[:1500], labels[:1500], "train")
    test = idx.LabeledDataset(images[1500:], labels[1500:], "test")
    return train, test


@pytest.fixture(scope="session")
def surrogate_idx_dir(tmp_path_factory, surrogate):
    """Surrogate datasets written as IDX files via the package serializer."""
    train, test = surrogate
    d = tmp_path_factory.mktemp("surrogate-idx")
    for name, ds in (("train", train), ("t10k", test)):
        img = idx.IdxArray(0x08, ds.images.shape, ds.images)
        lab = idx.IdxArray(0x08, ds.labels.shape, ds.labels.astype(np.uint8))
        idx.save_idx(img, d / f"{name}-images-idx3-ubyte")
        idx.save_idx(lab, d / f"{name}-labels-idx1-ubyte")
    return d


TRAIN_SEED = 11


def _train_surrogate(surrogate):
    train, test = surrogate
    ccfg = convert.ConversionConfig()
    specs = network.build_vgg_mini(channels=(8, 16), hidden=64)
    specs, _ = convert.prepare_for_conversion(specs, ccfg)
    net = network.Network(specs, seed=TRAIN_SEED)
    tcfg = network.TrainConfig(learning_rate=0.08, batch_size=32, epochs=6,
                               seed=TRAIN_SEED)
    net, history = network.train(net, train, tcfg)
    return net, history


@pytest.fixture(scope="session")
def trained_surrogate(surrogate):
    return _train_surrogate(surrogate)


@pytest.fixture(scope="session")
def converted_surrogate(surrogate, trained_surrogate):
    train, _ = surrogate
    net, _ = trained_surrogate
    snn, report = convert.convert(net, train, convert.ConversionConfig())
    return snn, report
