"""IDX file parsing and MNIST dataset loading.

IDX layout (big-endian throughout):
    byte 0-1   zero
    byte 2     element kind (0x08 = unsigned byte for MNIST)
    byte 3     number of dimensions d
    4 + 4*i    32-bit size of dimension i, for i in 0..d-1
    then       raw element data, row-major

Files whose name ends in ``.gz`` are decompressed before parsing.
"""

import gzip
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CountMismatch, MagicMismatch, TrailingBytes, Truncated

# element-kind byte -> big-endian numpy dtype
IDX_DTYPES = {
    0x08: ">u1",
    0x09: ">i1",
    0x0B: ">i2",
    0x0C: ">i4",
    0x0D: ">f4",
    0x0E: ">f8",
}


@dataclass
class IdxArray:
    """Decoded IDX payload: an element kind, a shape, and the data."""

    element_kind: int
    shape: tuple
    data: np.ndarray  # shaped, native-order copy of the payload

    def __post_init__(self):
        if self.element_kind not in IDX_DTYPES:
            raise MagicMismatch(f"unknown element kind 0x{self.element_kind:02x}")
        if len(self.shape) == 0 or any(s <= 0 for s in self.shape):
            raise ValueError(f"bad shape {self.shape}")
        if self.data.size != int(np.prod(self.shape)):
            raise ValueError("shape does not match data size")


def parse_idx(buf: bytes) -> IdxArray:
    """Decode one complete IDX file image into an IdxArray."""
    if len(buf) < 4:
        raise Truncated(f"header needs 4 bytes, got {len(buf)}")
    if buf[0] != 0 or buf[1] != 0:
        raise MagicMismatch(f"magic bytes are {buf[0]:#04x} {buf[1]:#04x}, expected zero")
    kind, ndim = buf[2], buf[3]
    if kind not in IDX_DTYPES:
        raise MagicMismatch(f"unknown element kind 0x{kind:02x}")
    header_len = 4 + 4 * ndim
    if len(buf) < header_len:
        raise Truncated(f"header promises {ndim} dims, file ends inside the size list")
    shape = struct.unpack(f">{ndim}i", buf[4:header_len])
    if any(s <= 0 for s in shape):
        raise MagicMismatch(f"non-positive dimension in {shape}")
    dtype = np.dtype(IDX_DTYPES[kind])
    expected = int(np.prod(shape)) * dtype.itemsize
    payload = buf[header_len:]
    if len(payload) < expected:
        raise Truncated(f"need {expected} data bytes, got {len(payload)}")
    if len(payload) > expected:
        raise TrailingBytes(f"{len(payload) - expected} bytes past the promised payload")
    data = np.frombuffer(payload, dtype=dtype).reshape(shape)
    # native byte order so downstream arithmetic is unsurprising
    return IdxArray(kind, tuple(shape), data.astype(dtype.newbyteorder("=")))


def serialize_idx(arr: IdxArray) -> bytes:
    """Inverse of parse_idx; round-trips byte-for-byte."""
    ndim = len(arr.shape)
    header = struct.pack(f">BBBB{ndim}i", 0, 0, arr.element_kind, ndim, *arr.shape)
    payload = arr.data.astype(IDX_DTYPES[arr.element_kind]).tobytes()
    return header + payload


def load_idx(path) -> IdxArray:
    """Read an IDX file from disk, decompressing ``.gz`` files transparently."""
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as f:
        return parse_idx(f.read())


def save_idx(arr: IdxArray, path) -> None:
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "wb") as f:
        f.write(serialize_idx(arr))


@dataclass
class LabeledDataset:
    """Images kept as raw unsigned bytes; normalize lazily at use time."""

    images: np.ndarray  # (N, H, W) uint8
    labels: np.ndarray  # (N,) integer class indices
    split_name: str = ""

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise CountMismatch(
                f"{len(self.images)} images vs {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() > 9):
            raise ValueError("labels outside [0, 9]")

    def __len__(self):
        return len(self.images)

    def subset(self, indices) -> "LabeledDataset":
        return LabeledDataset(self.images[indices], self.labels[indices], self.split_name)


def load_mnist(image_path, label_path, split_name: str = "") -> LabeledDataset:
    """Load an MNIST image/label file pair and zip them by index."""
    images = load_idx(image_path)
    labels = load_idx(label_path)
    if images.data.ndim != 3:
        raise MagicMismatch(f"image file has {images.data.ndim} dims, expected 3")
    if labels.data.ndim != 1:
        raise MagicMismatch(f"label file has {labels.data.ndim} dims, expected 1")
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images vs {labels.shape[0]} labels")
    return LabeledDataset(
        images.data.astype(np.uint8),
        labels.data.astype(np.int64),
        split_name,
    )


def normalize(image: np.ndarray) -> np.ndarray:
    """Map unsigned-byte pixel values into [0, 1] as v / 255."""
    return np.asarray(image, dtype=np.float64) / 255.0
