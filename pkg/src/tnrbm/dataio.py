"""Dataset ingestion and file formats.

Formats
-------
IDX
    The MNIST distribution format: ``00 00 <dtype> <ndims>``, then one
    big-endian uint32 per dimension, then the row-major payload.  Only
    unsigned bytes (dtype ``0x08``) are supported.  ``.gz`` paths are
    decompressed on the fly.
Model file
    ``b"TNRBM1\\n"``, a variant byte (0 rbm, 1 mvrbm, 2 mporbm), the layer
    order ``d`` and the visible then hidden dims as little-endian uint32, the
    ``d + 1`` MPO ranks (mporbm only), then every parameter as little-endian
    float64 in column-major order: weights (``W``; ``W1, W2``; or cores
    ``1..d``), visible bias, hidden bias.
PGM
    Binary greyscale (P5, maxval 255); layer values in [0, 1] are scaled by 255.
CSV matrices
    Header row, one sample per row, features in column-major (vec) order.

Bit planes are written most-significant bit first.
"""
import csv
import gzip
import os
import struct
import tempfile
from dataclasses import dataclass
from math import prod

import numpy as np

from .errors import (
    BadMagicError,
    PayloadLengthError,
    TruncatedFileError,
    UnsupportedDtypeError,
    VariantError,
)
from .models import RBM, MPORBM, MvRBM
from .mpo import Mpo, check_ranks

IDX_DTYPES = {0x08: "u1", 0x09: "i1", 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}
MODEL_MAGIC = b"TNRBM1\n"
VARIANT_CODES = {"rbm": 0, "mvrbm": 1, "mporbm": 2}


def atomic_write(path, data):
    """Write ``data`` (bytes or str) to ``path`` via a temp file and rename."""
    if isinstance(data, str):
        data = data.encode()
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_bytes(path):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as f:
        return f.read()


def parse_idx(raw):
    if len(raw) < 4:
        raise TruncatedFileError("IDX header shorter than 4 bytes")
    if raw[0] != 0 or raw[1] != 0:
        raise BadMagicError(f"IDX magic must start with two zero bytes, got {raw[:2].hex()}")
    dtype, ndims = raw[2], raw[3]
    if dtype not in IDX_DTYPES:
        raise BadMagicError(f"unknown IDX dtype code 0x{dtype:02x}")
    if dtype != 0x08:
        raise UnsupportedDtypeError(f"IDX dtype 0x{dtype:02x} is not supported (only unsigned bytes)")
    header = 4 + 4 * ndims
    if len(raw) < header:
        raise TruncatedFileError("IDX dimension header is truncated")
    dims = struct.unpack(f">{ndims}I", raw[4:header])
    size = prod(dims)
    payload = len(raw) - header
    if payload < size:
        raise TruncatedFileError(f"IDX payload has {payload} bytes, header promises {size}")
    if payload > size:
        raise PayloadLengthError(f"IDX payload has {payload - size} trailing bytes")
    return np.frombuffer(raw, dtype=np.uint8, count=size, offset=header).reshape(dims).astype(np.float64)


def load_idx(path):
    """IDX file as a float64 array shaped by its header (images: ``N x rows x cols``)."""
    return parse_idx(_read_bytes(path))


def save_idx(path, array):
    array = np.asarray(array)
    if array.min(initial=0) < 0 or array.max(initial=0) > 255:
        raise ValueError("IDX unsigned-byte arrays need values in 0..255")
    header = bytes([0, 0, 0x08, array.ndim]) + struct.pack(f">{array.ndim}I", *array.shape)
    atomic_write(path, header + np.ascontiguousarray(array, dtype=np.uint8).tobytes())


def binarize(x, threshold=128):
    return (np.asarray(x) >= threshold).astype(np.float64)


def bitplane_encode(x, bits, merge_channels=False):
    """Binary expansion of non-negative integers along a new trailing mode.

    With ``merge_channels`` the existing last mode (e.g. RGB) is merged with
    the bit mode channel-major, so ``(..., C)`` becomes ``(..., C * bits)``
    with entry ``c * bits + b`` holding bit ``b`` (MSB first) of channel ``c``.
    """
    x = np.asarray(x)
    xi = np.rint(x).astype(np.int64)
    if np.any(xi != x) or np.any(xi < 0):
        raise ValueError("bit-plane encoding needs non-negative integers")
    if np.any(xi >= 2**bits):
        raise ValueError(f"value {xi.max()} does not fit in {bits} bits")
    shifts = np.arange(bits - 1, -1, -1)
    planes = ((xi[..., None] >> shifts) & 1).astype(np.float64)
    if merge_channels:
        planes = planes.reshape(planes.shape[:-2] + (planes.shape[-2] * bits,))
    return planes


def bitplane_decode(planes, bits=None):
    planes = np.asarray(planes)
    if bits is not None and planes.shape[-1] != bits:
        planes = planes.reshape(planes.shape[:-1] + (-1, bits))
    bits = planes.shape[-1]
    return (planes.astype(np.int64) << np.arange(bits - 1, -1, -1)).sum(axis=-1)


def load_csv_matrix(path, label_column=None):
    """Samples (and optionally labels) from a headed CSV file."""
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise TruncatedFileError(f"{path} is empty") from None
        rows = [r for r in reader if r]
    data = np.array(rows, dtype=np.float64) if rows else np.zeros((0, len(header)))
    if data.ndim != 2 or data.shape[1] != len(header):
        raise PayloadLengthError(f"{path}: rows do not match the {len(header)}-column header")
    if label_column is None:
        return data, None
    if label_column not in header:
        raise ValueError(f"{path} has no column {label_column!r}")
    col = header.index(label_column)
    labels = data[:, col].astype(np.int64)
    return np.delete(data, col, axis=1), labels


def write_pgm(path, image):
    image = np.asarray(image, dtype=np.float64)
    if image.ndim == 1:
        image = image[None]
    if image.ndim != 2:
        raise ValueError(f"PGM needs a 2-D image, got shape {image.shape}")
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8)
    rows, cols = pixels.shape
    atomic_write(path, f"P5\n{cols} {rows}\n255\n".encode() + pixels.tobytes())


def read_pgm(path):
    raw = _read_bytes(path)
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise BadMagicError("not a binary PGM")
    cols, rows, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    pixels = np.frombuffer(parts[4][: rows * cols], dtype=np.uint8)
    return pixels.reshape(rows, cols) / maxval


@dataclass
class LabeledDataset:
    samples: np.ndarray
    labels: np.ndarray
    split: np.ndarray = None  # entries in SPLITS, one per sample

    SPLITS = ("train", "validation", "test")

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if len(self.samples) != len(self.labels):
            raise ValueError("samples and labels differ in length")

    def part(self, name):
        if self.split is None:
            raise ValueError("dataset has not been split")
        idx = np.flatnonzero(self.split == name)
        return self.samples[idx], self.labels[idx]


def _allocate(n, fractions):
    raw = np.asarray(fractions, dtype=np.float64) * n
    counts = np.floor(raw).astype(int)
    for i in np.argsort(-(raw - counts), kind="stable")[: n - counts.sum()]:
        counts[i] += 1
    return counts


def split(dataset, fractions, seed=0, train_cap_per_class=None):
    """Stratified random train/validation/test assignment.

    Every class is shuffled on its own and cut by ``fractions``.  With
    ``train_cap_per_class``, training samples beyond the cap move to test.
    """
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or any(f < 0 for f in fractions) or abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"need three non-negative fractions summing to 1, got {fractions}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7370]))  # "sp"
    assign = np.empty(len(dataset.labels), dtype=object)
    for label in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == label)
        counts = _allocate(len(idx), fractions)
        needed = sum(f > 0 for f in fractions)
        if len(idx) < needed or any(f > 0 and c == 0 for f, c in zip(fractions, counts)):
            raise ValueError(f"class {label!r} has {len(idx)} samples, too few for splits {fractions}")
        idx = rng.permutation(idx)
        if train_cap_per_class is not None and counts[0] > train_cap_per_class:
            counts[2] += counts[0] - train_cap_per_class
            counts[0] = train_cap_per_class
        bounds = np.cumsum(counts)[:-1]
        for name, part in zip(LabeledDataset.SPLITS, np.split(idx, bounds)):
            assign[part] = name
    return LabeledDataset(dataset.samples, dataset.labels, assign)


def _u32(values):
    return struct.pack(f"<{len(values)}I", *values)


def model_to_bytes(m):
    if m.variant not in VARIANT_CODES:
        raise VariantError(f"cannot serialize variant {m.variant!r}")
    d = len(m.visible_dims)
    header = MODEL_MAGIC + bytes([VARIANT_CODES[m.variant]]) + _u32([d]) + _u32(m.visible_dims) + _u32(m.hidden_dims)
    if m.variant == "mporbm":
        header += _u32(m.ranks)
    payload = b"".join(
        np.ascontiguousarray(a.ravel(order="F"), dtype="<f8").tobytes() for a in m.params().values()
    )
    return header + payload


def _param_shapes(variant, vis, hid, ranks):
    if variant == "rbm":
        shapes = {"W": (vis[0], hid[0])}
    elif variant == "mvrbm":
        shapes = {"W1": (vis[0], hid[0]), "W2": (vis[1], hid[1])}
    else:
        shapes = {
            f"core{k + 1}": (ranks[k], vis[k], hid[k], ranks[k + 1]) for k in range(len(vis))
        }
    shapes["B"] = tuple(vis)
    shapes["C"] = tuple(hid)
    return shapes


def model_from_bytes(raw):
    if not raw.startswith(MODEL_MAGIC):
        raise BadMagicError("not a TNRBM1 model file")
    pos = len(MODEL_MAGIC)

    def take(n):
        nonlocal pos
        if pos + 4 * n > len(raw):
            raise TruncatedFileError("model header is truncated")
        out = struct.unpack_from(f"<{n}I", raw, pos)
        pos += 4 * n
        return out

    if len(raw) <= pos:
        raise TruncatedFileError("model header is truncated")
    code = raw[pos]
    pos += 1
    variants = {v: k for k, v in VARIANT_CODES.items()}
    if code not in variants:
        raise BadMagicError(f"unknown variant code {code}")
    variant = variants[code]
    (d,) = take(1)
    vis, hid = take(d), take(d)
    if variant == "rbm" and d != 1 or variant == "mvrbm" and d != 2:
        raise PayloadLengthError(f"{variant} model with layer order {d}")
    ranks = None
    if variant == "mporbm":
        ranks = take(d + 1)
        check_ranks(ranks, d)
    shapes = _param_shapes(variant, vis, hid, ranks)
    expected = 8 * sum(prod(s) for s in shapes.values())
    if len(raw) - pos != expected:
        raise PayloadLengthError(f"payload has {len(raw) - pos} bytes, header implies {expected}")
    params = {}
    for name, shape in shapes.items():
        n = prod(shape)
        flat = np.frombuffer(raw, dtype="<f8", count=n, offset=pos).astype(np.float64)
        params[name] = flat.reshape(shape, order="F")
        pos += 8 * n
    if variant == "rbm":
        return RBM.from_params(params)
    if variant == "mvrbm":
        return MvRBM.from_params(params)
    cores = [params[f"core{k}"] for k in range(1, d + 1)]
    return MPORBM(Mpo(cores), params["B"], params["C"])


def save_model(path, m):
    atomic_write(path, model_to_bytes(m))


def load_model(path):
    return model_from_bytes(_read_bytes(path))
