"""Image sources, sequential-MNIST construction and client partitioning.

Images are square grayscale arrays with intensities in [0, 1]. A sequence is
built by resizing an image to one of a menu of side lengths and reading its
pixels in scanline order, giving a ``(side**2, 1)`` feature block.
"""

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801
DEFAULT_SIZE_MENU = (14, 17, 21, 24, 28)
N_CLASSES = 10


class IdxError(ValueError):
    pass


class BadMagicError(IdxError):
    pass


class TruncatedStreamError(IdxError):
    pass


class CountMismatchError(IdxError):
    pass


@dataclass(frozen=True)
class LabeledSequence:
    features: np.ndarray  # (T, d)
    label: int

    @property
    def length(self):
        return self.features.shape[0]


@dataclass
class ClientDataset:
    client_id: int
    examples: list

    def lengths(self):
        return np.array([e.length for e in self.examples], dtype=np.int64)

    def labels(self):
        return np.array([e.label for e in self.examples], dtype=np.int64)

    def __len__(self):
        return len(self.examples)


@dataclass
class FederatedDataset:
    clients: list
    test_set: list
    length_menu: tuple
    n_classes: int = N_CLASSES
    construction: str = ""
    meta: dict = field(default_factory=dict)

    @property
    def d(self):
        return self.clients[0].examples[0].features.shape[1]


@dataclass(frozen=True)
class LengthDistribution:
    support: tuple
    probabilities: np.ndarray


# -- IDX ---------------------------------------------------------------------


def _header(buf, n_ints, what):
    need = 4 * n_ints
    if len(buf) < need:
        raise TruncatedStreamError(f"{what} stream too short for header ({len(buf)} bytes)")
    return struct.unpack(f">{n_ints}I", buf[:need])


def load_idx_images(image_bytes, label_bytes):
    """Parse an IDX image/label stream pair into ``(images, labels)``.

    Returns a float64 array ``(n, rows, cols)`` scaled to [0, 1] and an int64
    label array.
    """
    image_bytes = bytes(image_bytes)
    label_bytes = bytes(label_bytes)
    magic, count, rows, cols = _header(image_bytes, 4, "image")
    if magic != IMAGE_MAGIC:
        raise BadMagicError(f"bad magic 0x{magic:08x} in image stream, expected 0x{IMAGE_MAGIC:08x}")
    lmagic, lcount = _header(label_bytes, 2, "label")
    if lmagic != LABEL_MAGIC:
        raise BadMagicError(f"bad magic 0x{lmagic:08x} in label stream, expected 0x{LABEL_MAGIC:08x}")
    if count != lcount:
        raise CountMismatchError(f"count mismatch: {count} images vs {lcount} labels")
    if rows != cols:
        raise IdxError(f"images must be square, got {rows}x{cols}")
    pixels = image_bytes[16:]
    if len(pixels) < count * rows * cols:
        raise TruncatedStreamError(
            f"image stream truncated: need {count * rows * cols} pixel bytes, have {len(pixels)}"
        )
    labels = label_bytes[8:]
    if len(labels) < count:
        raise TruncatedStreamError(f"label stream truncated: need {count} bytes, have {len(labels)}")
    images = np.frombuffer(pixels, dtype=np.uint8, count=count * rows * cols)
    images = images.reshape(count, rows, cols).astype(np.float64) / 255.0
    return images, np.frombuffer(labels, dtype=np.uint8, count=count).astype(np.int64)


def load_idx_files(image_path, label_path):
    with open(image_path, "rb") as fi, open(label_path, "rb") as fl:
        return load_idx_images(fi.read(), fl.read())


def encode_idx(images, labels):
    """Inverse of :func:`load_idx_images` for uint8-representable inputs."""
    images = np.asarray(images)
    if images.dtype != np.uint8:
        images = np.clip(np.rint(np.asarray(images, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    n, rows, cols = images.shape
    img = struct.pack(">4I", IMAGE_MAGIC, n, rows, cols) + images.tobytes()
    lab = struct.pack(">2I", LABEL_MAGIC, n) + np.asarray(labels, dtype=np.uint8).tobytes()
    return img, lab


# -- synthetic digits ----------------------------------------------------------

# seven-segment layout: a top, b upper-right, c lower-right, d bottom,
# e lower-left, f upper-left, g middle
_SEGMENTS = {
    0: "abcdef",
    1: "bc",
    2: "abged",
    3: "abgcd",
    4: "fgbc",
    5: "afgcd",
    6: "afgedc",
    7: "abc",
    8: "abcdefg",
    9: "abcdfg",
}


def _segment_lines(seg, left, right, top, mid, bottom):
    return {
        "a": ((left, top), (right, top)),
        "b": ((right, top), (right, mid)),
        "c": ((right, mid), (right, bottom)),
        "d": ((left, bottom), (right, bottom)),
        "e": ((left, mid), (left, bottom)),
        "f": ((left, top), (left, mid)),
        "g": ((left, mid), (right, mid)),
    }[seg]


def _draw_glyph(label, rng, side=28):
    yy, xx = np.mgrid[0:side, 0:side].astype(np.float64)
    cx = side / 2 + rng.uniform(-2.5, 2.5)
    cy = side / 2 + rng.uniform(-2.5, 2.5)
    half_w = rng.uniform(4.0, 6.5)
    half_h = rng.uniform(7.5, 10.0)
    slant = rng.uniform(-0.25, 0.25)
    width = rng.uniform(1.1, 2.0)
    img = np.zeros((side, side))
    for seg in _SEGMENTS[label]:
        (x0, y0), (x1, y1) = _segment_lines(seg, -half_w, half_w, -half_h, 0.0, half_h)
        # shear: x shifts with height
        p0 = np.array([cx + x0 - slant * y0, cy + y0])
        p1 = np.array([cx + x1 - slant * y1, cy + y1])
        p0 += rng.normal(0.0, 0.6, 2)
        p1 += rng.normal(0.0, 0.6, 2)
        seg_vec = p1 - p0
        t = ((xx - p0[0]) * seg_vec[0] + (yy - p0[1]) * seg_vec[1]) / max(seg_vec @ seg_vec, 1e-9)
        t = np.clip(t, 0.0, 1.0)
        dist = np.hypot(xx - (p0[0] + t * seg_vec[0]), yy - (p0[1] + t * seg_vec[1]))
        img = np.maximum(img, np.clip(1.5 - dist / width, 0.0, 1.0))
    img = img * rng.uniform(0.75, 1.0) + rng.normal(0.0, 0.03, img.shape)
    return np.clip(img, 0.0, 1.0)


def generate_synthetic_digits(count, seed):
    """Procedural 28x28 seven-segment style digits with per-image jitter.

    Labels cycle through 0..9 before shuffling, so every class appears
    ``count // 10`` times when 10 divides ``count``.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(count) % N_CLASSES).astype(np.int64)
    images = np.stack([_draw_glyph(int(y), rng) for y in labels])
    return images, labels


# -- resizing and flattening ---------------------------------------------------


def _axis_coords(src, dst):
    if dst == 1:
        pos = np.array([(src - 1) / 2.0])
    else:
        pos = np.arange(dst) * (src - 1) / (dst - 1)
    i0 = np.clip(np.floor(pos).astype(np.int64), 0, src - 1)
    i1 = np.minimum(i0 + 1, src - 1)
    return i0, i1, pos - i0


def resize_image(img, target_side):
    """Bilinear resize on a corner-aligned grid.

    Output pixel ``i`` samples source coordinate ``i * (S - 1) / (s - 1)``, so
    the four corners map onto each other exactly. Interpolation is written as
    ``a + f * (b - a)``, which keeps constant images exactly constant.
    """
    img = np.asarray(img, dtype=np.float64)
    if target_side < 1:
        raise ValueError(f"target side must be >= 1, got {target_side}")
    src = img.shape[0]
    if img.shape != (src, src):
        raise ValueError(f"expected a square image, got {img.shape}")
    y0, y1, fy = _axis_coords(src, target_side)
    x0, x1, fx = _axis_coords(src, target_side)
    rows = img[y0] + fy[:, None] * (img[y1] - img[y0])
    out = rows[:, x0] + fx[None, :] * (rows[:, x1] - rows[:, x0])
    return np.clip(out, 0.0, 1.0)


def flatten_scanline(img):
    """Row-major pixel sequence as a ``(side**2, 1)`` feature block."""
    img = np.asarray(img, dtype=np.float64)
    return img.reshape(-1, 1).copy()


def to_sequence(img, side, label):
    return LabeledSequence(flatten_scanline(resize_image(img, side)), int(label))


# -- partitioning ----------------------------------------------------------------


def stratified_partition(labels, n_clients, seed):
    """Split example indices into ``n_clients`` equal, label-balanced lists.

    Each class is trimmed to a multiple of ``n_clients`` by dropping its
    highest-index examples, shuffled, and dealt out in equal chunks. Returned
    index lists are sorted.
    """
    if n_clients <= 0:
        raise ValueError(f"n_clients must be positive, got {n_clients}")
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    parts = [[] for _ in range(n_clients)]
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        keep = len(idx) - len(idx) % n_clients
        idx = idx[:keep]
        idx = idx[rng.permutation(len(idx))]
        for i, chunk in enumerate(np.split(idx, n_clients)):
            parts[i].append(chunk)
    return [np.sort(np.concatenate(p)) if p else np.array([], np.int64) for p in parts]


def _test_sequences(test_images, test_labels, menu, rng):
    sides = rng.choice(np.asarray(menu), size=len(test_labels))
    return [to_sequence(img, s, y) for img, s, y in zip(test_images, sides, test_labels)]


def build_vl_dataset(images, labels, test_images, test_labels, n_clients=5,
                     size_menu=DEFAULT_SIZE_MENU, seed=None):
    """Every image independently gets a uniformly drawn side from the menu."""
    if len(size_menu) == 0:
        raise ValueError("size_menu must be non-empty")
    rng = np.random.default_rng(seed)
    parts = stratified_partition(labels, n_clients, rng)
    menu = np.asarray(size_menu)
    clients = []
    for cid, idx in enumerate(parts):
        sides = rng.choice(menu, size=len(idx))
        clients.append(ClientDataset(cid, [to_sequence(images[i], s, labels[i]) for i, s in zip(idx, sides)]))
    test = _test_sequences(test_images, test_labels, size_menu, rng)
    return FederatedDataset(clients, test, tuple(s * s for s in size_menu), construction="vl")


def build_fl_dataset(images, labels, test_images, test_labels, n_clients=5,
                     size_menu=DEFAULT_SIZE_MENU, seed=None):
    """Client ``i`` resizes every image to ``menu[perm[i]]`` for a seeded permutation."""
    if len(size_menu) != n_clients:
        raise ValueError(
            f"fixed-length construction needs one size per client: {len(size_menu)} sizes for {n_clients} clients"
        )
    rng = np.random.default_rng(seed)
    parts = stratified_partition(labels, n_clients, rng)
    assignment = np.asarray(size_menu)[rng.permutation(len(size_menu))]
    clients = [
        ClientDataset(cid, [to_sequence(images[i], int(assignment[cid]), labels[i]) for i in idx])
        for cid, idx in enumerate(parts)
    ]
    test = _test_sequences(test_images, test_labels, size_menu, rng)
    return FederatedDataset(clients, test, tuple(s * s for s in size_menu), construction="fl",
                            meta={"client_sides": [int(s) for s in assignment]})


# -- temporal heterogeneity ----------------------------------------------------


def length_distribution(lengths, support):
    support = tuple(int(s) for s in support)
    lengths = np.asarray(lengths, dtype=np.int64)
    if lengths.size == 0:
        raise ValueError("no lengths given")
    unknown = set(np.unique(lengths).tolist()) - set(support)
    if unknown:
        raise ValueError(f"lengths {sorted(unknown)} not in support {support}")
    counts = np.array([(lengths == s).sum() for s in support], dtype=np.float64)
    return LengthDistribution(support, counts / counts.sum())


def temporal_heterogeneity(dist):
    """``ln|support| - H(dist)`` in nats, with ``0 ln 0 = 0``."""
    p = np.asarray(dist.probabilities, dtype=np.float64)
    if len(dist.support) == 0 or p.size != len(dist.support):
        raise ValueError("distribution support is empty or mismatched")
    if abs(p.sum() - 1.0) > 1e-9:
        raise ValueError(f"probabilities sum to {p.sum()!r}, not 1")
    nz = p[p > 0]
    entropy = float(-(nz * np.log(nz)).sum())
    return float(np.log(len(dist.support))) - entropy


def client_heterogeneity(data):
    return [
        temporal_heterogeneity(length_distribution(c.lengths(), data.length_menu))
        for c in data.clients
    ]


# -- persistence ---------------------------------------------------------------


def write_manifest(data, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["client_id", "example_index", "length", "label"])
        for c in data.clients:
            for j, e in enumerate(c.examples):
                w.writerow([c.client_id, j, e.length, e.label])


def _pack_sequences(seqs):
    lengths = np.array([s.length for s in seqs], dtype=np.int64)
    labels = np.array([s.label for s in seqs], dtype=np.int64)
    feats = np.concatenate([s.features for s in seqs]) if seqs else np.zeros((0, 1))
    return feats, lengths, labels


def _unpack_sequences(feats, lengths, labels):
    bounds = np.concatenate([[0], np.cumsum(lengths)])
    return [LabeledSequence(feats[bounds[i]:bounds[i + 1]].copy(), int(labels[i]))
            for i in range(len(lengths))]


def save_dataset(data, path):
    arrays = {
        "length_menu": np.asarray(data.length_menu, dtype=np.int64),
        "n_classes": np.int64(data.n_classes),
        "construction": np.array(data.construction),
        "n_clients": np.int64(len(data.clients)),
    }
    for c in data.clients:
        f, ln, lb = _pack_sequences(c.examples)
        arrays[f"client{c.client_id}_features"] = f
        arrays[f"client{c.client_id}_lengths"] = ln
        arrays[f"client{c.client_id}_labels"] = lb
    f, ln, lb = _pack_sequences(data.test_set)
    arrays.update(test_features=f, test_lengths=ln, test_labels=lb)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_dataset(path):
    with np.load(path) as z:
        n = int(z["n_clients"])
        clients = [
            ClientDataset(i, _unpack_sequences(z[f"client{i}_features"], z[f"client{i}_lengths"],
                                               z[f"client{i}_labels"]))
            for i in range(n)
        ]
        test = _unpack_sequences(z["test_features"], z["test_lengths"], z["test_labels"])
        return FederatedDataset(clients, test, tuple(int(v) for v in z["length_menu"]),
                                int(z["n_classes"]), str(z["construction"]))
