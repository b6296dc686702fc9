"""GRU sequence classifier with hand-derived backpropagation through time.

Cell convention::

    z  = sigmoid(W_z x + U_z h + b_z)
    r  = sigmoid(W_r x + U_r h + b_r)
    h~ = tanh(W_h x + U_h (r * h) + b_h)
    h' = (1 - z) * h + z * h~

The classifier reads the hidden state at each sequence's own final step:
``logits = W_out h_T + b_out``.

Flat parameter layout (row-major blocks, in this order)::

    W_z, W_r, W_h   (H, d) each
    U_z, U_r, U_h   (H, H) each
    b_z, b_r, b_h   (H,)   each
    W_out           (k, H)
    b_out           (k,)

for a total of ``H(3d + 3H + 3) + k(H + 1)`` values. Because the three input
blocks are adjacent, ``W`` viewed as ``(3H, d)`` is the stacked input matrix,
and likewise for ``U`` and ``b``.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .numerics import LOG_CLAMP, sigmoid, softmax


def param_count(d, hidden, k):
    return hidden * (3 * d + 3 * hidden + 3) + k * (hidden + 1)


def _slices(d, hidden, k):
    sizes = [
        ("W", 3 * hidden * d),
        ("U", 3 * hidden * hidden),
        ("b", 3 * hidden),
        ("W_out", k * hidden),
        ("b_out", k),
    ]
    out = {}
    pos = 0
    for name, size in sizes:
        out[name] = slice(pos, pos + size)
        pos += size
    return out


@dataclass(eq=False)
class GruParams:
    """All trainable weights, stored as one flat float64 vector.

    Named blocks (``W_z``, ``U_h``, ``b_out`` ...) are views into ``vector``.
    The same class doubles as the gradient container.
    """

    d: int
    hidden: int
    k: int
    vector: np.ndarray

    def __post_init__(self):
        self.vector = np.ascontiguousarray(self.vector, dtype=np.float64)
        expected = param_count(self.d, self.hidden, self.k)
        if self.vector.shape != (expected,):
            raise ValueError(
                f"parameter vector has shape {self.vector.shape}, expected ({expected},) "
                f"for d={self.d}, H={self.hidden}, k={self.k}"
            )

    @property
    def dims(self):
        return (self.d, self.hidden, self.k)

    def _block(self, name):
        return self.vector[_slices(*self.dims)[name]]

    @property
    def W(self):
        return self._block("W").reshape(3 * self.hidden, self.d)

    @property
    def U(self):
        return self._block("U").reshape(3 * self.hidden, self.hidden)

    @property
    def b(self):
        return self._block("b")

    @property
    def W_out(self):
        return self._block("W_out").reshape(self.k, self.hidden)

    @property
    def b_out(self):
        return self._block("b_out")

    def _third(self, block, i):
        return block[i * self.hidden : (i + 1) * self.hidden]

    W_z = property(lambda self: self._third(self.W, 0))
    W_r = property(lambda self: self._third(self.W, 1))
    W_h = property(lambda self: self._third(self.W, 2))
    U_z = property(lambda self: self._third(self.U, 0))
    U_r = property(lambda self: self._third(self.U, 1))
    U_h = property(lambda self: self._third(self.U, 2))
    b_z = property(lambda self: self._third(self.b, 0))
    b_r = property(lambda self: self._third(self.b, 1))
    b_h = property(lambda self: self._third(self.b, 2))

    def copy(self):
        return GruParams(self.d, self.hidden, self.k, self.vector.copy())

    def is_finite(self):
        return bool(np.isfinite(self.vector).all())


Gradients = GruParams


def zeros(d, hidden, k):
    return GruParams(d, hidden, k, np.zeros(param_count(d, hidden, k)))


def init_params(d, hidden, k, seed=None):
    """Weights ~ U(-1/sqrt(H), 1/sqrt(H)), biases zero."""
    if min(d, hidden, k) < 1:
        raise ValueError(f"dimensions must be >= 1, got d={d}, H={hidden}, k={k}")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(hidden)
    p = zeros(d, hidden, k)
    sl = _slices(d, hidden, k)
    for name in ("W", "U", "W_out"):
        s = sl[name]
        p.vector[s] = rng.uniform(-bound, bound, size=s.stop - s.start)
    return p


def flatten(p):
    return p.vector.copy()


def unflatten(vector, dims):
    d, hidden, k = dims
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (param_count(d, hidden, k),):
        raise ValueError(
            f"cannot unflatten vector of length {vector.size} into dims {dims}: "
            f"expected {param_count(d, hidden, k)}"
        )
    return GruParams(d, hidden, k, vector.copy())


def gru_step(x, h_prev, p):
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.asarray(h_prev, dtype=np.float64)
    if x.shape != (p.d,) or h_prev.shape != (p.hidden,):
        raise ValueError(
            f"gru_step shape mismatch: x {x.shape}, h {h_prev.shape}, expected ({p.d},), ({p.hidden},)"
        )
    z = sigmoid(p.W_z @ x + p.U_z @ h_prev + p.b_z)
    r = sigmoid(p.W_r @ x + p.U_r @ h_prev + p.b_r)
    cand = np.tanh(p.W_h @ x + p.U_h @ (r * h_prev) + p.b_h)
    return (1.0 - z) * h_prev + z * cand


@dataclass
class ForwardCache:
    order: np.ndarray  # batch position of each sorted row
    offsets: np.ndarray
    counts: np.ndarray
    xp: np.ndarray  # packed inputs (P, d)
    hprev: np.ndarray
    z: np.ndarray
    r: np.ndarray
    hh: np.ndarray
    h_final: np.ndarray  # (B, H), batch order


class Workspace:
    """Reusable activation buffers for repeated forward/backward passes.

    Passing the same workspace to successive calls avoids re-faulting tens of
    megabytes of fresh memory per batch on long sequences. Caches returned by
    a call that used a workspace are only valid until the next such call.
    """

    def __init__(self):
        self._bufs = None

    def take(self, rows, hidden):
        if self._bufs is None or self._bufs[0].shape[0] < rows or self._bufs[0].shape[1] != hidden:
            self._bufs = tuple(np.empty((rows, hidden)) for _ in range(4))
        return tuple(a[:rows] for a in self._bufs)


def _pack(batch, p):
    if batch.d != p.d:
        raise ValueError(f"batch feature width {batch.d} does not match model input width {p.d}")
    lengths = np.asarray(batch.lengths, dtype=np.int64)
    if lengths.min() < 1 or lengths.max() > batch.features.shape[0]:
        raise ValueError("batch lengths inconsistent with feature block")
    order = np.argsort(-lengths, kind="stable")
    t_max = int(lengths.max())
    counts = (lengths[None, :] > np.arange(t_max)[:, None]).sum(axis=1).astype(np.int64)
    offsets = np.zeros(t_max + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    steps = batch.features[:t_max, order, :]
    active = np.arange(t_max)[:, None] < lengths[order][None, :]
    xp = np.ascontiguousarray(steps[active])
    return order, offsets, counts, xp


def _mats(p):
    hidden = p.hidden
    uzr = np.ascontiguousarray(p.U[: 2 * hidden])
    uh = np.ascontiguousarray(p.U[2 * hidden :])
    return np.ascontiguousarray(p.W), np.ascontiguousarray(p.b), uzr, uh


def _kernels(backend):
    return kernels if backend is None else kernels.get_backend(backend)


def final_hidden(batch, p, backend=None):
    """Hidden state at each sequence's true final step, in batch order."""
    order, offsets, counts, xp = _pack(batch, p)
    w, b, uzr, uh = _mats(p)
    h_sorted = _kernels(backend).forward_final(
        xp, w, b, offsets, counts, np.ascontiguousarray(uzr.T), np.ascontiguousarray(uh.T),
        np.zeros((batch.size, p.hidden)),
    )
    h = np.empty_like(h_sorted)
    h[order] = h_sorted
    return h


def forward(batch, p, backend=None, workspace=None):
    """Logits ``(B, k)`` and the activation cache needed for backprop."""
    order, offsets, counts, xp = _pack(batch, p)
    w, b, uzr, uh = _mats(p)
    rows = int(offsets[-1])
    if workspace is None:
        hprev, z, r, hh = (np.empty((rows, p.hidden)) for _ in range(4))
    else:
        hprev, z, r, hh = workspace.take(rows, p.hidden)
    h_sorted = _kernels(backend).forward_packed(
        xp, w, b, offsets, counts, np.ascontiguousarray(uzr.T), np.ascontiguousarray(uh.T),
        np.zeros((batch.size, p.hidden)), hprev, z, r, hh,
    )
    h = np.empty_like(h_sorted)
    h[order] = h_sorted
    logits = h @ p.W_out.T + p.b_out
    return logits, ForwardCache(order, offsets, counts, xp, hprev, z, r, hh, h)


def loss_and_grads(batch, p, backend=None, workspace=None):
    """Mean cross-entropy over the batch and its exact gradient (full BPTT)."""
    labels = np.asarray(batch.labels, dtype=np.int64)
    if labels.min() < 0 or labels.max() >= p.k:
        raise IndexError(f"labels out of range for {p.k} classes")
    logits, cache = forward(batch, p, backend, workspace)
    n = batch.size
    probs = softmax(logits)
    picked = probs[np.arange(n), labels]
    loss = float((-np.log(np.maximum(picked, LOG_CLAMP))).mean())

    dlogits = probs.copy()
    dlogits[np.arange(n), labels] -= 1.0
    dlogits[picked < LOG_CLAMP] = 0.0  # clamped loss is flat there
    dlogits /= n

    g = zeros(*p.dims)
    g.W_out[:] = dlogits.T @ cache.h_final
    g.b_out[:] = dlogits.sum(axis=0)

    dh = np.ascontiguousarray((dlogits @ p.W_out)[cache.order])
    _, _, uzr, uh = _mats(p)
    dw = np.zeros((3 * p.hidden, p.d))
    db = np.zeros(3 * p.hidden)
    du = np.zeros((3 * p.hidden, p.hidden))
    _kernels(backend).backward_packed(
        dh, cache.xp, cache.hprev, cache.z, cache.r, cache.hh, cache.offsets, cache.counts,
        uzr, uh, dw, db, du,
    )
    g.W[:] = dw
    g.b[:] = db
    g.U[:] = du
    return loss, g


def predict(batch, p, backend=None):
    """Argmax class per sequence; ties go to the lowest class index."""
    h = final_hidden(batch, p, backend)
    return np.argmax(h @ p.W_out.T + p.b_out, axis=1)


def save_vector(path, vector):
    """Write a parameter vector as ``<u64 count><f64 ...>``, little-endian."""
    vector = np.asarray(vector, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", vector.size))
        fh.write(vector.tobytes())


def load_vector(path):
    with open(path, "rb") as fh:
        header = fh.read(8)
        if len(header) != 8:
            raise ValueError(f"{path}: truncated checkpoint header")
        (count,) = struct.unpack("<Q", header)
        payload = fh.read()
    if len(payload) != 8 * count:
        raise ValueError(f"{path}: expected {count} values, found {len(payload) // 8}")
    return np.frombuffer(payload, dtype="<f8").astype(np.float64)
