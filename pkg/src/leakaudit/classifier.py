"""Chunk classifier: time-distributed projection to 64 dims, width-3
convolution to 128 channels, both with batch normalization and ReLU, then
temporal mean pooling into a sigmoid output. Trained with binary
cross-entropy on overlapping feature chunks; a recording's score is the
mean over its chunk scores.

Everything is plain numpy with hand-written backprop so gradients can be
checked against finite differences and training stays bitwise deterministic
for a given seed.
"""

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateSplitError,
    DimMismatchError,
    FormatMismatchError,
    NoChunksError,
)
from .features import FeatureSequence

HIDDEN = 64
CHANNELS = 128
KERNEL = 3
BN_EPS = 1e-5
BN_MOMENTUM = 0.1

CHUNK_SECONDS = 5.0
CHUNK_OVERLAP_SECONDS = 1.0

PARAMS_MAGIC = b"LKMD"
PARAMS_VERSION = 1

_FIELDS = ("w_proj", "b_proj", "bn1_gamma", "bn1_beta", "w_conv", "b_conv",
           "bn2_gamma", "bn2_beta", "w_out", "b_out")
_BN_STATS = ("bn1_mean", "bn1_var", "bn2_mean", "bn2_var")


@dataclass
class ChunkSpec:
    chunk_frames: int
    stride_frames: int
    hop_s: float

    @classmethod
    def for_hop(cls, hop_s: float) -> "ChunkSpec":
        chunk = int(round(CHUNK_SECONDS / hop_s))
        overlap = int(round(CHUNK_OVERLAP_SECONDS / hop_s))
        return cls(chunk_frames=chunk, stride_frames=chunk - overlap, hop_s=hop_s)

    @property
    def overlap_frames(self) -> int:
        return self.chunk_frames - self.stride_frames


@dataclass
class TrainConfig:
    seed: int = 0
    epochs: int = 40
    batch_size: int = 16
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    dtype: str = "float64"


@dataclass
class ModelParams:
    w_proj: np.ndarray   # (dim, 64)
    b_proj: np.ndarray
    bn1_gamma: np.ndarray
    bn1_beta: np.ndarray
    bn1_mean: np.ndarray
    bn1_var: np.ndarray
    w_conv: np.ndarray   # (3, 64, 128)
    b_conv: np.ndarray
    bn2_gamma: np.ndarray
    bn2_beta: np.ndarray
    bn2_mean: np.ndarray
    bn2_var: np.ndarray
    w_out: np.ndarray    # (128,)
    b_out: np.ndarray    # (1,)
    final_loss: float = field(default=float("nan"), compare=False)

    @property
    def input_dim(self) -> int:
        return self.w_proj.shape[0]

    def trainable(self) -> dict:
        return {name: getattr(self, name) for name in _FIELDS}

    def copy(self) -> "ModelParams":
        kwargs = {name: getattr(self, name).copy() for name in _FIELDS + _BN_STATS}
        return ModelParams(**kwargs, final_loss=self.final_loss)


def init_params(dim: int, seed: int, dtype=np.float64) -> ModelParams:
    """Uniform fan-in initialization; batch norm starts as identity."""
    rng = np.random.default_rng(np.random.SeedSequence((0x1E4F, seed)))

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    return ModelParams(
        w_proj=uniform((dim, HIDDEN), dim),
        b_proj=uniform((HIDDEN,), dim),
        bn1_gamma=np.ones(HIDDEN, dtype=dtype),
        bn1_beta=np.zeros(HIDDEN, dtype=dtype),
        bn1_mean=np.zeros(HIDDEN, dtype=dtype),
        bn1_var=np.ones(HIDDEN, dtype=dtype),
        w_conv=uniform((KERNEL, HIDDEN, CHANNELS), KERNEL * HIDDEN),
        b_conv=uniform((CHANNELS,), KERNEL * HIDDEN),
        bn2_gamma=np.ones(CHANNELS, dtype=dtype),
        bn2_beta=np.zeros(CHANNELS, dtype=dtype),
        bn2_mean=np.zeros(CHANNELS, dtype=dtype),
        bn2_var=np.ones(CHANNELS, dtype=dtype),
        w_out=uniform((CHANNELS,), CHANNELS),
        b_out=uniform((1,), CHANNELS),
    )


def chunk(features: FeatureSequence, spec: ChunkSpec) -> list:
    """Cut a feature sequence into overlapping chunks.

    Full windows of chunk_frames at stride_frames; the trailing remainder is
    kept as a shorter chunk when it contributes at least one overlap's worth
    of new frames. A sequence without a single full window becomes one chunk,
    zero-padded up to the overlap length if needed.
    """
    x = features.frames
    n = x.shape[0]
    spec_chunk, stride, overlap = spec.chunk_frames, spec.stride_frames, spec.overlap_frames
    chunks = []
    start = 0
    while start + spec_chunk <= n:
        chunks.append(x[start:start + spec_chunk])
        start += stride
    if not chunks:
        if n < overlap:
            pad = np.zeros((overlap - n, x.shape[1]), dtype=x.dtype)
            chunks.append(np.concatenate([x, pad], axis=0))
        else:
            chunks.append(x[:n])
    elif n - start > overlap:
        chunks.append(x[start:n])
    return chunks


def _bn_forward(x, gamma, beta, running_mean, running_var, train: bool):
    """Normalize per channel; train mode uses the statistics of the batch
    it sees (over batch and time), eval mode the running estimates.
    x: (B, T, C). Returns (out, (xhat, inv, mu, var))."""
    if train:
        mu = x.mean(axis=(0, 1))
        var = x.var(axis=(0, 1))
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + BN_EPS)
    # single fused multiply-add: out = x * (gamma*inv) + (beta - mu*gamma*inv)
    scale = gamma * inv
    out = x * scale
    out += beta - mu * scale
    xhat = None
    if train:
        # xhat reused twice in backward; build it in the x buffer
        x -= mu
        x *= inv
        xhat = x
    return out, (xhat, inv, mu, var)


def _bn_backward(dout, gamma, cache):
    """Fused form: dx = gamma*inv/n * (n*dout - sum(dout) - xhat*sum(dout*xhat))."""
    xhat, inv, _mu, _var = cache
    n = dout.shape[0] * dout.shape[1]
    dbeta = dout.sum(axis=(0, 1))
    dgamma = np.einsum("btc,btc->c", dout, xhat)
    dx = dout * n
    dx -= dbeta
    dx -= xhat * dgamma
    dx *= gamma * inv / n
    return dx, dgamma, dbeta


def _conv_forward(a1, w_conv, b_conv):
    """Same-padded width-3 convolution as 3 shifted GEMMs. a1: (B, T, H)."""
    b, t, _ = a1.shape
    z2 = np.empty((b, t, CHANNELS), dtype=a1.dtype)
    z2[:] = b_conv
    z2 += a1 @ w_conv[1]
    z2[:, 1:] += a1[:, :-1] @ w_conv[0]
    z2[:, :-1] += a1[:, 1:] @ w_conv[2]
    return z2


def forward_batch(params: ModelParams, x: np.ndarray, train: bool,
                  update_running: bool = False, want_cache: bool = False):
    """Forward a batch of equal-length chunks: x (B, T, D) -> scores (B,)."""
    if x.ndim == 2:
        x = x[None]
    if x.shape[2] != params.input_dim:
        raise DimMismatchError(
            f"chunk dim {x.shape[2]} vs model dim {params.input_dim}")
    x = x.astype(params.w_proj.dtype, copy=False)

    z1 = x @ params.w_proj + params.b_proj
    h1, bn1_cache = _bn_forward(z1, params.bn1_gamma, params.bn1_beta,
                                params.bn1_mean, params.bn1_var, train)
    a1 = np.maximum(h1, 0.0, out=h1)
    z2 = _conv_forward(a1, params.w_conv, params.b_conv)
    h2, bn2_cache = _bn_forward(z2, params.bn2_gamma, params.bn2_beta,
                                params.bn2_mean, params.bn2_var, train)
    a2 = np.maximum(h2, 0.0, out=h2)
    pooled = a2.mean(axis=1)
    logits = pooled @ params.w_out + params.b_out[0]

    if train and update_running:
        m = BN_MOMENTUM
        params.bn1_mean += m * (bn1_cache[2] - params.bn1_mean)
        params.bn1_var += m * (bn1_cache[3] - params.bn1_var)
        params.bn2_mean += m * (bn2_cache[2] - params.bn2_mean)
        params.bn2_var += m * (bn2_cache[3] - params.bn2_var)

    scores = 1.0 / (1.0 + np.exp(-logits))
    if not want_cache:
        return scores
    cache = dict(x=x, bn1=bn1_cache, a1=a1, bn2=bn2_cache, a2=a2,
                 pooled=pooled, logits=logits, scores=scores)
    return scores, cache


def forward(params: ModelParams, chunk_frames: np.ndarray, mode: str = "eval") -> float:
    """Score a single chunk (frames x dim) in (0, 1)."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    return float(forward_batch(params, chunk_frames[None], train=mode == "train")[0])


def bce_loss(scores: np.ndarray, labels: np.ndarray, logits: np.ndarray) -> float:
    # softplus form keeps the loss finite for saturated logits
    return float(np.mean(np.logaddexp(0.0, logits) - labels * logits))


def backward_batch(params: ModelParams, labels: np.ndarray, cache: dict) -> dict:
    """Gradients of mean BCE over the batch w.r.t. every trainable array."""
    x, a1, a2 = cache["x"], cache["a1"], cache["a2"]
    b, t, _ = x.shape
    labels = labels.astype(x.dtype)

    dlogits = (cache["scores"] - labels) / b
    grads = {}
    grads["w_out"] = cache["pooled"].T @ dlogits
    grads["b_out"] = np.array([dlogits.sum()], dtype=x.dtype)
    dpooled = dlogits[:, None] * (params.w_out[None, :] / t)
    dh2 = np.where(a2 > 0, dpooled[:, None, :], 0.0)
    dz2, grads["bn2_gamma"], grads["bn2_beta"] = _bn_backward(
        dh2, params.bn2_gamma, cache["bn2"])

    w0, w1, w2 = params.w_conv
    grads["w_conv"] = np.stack([
        np.tensordot(a1[:, :-1], dz2[:, 1:], axes=([0, 1], [0, 1])),
        np.tensordot(a1, dz2, axes=([0, 1], [0, 1])),
        np.tensordot(a1[:, 1:], dz2[:, :-1], axes=([0, 1], [0, 1])),
    ])
    grads["b_conv"] = dz2.sum(axis=(0, 1))
    da1 = dz2 @ w1.T
    da1[:, :-1] += dz2[:, 1:] @ w0.T
    da1[:, 1:] += dz2[:, :-1] @ w2.T

    dh1 = np.where(a1 > 0, da1, 0.0)
    dz1, grads["bn1_gamma"], grads["bn1_beta"] = _bn_backward(
        dh1, params.bn1_gamma, cache["bn1"])
    grads["w_proj"] = np.tensordot(x, dz1, axes=([0, 1], [0, 1]))
    grads["b_proj"] = dz1.sum(axis=(0, 1))
    return grads


class _Adam:
    def __init__(self, params: ModelParams, lr: float, weight_decay: float):
        self.lr = lr
        self.wd = weight_decay
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.trainable().items()}
        self.v = {k: np.zeros_like(v) for k, v in params.trainable().items()}

    def step(self, params: ModelParams, grads: dict):
        self.step_count += 1
        b1c = 1.0 - self.beta1 ** self.step_count
        b2c = 1.0 - self.beta2 ** self.step_count
        for name, g in grads.items():
            if self.wd:
                g = g + self.wd * getattr(params, name)
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            getattr(params, name)[...] -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def _group_by_length(order, chunks):
    groups = {}
    for i in order:
        groups.setdefault(chunks[i].shape[0], []).append(i)
    return [groups[k] for k in sorted(groups)]


def train(chunks: list, labels, config: TrainConfig) -> ModelParams:
    """Fit the classifier on labeled chunks; deterministic given the seed.

    chunks: list of (frames x dim) arrays (lengths may differ); labels: one
    0/1 per chunk, inherited from the source recording.
    """
    labels = np.asarray(labels, dtype=float)
    if len(chunks) != len(labels) or len(chunks) == 0:
        raise ValueError("chunks and labels must align and be non-empty")
    present = set(np.unique(labels).astype(int))
    if present != {0, 1}:
        raise DegenerateSplitError(f"training subset has labels {sorted(present)}")

    dtype = np.dtype(config.dtype).type
    dim = chunks[0].shape[1]
    chunks = [np.ascontiguousarray(c, dtype=dtype) for c in chunks]
    params = init_params(dim, config.seed, dtype=dtype)
    opt = _Adam(params, config.learning_rate, config.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence((0x7A11, config.seed)))

    lengths = np.array([c.shape[0] for c in chunks])
    final_loss = float("nan")
    for _epoch in range(config.epochs):
        order = rng.permutation(len(chunks))
        # stable length sort makes most batches single-length (one vectorized
        # call each) while the shuffle still randomizes within each length
        order = order[np.argsort(lengths[order], kind="stable")]
        starts = list(range(0, len(order), config.batch_size))
        rng.shuffle(starts)
        epoch_loss = 0.0
        for lo in starts:
            batch = order[lo:lo + config.batch_size]
            grads = None
            # equal-length sub-batches share one vectorized forward/backward;
            # gradients average over the whole batch
            for idx in _group_by_length(batch, chunks):
                xs = np.stack([chunks[i] for i in idx])
                ys = labels[idx]
                scores, cache = forward_batch(params, xs, train=True,
                                              update_running=True, want_cache=True)
                epoch_loss += bce_loss(scores, ys, cache["logits"]) * len(idx)
                part = backward_batch(params, ys, cache)
                scale = len(idx) / len(batch)
                if grads is None:
                    grads = {k: v * scale for k, v in part.items()}
                else:
                    for k, v in part.items():
                        grads[k] += v * scale
            opt.step(params, grads)
        final_loss = epoch_loss / len(chunks)
    params.final_loss = final_loss
    return params


def score_chunks(params: ModelParams, chunks: list) -> np.ndarray:
    """Eval-mode score for each chunk (uses running BN statistics)."""
    if not chunks:
        raise NoChunksError("no chunks to score")
    scores = np.empty(len(chunks))
    order = list(range(len(chunks)))
    for idx in _group_by_length(order, chunks):
        xs = np.stack([np.asarray(chunks[i], dtype=params.w_proj.dtype) for i in idx])
        scores[idx] = forward_batch(params, xs, train=False)
    return scores


def score_sample(params: ModelParams, chunks: list) -> float:
    """A recording's score: arithmetic mean of its chunk scores."""
    return float(score_chunks(params, chunks).mean())


# --- parameter serialization -------------------------------------------------

def save_params(path, params: ModelParams):
    """Versioned little-endian binary dump of all arrays (float64)."""
    names = _FIELDS + _BN_STATS
    with open(path, "wb") as f:
        f.write(PARAMS_MAGIC)
        f.write(struct.pack("<HI", PARAMS_VERSION, params.input_dim))
        f.write(struct.pack("<I", len(names)))
        for name in names:
            arr = np.ascontiguousarray(getattr(params, name), dtype="<f8")
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())


def load_params(path) -> ModelParams:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != PARAMS_MAGIC:
        raise FormatMismatchError(f"not a model parameter file: {path}")
    version, _dim = struct.unpack_from("<HI", raw, 4)
    if version != PARAMS_VERSION:
        raise FormatMismatchError(f"unsupported parameter file version {version}")
    (n_arrays,) = struct.unpack_from("<I", raw, 10)
    names = _FIELDS + _BN_STATS
    if n_arrays != len(names):
        raise FormatMismatchError(f"expected {len(names)} arrays, file has {n_arrays}")
    pos = 14
    kwargs = {}
    for name in names:
        (ndim,) = struct.unpack_from("<I", raw, pos)
        pos += 4
        shape = struct.unpack_from(f"<{ndim}I", raw, pos)
        pos += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        kwargs[name] = np.frombuffer(raw, dtype="<f8", count=count,
                                     offset=pos).reshape(shape).copy()
        pos += count * 8
    return ModelParams(**kwargs)
