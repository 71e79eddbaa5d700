"""History-aware LSTM classifier with exact analytic gradients.

Architecture: each historical post is a d-dimensional embedding (hashed
bag-of-words or precomputed), the history is run through a single-layer
LSTM to its final hidden state, and a dense head with ReLU + softmax
classifies the concatenation of the current-post embedding and that state.
User-level samples have no current post; the current-post slot of the head
input is zero, so its head columns receive exactly zero gradient.

Canonical flat parameter order (row-major within each block):
    W_i, U_i, b_i, W_f, U_f, b_f, W_g, U_g, b_g, W_o, U_o, b_o, W_y, b_y
with W_* of shape (H, d), U_* (H, H), b_* (H,), W_y (K, d + H), b_y (K,).
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .numerics import NonFiniteError, RngStream, as_tensor

GATES = ("i", "f", "g", "o")


# ---------------------------------------------------------------------------
# Post encoder
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EncoderConfig:
    kind: str = "hashed_bow"  # "hashed_bow" | "precomputed"
    dim: int = 64
    hash_seed: int = 0

    def __post_init__(self):
        if self.kind not in ("hashed_bow", "precomputed"):
            raise ValueError(f"unknown encoder kind {self.kind!r}")
        if self.dim <= 0:
            raise ValueError("encoder dim must be positive")


def _token_hash(token: str, seed: int) -> int:
    h = hashlib.blake2b(token.encode("utf-8"), digest_size=8, key=str(seed).encode())
    return int.from_bytes(h.digest(), "little")


def encode_post(payload, config: EncoderConfig) -> np.ndarray:
    """Deterministic d-dimensional embedding of one post.

    hashed_bow: signed feature hashing of whitespace tokens, L2-normalized
    (a vector whose hashes cancel stays zero).  precomputed: the payload is
    already a dim-d vector and is passed through after a shape check.
    """
    d = config.dim
    if config.kind == "precomputed":
        v = as_tensor(payload)
        if v.shape != (d,):
            raise ValueError(f"precomputed embedding has shape {v.shape}, expected ({d},)")
        return v
    if not isinstance(payload, str) or not payload.strip():
        raise ValueError("hashed_bow encoder needs nonempty text")
    v = np.zeros(d, dtype=np.float64)
    for tok in payload.split():
        h = _token_hash(tok, config.hash_seed)
        bucket = (h >> 1) % d
        sign = 1.0 if (h & 1) else -1.0
        v[bucket] += sign
    norm = math.sqrt(float(np.dot(v, v)))
    if norm > 0:
        v /= norm
    return v


# ---------------------------------------------------------------------------
# Parameters
# ---------------------------------------------------------------------------


@dataclass
class ModelParams:
    dim: int
    hidden: int
    classes: int
    W: dict  # gate -> (H, d)
    U: dict  # gate -> (H, H)
    b: dict  # gate -> (H,)
    W_y: np.ndarray  # (K, d + H)
    b_y: np.ndarray  # (K,)

    @staticmethod
    def init(rng: RngStream, dim: int, hidden: int, classes: int) -> "ModelParams":
        if classes < 2:
            raise ValueError("need at least 2 classes")
        gen = rng.generator()
        k_in = 1.0 / math.sqrt(dim)
        k_rec = 1.0 / math.sqrt(hidden)
        W, U, b = {}, {}, {}
        for g in GATES:
            W[g] = gen.uniform(-k_in, k_in, size=(hidden, dim))
            U[g] = gen.uniform(-k_rec, k_rec, size=(hidden, hidden))
            b[g] = np.zeros(hidden)
        b["f"] += 1.0  # standard forget-gate bias init
        k_head = 1.0 / math.sqrt(dim + hidden)
        W_y = gen.uniform(-k_head, k_head, size=(classes, dim + hidden))
        b_y = np.zeros(classes)
        return ModelParams(dim, hidden, classes, W, U, b, W_y, b_y)

    @property
    def num_params(self) -> int:
        d, H, K = self.dim, self.hidden, self.classes
        return 4 * (H * d + H * H + H) + K * (d + H) + K

    def flatten(self) -> np.ndarray:
        parts = []
        for g in GATES:
            parts += [self.W[g].ravel(), self.U[g].ravel(), self.b[g]]
        parts += [self.W_y.ravel(), self.b_y]
        return np.concatenate(parts)

    @staticmethod
    def from_flat(flat: np.ndarray, dim: int, hidden: int, classes: int) -> "ModelParams":
        d, H, K = dim, hidden, classes
        flat = as_tensor(flat)
        expected = 4 * (H * d + H * H + H) + K * (d + H) + K
        if flat.shape != (expected,):
            raise ValueError(f"flat parameter vector has {flat.shape}, expected ({expected},)")
        pos = 0

        def take(shape):
            nonlocal pos
            n = int(np.prod(shape))
            out = flat[pos : pos + n].reshape(shape).copy()
            pos += n
            return out

        W, U, b = {}, {}, {}
        for g in GATES:
            W[g] = take((H, d))
            U[g] = take((H, H))
            b[g] = take((H,))
        W_y = take((K, d + H))
        b_y = take((K,))
        return ModelParams(dim, hidden, classes, W, U, b, W_y, b_y)

    def copy(self) -> "ModelParams":
        return ModelParams.from_flat(self.flatten(), self.dim, self.hidden, self.classes)


# ---------------------------------------------------------------------------
# Forward
# ---------------------------------------------------------------------------


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def pack_histories(histories, dim: int):
    """Right-pad variable-length histories into (B, T, d) plus lengths."""
    B = len(histories)
    lengths = np.array([0 if h is None else len(h) for h in histories], dtype=np.int64)
    T = int(lengths.max()) if B else 0
    X = np.zeros((B, T, dim), dtype=np.float64)
    for idx, h in enumerate(histories):
        if h is not None and len(h):
            X[idx, : len(h)] = as_tensor(h)
    return X, lengths


def lstm_forward_batch(X: np.ndarray, lengths: np.ndarray, params: ModelParams):
    """Batched LSTM over right-padded sequences; returns final states + cache.

    Timestep t is active for sample b iff t < lengths[b]; inactive steps
    carry (h, c) through unchanged, so the returned h is each sample's
    state after exactly lengths[b] steps (zero for empty histories).
    """
    B, T, d = X.shape
    H = params.hidden
    if d != params.dim:
        raise ValueError(f"input dim {d} != model dim {params.dim}")
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = {"X": X, "lengths": lengths, "h_prev": [], "c_prev": [], "gates": []}
    for t in range(T):
        m = (t < lengths)[:, None].astype(np.float64)
        x = X[:, t, :]
        gates = {}
        for g in GATES:
            pre = x @ params.W[g].T + h @ params.U[g].T + params.b[g]
            gates[g] = np.tanh(pre) if g == "g" else _sigmoid(pre)
        c_new = gates["f"] * c + gates["i"] * gates["g"]
        h_new = gates["o"] * np.tanh(c_new)
        cache["h_prev"].append(h)
        cache["c_prev"].append(c)
        cache["gates"].append(gates)
        h = m * h_new + (1 - m) * h
        c = m * c_new + (1 - m) * c
    cache["h_final"] = h
    cache["c_final"] = c
    return h, cache


def lstm_forward(history, params: ModelParams) -> np.ndarray:
    """Final hidden state for one history (possibly empty)."""
    if history is None or len(history) == 0:
        return np.zeros(params.hidden)
    X, lengths = pack_histories([history], params.dim)
    h, _ = lstm_forward_batch(X, lengths, params)
    return h[0]


def _softmax(a: np.ndarray) -> np.ndarray:
    z = a - a.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _head_batch(currents: np.ndarray, h: np.ndarray, params: ModelParams):
    """Dense head: softmax(relu(W_y (current (+) h) + b_y))."""
    u = np.concatenate([currents, h], axis=1)
    z = u @ params.W_y.T + params.b_y
    a = np.maximum(z, 0.0)
    probs = _softmax(a)
    return probs, (u, z, a)


def classify_post_level(current, h, params: ModelParams) -> np.ndarray:
    current = as_tensor(current)
    if current.shape != (params.dim,):
        raise ValueError(f"current post has shape {current.shape}, expected ({params.dim},)")
    h = as_tensor(h)
    if h.shape != (params.hidden,):
        raise ValueError(f"hidden state has shape {h.shape}, expected ({params.hidden},)")
    probs, _ = _head_batch(current[None, :], h[None, :], params)
    return probs[0]


def classify_user_level(h, params: ModelParams) -> np.ndarray:
    return classify_post_level(np.zeros(params.dim), h, params)


def forward(history, current, params: ModelParams) -> np.ndarray:
    """Class probabilities for one sample; current=None means user-level."""
    h = lstm_forward(history, params)
    if current is None:
        return classify_user_level(h, params)
    return classify_post_level(current, h, params)


def forward_batch(histories, currents, params: ModelParams):
    """Probabilities for a list of samples; None currents become zero slots."""
    X, lengths = pack_histories(histories, params.dim)
    h, cache = lstm_forward_batch(X, lengths, params)
    B = len(histories)
    cur = np.zeros((B, params.dim))
    for idx, p in enumerate(currents):
        if p is not None:
            cur[idx] = as_tensor(p)
    probs, head_cache = _head_batch(cur, h, params)
    return probs, (cache, head_cache, cur)


# ---------------------------------------------------------------------------
# Backward
# ---------------------------------------------------------------------------


def backward_batch(histories, currents, labels, params: ModelParams, loss_config):
    """Per-sample losses and flat gradients for a batch.

    Returns (losses (B,), grads (B, P), probs (B, K)) where P is the flat
    parameter count in the canonical order.
    """
    from .loss import batch_loss_and_grad

    probs, (cache, (u, z, a), cur) = forward_batch(histories, currents, params)
    if not np.all(np.isfinite(probs)):
        raise NonFiniteError("non-finite tensor in layer head")
    labels = np.asarray(labels, dtype=np.int64)
    losses, da = batch_loss_and_grad(probs, labels, loss_config)

    B = probs.shape[0]
    d, H, K = params.dim, params.hidden, params.classes
    dz = da * (z > 0)
    gW_y = np.einsum("bk,bj->bkj", dz, u)
    gb_y = dz
    du = dz @ params.W_y
    dh = du[:, d:]

    X, lengths = cache["X"], cache["lengths"]
    T = X.shape[1]
    dc = np.zeros((B, H))
    gW = {g: np.zeros((B, H, d)) for g in GATES}
    gU = {g: np.zeros((B, H, H)) for g in GATES}
    gb = {g: np.zeros((B, H)) for g in GATES}
    for t in range(T - 1, -1, -1):
        m = (t < lengths)[:, None].astype(np.float64)
        gates = cache["gates"][t]
        h_prev = cache["h_prev"][t]
        c_prev = cache["c_prev"][t]
        c_new = gates["f"] * c_prev + gates["i"] * gates["g"]
        tanh_c = np.tanh(c_new)
        dh_m = dh * m
        dc_m = (dc + dh * gates["o"] * (1 - tanh_c**2)) * m
        do = dh_m * tanh_c
        di = dc_m * gates["g"]
        dg = dc_m * gates["i"]
        df = dc_m * c_prev
        dpre = {
            "i": di * gates["i"] * (1 - gates["i"]),
            "f": df * gates["f"] * (1 - gates["f"]),
            "g": dg * (1 - gates["g"] ** 2),
            "o": do * gates["o"] * (1 - gates["o"]),
        }
        x = X[:, t, :]
        dh_prev = np.zeros((B, H))
        for g in GATES:
            gW[g] += np.einsum("bh,bd->bhd", dpre[g], x)
            gU[g] += np.einsum("bh,bj->bhj", dpre[g], h_prev)
            gb[g] += dpre[g]
            dh_prev += dpre[g] @ params.U[g]
        dh = m * dh_prev + (1 - m) * dh
        dc = m * (dc_m * gates["f"]) + (1 - m) * dc

    parts = []
    for g in GATES:
        parts += [gW[g].reshape(B, -1), gU[g].reshape(B, -1), gb[g]]
    parts += [gW_y.reshape(B, -1), gb_y]
    grads = np.concatenate(parts, axis=1)
    if not np.all(np.isfinite(grads)):
        raise NonFiniteError("non-finite tensor in layer lstm-backward")
    return losses, grads, probs


def backward(history, current, label, params: ModelParams, loss_config) -> np.ndarray:
    """Exact flat gradient of the loss for a single sample."""
    losses, grads, _ = backward_batch([history], [current], [label], params, loss_config)
    return grads[0]


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: ModelParams, encoder: EncoderConfig):
    payload = {
        "version": CHECKPOINT_VERSION,
        "dim": params.dim,
        "hidden": params.hidden,
        "classes": params.classes,
        "encoder": {"kind": encoder.kind, "dim": encoder.dim, "hash_seed": encoder.hash_seed},
        "flat_params": [float(v) for v in params.flatten()],
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    with open(path) as fh:
        payload = json.load(fh)
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    enc = payload["encoder"]
    params = ModelParams.from_flat(
        np.array(payload["flat_params"], dtype=np.float64),
        payload["dim"],
        payload["hidden"],
        payload["classes"],
    )
    return params, EncoderConfig(enc["kind"], enc["dim"], enc["hash_seed"])
