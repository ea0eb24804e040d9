"""Trainable tracklet embedder: per-branch linear reductions with softmax heads.

Two kinds are supported. ``ncm`` keeps identity-like projections and does
no training (nearest-class-mean style baseline). ``linear-softmax`` learns
one projection and one classifier per branch by full-batch gradient descent
on the summed label-smoothed cross-entropy of the branches. Classifier
heads are only used for training; embeddings come from the projections.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from ardloop.core import DimensionError, Tracklet
from ardloop.pam import DEFAULT_RATIO, BranchProjections, aggregate_tracklet, pooled_streams

log = logging.getLogger(__name__)

KINDS = ("ncm", "linear-softmax")
MODEL_FORMAT = "ardloop-model"
MODEL_VERSION = 1


@dataclass(frozen=True)
class LearnerConfig:
    kind: str = "linear-softmax"
    d_emb: int = 256
    steps: int = 300
    learning_rate: float = 0.5
    label_smoothing: float = 0.1
    seed: int = 0
    ratio: tuple[int, ...] = DEFAULT_RATIO

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"learner kind must be one of {KINDS}, got {self.kind!r}")
        if self.d_emb <= 0:
            raise ValueError("d_emb must be positive")
        if self.steps < 0:
            raise ValueError("steps must be nonnegative")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.label_smoothing < 1:
            raise ValueError("label_smoothing must lie in [0, 1)")
        object.__setattr__(self, "ratio", tuple(int(r) for r in self.ratio))


@dataclass(frozen=True)
class Model:
    """Fitted parameters.

    ``P`` has shape (B, C, d_emb); for ``linear-softmax`` models ``W`` is
    (B, d_emb, K) and ``bias`` (B, K), where B = 1 + number of parts.
    """

    kind: str
    P: np.ndarray
    classes: tuple[str, ...]
    ratio: tuple[int, ...] = DEFAULT_RATIO
    W: Optional[np.ndarray] = None
    bias: Optional[np.ndarray] = None
    loss_history: tuple[tuple[int, float], ...] = field(default=(), compare=False)

    @property
    def projections(self) -> BranchProjections:
        return BranchProjections(tuple(self.P))

    @property
    def in_dim(self) -> int:
        return self.P.shape[1]

    @property
    def d_emb(self) -> int:
        return self.P.shape[2]

    @property
    def n_branches(self) -> int:
        return self.P.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        out = {"P": self.P}
        if self.W is not None:
            out["W"] = self.W
            out["bias"] = self.bias
        return out

    def replace_params(self, **arrays) -> "Model":
        kw = dict(
            kind=self.kind, P=self.P, classes=self.classes, ratio=self.ratio,
            W=self.W, bias=self.bias,
        )
        kw.update(arrays)
        return Model(**kw)

    def equals(self, other: "Model") -> bool:
        """Bitwise equality of every parameter and of the metadata."""
        if (self.kind, self.classes, self.ratio) != (other.kind, other.classes, other.ratio):
            return False
        a, b = self.params(), other.params()
        return a.keys() == b.keys() and all(
            a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes() for k in a
        )


def _canonical(train: Iterable[tuple[Tracklet, str]]) -> list[tuple[Tracklet, str]]:
    items = sorted(train, key=lambda pair: pair[0].tracklet_id)
    ids = [t.tracklet_id for t, _ in items]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate tracklet ids in training set")
    return items


def tracklet_features(tracklets: Sequence[Tracklet], ratio: Sequence[int]) -> np.ndarray:
    """Temporally averaged branch pools, shape (N, B, C)."""
    return np.stack([pooled_streams(t.frames, ratio).mean(axis=0) for t in tracklets])


def smoothed_cross_entropy(logits: np.ndarray, y: np.ndarray, eps: float):
    """Mean label-smoothed cross-entropy and its gradient w.r.t. the logits."""
    n, K = logits.shape
    shifted = logits - logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logz
    q = np.full((n, K), eps / K)
    q[np.arange(n), y] += 1.0 - eps
    loss = -(q * logp).sum() / n
    grad = (np.exp(logp) - q) / n
    return loss, grad


def _loss_grad(P, W, bias, X, y, eps):
    loss = 0.0
    gP = np.zeros_like(P)
    gW = np.zeros_like(W)
    gb = np.zeros_like(bias)
    for b in range(P.shape[0]):
        z = X[:, b] @ P[b]
        logits = z @ W[b] + bias[b]
        lb, g = smoothed_cross_entropy(logits, y, eps)
        loss += lb
        gW[b] = z.T @ g
        gb[b] = g.sum(axis=0)
        gP[b] = X[:, b].T @ (g @ W[b].T)
    return loss, {"P": gP, "W": gW, "bias": gb}


def _encode_targets(identities: Sequence[str], classes: Sequence[str]) -> np.ndarray:
    index = {c: i for i, c in enumerate(classes)}
    try:
        return np.array([index[i] for i in identities], dtype=np.int64)
    except KeyError as exc:
        raise ValueError(f"identity {exc.args[0]!r} is not in the model's class list") from None


def loss_and_grad(m: Model, batch: Iterable[tuple[Tracklet, str]], label_smoothing: float):
    """Training objective and its exact gradient for a linear-softmax model.

    Returns ``(loss, grads)`` where ``grads`` has the keys and shapes of
    ``m.params()``.
    """
    if m.W is None:
        raise ValueError("loss_and_grad needs a linear-softmax model")
    items = _canonical(batch)
    if not items:
        raise ValueError("empty batch")
    X = tracklet_features([t for t, _ in items], m.ratio)
    if X.shape[2] != m.in_dim:
        raise DimensionError(f"batch has C={X.shape[2]}, model expects {m.in_dim}")
    y = _encode_targets([i for _, i in items], m.classes)
    return _loss_grad(m.P, m.W, m.bias, X, y, label_smoothing)


def init_model(C: int, classes: Sequence[str], cfg: LearnerConfig) -> Model:
    """Seeded initial parameters; the starting point of every fit."""
    B = len(cfg.ratio) + 1
    classes = tuple(classes)
    if cfg.kind == "ncm":
        P = np.stack([np.eye(C, cfg.d_emb) for _ in range(B)])
        return Model("ncm", P, classes, cfg.ratio)
    rng = np.random.default_rng(cfg.seed)
    K = len(classes)
    P = rng.standard_normal((B, C, cfg.d_emb)) / np.sqrt(C)
    W = rng.standard_normal((B, cfg.d_emb, K)) / np.sqrt(cfg.d_emb)
    bias = np.zeros((B, K))
    return Model("linear-softmax", P, classes, cfg.ratio, W, bias)


def fit(train: Iterable[tuple[Tracklet, str]], cfg: LearnerConfig) -> Model:
    """Fit a model on (tracklet, identity) pairs.

    The result depends only on the set of pairs (canonicalized by tracklet id)
    and on ``cfg``.
    """
    items = _canonical(train)
    if not items:
        raise ValueError("cannot fit on an empty training set")
    shapes = {t.shape for t, _ in items}
    if len(shapes) != 1:
        raise DimensionError(f"training tracklets have mixed shapes {sorted(shapes)}")
    identities = [i for _, i in items]
    if any(i is None or i == "" for i in identities):
        raise ValueError("training identity missing")
    classes = sorted(set(identities))
    C = next(iter(shapes))[2]
    model = init_model(C, classes, cfg)
    if cfg.kind == "ncm" or cfg.steps == 0:
        return model

    X = tracklet_features([t for t, _ in items], cfg.ratio)
    y = _encode_targets(identities, classes)
    P, W, bias = model.P.copy(), model.W.copy(), model.bias.copy()
    every = max(1, cfg.steps // 20)
    history = []
    for step in range(cfg.steps):
        loss, g = _loss_grad(P, W, bias, X, y, cfg.label_smoothing)
        if step % every == 0:
            history.append((step, float(loss)))
        P -= cfg.learning_rate * g["P"]
        W -= cfg.learning_rate * g["W"]
        bias -= cfg.learning_rate * g["bias"]
    loss, _ = _loss_grad(P, W, bias, X, y, cfg.label_smoothing)
    history.append((cfg.steps, float(loss)))
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(W))):
        raise FloatingPointError("training diverged; lower the learning rate")
    log.debug("fit: N=%d K=%d loss %.4f -> %.4f", len(items), len(classes), history[0][1], loss)
    return Model("linear-softmax", P, tuple(classes), cfg.ratio, W, bias, tuple(history))


def embed(m: Model, t: Tracklet) -> np.ndarray:
    return aggregate_tracklet(t, m.projections, m.ratio)


def embed_all(m: Model, tracklets: Sequence[Tracklet]) -> np.ndarray:
    return np.stack([embed(m, t) for t in tracklets])


# -- serialization ---------------------------------------------------------


def model_header(m: Model) -> dict:
    arrays = [{"name": k, "shape": list(v.shape)} for k, v in m.params().items()]
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": m.kind,
        "ratio": list(m.ratio),
        "classes": list(m.classes),
        "dtype": "f64",
        "endian": "little",
        "arrays": arrays,
    }


def model_to_bytes(m: Model) -> bytes:
    return b"".join(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in m.params().values())


def model_from_parts(header: dict, blob: bytes) -> Model:
    if header.get("format") != MODEL_FORMAT or header.get("version") != MODEL_VERSION:
        raise ValueError(
            f"unsupported model format {header.get('format')!r} version {header.get('version')!r}"
        )
    arrays = {}
    offset = 0
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        n = int(np.prod(shape)) * 8
        if offset + n > len(blob):
            raise ValueError("model blob is truncated")
        arrays[entry["name"]] = np.frombuffer(blob, dtype="<f8", count=n // 8, offset=offset).reshape(shape).astype(np.float64)
        offset += n
    if offset != len(blob):
        raise ValueError(f"model blob has {len(blob) - offset} trailing bytes")
    return Model(
        kind=header["kind"],
        P=arrays["P"],
        classes=tuple(header["classes"]),
        ratio=tuple(header["ratio"]),
        W=arrays.get("W"),
        bias=arrays.get("bias"),
    )


def save_model(m: Model, bin_path, json_path) -> None:
    from ardloop.io import atomic_write_bytes

    atomic_write_bytes(Path(bin_path), model_to_bytes(m))
    atomic_write_bytes(Path(json_path), (json.dumps(model_header(m), indent=2) + "\n").encode())


def load_model(bin_path, json_path) -> Model:
    header = json.loads(Path(json_path).read_text())
    return model_from_parts(header, Path(bin_path).read_bytes())
