"""Gallery retrieval, few-shot heads and evaluation metrics."""
from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize

from .core import LogicProfile, TrafficTrace
from .encoding import encode_logic, encode_traffic
from .errors import ConfigError, DegenerateInput, DuplicateClass, EmptyInput, FormatError

FDR_EPS = 1e-12


def model_checksum(model) -> str:
    h = hashlib.sha256()
    for name, p in sorted(model.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().cpu().to(dtype=p.dtype).numpy().astype("<f8").tobytes())
    return h.hexdigest()


@dataclass(eq=False)
class Gallery:
    anchors: np.ndarray
    class_ids: list
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.anchors = np.asarray(self.anchors, dtype=np.float64)
        if len(set(self.class_ids)) != len(self.class_ids):
            raise DuplicateClass("gallery classes must be unique")
        if self.anchors.shape[0] != len(self.class_ids):
            raise ValueError("one anchor row per class")

    def __len__(self):
        return len(self.class_ids)

    def index_of(self, class_id) -> int:
        return self.class_ids.index(class_id)


def build_gallery(model, profiles: Sequence[LogicProfile],
                  class_ids: Optional[Sequence[Hashable]] = None) -> Gallery:
    """One logic anchor per class; classes default to the profiles' site ids."""
    from .neural.model import encode_logic_embed

    ids = list(class_ids) if class_ids is not None else [p.site_id for p in profiles]
    if len(set(ids)) != len(ids):
        raise DuplicateClass("each gallery profile needs its own class")
    enc = model.cfg.encoding
    anchors = encode_logic_embed(model, [encode_logic(p, enc) for p in profiles])
    meta = {"built_at": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "model_checksum": model_checksum(model)}
    return Gallery(anchors.reshape(len(ids), -1), ids, meta)


def embed_traces(model, traces: Sequence[TrafficTrace]) -> np.ndarray:
    from .neural.model import encode_traffic_embed

    enc = model.cfg.encoding
    return encode_traffic_embed(model, [encode_traffic(t, enc) for t in traces])


@dataclass(frozen=True)
class Prediction:
    class_id: Optional[Hashable]
    score: float

    @property
    def is_unknown(self) -> bool:
        return self.class_id is None


def classify_embedding(gallery: Gallery, z: np.ndarray, threshold: float = -1.0) -> Prediction:
    """Nearest anchor by cosine similarity, or Unknown below ``threshold``.

    Ties go to the lowest gallery index.
    """
    sims = gallery.anchors @ np.asarray(z, dtype=np.float64)
    k = int(np.argmax(sims))
    score = float(sims[k])
    return Prediction(gallery.class_ids[k] if score >= threshold else None, score)


def classify_zero_shot(model, gallery: Gallery, trace: TrafficTrace,
                       threshold: float = -1.0) -> Prediction:
    return classify_embedding(gallery, embed_traces(model, [trace])[0], threshold)


def topk_hits(sims: np.ndarray, true_idx: np.ndarray, k: int) -> np.ndarray:
    """Whether each row's true column is among its k largest (ties count against)."""
    true_sim = sims[np.arange(len(true_idx)), true_idx]
    better = (sims > true_sim[:, None]).sum(1)
    # equal scores at lower index win ties, matching classify_embedding
    cols = np.arange(sims.shape[1])
    tied_before = ((sims == true_sim[:, None]) & (cols[None, :] < true_idx[:, None])).sum(1)
    return (better + tied_before) < k


def topk_accuracy_embeddings(gallery: Gallery, z: np.ndarray, labels: Sequence, k: int) -> float:
    if len(labels) == 0:
        raise EmptyInput("no labeled queries")
    idx = np.array([gallery.index_of(y) for y in labels])
    return float(np.mean(topk_hits(np.asarray(z) @ gallery.anchors.T, idx, k)))


def topk_accuracy(model, gallery: Gallery, traces: Sequence[TrafficTrace],
                  labels: Sequence, k: int) -> float:
    """Fraction of traces whose class is among the k most similar anchors."""
    return topk_accuracy_embeddings(gallery, embed_traces(model, traces), labels, k)


@dataclass
class OpenWorldResult:
    thresholds: np.ndarray
    precision: np.ndarray
    recall: np.ndarray
    fpr: np.ndarray
    auc: float
    best_f1: float
    best_threshold: float

    def pr_rows(self):
        return zip(self.thresholds.tolist(), self.precision.tolist(), self.recall.tolist())


def open_world_eval(scores_monitored, scores_unmonitored) -> OpenWorldResult:
    """Monitored-vs-unmonitored detection by thresholding a score.

    Every distinct score is tried as a threshold (accept when score >= t).
    ROC AUC is the trapezoid area over that sweep, which equals the
    Mann-Whitney statistic with ties counted half.
    """
    pos = np.asarray(scores_monitored, dtype=np.float64).ravel()
    neg = np.asarray(scores_unmonitored, dtype=np.float64).ravel()
    if pos.size == 0 or neg.size == 0:
        raise EmptyInput("both score sets must be non-empty")
    thresholds = np.unique(np.concatenate([pos, neg]))[::-1]
    tp = (pos[None, :] >= thresholds[:, None]).sum(1)
    fp = (neg[None, :] >= thresholds[:, None]).sum(1)
    recall = tp / pos.size
    fpr = fp / neg.size
    precision = tp / (tp + fp)
    f1 = np.where(tp > 0, 2 * precision * recall / np.maximum(precision + recall, 1e-300), 0.0)
    roc_x = np.concatenate([[0.0], fpr])
    roc_y = np.concatenate([[0.0], recall])
    auc = float(np.sum(np.diff(roc_x) * (roc_y[1:] + roc_y[:-1]) / 2.0))
    best = int(np.argmax(f1))
    return OpenWorldResult(thresholds, precision, recall, fpr, auc, float(f1[best]),
                           float(thresholds[best]))


# --- few-shot heads -----------------------------------------------------------

@dataclass
class LinearProbe:
    weight: np.ndarray  # (K, d)
    bias: np.ndarray  # (K,)
    class_ids: list

    def logits(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) @ self.weight.T + self.bias

    def predict(self, z: np.ndarray) -> list:
        return [self.class_ids[i] for i in np.argmax(self.logits(z), axis=1)]


def linear_probe_fit(z: np.ndarray, labels: Sequence, class_ids: Optional[Sequence] = None,
                     l2: float = 1e-3, max_iter: int = 500, seed: int = 0) -> LinearProbe:
    """Multinomial logistic regression on frozen embeddings (L-BFGS, zero init).

    The fit has no random component, so ``seed`` does not change the result;
    it is accepted so all few-shot heads share one call signature.
    """
    z = np.asarray(z, dtype=np.float64)
    classes = list(class_ids) if class_ids is not None else sorted(set(labels))
    present = set(labels)
    missing = [c for c in classes if c not in present]
    if missing:
        raise ConfigError(f"no shots for classes {missing[:5]}")
    index = {c: i for i, c in enumerate(classes)}
    y = np.array([index[c] for c in labels])
    n, d = z.shape
    K = len(classes)
    onehot = np.zeros((n, K))
    onehot[np.arange(n), y] = 1.0

    def fg(theta):
        W = theta[:K * d].reshape(K, d)
        b = theta[K * d:]
        logits = z @ W.T + b
        logits -= logits.max(1, keepdims=True)
        logp = logits - np.log(np.exp(logits).sum(1, keepdims=True))
        loss = -(onehot * logp).sum() / n + 0.5 * l2 * (W ** 2).sum()
        g = (np.exp(logp) - onehot) / n
        gW = g.T @ z + l2 * W
        return loss, np.concatenate([gW.ravel(), g.sum(0)])

    res = minimize(fg, np.zeros(K * d + K), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter, "gtol": 1e-10, "ftol": 1e-15})
    return LinearProbe(res.x[:K * d].reshape(K, d), res.x[K * d:], classes)


@dataclass
class FewShotMemory:
    keys: np.ndarray  # (n*K, d)
    one_hot: np.ndarray  # (n*K, K)
    alpha: float = 1.0
    beta: float = 5.5

    @classmethod
    def build(cls, gallery: Gallery, z: np.ndarray, labels: Sequence,
              alpha: float = 1.0, beta: float = 5.5) -> "FewShotMemory":
        z = np.asarray(z, dtype=np.float64).reshape(len(labels), -1)
        counts = {}
        for y in labels:
            counts[y] = counts.get(y, 0) + 1
        if len(set(counts.values())) > 1:
            raise ConfigError("every class must contribute the same number of shots")
        one_hot = np.zeros((len(labels), len(gallery)))
        for i, y in enumerate(labels):
            one_hot[i, gallery.index_of(y)] = 1.0
        return cls(z, one_hot, alpha, beta)


def tip_adapter_logits(gallery: Gallery, memory: Optional[FewShotMemory], zT: np.ndarray) -> np.ndarray:
    """Anchor similarities plus alpha * exp(-beta * (1 - key similarity)) votes per class."""
    zT = np.asarray(zT, dtype=np.float64)
    logits = zT @ gallery.anchors.T
    if memory is None or memory.keys.size == 0:
        return logits
    affinity = np.exp(-memory.beta * (1.0 - zT @ memory.keys.T))
    return logits + memory.alpha * (affinity @ memory.one_hot)


# --- embedding-space diagnostics ----------------------------------------------

def standardize(x: np.ndarray) -> np.ndarray:
    """Zero mean, unit variance per column (constant columns become zero)."""
    x = np.asarray(x, dtype=np.float64)
    sd = x.std(0)
    return (x - x.mean(0)) / np.where(sd > 0, sd, 1.0)


@dataclass(frozen=True)
class FisherRatio:
    value: float
    infinite: bool = False


def fdr(embeddings: np.ndarray, labels: Sequence) -> FisherRatio:
    """Between-class over within-class scatter (traces), class means size-weighted.

    Computed on the embeddings as given; call :func:`standardize` first for
    the usual zero-mean unit-variance convention. A within-class scatter of
    zero is flagged as ``infinite``.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels)
    classes = np.unique(y)
    if classes.size < 2:
        raise DegenerateInput("fdr needs at least two classes")
    mu = x.mean(0)
    between = within = 0.0
    for c in classes:
        xc = x[y == c]
        mc = xc.mean(0)
        between += len(xc) * float(((mc - mu) ** 2).sum())
        within += float(((xc - mc) ** 2).sum())
    if within <= FDR_EPS and between > 0:
        return FisherRatio(between / FDR_EPS, infinite=True)
    return FisherRatio(between / (within + FDR_EPS))


def _double_centered(x: np.ndarray) -> np.ndarray:
    d = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(-1))
    return d - d.mean(0, keepdims=True) - d.mean(1, keepdims=True) + d.mean()


def dcor(x: np.ndarray, y: np.ndarray) -> float:
    """Sample distance correlation in [0, 1]; 0 when either input has zero spread."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    x = x.reshape(len(x), -1)
    y = y.reshape(len(y), -1)
    if len(x) != len(y) or len(x) < 2:
        raise ValueError("dcor needs two samples of equal size >= 2")
    a = _double_centered(x)
    b = _double_centered(y)
    vxy = (a * b).mean()
    vxx = (a * a).mean()
    vyy = (b * b).mean()
    if vxx <= 0 or vyy <= 0:
        return 0.0
    return float(np.sqrt(max(vxy, 0.0) / np.sqrt(vxx * vyy)))


# --- gallery files ------------------------------------------------------------

GALLERY_FORMAT_VERSION = 1


def save_gallery(gallery: Gallery, path) -> Path:
    """Directory with ``manifest.json`` and a little-endian float64 ``anchors.bin``."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    blob = gallery.anchors.astype("<f8").tobytes()
    manifest = {
        "format_version": GALLERY_FORMAT_VERSION,
        "shape": list(gallery.anchors.shape),
        "class_ids": list(gallery.class_ids),
        "metadata": gallery.metadata,
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    (path / "anchors.bin").write_bytes(blob)
    (path / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_gallery(path) -> Gallery:
    path = Path(path)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
        blob = (path / "anchors.bin").read_bytes()
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read gallery at {path}: {exc}") from None
    if manifest.get("format_version") != GALLERY_FORMAT_VERSION:
        raise FormatError("unsupported gallery version")
    shape = tuple(manifest["shape"])
    if len(blob) != 8 * int(np.prod(shape)):
        raise FormatError("anchor blob size does not match manifest shape")
    anchors = np.frombuffer(blob, dtype="<f8").reshape(shape).astype(np.float64)
    return Gallery(anchors, list(manifest["class_ids"]), dict(manifest.get("metadata", {})))
