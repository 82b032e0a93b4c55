"""Pairwise overlap score matrices with per-image embedding caching.

A scorer backend exposes ``embed`` (image -> feature vector) and ``head``
(two feature vectors -> overlap probability).  ``build_overlap_matrix``
guarantees each image is embedded exactly once and each unordered pair is
scored exactly once, even under concurrent pair scoring, and accounts for
both call types.  ``PrecomputedScores`` bypasses embed/head entirely and
serves stored pair scores.
"""

from __future__ import annotations

import csv
import json
import struct
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np

from .errors import (
    BackendFailure,
    DimensionMismatch,
    IoFailure,
    MagicMismatch,
    MalformedDocument,
    MalformedRow,
    MissingScore,
    OutOfRangeScore,
    SchemaViolation,
)

_ACTIVATIONS = ("identity", "relu", "sigmoid")


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True)
class Embedding:
    """A cached per-image feature vector (stored as float32)."""

    image_id: str
    vector: np.ndarray

    def __post_init__(self) -> None:
        vec = np.asarray(self.vector, dtype=np.float32).reshape(-1)
        if vec.size < 1:
            raise DimensionMismatch(f"embedding '{self.image_id}': dimension must be >= 1")
        if not np.all(np.isfinite(vec)):
            raise DimensionMismatch(f"embedding '{self.image_id}': non-finite values")
        object.__setattr__(self, "vector", vec)

    @property
    def dim(self) -> int:
        return int(self.vector.size)


@dataclass(frozen=True)
class HeadLayer:
    weights: np.ndarray  # (out, in), float64
    bias: np.ndarray  # (out,), float64
    activation: str

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64).reshape(-1)
        if w.ndim != 2:
            raise SchemaViolation("head layer: weights must be a 2-D matrix")
        if b.size != w.shape[0]:
            raise SchemaViolation("head layer: bias length must equal the output dimension")
        if self.activation not in _ACTIVATIONS:
            raise SchemaViolation(f"head layer: unknown activation '{self.activation}'")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class HeadWeights:
    """Dense layers applied to the element-wise product of two embeddings.

    Layer dimensions must chain, and the final layer must map to a single
    sigmoid output.
    """

    layers: tuple[HeadLayer, ...]

    def __post_init__(self) -> None:
        layers = tuple(self.layers)
        if not layers:
            raise SchemaViolation("head weights: at least one layer required")
        for i in range(1, len(layers)):
            if layers[i].weights.shape[1] != layers[i - 1].weights.shape[0]:
                raise SchemaViolation(
                    f"head weights: layer {i} input {layers[i].weights.shape[1]} "
                    f"!= layer {i - 1} output {layers[i - 1].weights.shape[0]}"
                )
        last = layers[-1]
        if last.weights.shape[0] != 1 or last.activation != "sigmoid":
            raise SchemaViolation("head weights: final layer must be 1-dimensional with sigmoid")
        object.__setattr__(self, "layers", layers)

    @property
    def input_dim(self) -> int:
        return int(self.layers[0].weights.shape[1])


def head_score(e1: Embedding, e2: Embedding, w: HeadWeights) -> float:
    """Score a pair: dense layers over the element-wise product, in float64.

    Symmetric in (e1, e2) because the element-wise product commutes.
    """
    if e1.dim != e2.dim:
        raise DimensionMismatch(f"embeddings '{e1.image_id}' ({e1.dim}) and "
                                f"'{e2.image_id}' ({e2.dim}) differ in dimension")
    if e1.dim != w.input_dim:
        raise DimensionMismatch(f"embedding dimension {e1.dim} does not match "
                                f"head input dimension {w.input_dim}")
    z = e1.vector.astype(np.float64) * e2.vector.astype(np.float64)
    for layer in w.layers:
        z = layer.weights @ z + layer.bias
        if layer.activation == "relu":
            z = np.maximum(z, 0.0)
        elif layer.activation == "sigmoid":
            z = sigmoid(z)
    return float(z[0])


@dataclass(frozen=True)
class OverlapMatrix:
    """Symmetric matrix of pairwise overlap probabilities with a unit diagonal."""

    ids: tuple[str, ...]
    scores: np.ndarray

    def __post_init__(self) -> None:
        ids = tuple(self.ids)
        scores = np.asarray(self.scores, dtype=np.float64)
        n = len(ids)
        if scores.shape != (n, n):
            raise SchemaViolation(f"overlap matrix: shape {scores.shape} does not match {n} ids")
        if len(set(ids)) != n:
            raise SchemaViolation("overlap matrix: duplicate image ids")
        if not np.array_equal(scores, scores.T):
            raise SchemaViolation("overlap matrix: not symmetric")
        if n and not np.all(np.diag(scores) == 1.0):
            raise SchemaViolation("overlap matrix: diagonal entries must equal 1.0")
        if np.any(scores < 0.0) or np.any(scores > 1.0):
            raise SchemaViolation("overlap matrix: entries outside [0, 1]")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "scores", scores)

    @property
    def n(self) -> int:
        return len(self.ids)

    def index_of(self, image_id: str) -> int:
        try:
            return self.ids.index(image_id)
        except ValueError as exc:
            raise KeyError(image_id) from exc


@dataclass
class CallAccounting:
    """Counts of encoder (embed) and head invocations during a matrix build."""

    encoder_calls: int = 0
    head_calls: int = 0
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def count_encoder(self) -> None:
        with self._lock:
            self.encoder_calls += 1

    def count_head(self) -> None:
        with self._lock:
            self.head_calls += 1


class ScorerBackend:
    """Contract for pair scorers: per-image ``embed`` plus pairwise ``head``."""

    def embed(self, image_id: str, uri: str) -> Embedding:
        raise NotImplementedError

    def head(self, e1: Embedding, e2: Embedding) -> float:
        raise NotImplementedError


class LinearHead(ScorerBackend):
    """Scores pairs with loaded head weights over precomputed embeddings."""

    def __init__(self, embeddings: dict[str, Embedding] | list[Embedding], weights: HeadWeights):
        if not isinstance(embeddings, dict):
            embeddings = {e.image_id: e for e in embeddings}
        self._embeddings = embeddings
        self.weights = weights

    @classmethod
    def from_files(cls, embeddings_path, weights_path) -> "LinearHead":
        return cls(read_embedding_cache(embeddings_path), load_head_weights(weights_path))

    def embed(self, image_id: str, uri: str) -> Embedding:
        try:
            return self._embeddings[image_id]
        except KeyError as exc:
            raise BackendFailure(f"no embedding for image '{image_id}'") from exc

    def head(self, e1: Embedding, e2: Embedding) -> float:
        return head_score(e1, e2, self.weights)


class PrecomputedScores:
    """Serves stored unordered-pair scores; no encoder or head involved.

    Pairs are keyed with the lexicographically smaller id first, which makes
    symmetry a property of the storage itself.
    """

    def __init__(self, pair_scores: dict[tuple[str, str], float]):
        self._scores = {_pair_key(a, b): float(s) for (a, b), s in pair_scores.items()}
        for (a, b), s in self._scores.items():
            if not (0.0 <= s <= 1.0):
                raise OutOfRangeScore(f"pair ({a}, {b}): score {s} outside [0, 1]")

    @classmethod
    def from_csv(cls, path) -> "PrecomputedScores":
        return cls(load_pair_scores(path))

    def pair_score(self, id_a: str, id_b: str) -> float:
        key = _pair_key(id_a, id_b)
        try:
            return self._scores[key]
        except KeyError as exc:
            raise MissingScore(f"no stored score for pair ({key[0]}, {key[1]})") from exc


def _pair_key(a: str, b: str) -> tuple[str, str]:
    return (a, b) if a <= b else (b, a)


class _ExactlyOnceCache:
    """Per-key memoization where concurrent requests coalesce onto one compute."""

    def __init__(self, compute):
        self._compute = compute
        self._lock = threading.Lock()
        self._cells: dict[str, dict] = {}
        self.computations = 0

    def get(self, key: str, *args):
        with self._lock:
            cell = self._cells.get(key)
            if cell is None:
                cell = {"event": threading.Event()}
                self._cells[key] = cell
                self.computations += 1
                owner = True
            else:
                owner = False
        if owner:
            try:
                cell["value"] = self._compute(key, *args)
            except BaseException as exc:  # propagate to all waiters
                cell["error"] = exc
            finally:
                cell["event"].set()
        else:
            cell["event"].wait()
        if "error" in cell:
            raise cell["error"]
        return cell["value"]


def build_overlap_matrix(
    image_ids,
    backend,
    uris: dict[str, str] | None = None,
    max_workers: int | None = None,
) -> tuple[OverlapMatrix, CallAccounting]:
    """Build the full symmetric overlap matrix for ``image_ids``.

    With an embedding backend each image is embedded exactly once (concurrent
    requests coalesce) and each unordered pair is scored exactly once, so the
    accounting ends at n encoder calls and n(n-1)/2 head calls.  The diagonal
    is fixed at 1.0 rather than evaluated.  ``max_workers`` > 1 scores pairs
    concurrently; the result is bitwise identical at any concurrency level.
    """
    ids = list(image_ids)
    n = len(ids)
    if n < 1:
        raise SchemaViolation("overlap matrix: at least one image id required")
    if len(set(ids)) != n:
        raise SchemaViolation("overlap matrix: duplicate image ids")
    uris = uris or {}

    accounting = CallAccounting()
    scores = np.eye(n, dtype=np.float64)
    pairs = list(combinations(range(n), 2))

    if isinstance(backend, PrecomputedScores):
        for i, j in pairs:
            value = backend.pair_score(ids[i], ids[j])
            accounting.count_head()
            scores[i, j] = scores[j, i] = value
        return OverlapMatrix(ids=tuple(ids), scores=scores), accounting

    def _embed(image_id: str) -> Embedding:
        accounting.count_encoder()
        try:
            return backend.embed(image_id, uris.get(image_id, ""))
        except BackendFailure:
            raise
        except Exception as exc:
            raise BackendFailure(f"embed failed for image '{image_id}': {exc}") from exc

    cache = _ExactlyOnceCache(_embed)

    def _score_pair(pair: tuple[int, int]) -> float:
        i, j = pair
        e1 = cache.get(ids[i])
        e2 = cache.get(ids[j])
        try:
            value = backend.head(e1, e2)
        except BackendFailure:
            raise
        except Exception as exc:
            raise BackendFailure(f"head failed for pair ({ids[i]}, {ids[j]}): {exc}") from exc
        accounting.count_head()
        if not (0.0 <= value <= 1.0):
            raise OutOfRangeScore(f"pair ({ids[i]}, {ids[j]}): head returned {value}")
        return value

    if max_workers is not None and max_workers > 1 and pairs:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            values = list(pool.map(_score_pair, pairs))
    else:
        values = [_score_pair(p) for p in pairs]
    for (i, j), value in zip(pairs, values):
        scores[i, j] = scores[j, i] = value
    return OverlapMatrix(ids=tuple(ids), scores=scores), accounting


# ---------------------------------------------------------------------------
# pair score files (CSV)

_SCORE_HEADER = ["image_a", "image_b", "score"]


def load_pair_scores(path) -> dict[tuple[str, str], float]:
    """Read a pair score CSV into an unordered-pair score map."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            rows = list(reader)
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    if not rows or rows[0] != _SCORE_HEADER:
        raise MalformedRow(f"{path}: expected header {','.join(_SCORE_HEADER)}")
    scores: dict[tuple[str, str], float] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3 or not row[0] or not row[1]:
            raise MalformedRow(f"{path}:{lineno}: expected 'image_a,image_b,score'")
        try:
            value = float(row[2])
        except ValueError as exc:
            raise MalformedRow(f"{path}:{lineno}: score '{row[2]}' is not a number") from exc
        if not (0.0 <= value <= 1.0):
            raise OutOfRangeScore(f"{path}:{lineno}: score {value} outside [0, 1]")
        scores[_pair_key(row[0], row[1])] = value
    return scores


def write_pair_scores(scores: dict[tuple[str, str], float], path) -> None:
    """Write unordered-pair scores; rows sorted so output is byte-stable.

    Scores are formatted with ``repr`` so reading the file back reproduces
    the exact float64 values.
    """
    rows = sorted((_pair_key(a, b), s) for (a, b), s in scores.items())
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(_SCORE_HEADER)
            for (a, b), s in rows:
                writer.writerow([a, b, repr(float(s))])
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def load_precomputed_scores(path, image_ids) -> OverlapMatrix:
    """Build an overlap matrix for ``image_ids`` from a pair score file."""
    backend = PrecomputedScores.from_csv(path)
    matrix, _ = build_overlap_matrix(image_ids, backend)
    return matrix


def matrix_to_pair_scores(matrix: OverlapMatrix) -> dict[tuple[str, str], float]:
    out = {}
    for i, j in combinations(range(matrix.n), 2):
        out[_pair_key(matrix.ids[i], matrix.ids[j])] = float(matrix.scores[i, j])
    return out


# ---------------------------------------------------------------------------
# embedding cache file (binary, little-endian)

_MAGIC = b"RGEC"
_VERSION = 1


def write_embedding_cache(embeddings, path) -> None:
    """Write embeddings to the binary cache format (bit-exact float32)."""
    embeddings = list(embeddings)
    dim = embeddings[0].dim if embeddings else 0
    for e in embeddings:
        if e.dim != dim:
            raise DimensionMismatch(
                f"embedding '{e.image_id}' has dimension {e.dim}, expected {dim}"
            )
    try:
        with open(path, "wb") as fh:
            fh.write(_MAGIC)
            fh.write(struct.pack("<III", _VERSION, dim, len(embeddings)))
            for e in embeddings:
                raw = e.image_id.encode("utf-8")
                if len(raw) > 0xFFFF:
                    raise SchemaViolation(f"embedding id too long: '{e.image_id[:32]}...'")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(e.vector.astype("<f4").tobytes())
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc


def read_embedding_cache(path) -> list[Embedding]:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    if len(blob) < 16 or blob[:4] != _MAGIC:
        raise MagicMismatch(f"{path}: not an embedding cache file")
    version, dim, count = struct.unpack_from("<III", blob, 4)
    if version != _VERSION:
        raise MagicMismatch(f"{path}: unsupported cache version {version}")
    offset = 16
    embeddings = []
    for _ in range(count):
        if len(blob) - offset < 2:
            raise IoFailure(f"{path}: truncated record")
        (id_len,) = struct.unpack_from("<H", blob, offset)
        offset += 2
        if len(blob) - offset < id_len + 4 * dim:
            raise IoFailure(f"{path}: truncated record")
        image_id = blob[offset : offset + id_len].decode("utf-8")
        offset += id_len
        vec = np.frombuffer(blob, dtype="<f4", count=dim, offset=offset)
        offset += 4 * dim
        embeddings.append(Embedding(image_id=image_id, vector=vec.copy()))
    return embeddings


# ---------------------------------------------------------------------------
# head weights document (JSON)


def head_weights_from_document(doc, source: str = "<document>") -> HeadWeights:
    if not isinstance(doc, dict) or not isinstance(doc.get("layers"), list):
        raise SchemaViolation(f"{source}: expected an object with a 'layers' list")
    layers = []
    for i, layer_doc in enumerate(doc["layers"]):
        path = f"{source}.layers[{i}]"
        if not isinstance(layer_doc, dict):
            raise SchemaViolation(f"{path}: must be an object")
        try:
            layers.append(
                HeadLayer(
                    weights=np.asarray(layer_doc["weights"], dtype=np.float64),
                    bias=np.asarray(layer_doc["bias"], dtype=np.float64),
                    activation=layer_doc.get("activation", "identity"),
                )
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaViolation(f"{path}: {exc}") from exc
    return HeadWeights(layers=tuple(layers))


def load_head_weights(path) -> HeadWeights:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"{path}: {exc}") from exc
    return head_weights_from_document(doc, source=str(path))


def write_head_weights(w: HeadWeights, path) -> None:
    doc = {
        "layers": [
            {
                "weights": layer.weights.tolist(),
                "bias": layer.bias.tolist(),
                "activation": layer.activation,
            }
            for layer in w.layers
        ]
    }
    try:
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"{path}: {exc}") from exc
