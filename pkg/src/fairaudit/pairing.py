"""Speaker pairing for voice-conversion planning.

Speakers are 3-vectors of acoustic features (voiced segments per second,
local shimmer in dB, normalized MFCC-1 spread), z-scored across the
cohort. Pairwise cosine dissimilarity defines edge weights on the
complete graph, and an exact maximum-weight matching picks the most
acoustically diverse disjoint pairs. Each pair is then converted in both
directions, so m selected utterances across m/2 pairs yield m synthetic
samples.

Exactness: edge weights are lifted to exact rationals (every float is
one), the optimum value comes from a blossom-based solver, and the
reported matching is canonicalized to the lexicographically smallest
optimal pair list by greedily fixing the smallest pair that still permits
the optimal total. An exhaustive oracle (n <= 12) applies the same rule,
so the two agree pair-for-pair, not just in total weight.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

import networkx as nx
import numpy as np

from .errors import DataError, SchemaError

log = logging.getLogger(__name__)

FEATURE_NAMES = ("voiced_segments_per_sec", "shimmer_local_db", "mfcc1_stddev_norm")


@dataclass(frozen=True)
class SpeakerFeatures:
    subject_id: str
    x: np.ndarray  # normalized 3-vector


@dataclass
class MatchingPlan:
    """Disjoint speaker pairs with distances; odd cohorts leave one unmatched."""

    pairs: list[tuple[str, str, float]]
    unmatched: list[str]
    total_weight: float

    def to_dict(self) -> dict:
        return {
            "pairs": [{"source": p, "target": q, "distance": d} for p, q, d in self.pairs],
            "unmatched": list(self.unmatched),
            "total_weight": self.total_weight,
        }


def load_features(path: str | Path) -> list[tuple[str, np.ndarray]]:
    """Read the speaker feature CSV {subject_id, voiced_segments_per_sec,
    shimmer_local_db, mfcc1_stddev_norm}."""
    path = Path(path)
    out: list[tuple[str, np.ndarray]] = []
    seen: set[str] = set()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in ("subject_id", *FEATURE_NAMES) if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing feature columns {missing}")
        for i, row in enumerate(reader):
            sid = row["subject_id"].strip()
            if sid in seen:
                raise SchemaError(f"{path}: duplicate subject_id {sid!r} at row {i + 2}")
            seen.add(sid)
            try:
                vec = np.array([float(row[name]) for name in FEATURE_NAMES])
            except ValueError as exc:
                raise SchemaError(f"{path} row {i + 2}: bad feature value ({exc})")
            out.append((sid, vec))
    return out


def normalize_features(
    raw: Sequence[tuple[str, np.ndarray]],
    method: str = "zscore",
) -> list[SpeakerFeatures]:
    """Per-feature cohort normalization; z-score by default, min-max optional."""
    if len(raw) < 2:
        raise DataError("need at least 2 speakers to normalize")
    matrix = np.array([vec for _, vec in raw], dtype=float)
    if not np.all(np.isfinite(matrix)):
        raise DataError("non-finite feature values")
    if method == "zscore":
        std = matrix.std(axis=0, ddof=0)
        for k, s in enumerate(std):
            if s == 0.0:
                raise DataError(f"feature {FEATURE_NAMES[k]!r} has zero variance")
        normed = (matrix - matrix.mean(axis=0)) / std
    elif method == "minmax":
        span = matrix.max(axis=0) - matrix.min(axis=0)
        for k, s in enumerate(span):
            if s == 0.0:
                raise DataError(f"feature {FEATURE_NAMES[k]!r} has zero range")
        normed = (matrix - matrix.min(axis=0)) / span
    else:
        raise DataError(f"unknown normalization method {method!r}")
    return [SpeakerFeatures(subject_id=sid, x=normed[i]) for i, (sid, _) in enumerate(raw)]


def cosine_distance(x: np.ndarray, y: np.ndarray) -> float:
    """1 - cos(x, y), clipped into [0, 2]."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    nx_, ny_ = np.linalg.norm(x), np.linalg.norm(y)
    if nx_ == 0.0 or ny_ == 0.0:
        raise DataError("cosine distance undefined for zero vectors")
    return float(np.clip(1.0 - float(x @ y) / (nx_ * ny_), 0.0, 2.0))


def distance_matrix(features: Sequence[SpeakerFeatures]) -> tuple[list[str], np.ndarray]:
    """Symmetric cosine-dissimilarity matrix over speakers sorted by id."""
    feats = sorted(features, key=lambda f: f.subject_id)
    ids = [f.subject_id for f in feats]
    n = len(feats)
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            d[i, j] = d[j, i] = cosine_distance(feats[i].x, feats[j].x)
    return ids, d


def _validate_distances(distances: np.ndarray) -> np.ndarray:
    d = np.asarray(distances, dtype=float)
    if d.ndim != 2 or d.shape[0] != d.shape[1]:
        raise DataError(f"distance matrix must be square, got shape {d.shape}")
    if d.shape[0] < 2:
        raise DataError("need at least 2 speakers to match")
    if not np.array_equal(d, d.T):
        raise DataError("distance matrix is not symmetric")
    if np.any(d < 0):
        raise DataError("distances must be non-negative")
    return d


def _optimal_total(weights: dict[tuple[int, int], Fraction], vertices: set[int]) -> Fraction:
    """Exact maximum-weight matching value on the induced subgraph."""
    graph = nx.Graph()
    graph.add_nodes_from(vertices)
    for (i, j), w in weights.items():
        if i in vertices and j in vertices and w > 0:
            graph.add_edge(i, j, weight=w)
    matching = nx.max_weight_matching(graph, maxcardinality=False)
    total = Fraction(0)
    for a, b in matching:
        total += weights[(min(a, b), max(a, b))]
    return total


def _finish_plan(pairs_idx: list[tuple[int, int]], unmatched_idx: list[int],
                 d: np.ndarray, ids: Sequence[str]) -> MatchingPlan:
    pairs_idx = sorted(pairs_idx)
    pairs = [(ids[i], ids[j], float(d[i, j])) for i, j in pairs_idx]
    total = float(sum(d[i, j] for i, j in pairs_idx))
    return MatchingPlan(pairs=pairs, unmatched=[ids[v] for v in sorted(unmatched_idx)],
                        total_weight=total)


def max_weight_matching(
    distances: np.ndarray,
    ids: Optional[Sequence[str]] = None,
) -> MatchingPlan:
    """Exact maximum-weight matching with a deterministic lexicographic tie-break.

    Among all maximum-weight matchings, returns the one whose sorted pair
    list compares smallest. Zero-weight pairs add nothing and are never
    included. Cost is O(n^2) inner blossom solves in the worst case, which
    is fine at cohort scale.
    """
    d = _validate_distances(distances)
    n = d.shape[0]
    if ids is None:
        ids = [str(i) for i in range(n)]
    elif len(ids) != n:
        raise DataError("ids length does not match the distance matrix")

    weights = {(i, j): Fraction(float(d[i, j])) for i in range(n) for j in range(i + 1, n)}
    remaining = set(range(n))
    target = _optimal_total(weights, remaining)
    candidates = sorted(weights)
    fixed: list[tuple[int, int]] = []
    pointer = 0
    while target > 0:
        while True:
            i, j = candidates[pointer]
            pointer += 1
            if i in remaining and j in remaining:
                break
        sub = _optimal_total(weights, remaining - {i, j})
        if weights[(i, j)] + sub == target:
            fixed.append((i, j))
            remaining -= {i, j}
            target = sub
    return _finish_plan(fixed, sorted(remaining), d, ids)


BRUTE_FORCE_LIMIT = 12


def brute_force_matching(
    distances: np.ndarray,
    ids: Optional[Sequence[str]] = None,
) -> MatchingPlan:
    """Exhaustive oracle over all matchings; same tie-break as the exact solver."""
    d = _validate_distances(distances)
    n = d.shape[0]
    if n > BRUTE_FORCE_LIMIT:
        raise DataError(f"brute force refuses n={n} > {BRUTE_FORCE_LIMIT}")
    if ids is None:
        ids = [str(i) for i in range(n)]
    elif len(ids) != n:
        raise DataError("ids length does not match the distance matrix")

    weights = {(i, j): Fraction(float(d[i, j])) for i in range(n) for j in range(i + 1, n)}
    best: list[Optional[tuple]] = [None]  # (total, pairs tuple)

    def recurse(remaining: list[int], pairs: list[tuple[int, int]], total: Fraction) -> None:
        if not remaining:
            candidate = (total, tuple(pairs))
            if (best[0] is None or candidate[0] > best[0][0]
                    or (candidate[0] == best[0][0] and candidate[1] < best[0][1])):
                best[0] = candidate
            return
        v = remaining[0]
        rest = remaining[1:]
        recurse(rest, pairs, total)  # leave v unmatched
        for k, u in enumerate(rest):
            pairs.append((v, u))
            recurse(rest[:k] + rest[k + 1:], pairs, total + weights[(v, u)])
            pairs.pop()

    recurse(list(range(n)), [], Fraction(0))
    assert best[0] is not None
    chosen = list(best[0][1])
    used = {v for pair in chosen for v in pair}
    return _finish_plan(chosen, [v for v in range(n) if v not in used], d, ids)


@dataclass(frozen=True)
class ConversionDirective:
    source_utterance: str
    target_speaker: str


def conversion_plan(
    matching: MatchingPlan,
    utterance_index: dict[str, Sequence[str]],
) -> list[ConversionDirective]:
    """Bidirectional conversion work list: every utterance of each matched
    speaker targets its partner."""
    directives: list[ConversionDirective] = []
    for p, q, _ in matching.pairs:
        for speaker, partner in ((p, q), (q, p)):
            utts = utterance_index.get(speaker)
            if not utts:
                raise DataError(f"matched speaker {speaker!r} has no utterances")
            directives.extend(ConversionDirective(source_utterance=u, target_speaker=partner)
                              for u in utts)
    return directives


def write_plan(path: str | Path, matching: MatchingPlan,
               directives: Sequence[ConversionDirective]) -> None:
    obj = matching.to_dict()
    obj["directives"] = [
        {"source_utterance": d.source_utterance, "target_speaker": d.target_speaker}
        for d in directives
    ]
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
