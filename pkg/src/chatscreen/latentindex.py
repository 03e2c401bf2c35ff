"""Approximate nearest-neighbor index over profane-key embeddings.

A hierarchical navigable small-world graph: each node gets a geometrically
sampled top level, upper layers are sparse proximity graphs used for greedy
descent, and layer 0 holds every key. Vectors are unit-normalized at insert
so cosine similarity is a plain inner product. An exact brute-force search
is provided as the testing oracle, and keys can be inserted at any time:
one embedding computation, no retraining.

Deletion is deliberately unsupported: at a few hundred profane keys a
rebuild is cheaper than correct graph surgery.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .chardomain import DOMAIN, CharDomain
from .encoder import EncoderParams, forward
from .tensorio import VersionMismatchError, read_container, write_container

PROJ_DIM = 64


class ZeroVectorError(ValueError):
    """Vectors must have nonzero norm to be normalized / compared."""


class DuplicateKeyError(ValueError):
    """The key token is already present in the index."""


class EmptyIndexError(RuntimeError):
    """Search requires at least one stored entry."""


@dataclass(frozen=True)
class HnswParams:
    m: int = 16
    ef_construction: int = 200
    ef_search: int = 64
    seed: int = 0

    def __post_init__(self) -> None:
        if self.m < 2:
            raise ValueError("m must be >= 2")
        if self.ef_search < 1:
            raise ValueError("ef_search must be >= 1")
        if self.ef_construction < self.m:
            raise ValueError("ef_construction must be >= m")

    @property
    def level_lambda(self) -> float:
        return 1.0 / math.log(self.m)


@dataclass(frozen=True)
class IndexEntry:
    key_token: str
    vector: np.ndarray
    node_id: int
    level: int


def _normalize(vector: np.ndarray) -> np.ndarray:
    v = np.asarray(vector, dtype=np.float64).reshape(-1)
    if v.shape[0] != PROJ_DIM:
        raise ValueError(f"expected a {PROJ_DIM}-dim vector, got {v.shape}")
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ZeroVectorError("cannot normalize a zero vector")
    return v / norm


class LatentIndex:
    def __init__(self, params: HnswParams = HnswParams()):
        self.params = params
        self._matrix = np.zeros((64, PROJ_DIM))
        self._count = 0
        self._keys: list[str] = []
        self._key_to_node: dict[str, int] = {}
        self._levels: list[int] = []
        self._links: list[list[np.ndarray]] = []  # node -> layer -> neighbor id array
        self._entry: int | None = None
        self._max_level = -1
        self._rng = np.random.default_rng(params.seed)
        # generation-stamped visited marks, reused across searches
        self._visit_stamp = np.zeros(64, dtype=np.int64)
        self._stamp = 0

    def __len__(self) -> int:
        return self._count

    def __contains__(self, key_token: str) -> bool:
        return key_token in self._key_to_node

    def entries(self) -> Iterator[IndexEntry]:
        for node in range(self._count):
            yield IndexEntry(
                key_token=self._keys[node],
                vector=self._matrix[node].copy(),
                node_id=node,
                level=self._levels[node],
            )

    def copy(self) -> "LatentIndex":
        """Deep copy (graph, vectors, rng state): supports snapshot-swap
        updates where readers keep searching the old index."""
        dup = LatentIndex(self.params)
        dup._matrix = self._matrix.copy()
        dup._count = self._count
        dup._keys = list(self._keys)
        dup._key_to_node = dict(self._key_to_node)
        dup._levels = list(self._levels)
        dup._links = [[arr.copy() for arr in per_node] for per_node in self._links]
        dup._entry = self._entry
        dup._max_level = self._max_level
        dup._rng = np.random.default_rng()
        dup._rng.bit_generator.state = self._rng.bit_generator.state
        dup._visit_stamp = np.zeros(self._visit_stamp.shape[0], dtype=np.int64)
        return dup

    # -- internals ---------------------------------------------------------

    def _distances(self, query: np.ndarray, nodes: Sequence[int]) -> np.ndarray:
        return 1.0 - self._matrix[list(nodes)] @ query

    def _sample_level(self) -> int:
        u = 1.0 - self._rng.random()  # in (0, 1], log() is safe
        return int(-math.log(u) * self.params.level_lambda)

    def _search_layer(
        self, query: np.ndarray, entry_points: Sequence[int], layer: int, ef: int
    ) -> list[tuple[float, int]]:
        """Beam search on one layer; returns (distance, node) ascending."""
        self._stamp += 1
        stamp = self._stamp
        marks = self._visit_stamp
        entry_points = list(dict.fromkeys(entry_points))
        marks[entry_points] = stamp
        dists = self._distances(query, entry_points)
        candidates = list(zip(dists.tolist(), entry_points))  # min-heap
        heapq.heapify(candidates)
        best = [(-d, n) for d, n in candidates]  # max-heap by distance
        heapq.heapify(best)
        while len(best) > ef:
            heapq.heappop(best)
        while candidates:
            dist, node = heapq.heappop(candidates)
            if len(best) >= ef and dist > -best[0][0]:
                break
            arr = self._links[node][layer]
            if arr.size == 0:
                continue
            fresh = arr[marks[arr] != stamp]
            if fresh.size == 0:
                continue
            marks[fresh] = stamp
            fresh_dists = 1.0 - self._matrix[fresh] @ query
            if len(best) >= ef:
                keep = fresh_dists < -best[0][0]
                fresh, fresh_dists = fresh[keep], fresh_dists[keep]
            for d, n in zip(fresh_dists.tolist(), fresh.tolist()):
                if len(best) < ef:
                    heapq.heappush(candidates, (d, n))
                    heapq.heappush(best, (-d, n))
                elif d < -best[0][0]:
                    heapq.heappush(candidates, (d, n))
                    heapq.heappushpop(best, (-d, n))
        return sorted((-nd, n) for nd, n in best)

    def _select_neighbors(
        self, candidates: list[tuple[float, int]], m: int, anchor: int | None = None
    ) -> list[int]:
        """Diversity-aware selection: keep a candidate only if it is closer to
        the target than to everything already kept, then fill from the
        discards. Falls back to plain nearest when few candidates exist."""
        pool = sorted(candidates)
        if anchor is not None:
            pool = [(d, n) for d, n in pool if n != anchor]
        if len(pool) <= m:
            return [n for _, n in pool]
        ids = [n for _, n in pool]
        vectors = self._matrix[ids]
        pairwise = 1.0 - vectors @ vectors.T  # one GEMM instead of per-candidate calls
        dists = [d for d, _ in pool]
        kept: list[int] = []  # indices into pool
        discarded: list[int] = []
        # min distance from each candidate to the kept set, updated incrementally
        min_to_kept = np.full(len(pool), np.inf)
        for j in range(len(pool)):
            if len(kept) == m:
                break
            if not kept or dists[j] < min_to_kept[j]:
                kept.append(j)
                np.minimum(min_to_kept, pairwise[:, j], out=min_to_kept)
            else:
                discarded.append(j)
        for j in discarded:
            if len(kept) == m:
                break
            kept.append(j)
        return [ids[j] for j in kept]

    def _prune_node(self, node: int, layer: int) -> None:
        """Trim an overfull neighbor list back to m, keeping links symmetric.

        A neighbor whose only remaining link is the one being dropped keeps
        it (another, better-connected link is dropped instead) so no node is
        ever orphaned on its layer.
        """
        m = self.params.m
        links = self._links[node][layer]
        if links.size <= m:
            return
        link_list = links.tolist()
        dists = self._distances(self._matrix[node], link_list)
        keep = set(self._select_neighbors(list(zip(dists.tolist(), link_list)), m))
        dropped = [n for n in link_list if n not in keep]
        # protect would-be orphans
        for n in list(dropped):
            if self._links[n][layer].size <= 1:
                worst_kept = max(
                    (k for k in keep if self._links[k][layer].size > 1),
                    key=lambda k: float(self._distances(self._matrix[node], [k])[0]),
                    default=None,
                )
                if worst_kept is None:
                    continue
                keep.discard(worst_kept)
                keep.add(n)
                dropped.remove(n)
                dropped.append(worst_kept)
        self._links[node][layer] = np.asarray(
            [n for n in link_list if n in keep], dtype=np.int64
        )
        for n in dropped:
            if n in keep:
                continue
            peer = self._links[n][layer]
            self._links[n][layer] = peer[peer != node]

    # -- public api --------------------------------------------------------

    def insert(self, key_token: str, vector: np.ndarray) -> int:
        """Insert one profane key; returns its node id."""
        if key_token in self._key_to_node:
            raise DuplicateKeyError(f"key already indexed: {key_token!r}")
        unit = _normalize(vector)
        level = self._sample_level()

        node = self._count
        if node == self._matrix.shape[0]:
            grown = np.zeros((2 * self._matrix.shape[0], PROJ_DIM))
            grown[: self._count] = self._matrix[: self._count]
            self._matrix = grown
            stamps = np.zeros(2 * self._visit_stamp.shape[0], dtype=np.int64)
            stamps[: self._count] = self._visit_stamp[: self._count]
            self._visit_stamp = stamps
        self._matrix[node] = unit
        self._count += 1
        self._keys.append(key_token)
        self._key_to_node[key_token] = node
        self._levels.append(level)
        empty = np.empty(0, dtype=np.int64)
        self._links.append([empty for _ in range(level + 1)])

        if self._entry is None:
            self._entry = node
            self._max_level = level
            return node

        entry_points = [self._entry]
        for layer in range(self._max_level, level, -1):
            nearest = self._search_layer(unit, entry_points, layer, ef=1)
            entry_points = [nearest[0][1]]
        for layer in range(min(level, self._max_level), -1, -1):
            candidates = self._search_layer(
                unit, entry_points, layer, ef=self.params.ef_construction
            )
            neighbors = self._select_neighbors(candidates, self.params.m, anchor=node)
            self._links[node][layer] = np.asarray(neighbors, dtype=np.int64)
            for neighbor in neighbors:
                self._links[neighbor][layer] = np.append(self._links[neighbor][layer], node)
                self._prune_node(neighbor, layer)
            entry_points = [n for _, n in candidates]
        if level > self._max_level:
            self._entry = node
            self._max_level = level
        return node

    def search(
        self, query: np.ndarray, k: int, ef_search: int | None = None
    ) -> list[tuple[str, float]]:
        """Approximate top-k (key, cosine similarity), similarity descending."""
        if self._count == 0:
            raise EmptyIndexError("search on an empty index")
        unit = _normalize(query)
        ef = max(ef_search if ef_search is not None else self.params.ef_search, k)
        entry_points = [self._entry]
        for layer in range(self._max_level, 0, -1):
            nearest = self._search_layer(unit, entry_points, layer, ef=1)
            entry_points = [nearest[0][1]]
        found = self._search_layer(unit, entry_points, layer=0, ef=ef)
        nodes = [n for _, n in found]
        sims = self._matrix[nodes] @ unit  # recomputed directly: bitwise-comparable
        scored = [(self._keys[n], float(s)) for n, s in zip(nodes, sims)]
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return scored[:k]

    def exact_search(self, query: np.ndarray, k: int) -> list[tuple[str, float]]:
        """Brute-force oracle with the same output contract as search()."""
        if self._count == 0:
            raise EmptyIndexError("search on an empty index")
        unit = _normalize(query)
        sims = self._matrix[: self._count] @ unit
        k_eff = min(k, self._count)
        take = min(self._count, max(4 * k_eff, k_eff + 16))
        top = np.argpartition(-sims, take - 1)[:take] if take < self._count else np.arange(self._count)
        scored = [(self._keys[n], float(sims[n])) for n in top]
        scored.sort(key=lambda pair: (-pair[1], pair[0]))
        return scored[:k_eff]

    # -- integrity ---------------------------------------------------------

    def check_node(self, node: int) -> list[str]:
        """Local invariants for one node and everything it touches."""
        problems: list[str] = []
        if abs(float(np.linalg.norm(self._matrix[node])) - 1.0) > 1e-6:
            problems.append(f"node {node}: vector not unit norm")
        for layer, arr in enumerate(self._links[node]):
            neighbors = arr.tolist()
            if len(neighbors) > self.params.m:
                problems.append(f"node {node} layer {layer}: degree {len(neighbors)}")
            if len(set(neighbors)) != len(neighbors):
                problems.append(f"node {node} layer {layer}: duplicate links")
            if node in neighbors:
                problems.append(f"node {node} layer {layer}: self link")
            for n in neighbors:
                if self._levels[n] < layer:
                    problems.append(f"node {node} layer {layer}: link to low node {n}")
                elif node not in self._links[n][layer]:
                    problems.append(f"edge {node}->{n} layer {layer}: not bidirectional")
                if self._links[n][layer].size > self.params.m:
                    problems.append(f"node {n} layer {layer}: degree overflow")
        return problems

    def check_integrity(self, reachability: bool = True) -> list[str]:
        """Full-graph invariants; returns a list of violations (empty = healthy)."""
        problems: list[str] = []
        for node in range(self._count):
            problems.extend(self.check_node(node))
        if reachability and self._count:
            for layer in range(self._max_level + 1):
                members = {n for n in range(self._count) if self._levels[n] >= layer}
                if self._levels[self._entry] < layer:
                    problems.append(f"layer {layer}: entry point absent")
                    continue
                seen = {self._entry}
                frontier = [self._entry]
                while frontier:
                    nxt = []
                    for node in frontier:
                        for n in self._links[node][layer].tolist():
                            if n not in seen:
                                seen.add(n)
                                nxt.append(n)
                    frontier = nxt
                missing = members - seen
                if missing:
                    problems.append(f"layer {layer}: {len(missing)} unreachable nodes")
        return problems

    # -- persistence -------------------------------------------------------

    def save(self, path: str | Path) -> None:
        edges = [
            (layer, node, neighbor)
            for node in range(self._count)
            for layer, neighbors in enumerate(self._links[node])
            for neighbor in neighbors.tolist()
        ]
        header = {
            "kind": "latent-index",
            "m": self.params.m,
            "ef_construction": self.params.ef_construction,
            "ef_search": self.params.ef_search,
            "seed": self.params.seed,
            "entry": self._entry,
            "max_level": self._max_level,
            "count": self._count,
        }
        tensors = {
            "vectors": self._matrix[: self._count].astype(np.float32),
            "levels": np.asarray(self._levels, dtype=np.int32),
            "edges": np.asarray(edges, dtype=np.int32).reshape(-1, 3),
            "keys": np.frombuffer(
                json.dumps(self._keys).encode("utf-8"), dtype=np.uint8
            ).copy(),
        }
        write_container(path, header, tensors)

    @classmethod
    def load(cls, path: str | Path) -> "LatentIndex":
        header, tensors = read_container(path)
        if header.get("kind") != "latent-index":
            raise VersionMismatchError(f"{path}: not an index file")
        params = HnswParams(
            m=header["m"],
            ef_construction=header["ef_construction"],
            ef_search=header["ef_search"],
            seed=header["seed"],
        )
        index = cls(params)
        count = header["count"]
        index._count = count
        index._matrix = tensors["vectors"].astype(np.float64)
        index._levels = [int(x) for x in tensors["levels"]]
        index._keys = json.loads(bytes(tensors["keys"]).decode("utf-8"))
        index._key_to_node = {k: i for i, k in enumerate(index._keys)}
        nested: list[list[list[int]]] = [
            [[] for _ in range(level + 1)] for level in index._levels
        ]
        for layer, node, neighbor in tensors["edges"]:
            nested[int(node)][int(layer)].append(int(neighbor))
        index._links = [
            [np.asarray(lst, dtype=np.int64) for lst in per_node] for per_node in nested
        ]
        index._visit_stamp = np.zeros(max(count, 64), dtype=np.int64)
        index._entry = header["entry"]
        index._max_level = header["max_level"]
        return index


def build_index(
    keys: Sequence[str],
    encoder_params: EncoderParams,
    params: HnswParams = HnswParams(),
    domain: CharDomain = DOMAIN,
) -> LatentIndex:
    """Embed every profane key (infer mode) and insert it; keys sorted first
    so the graph is independent of vocabulary file order."""
    index = LatentIndex(params)
    ordered = sorted(dict.fromkeys(keys))
    if not ordered:
        return index
    seqs = [domain.encode_token(k) for k in ordered]
    vectors = forward(seqs, encoder_params, "infer")
    for key, vector in zip(ordered, vectors):
        index.insert(key, vector)
    return index


def match_token(
    token: str,
    encoder_params: EncoderParams,
    index: LatentIndex,
    threshold: float,
    domain: CharDomain = DOMAIN,
) -> tuple[str, float] | None:
    """Embed one token and return its nearest profane key iff sim >= threshold."""
    vector = forward([domain.encode_token(token)], encoder_params, "infer")[0]
    hits = index.search(vector, k=1)
    if hits and hits[0][1] >= threshold:
        return hits[0]
    return None
