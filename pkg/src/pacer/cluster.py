"""Group objects so members can be padded to a shared ceiling.

Objects are size sequences: one size for a document, one per segment for a
video. A cluster's ceiling is the element-wise maximum over its members,
and every member is padded up to it. Larger clusters hide more, smaller
ceilings waste less; the greedy algorithms trade the two off under a floor
on cluster size.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, NamedTuple, Sequence

import numpy as np

from .core import FormatError

_REL_TOL = 1e-9


@dataclass(frozen=True)
class CorpusObject:
    id: str
    segments: tuple[int, ...]

    def __post_init__(self) -> None:
        if not self.segments:
            raise ValueError(f"object {self.id!r} has no segments")
        if any(s <= 0 for s in self.segments):
            raise ValueError(f"object {self.id!r} has a non-positive size")

    @property
    def length(self) -> int:
        return len(self.segments)

    @property
    def smax(self) -> int:
        return max(self.segments)


class Cluster(NamedTuple):
    members: tuple[str, ...]
    ceiling: tuple[int, ...]


class Round(NamedTuple):
    """One greedy choice: the dominating candidate and the members it took."""
    length: int
    size: int
    members: tuple[str, ...]


@dataclass
class Clustering:
    clusters: list[Cluster]
    c_min: int
    merged: bool = False
    rounds: list[Round] = field(default_factory=list)

    def sizes(self) -> list[int]:
        return [len(c.members) for c in self.clusters]

    def assignment(self) -> dict[str, int]:
        return {m: i for i, c in enumerate(self.clusters) for m in c.members}

    def to_jsonl(self) -> str:
        return "".join(
            json.dumps({"cluster_index": i, "member_ids": list(c.members), "ceiling": list(c.ceiling)}) + "\n"
            for i, c in enumerate(self.clusters)
        )


def documents(sizes: Iterable[int], ids: Iterable[str] | None = None) -> list[CorpusObject]:
    sizes = list(sizes)
    ids = [str(i) for i in range(len(sizes))] if ids is None else list(ids)
    return [CorpusObject(i, (int(s),)) for i, s in zip(ids, sizes)]


def _as_corpus(objs) -> list[CorpusObject]:
    objs = list(objs)
    if objs and not isinstance(objs[0], CorpusObject):
        return documents(objs)
    return objs


def ceiling_of(members: Sequence[CorpusObject]) -> tuple[int, ...]:
    out = [0] * max(m.length for m in members)
    for m in members:
        for k, s in enumerate(m.segments):
            if s > out[k]:
                out[k] = s
    return tuple(out)


def relative_overhead(obj: CorpusObject, ceiling: Sequence[int]) -> Fraction:
    """Sum of (ceiling_k - size_k) / size_k over the object's own segments."""
    return sum((Fraction(ceiling[k] - s, s) for k, s in enumerate(obj.segments)), Fraction(0))


def average_overhead(members: Sequence[CorpusObject]) -> Fraction:
    ceil = ceiling_of(members)
    return sum((relative_overhead(m, ceil) for m in members), Fraction(0)) / len(members)


def _finish(chosen: list[list[CorpusObject]], rest: list[CorpusObject], c: int,
            rounds: list[Round]) -> Clustering:
    merged = False
    if rest:
        if chosen:
            chosen[-1] = chosen[-1] + rest
            merged = True
        else:
            chosen.append(rest)
    clusters = [Cluster(tuple(m.id for m in grp), ceiling_of(grp)) for grp in chosen]
    return Clustering(clusters, c, merged, rounds)


def _pick(cands: list[tuple[float, int, tuple[int, int], object]], exact) -> tuple:
    # floats rank the candidates; near-ties are settled with exact arithmetic
    best = min(c[0] for c in cands)
    close = [c for c in cands if c[0] <= best + _REL_TOL * max(1.0, abs(best))]
    if len(close) > 1:
        close = [(exact(c[3]),) + c[1:] for c in close]
    return min(close, key=lambda c: (c[0], -c[1], c[2]))


def cluster_videos(corpus: Sequence[CorpusObject], c: int) -> Clustering:
    """Greedy domination clustering over (length, max segment size) candidates.

    Each round takes, among candidates whose dominated set of unclustered
    objects has at least ``c`` members, the set with the lowest average
    relative overhead. A remainder smaller than ``c`` joins the last cluster.
    """
    if c < 1:
        raise ValueError("c must be >= 1")
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    lmax = max(o.length for o in corpus)
    sizes = np.zeros((len(corpus), lmax))
    for i, o in enumerate(corpus):
        sizes[i, : o.length] = o.segments
    lengths = np.array([o.length for o in corpus])
    smax = sizes.max(axis=1)
    valid = np.arange(lmax) < lengths[:, None]
    inv = np.where(valid, 1.0 / np.where(valid, sizes, 1.0), 0.0)

    left = np.ones(len(corpus), dtype=bool)
    chosen: list[list[CorpusObject]] = []
    rounds: list[Round] = []
    while left.sum() >= c:
        idx = np.flatnonzero(left)
        seen: dict[bytes, tuple] = {}
        for ln in np.unique(lengths[idx]):
            for sz in np.unique(smax[idx]):
                mask = left & (lengths <= ln) & (smax <= sz)
                n = int(mask.sum())
                if n < c:
                    continue
                key = mask.tobytes()
                if key in seen:
                    continue  # candidates come in ascending order, so the first one is the smallest
                cand = (int(ln), int(sz))
                ceil = sizes[mask].max(axis=0)
                avg = float(((inv[mask] * ceil).sum(axis=1) - lengths[mask]).mean())
                seen[key] = (avg, n, cand, mask)
        avg, n, (ln, sz), mask = _pick(list(seen.values()),
                                       lambda m: average_overhead([corpus[i] for i in np.flatnonzero(m)]))
        members = [corpus[i] for i in np.flatnonzero(mask)]
        chosen.append(members)
        rounds.append(Round(ln, sz, tuple(m.id for m in members)))
        left &= ~mask
    return _finish(chosen, [corpus[i] for i in np.flatnonzero(left)], c, rounds)


def cluster_documents(sizes, c: int, ids: Iterable[str] | None = None) -> Clustering:
    """The single-size case; candidate sets are prefixes of the sorted remainder."""
    if c < 1:
        raise ValueError("c must be >= 1")
    corpus = _as_corpus(sizes) if ids is None else documents(sizes, ids)
    if not corpus:
        raise ValueError("empty corpus")
    if any(o.length != 1 for o in corpus):
        raise ValueError("documents have exactly one size")
    rest = sorted(corpus, key=lambda o: (o.segments[0], o.id))
    chosen: list[list[CorpusObject]] = []
    rounds: list[Round] = []
    while len(rest) >= c:
        vals = np.array([o.segments[0] for o in rest], dtype=float)
        inv_sum = np.cumsum(1.0 / vals)
        # a candidate size takes every remaining document up to and including its last copy
        ends = np.flatnonzero(np.append(vals[1:] != vals[:-1], True)) + 1
        cands = []
        for end in ends:
            if end < c:
                continue
            s = vals[end - 1]
            cands.append((float(s * inv_sum[end - 1] / end - 1.0), int(end), (1, int(s)), int(end)))
        _, end, (_, s), _ = _pick(cands, lambda e: average_overhead(rest[:e]))
        chosen.append(rest[:end])
        rounds.append(Round(1, s, tuple(o.id for o in rest[:end])))
        rest = rest[end:]
    return _finish(chosen, rest, c, rounds)


def _group_by_ceiling(corpus: list[CorpusObject], ceilings: list[tuple[int, ...]]) -> Clustering:
    groups: dict[tuple[int, ...], list[str]] = {}
    for o, ceil in zip(corpus, ceilings):
        groups.setdefault(ceil, []).append(o.id)
    clusters = [Cluster(tuple(ids), ceil) for ceil, ids in sorted(groups.items())]
    return Clustering(clusters, 1)


def pow2_ceiling(sizes) -> np.ndarray:
    """Smallest power of two at or above each size (exact below 2**53)."""
    x = np.asarray(sizes, dtype=np.float64)
    if np.any(x <= 0):
        raise ValueError("sizes must be positive")
    mant, exp = np.frexp(x)
    return np.where(mant == 0.5, x, np.ldexp(1.0, exp)).astype(np.int64)


def multiple_ceiling(sizes, step: int) -> np.ndarray:
    if step < 1:
        raise ValueError("L must be >= 1")
    x = np.asarray(sizes, dtype=np.int64)
    if np.any(x <= 0):
        raise ValueError("sizes must be positive")
    return -(-x // step) * step


def round_pow2(sizes) -> Clustering:
    corpus = _as_corpus(sizes)
    return _group_by_ceiling(corpus, [tuple(pow2_ceiling(o.segments).tolist()) for o in corpus])


def round_multiple(sizes, step: int) -> Clustering:
    corpus = _as_corpus(sizes)
    return _group_by_ceiling(corpus, [tuple(multiple_ceiling(o.segments, step).tolist()) for o in corpus])


@dataclass(frozen=True)
class OverheadReport:
    c_min: int
    n1: int
    avg_oh: float
    max_oh: float
    c_min_actual: int
    pad_bytes: int = 0
    short_members: int = 0

    CSV_HEADER = "c_min,n1,avg_oh,max_oh,pad_bytes,short_members"

    def csv_row(self) -> str:
        return f"{self.c_min_actual},{self.n1},{self.avg_oh:.6f},{self.max_oh:.6f},{self.pad_bytes},{self.short_members}"


def overhead(clustering: Clustering, corpus, mtu_round: bool = False, mtu: int = 1500) -> OverheadReport:
    """Relative padding overhead per object, averaged and maximized over the corpus.

    A member shorter than its cluster's ceiling sends whole dummy segments
    for the missing positions. Those have no size to divide by, so they add
    to ``pad_bytes`` and ``short_members`` but not to the relative figures.
    """
    corpus = {o.id: o for o in _as_corpus(corpus)}
    seen = [m for cl in clustering.clusters for m in cl.members]
    if sorted(seen) != sorted(corpus):
        raise ValueError("clustering does not partition the corpus")
    per_obj, pad, short = [], 0, 0
    for cl in clustering.clusters:
        ceil = [math.ceil(x / mtu) * mtu for x in cl.ceiling] if mtu_round else list(cl.ceiling)
        for mid in cl.members:
            o = corpus[mid]
            if len(ceil) < o.length or any(ceil[k] < s for k, s in enumerate(o.segments)):
                raise ValueError(f"ceiling of cluster containing {mid!r} does not dominate it")
            per_obj.append(float(relative_overhead(o, ceil)))
            pad += sum(ceil) - sum(o.segments)
            short += len(ceil) > o.length
    sizes = clustering.sizes()
    return OverheadReport(
        c_min=clustering.c_min,
        n1=sum(1 for s in sizes if s == 1),
        avg_oh=float(np.mean(per_obj)),
        max_oh=float(np.max(per_obj)),
        c_min_actual=min(sizes),
        pad_bytes=pad,
        short_members=short,
    )


def parse_corpus(text: str, path: str | None = None) -> list[CorpusObject]:
    out, ids = [], set()
    for lineno, row in enumerate(csv.reader(io.StringIO(text)), 1):
        if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
            continue
        if len(row) < 2:
            raise FormatError("expected id,size1[,size2,...]", lineno, path)
        oid = row[0].strip()
        try:
            sizes = tuple(int(x) for x in row[1:])
            obj = CorpusObject(oid, sizes)
        except ValueError as exc:
            if lineno == 1 and not any(c.isdigit() for c in row[1]):
                continue  # header row
            raise FormatError(str(exc), lineno, path) from None
        if oid in ids:
            raise FormatError(f"duplicate id {oid!r}", lineno, path)
        ids.add(oid)
        out.append(obj)
    return out


def load_corpus(path: str | Path) -> list[CorpusObject]:
    return parse_corpus(Path(path).read_text(), str(path))
