"""Epipolar graph: storage, triplets, connectivity and text I/O.

Relative rotations follow ``R_j = R_ij @ R_i``; an edge is stored once with
``i < j`` and the reverse direction is the exact quaternion conjugate.

File formats (UTF-8, one record per line, ``#`` starts a comment)::

    e <i> <j> <qw> <qx> <qy> <qz>     relative rotation R_ij
    v <i> <qw> <qx> <qy> <qz>         absolute rotation R_i
    o <i> <j> <0|1>                   outlier label of edge (i, j)
"""
from __future__ import annotations

import io
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, TextIO

import numpy as np

from .errors import DuplicateEdge, NonUnitQuaternion, ParseError
from .so3 import UnitRotation, qconj, qnormalize

Registration = dict[int, UnitRotation]
Edge = tuple[int, int]

_NORM_TOL = 1e-3


@dataclass(frozen=True)
class RelativeMeasurement:
    i: int
    j: int
    rot: UnitRotation


class EpipolarGraph:
    """Undirected simple graph whose edges carry relative rotations.

    ``edges`` is an ``(E, 2)`` array sorted lexicographically with ``i < j``;
    ``quats[k]`` is ``R_ij`` for ``edges[k]``.  Per-vertex arrays ``neighbors[p]``
    (sorted) and ``rel_into[p]`` (``R_np`` for each neighbour ``n``) back the
    vectorised reward computations.
    """

    def __init__(self, n_vertices: int, edges, quats):
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        quats = np.asarray(quats, dtype=float).reshape(-1, 4)
        if len(edges) != len(quats):
            raise ValueError("edges and quats differ in length")
        if len(edges) and (edges.min() < 0 or edges.max() >= n_vertices):
            raise ValueError("vertex index out of range")
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("self-loop")
        swap = edges[:, 0] > edges[:, 1]
        edges = np.where(swap[:, None], edges[:, ::-1], edges)
        quats = np.where(swap[:, None], qconj(quats), quats)
        order = np.lexsort((edges[:, 1], edges[:, 0]))
        self.n_vertices = int(n_vertices)
        self.edges = edges[order]
        self.quats = qnormalize(quats[order])
        self.edges.setflags(write=False)
        self.quats.setflags(write=False)

        self._index: dict[Edge, int] = {}
        for k, (i, j) in enumerate(self.edges.tolist()):
            if (i, j) in self._index:
                raise DuplicateEdge(f"edge ({i}, {j}) listed twice")
            self._index[(i, j)] = k

        nbrs: list[list[int]] = [[] for _ in range(self.n_vertices)]
        eids: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for k, (i, j) in enumerate(self.edges.tolist()):
            nbrs[i].append(j)
            eids[i].append(k)
            nbrs[j].append(i)
            eids[j].append(k)
        self.neighbors: list[np.ndarray] = []
        self.incident: list[np.ndarray] = []
        self.rel_into: list[np.ndarray] = []
        conj = qconj(self.quats)
        for p in range(self.n_vertices):
            nb = np.asarray(nbrs[p], dtype=np.int64)
            ek = np.asarray(eids[p], dtype=np.int64)
            o = np.argsort(nb, kind="stable")
            nb, ek = nb[o], ek[o]
            # R_np: stored quat when n < p, else the conjugate of R_pn
            rel = np.where((nb < p)[:, None], self.quats[ek], conj[ek]) if len(nb) else np.zeros((0, 4))
            self.neighbors.append(nb)
            self.incident.append(ek)
            self.rel_into.append(rel)
        self._nbr_sets = [set(nb.tolist()) for nb in self.neighbors]

    # -- basic queries -----------------------------------------------------

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def degree(self, v: int) -> int:
        return len(self.neighbors[v])

    def has_edge(self, i: int, j: int) -> bool:
        return (min(i, j), max(i, j)) in self._index

    def edge_index(self, i: int, j: int) -> int:
        return self._index[(min(i, j), max(i, j))]

    def rel_quat(self, i: int, j: int) -> np.ndarray:
        """Quaternion of ``R_ij`` (inverse of the stored edge when ``i > j``)."""
        if i < j:
            return self.quats[self._index[(i, j)]]
        return qconj(self.quats[self._index[(j, i)]])

    def measurement(self, i: int, j: int) -> UnitRotation:
        return UnitRotation._trusted(self.rel_quat(i, j))

    def measurements(self) -> Iterable[RelativeMeasurement]:
        for (i, j), q in zip(self.edges.tolist(), self.quats):
            yield RelativeMeasurement(i, j, UnitRotation._trusted(q))

    def adjacent(self, v: int) -> set[int]:
        return self._nbr_sets[v]

    def active_vertices(self) -> list[int]:
        return [v for v in range(self.n_vertices) if len(self.neighbors[v])]

    def subgraph(self, vertices: Iterable[int]) -> "EpipolarGraph":
        """Induced subgraph keeping the original vertex ids."""
        mask = np.zeros(self.n_vertices, dtype=bool)
        mask[list(vertices)] = True
        keep = mask[self.edges[:, 0]] & mask[self.edges[:, 1]]
        return EpipolarGraph(self.n_vertices, self.edges[keep], self.quats[keep])

    def __eq__(self, other) -> bool:
        if not isinstance(other, EpipolarGraph):
            return NotImplemented
        return (
            self.n_vertices == other.n_vertices
            and np.array_equal(self.edges, other.edges)
            and np.array_equal(self.quats, other.quats)
        )

    def __repr__(self) -> str:
        return f"EpipolarGraph(|V|={self.n_vertices}, |E|={self.n_edges})"


# ---------------------------------------------------------------------------
# triplets and connectivity

def triplet_array(g: EpipolarGraph) -> np.ndarray:
    """All 3-cliques ``(i, j, k)`` with ``i < j < k``, lexicographic order."""
    out = []
    for i, j in g.edges.tolist():
        ni = g.neighbors[i]
        nj = g.neighbors[j]
        common = np.intersect1d(ni[ni > j], nj[nj > j], assume_unique=True)
        if len(common):
            block = np.empty((len(common), 3), dtype=np.int64)
            block[:, 0] = i
            block[:, 1] = j
            block[:, 2] = common
            out.append(block)
    if not out:
        return np.zeros((0, 3), dtype=np.int64)
    return np.concatenate(out)


def enumerate_triplets(g: EpipolarGraph) -> list[tuple[int, int, int]]:
    return [tuple(t) for t in triplet_array(g).tolist()]


def connected_components(g: EpipolarGraph, vertices: Iterable[int] | None = None) -> list[list[int]]:
    """Components (sorted lists) ordered by size descending, then lowest vertex."""
    if vertices is None:
        allowed = None
        todo = range(g.n_vertices)
    else:
        todo = sorted(set(vertices))
        allowed = set(todo)
    seen: set[int] = set()
    comps = []
    for s in todo:
        if s in seen:
            continue
        seen.add(s)
        stack = [s]
        comp = []
        while stack:
            v = stack.pop()
            comp.append(v)
            for u in g.neighbors[v].tolist():
                if u not in seen and (allowed is None or u in allowed):
                    seen.add(u)
                    stack.append(u)
        comps.append(sorted(comp))
    comps.sort(key=lambda c: (-len(c), c[0]))
    return comps


def largest_component(g: EpipolarGraph) -> list[int]:
    comps = connected_components(g)
    return comps[0] if comps else []


def is_connected(g: EpipolarGraph, vertices: Iterable[int]) -> bool:
    vs = list(vertices)
    if not vs:
        return False
    return len(connected_components(g, vs)) == 1


# ---------------------------------------------------------------------------
# text I/O

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _parse_quat(fields: list[str], lineno: int) -> np.ndarray:
    try:
        q = np.array([float(f) for f in fields])
    except ValueError as exc:
        raise ParseError(f"bad number: {exc}", lineno) from None
    if not np.all(np.isfinite(q)):
        raise ParseError("non-finite quaternion", lineno)
    n = float(np.linalg.norm(q))
    if abs(n - 1.0) > _NORM_TOL:
        raise NonUnitQuaternion(f"quaternion norm {n:.6g} too far from 1", lineno)
    return qnormalize(q)


def _parse_int(s: str, lineno: int) -> int:
    try:
        v = int(s)
    except ValueError:
        raise ParseError(f"bad vertex id {s!r}", lineno) from None
    if v < 0:
        raise ParseError(f"negative vertex id {v}", lineno)
    return v


def _records(source: TextIO | str | Path):
    if isinstance(source, (str, Path)):
        with open(source, encoding="utf-8") as fh:
            yield from _records(fh)
        return
    for lineno, raw in enumerate(source, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        yield lineno, line.split()


def load_graph(source: TextIO | str | Path, n_vertices: int | None = None) -> EpipolarGraph:
    """Parse an EG file.  ``n_vertices`` defaults to ``max id + 1``."""
    pairs: list[Edge] = []
    quats = []
    seen: set[Edge] = set()
    for lineno, f in _records(source):
        if f[0] != "e" or len(f) != 7:
            raise ParseError(f"expected 'e i j qw qx qy qz', got {' '.join(f)!r}", lineno)
        i, j = _parse_int(f[1], lineno), _parse_int(f[2], lineno)
        if i == j:
            raise ParseError("self-loop", lineno)
        q = _parse_quat(f[3:], lineno)
        key = (min(i, j), max(i, j))
        if key in seen:
            raise DuplicateEdge(f"edge {key} listed twice", lineno)
        seen.add(key)
        pairs.append((i, j))
        quats.append(q)
    top = max((max(p) for p in pairs), default=-1) + 1
    if n_vertices is None:
        n_vertices = top
    elif n_vertices < top:
        raise ParseError(f"vertex id {top - 1} exceeds n_vertices={n_vertices}")
    return EpipolarGraph(n_vertices, np.array(pairs).reshape(-1, 2), np.array(quats).reshape(-1, 4))


def save_graph(g: EpipolarGraph, dest: TextIO | str | Path) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8") as fh:
            save_graph(g, fh)
        return
    for (i, j), q in zip(g.edges.tolist(), g.quats):
        dest.write(f"e {i} {j} {' '.join(_fmt(x) for x in q)}\n")


def load_rotations(source: TextIO | str | Path) -> Registration:
    out: Registration = {}
    for lineno, f in _records(source):
        if f[0] != "v" or len(f) != 6:
            raise ParseError(f"expected 'v i qw qx qy qz', got {' '.join(f)!r}", lineno)
        i = _parse_int(f[1], lineno)
        if i in out:
            raise ParseError(f"vertex {i} listed twice", lineno)
        out[i] = UnitRotation._trusted(_parse_quat(f[2:], lineno))
    return out


def save_rotations(rots: Registration, dest: TextIO | str | Path) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8") as fh:
            save_rotations(rots, fh)
        return
    for i in sorted(rots):
        dest.write(f"v {i} {' '.join(_fmt(x) for x in rots[i].q)}\n")


def load_labels(source: TextIO | str | Path) -> dict[Edge, bool]:
    out: dict[Edge, bool] = {}
    for lineno, f in _records(source):
        if f[0] != "o" or len(f) != 4 or f[3] not in ("0", "1"):
            raise ParseError(f"expected 'o i j 0|1', got {' '.join(f)!r}", lineno)
        i, j = _parse_int(f[1], lineno), _parse_int(f[2], lineno)
        out[(min(i, j), max(i, j))] = f[3] == "1"
    return out


def save_labels(labels: dict[Edge, bool], dest: TextIO | str | Path) -> None:
    if isinstance(dest, (str, Path)):
        with open(dest, "w", encoding="utf-8") as fh:
            save_labels(labels, fh)
        return
    for (i, j) in sorted(labels):
        dest.write(f"o {i} {j} {int(bool(labels[(i, j)]))}\n")


def graph_from_text(text: str) -> EpipolarGraph:
    return load_graph(io.StringIO(text))
