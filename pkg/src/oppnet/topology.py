"""Network graphs: k-NN generation, perturbation, GraphML ingestion, and the
distance-based channel success-probability matrix.

Graphs are stored as directed edge pairs but kept symmetric (if i->j exists so
does j->i), so the channel matrix doubles as a graph shift operator with
consistent connectivity in both directions.
"""
from __future__ import annotations

import json
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, GraphmlParseError, IngestError, ParameterError

DEFAULT_CAPACITY = 100.0
DEFAULT_CUTOFF = 1.0


def _edge_tuple(edges) -> tuple[tuple[int, int], ...]:
    return tuple(sorted({(int(i), int(j)) for i, j in edges}))


@dataclass(frozen=True)
class Topology:
    """A communication graph: node positions, directed edges, per-node capacity."""

    positions: np.ndarray                      # (n, 2)
    edges: tuple[tuple[int, int], ...]         # directed (i, j), deduped + sorted
    capacity: np.ndarray                       # (n,) packets per step
    name: str = ""
    knn_k: int | None = None                   # neighbor count used to build edges
    labels: tuple[str, ...] | None = None      # original node names, if ingested

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64)
        cap = np.asarray(self.capacity, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 2:
            raise ContractError(f"positions must be (n, 2), got {pos.shape}")
        n = pos.shape[0]
        if cap.shape != (n,):
            raise ContractError(f"capacity must be ({n},), got {cap.shape}")
        if np.any(cap < 0):
            raise ContractError("capacity must be non-negative")
        edges = _edge_tuple(self.edges)
        for i, j in edges:
            if i == j:
                raise ContractError(f"self-loop edge ({i}, {j})")
            if not (0 <= i < n and 0 <= j < n):
                raise ContractError(f"edge ({i}, {j}) references an unknown node")
        pos.flags.writeable = False
        cap.flags.writeable = False
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "capacity", cap)
        object.__setattr__(self, "edges", edges)

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    @property
    def nodes(self) -> tuple[int, ...]:
        return tuple(range(self.n))

    def adjacency(self) -> np.ndarray:
        """Boolean (n, n) matrix; entry [i, j] true when (i, j) is an edge."""
        adj = np.zeros((self.n, self.n), dtype=bool)
        for i, j in self.edges:
            adj[i, j] = True
        return adj

    def to_json(self) -> str:
        doc = {
            "name": self.name,
            "positions": self.positions.tolist(),
            "edges": [list(e) for e in self.edges],
            "capacity": self.capacity.tolist(),
            "knn_k": self.knn_k,
            "labels": list(self.labels) if self.labels is not None else None,
        }
        return json.dumps(doc, indent=2)


def topology_from_json(text: str) -> Topology:
    doc = json.loads(text)
    return Topology(
        positions=np.asarray(doc["positions"], dtype=np.float64),
        edges=[tuple(e) for e in doc["edges"]],
        capacity=np.asarray(doc["capacity"], dtype=np.float64),
        name=doc.get("name", ""),
        knn_k=doc.get("knn_k"),
        labels=tuple(doc["labels"]) if doc.get("labels") else None,
    )


@dataclass(frozen=True)
class ChannelMatrix:
    """Per-link packet delivery probabilities; also used as the graph shift operator."""

    probs: np.ndarray  # (n, n) in [0, 1]; [i, j] = prob node i decodes node j

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ContractError(f"probs must be square, got {p.shape}")
        if np.any(p < 0) or np.any(p > 1):
            raise ContractError("channel probabilities must lie in [0, 1]")
        if np.any(np.diag(p) != 0):
            raise ContractError("channel diagonal must be zero")
        p.flags.writeable = False
        object.__setattr__(self, "probs", p)

    @property
    def n(self) -> int:
        return self.probs.shape[0]

    @property
    def support(self) -> np.ndarray:
        """Boolean mask of links with strictly positive delivery probability."""
        return self.probs > 0


@dataclass(frozen=True)
class FlowSpec:
    """Packet flows: one destination node per flow and per-node mean arrival rates."""

    destination: tuple[int, ...]   # per-flow destination node
    arrival_mean: np.ndarray       # (n, F) mean packets per step

    def __post_init__(self):
        mean = np.asarray(self.arrival_mean, dtype=np.float64)
        if mean.ndim != 2:
            raise ContractError(f"arrival_mean must be (n, F), got {mean.shape}")
        n, num_flows = mean.shape
        dest = tuple(int(d) for d in self.destination)
        if len(dest) != num_flows:
            raise ContractError(
                f"{len(dest)} destinations for {num_flows} flows")
        for k, d in enumerate(dest):
            if not (0 <= d < n):
                raise ContractError(f"flow {k} destination {d} is not a node")
            if mean[d, k] != 0:
                raise ContractError(
                    f"flow {k} destination {d} must have zero arrival mean")
        if np.any(mean < 0) or not np.all(np.isfinite(mean)):
            raise ContractError("arrival means must be finite and non-negative")
        mean.flags.writeable = False
        object.__setattr__(self, "arrival_mean", mean)
        object.__setattr__(self, "destination", dest)

    @property
    def n(self) -> int:
        return self.arrival_mean.shape[0]

    @property
    def num_flows(self) -> int:
        return self.arrival_mean.shape[1]

    @property
    def flows(self) -> tuple[int, ...]:
        return tuple(range(self.num_flows))

    def destination_mask(self) -> np.ndarray:
        """Boolean (n, F); true at each flow's destination row."""
        mask = np.zeros((self.n, self.num_flows), dtype=bool)
        for k, d in enumerate(self.destination):
            mask[d, k] = True
        return mask


@dataclass(frozen=True)
class BudgetSplit:
    """Arrival-mean sampler: each node draws a total traffic budget uniformly
    from [low, high] and splits it unevenly across flows.

    The split weights are (offset + U(0,1))^skew normalized per node; larger
    skew concentrates more of a node's budget on a few flows, which is what
    separates adaptive schedulers from rigid equal splits while keeping the
    per-node total bounded.
    """

    low: float
    high: float
    skew: float = 2.0
    offset: float = 0.15

    def __post_init__(self):
        if self.low < 0 or self.high < self.low:
            raise ParameterError(f"invalid budget range [{self.low}, {self.high}]")
        if self.skew < 0 or self.offset < 0:
            raise ParameterError("skew and offset must be non-negative")

    def sample(self, rng: np.random.Generator, n: int, num_flows: int) -> np.ndarray:
        budget = rng.uniform(self.low, self.high, size=n)
        weights = (self.offset + rng.random((n, num_flows))) ** self.skew
        weights /= weights.sum(axis=1, keepdims=True)
        return budget[:, None] * weights


ArrivalMeans = "float | tuple[float, float] | BudgetSplit"


def uniform_flows(topo: Topology, num_flows: int,
                  mean: float | tuple[float, float] | BudgetSplit,
                  seed: int | np.random.Generator = 0,
                  destinations: list[int] | None = None) -> FlowSpec:
    """Flows with configured arrival means, zero at each flow's destination.

    ``mean`` is a shared scalar, a (low, high) range drawn uniformly per
    node/flow entry, or a BudgetSplit (per-node budgets split unevenly across
    flows). Destinations default to distinct random nodes (sampled without
    replacement when num_flows <= n).
    """
    if num_flows < 1:
        raise ParameterError("num_flows must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if destinations is None:
        replace = num_flows > topo.n
        destinations = rng.choice(topo.n, size=num_flows, replace=replace).tolist()
    if isinstance(mean, BudgetSplit):
        arrival = mean.sample(rng, topo.n, num_flows)
    elif isinstance(mean, tuple):
        low, high = mean
        if low < 0 or high < low:
            raise ParameterError(f"invalid arrival-mean range {mean}")
        arrival = rng.uniform(low, high, size=(topo.n, num_flows))
    else:
        if mean < 0:
            raise ParameterError("mean must be non-negative")
        arrival = np.full((topo.n, num_flows), float(mean))
    for k, d in enumerate(destinations):
        arrival[d, k] = 0.0
    return FlowSpec(destination=tuple(destinations), arrival_mean=arrival)


def _knn_edges(positions: np.ndarray, k: int) -> tuple[tuple[int, int], ...]:
    """Directed edges to each node's k nearest neighbors, then symmetrized.

    Ties are broken by node id (stable argsort) so the edge set is a pure
    function of the positions.
    """
    n = positions.shape[0]
    if k == 0:
        return ()
    diff = positions[:, None, :] - positions[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")
    edges = set()
    for i in range(n):
        for j in order[i, :k]:
            edges.add((i, int(j)))
            edges.add((int(j), i))
    return _edge_tuple(edges)


def generate_knn(n: int, k: int, seed: int,
                 capacity: float = DEFAULT_CAPACITY, name: str = "") -> Topology:
    """Random geometric graph: n points uniform in the unit circle, k-NN edges.

    The directed k-NN edge set is symmetrized so the resulting channel matrix
    has matching support in both directions.
    """
    if n < 1:
        raise ParameterError(f"n must be >= 1, got {n}")
    if not (0 <= k < n):
        raise ParameterError(f"k must satisfy 0 <= k < n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    radius = np.sqrt(rng.random(n))
    angle = rng.random(n) * 2.0 * math.pi
    positions = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    edges = _knn_edges(positions, k)
    return Topology(
        positions=positions,
        edges=edges,
        capacity=np.full(n, float(capacity)),
        name=name or f"knn-n{n}-k{k}-s{seed}",
        knn_k=k,
    )


def channel_from_distance(topo: Topology, d_c: float = DEFAULT_CUTOFF) -> ChannelMatrix:
    """Delivery probability 1 - d/d_c on edges, clipped at zero beyond the cutoff."""
    if d_c <= 0:
        raise ParameterError(f"cutoff distance must be positive, got {d_c}")
    diff = topo.positions[:, None, :] - topo.positions[None, :, :]
    dist = np.sqrt((diff ** 2).sum(axis=2))
    probs = np.clip(1.0 - dist / d_c, 0.0, 1.0)
    probs = np.where(topo.adjacency(), probs, 0.0)
    np.fill_diagonal(probs, 0.0)
    return ChannelMatrix(probs=probs)


def perturb(topo: Topology, fraction: float, magnitude: float, seed: int) -> Topology:
    """Displace ceil(fraction * n) random nodes and rebuild the k-NN edge set.

    Each chosen node moves by magnitude times its distance from the origin, in
    a uniformly random direction. Requires a topology built with a known k.
    """
    if not (0.0 <= fraction <= 1.0):
        raise ParameterError(f"fraction must lie in [0, 1], got {fraction}")
    if magnitude < 0:
        raise ParameterError(f"magnitude must be non-negative, got {magnitude}")
    if topo.knn_k is None:
        raise ParameterError("perturb requires a topology with a recorded k-NN k")
    rng = np.random.default_rng(seed)
    n = topo.n
    count = math.ceil(fraction * n)
    positions = topo.positions.copy()
    if count > 0:
        chosen = rng.choice(n, size=count, replace=False)
        radial = np.sqrt((positions[chosen] ** 2).sum(axis=1))
        angle = rng.random(count) * 2.0 * math.pi
        positions[chosen, 0] += magnitude * radial * np.cos(angle)
        positions[chosen, 1] += magnitude * radial * np.sin(angle)
    return Topology(
        positions=positions,
        edges=_knn_edges(positions, topo.knn_k),
        capacity=topo.capacity.copy(),
        name=topo.name,
        knn_k=topo.knn_k,
        labels=topo.labels,
    )


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


_COORD_X = ("longitude", "x")
_COORD_Y = ("latitude", "y")


def load_graphml(path: str | Path, d_c: float = DEFAULT_CUTOFF,
                 capacity: float = DEFAULT_CAPACITY) -> tuple[Topology, ChannelMatrix]:
    """Read a GraphML file with node coordinates into a Topology and channel matrix.

    Coordinates (latitude/longitude or x/y attributes) are min-max normalized
    into the unit square before distances are measured, so the cutoff distance
    keeps the same meaning as for synthetic graphs. Edges are deduped and
    symmetrized; self-loops are dropped.
    """
    path = Path(path)
    try:
        tree = ET.parse(path)
    except ET.ParseError as exc:
        line = exc.position[0] if exc.position else None
        raise GraphmlParseError(
            f"{path.name}: malformed XML at line {line}: {exc}", line=line) from exc
    root = tree.getroot()

    key_names: dict[str, str] = {}
    for el in root.iter():
        if _local(el.tag) == "key" and "id" in el.attrib:
            key_names[el.attrib["id"]] = el.attrib.get("attr.name", "").strip().lower()

    graph_el = None
    for el in root.iter():
        if _local(el.tag) == "graph":
            graph_el = el
            break
    if graph_el is None:
        raise IngestError(f"{path.name}: no <graph> element")

    node_ids: list[str] = []
    coords: dict[str, dict[str, float]] = {}
    raw_edges: list[tuple[str, str]] = []
    for el in graph_el:
        tag = _local(el.tag)
        if tag == "node":
            nid = el.attrib["id"]
            node_ids.append(nid)
            values: dict[str, float] = {}
            for data in el:
                if _local(data.tag) != "data":
                    continue
                name = key_names.get(data.attrib.get("key", ""), "")
                if name in _COORD_X + _COORD_Y and data.text is not None:
                    try:
                        values[name] = float(data.text)
                    except ValueError:
                        raise IngestError(
                            f"{path.name}: node '{nid}' has a non-numeric "
                            f"{name} value: {data.text!r}")
            coords[nid] = values
        elif tag == "edge":
            raw_edges.append((el.attrib["source"], el.attrib["target"]))

    if not node_ids:
        raise IngestError(f"{path.name}: no <node> elements")

    index = {nid: i for i, nid in enumerate(node_ids)}
    positions = np.zeros((len(node_ids), 2))
    for nid in node_ids:
        values = coords[nid]
        x = next((values[name] for name in _COORD_X if name in values), None)
        y = next((values[name] for name in _COORD_Y if name in values), None)
        if x is None or y is None:
            raise IngestError(
                f"{path.name}: node '{nid}' is missing coordinate attributes "
                "(expected latitude/longitude or x/y)")
        positions[index[nid]] = (x, y)

    # Min-max normalize each axis into [0, 1]; a degenerate axis maps to 0.5.
    for axis in range(2):
        lo, hi = positions[:, axis].min(), positions[:, axis].max()
        if hi > lo:
            positions[:, axis] = (positions[:, axis] - lo) / (hi - lo)
        else:
            positions[:, axis] = 0.5

    edges = set()
    for src, dst in raw_edges:
        if src not in index or dst not in index:
            raise IngestError(f"{path.name}: edge ({src}, {dst}) references an unknown node")
        i, j = index[src], index[dst]
        if i == j:
            continue
        edges.add((i, j))
        edges.add((j, i))

    topo = Topology(
        positions=positions,
        edges=_edge_tuple(edges),
        capacity=np.full(len(node_ids), float(capacity)),
        name=graph_el.attrib.get("id", path.stem),
        labels=tuple(node_ids),
    )
    return topo, channel_from_distance(topo, d_c)


def save_graphml(topo: Topology, path: str | Path) -> None:
    """Write a GraphML document with x/y coordinate attributes.

    One undirected edge element is emitted per symmetric pair; load_graphml
    symmetrizes on read, so the round trip preserves the directed edge set.
    """
    path = Path(path)
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        '<graphml xmlns="http://graphml.graphdrawing.org/xmlns">',
        '  <key id="d0" for="node" attr.name="x" attr.type="double"/>',
        '  <key id="d1" for="node" attr.name="y" attr.type="double"/>',
        f'  <graph id="{topo.name or "graph"}" edgedefault="undirected">',
    ]
    labels = topo.labels or tuple(f"n{i}" for i in range(topo.n))
    for i in range(topo.n):
        lines.append(f'    <node id="{labels[i]}">')
        lines.append(f'      <data key="d0">{float(topo.positions[i, 0])!r}</data>')
        lines.append(f'      <data key="d1">{float(topo.positions[i, 1])!r}</data>')
        lines.append("    </node>")
    seen = set()
    for i, j in topo.edges:
        pair = (min(i, j), max(i, j))
        if pair in seen:
            continue
        seen.add(pair)
        lines.append(f'    <edge source="{labels[pair[0]]}" target="{labels[pair[1]]}"/>')
    lines.append("  </graph>")
    lines.append("</graphml>")
    path.write_text("\n".join(lines) + "\n")
