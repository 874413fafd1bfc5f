"""Trajectory and road-network data model, file formats, splitting and synthetic data."""

from __future__ import annotations

import csv
import heapq
import json
import os
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numpy as np

from .geo import haversine, meters_per_degree
from .numerics.rng import SeededRng

CSV_COLUMNS = ("traj_id", "seq", "lng", "lat", "timestamp", "label")


class TrajectoryError(ValueError):
    """A trajectory violates the data-model invariants."""


@dataclass(frozen=True)
class TrajectoryPoint:
    lng: float
    lat: float
    timestamp: float


@dataclass
class Trajectory:
    """Ordered (lng, lat, timestamp) samples of one moving object.

    ``zone`` is generator metadata (destination zone) and is not serialized.
    """

    id: str
    lng: np.ndarray
    lat: np.ndarray
    timestamps: np.ndarray
    label: int | None = None
    zone: int | None = None

    def __post_init__(self):
        self.lng = np.asarray(self.lng, dtype=np.float64)
        self.lat = np.asarray(self.lat, dtype=np.float64)
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        n = len(self.lng)
        if not (len(self.lat) == n == len(self.timestamps)):
            raise TrajectoryError(f"{self.id}: lng/lat/timestamp lengths differ")
        if n < 2:
            raise TrajectoryError(f"{self.id}: needs at least 2 points, got {n}")
        if np.any(np.diff(self.timestamps) <= 0):
            raise TrajectoryError(f"{self.id}: timestamps must be strictly increasing")
        if np.any(np.abs(self.lng) > 180) or np.any(np.abs(self.lat) > 90):
            raise TrajectoryError(f"{self.id}: coordinates out of range")
        if not (np.all(np.isfinite(self.lng)) and np.all(np.isfinite(self.lat))):
            raise TrajectoryError(f"{self.id}: non-finite coordinates")

    def __len__(self) -> int:
        return len(self.lng)

    @property
    def points(self) -> list[TrajectoryPoint]:
        return [TrajectoryPoint(float(a), float(b), float(t)) for a, b, t in zip(self.lng, self.lat, self.timestamps)]

    @property
    def start_time(self) -> float:
        return float(self.timestamps[0])

    @property
    def duration(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])

    @property
    def coords(self) -> np.ndarray:
        return np.stack([self.lng, self.lat], axis=1)

    def subset(self, idx) -> "Trajectory":
        return Trajectory(self.id, self.lng[idx], self.lat[idx], self.timestamps[idx], self.label, self.zone)


@dataclass
class LoadReport:
    loaded: int = 0
    rejected: Counter = field(default_factory=Counter)

    @property
    def n_rejected(self) -> int:
        return sum(self.rejected.values())


@dataclass
class TrajectoryDataset:
    trajectories: list[Trajectory]
    interval: float | None = None
    report: LoadReport | None = None

    def __len__(self) -> int:
        return len(self.trajectories)

    def __iter__(self) -> Iterator[Trajectory]:
        return iter(self.trajectories)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return TrajectoryDataset(self.trajectories[i], self.interval)
        return self.trajectories[i]

    @property
    def bounding_box(self) -> tuple[float, float, float, float]:
        """(min_lng, min_lat, max_lng, max_lat)."""
        if not self.trajectories:
            raise ValueError("empty dataset has no bounding box")
        lng = np.concatenate([t.lng for t in self.trajectories])
        lat = np.concatenate([t.lat for t in self.trajectories])
        return float(lng.min()), float(lat.min()), float(lng.max()), float(lat.max())


@dataclass
class Edge:
    id: int
    source: int
    target: int
    polyline: np.ndarray  # (k, 2) lng/lat

    @property
    def length_m(self) -> float:
        p = self.polyline
        return float(haversine(p[:-1, 0], p[:-1, 1], p[1:, 0], p[1:, 1]).sum())


@dataclass
class RoadNetwork:
    """Directed graph of nodes with polyline edges."""

    node_ids: np.ndarray
    node_lng: np.ndarray
    node_lat: np.ndarray
    edges: list[Edge]

    def __post_init__(self):
        self.node_ids = np.asarray(self.node_ids, dtype=np.int64)
        self.node_lng = np.asarray(self.node_lng, dtype=np.float64)
        self.node_lat = np.asarray(self.node_lat, dtype=np.float64)
        self._index = {int(n): i for i, n in enumerate(self.node_ids)}
        for e in self.edges:
            if e.source not in self._index or e.target not in self._index:
                raise ValueError(f"edge {e.id} references a missing node")
            s, t = self._index[e.source], self._index[e.target]
            start = (self.node_lng[s], self.node_lat[s])
            end = (self.node_lng[t], self.node_lat[t])
            if not (np.allclose(e.polyline[0], start, atol=1e-9) and np.allclose(e.polyline[-1], end, atol=1e-9)):
                raise ValueError(f"edge {e.id} polyline does not start/end at its endpoint nodes")

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def node_coord(self, node_id: int) -> tuple[float, float]:
        i = self._index[node_id]
        return float(self.node_lng[i]), float(self.node_lat[i])

    def edge_by_id(self) -> dict[int, Edge]:
        return {e.id: e for e in self.edges}

    def to_json(self) -> dict:
        return {
            "nodes": [{"id": int(n), "lng": float(a), "lat": float(b)}
                      for n, a, b in zip(self.node_ids, self.node_lng, self.node_lat)],
            "edges": [{"id": e.id, "from": e.source, "to": e.target, "polyline": e.polyline.tolist()}
                      for e in self.edges],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "RoadNetwork":
        nodes = obj["nodes"]
        edges = [Edge(int(e["id"]), int(e["from"]), int(e["to"]), np.asarray(e["polyline"], dtype=np.float64))
                 for e in obj["edges"]]
        return cls([n["id"] for n in nodes], [n["lng"] for n in nodes], [n["lat"] for n in nodes], edges)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path) -> "RoadNetwork":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class SplitSpec:
    train: float = 0.8
    eval: float = 0.1
    test: float = 0.1

    def __post_init__(self):
        ratios = (self.train, self.eval, self.test)
        if any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
            raise ValueError(f"split ratios must be positive and sum to 1, got {ratios}")


# ---------------------------------------------------------------- file I/O

def load_trajectories(path, min_points: int = 6) -> TrajectoryDataset:
    """Read the trajectory CSV. Invalid trajectories are dropped and counted in ``report``."""
    rows: dict[str, list[tuple]] = defaultdict(list)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CSV_COLUMNS if c != "label" and c not in (reader.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        for row in reader:
            label = row.get("label", "")
            rows[row["traj_id"]].append((int(row["seq"]), float(row["lng"]), float(row["lat"]),
                                         int(row["timestamp"]), int(label) if label not in ("", None) else None))
    report = LoadReport()
    out = []
    for tid in sorted(rows):
        recs = sorted(rows[tid], key=lambda r: r[0])
        if len(recs) < min_points:
            report.rejected["too_short"] += 1
            continue
        labels = {r[4] for r in recs}
        if len(labels) > 1:
            report.rejected["inconsistent_label"] += 1
            continue
        try:
            t = Trajectory(tid, [r[1] for r in recs], [r[2] for r in recs], [r[3] for r in recs], labels.pop())
        except TrajectoryError:
            report.rejected["invalid"] += 1
            continue
        out.append(t)
    report.loaded = len(out)
    return TrajectoryDataset(out, report=report)


def save_trajectories(dataset: Iterable[Trajectory], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for t in dataset:
            label = "" if t.label is None else str(int(t.label))
            for i in range(len(t)):
                w.writerow([t.id, i, repr(float(t.lng[i])), repr(float(t.lat[i])), int(round(t.timestamps[i])), label])


# ---------------------------------------------------------------- transforms

def resample_interval(t: Trajectory, interval: float) -> Trajectory:
    """Re-sample at ``t0 + k * interval`` with linear interpolation of lng/lat."""
    if interval <= 0:
        raise ValueError("interval must be positive")
    if t.duration < interval:
        raise ValueError(f"{t.id}: duration {t.duration}s is shorter than interval {interval}s")
    n = int(np.floor(t.duration / interval + 1e-9)) + 1
    times = t.timestamps[0] + interval * np.arange(n)
    return Trajectory(t.id, np.interp(times, t.timestamps, t.lng), np.interp(times, t.timestamps, t.lat),
                      times, t.label, t.zone)


def filter_short(dataset: TrajectoryDataset, min_points: int = 6) -> TrajectoryDataset:
    return TrajectoryDataset([t for t in dataset if len(t) >= min_points], dataset.interval)


def split_dataset(dataset: TrajectoryDataset, spec: SplitSpec = SplitSpec()):
    """Chronological split: sort by start time (ties by id), then contiguous cuts."""
    if len(dataset) == 0:
        raise ValueError("cannot split an empty dataset")
    ordered = sorted(dataset.trajectories, key=lambda t: (t.start_time, t.id))
    n = len(ordered)
    n_train = int(np.floor(n * spec.train + 1e-9))
    n_eval = int(np.floor(n * spec.eval + 1e-9))
    parts = ordered[:n_train], ordered[n_train:n_train + n_eval], ordered[n_train + n_eval:]
    return tuple(TrajectoryDataset(list(p), dataset.interval) for p in parts)


# ---------------------------------------------------------------- synthetic data

@dataclass
class SyntheticConfig:
    width: int = 20
    height: int = 20
    n_trajectories: int = 2000
    n_zones: int = 16
    n_drivers: int = 8
    interval: float = 15.0
    spacing_deg: float = 0.002
    origin_lng: float = 104.04
    origin_lat: float = 30.65
    speed_mps: float = 9.0
    speed_noise: float = 0.15
    route_preference: float = 0.6
    home_radius: int = 3
    gps_noise_m: float = 0.0
    start_epoch: int = 1_538_352_000
    start_window_s: int = 30 * 86_400
    min_points: int = 6

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ValueError("grid dims must be at least 2")
        if min(self.n_trajectories, self.n_zones, self.n_drivers) < 1:
            raise ValueError("counts must be at least 1")
        if self.n_zones > self.width * self.height:
            raise ValueError("more zones than grid nodes")


def grid_network(cfg: SyntheticConfig) -> RoadNetwork:
    """``width x height`` nodes with directed 4-neighbour edges in both directions."""
    w, h = cfg.width, cfg.height
    ids = np.arange(w * h)
    cols, rows = ids % w, ids // w
    lng = cfg.origin_lng + cols * cfg.spacing_deg
    lat = cfg.origin_lat + rows * cfg.spacing_deg
    edges = []
    for node in ids:
        r, c = divmod(int(node), w)
        for dr, dc in ((0, 1), (1, 0), (0, -1), (-1, 0)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w:
                other = rr * w + cc
                poly = np.array([[lng[node], lat[node]], [lng[other], lat[other]]])
                edges.append(Edge(len(edges), int(node), int(other), poly))
    return RoadNetwork(ids, lng, lat, edges)


def _zone_layout(k: int) -> tuple[int, int]:
    best = (1, k)
    for a in range(1, k + 1):
        if k % a == 0 and abs(a - k // a) < abs(best[0] - best[1]):
            best = (a, k // a)
    return best


def zone_of_node(node: int, cfg: SyntheticConfig) -> int:
    zx, zy = _zone_layout(cfg.n_zones)
    r, c = divmod(node, cfg.width)
    return (r * zy // cfg.height) * zx + (c * zx // cfg.width)


def _zone_targets(cfg: SyntheticConfig) -> list[list[int]]:
    """For each zone, its centre node and the in-zone 4-neighbours of that centre."""
    members: dict[int, list[int]] = defaultdict(list)
    for node in range(cfg.width * cfg.height):
        members[zone_of_node(node, cfg)].append(node)
    targets = []
    for z in range(cfg.n_zones):
        nodes = members[z]
        rows = [n // cfg.width for n in nodes]
        cols = [n % cfg.width for n in nodes]
        rc, cc = (min(rows) + max(rows)) // 2, (min(cols) + max(cols)) // 2
        centre = rc * cfg.width + cc
        near = [centre] + [n for n in nodes if abs(n // cfg.width - rc) + abs(n % cfg.width - cc) == 1]
        targets.append(near)
    return targets


def _shortest_path(adj: dict[int, list[tuple[int, int]]], weights: np.ndarray, src: int, dst: int) -> list[int]:
    """Dijkstra returning the edge-id sequence; ties broken by node id for determinism."""
    dist = {src: 0.0}
    prev: dict[int, tuple[int, int]] = {}
    heap = [(0.0, src)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == dst:
            break
        for v, eid in adj[u]:
            nd = d + weights[eid]
            if nd < dist.get(v, np.inf):
                dist[v] = nd
                prev[v] = (u, eid)
                heapq.heappush(heap, (nd, v))
    assert dst in done, "grid network is connected; every OD pair is reachable"
    path = []
    node = dst
    while node != src:
        node, eid = prev[node]
        path.append(eid)
    return path[::-1]


def generate_synthetic(cfg: SyntheticConfig | None = None, seed: int = 0) -> tuple[TrajectoryDataset, RoadNetwork]:
    """Grid-city trajectories with planted destination-zone and driver structure.

    Each driver has a home area (where most trips start), a speed factor and
    its own multiplicative edge-cost field, so routes and origins carry the
    driver identity. Destinations are the centre (or a neighbour of the centre)
    of one of ``n_zones`` rectangular zones.
    """
    cfg = cfg or SyntheticConfig()
    rng = SeededRng(seed)
    net = grid_network(cfg)
    lengths = np.array([e.length_m for e in net.edges])
    adj: dict[int, list[tuple[int, int]]] = defaultdict(list)
    for e in net.edges:
        adj[e.source].append((e.target, e.id))
    n_nodes = cfg.width * cfg.height
    targets = _zone_targets(cfg)

    drivers = []
    for d in range(cfg.n_drivers):
        dr = rng.split(("driver", d))
        cost = lengths * np.exp(cfg.route_preference * dr.normal(len(lengths)))
        home = dr.integers(0, n_nodes)
        drivers.append((cost, home, 0.75 + 0.5 * dr.uniform()))

    mx, my = meters_per_degree(cfg.origin_lat)
    trajectories = []
    for i in range(cfg.n_trajectories):
        tr = rng.split(("traj", i))
        driver = i % cfg.n_drivers if i < cfg.n_drivers else tr.integers(0, cfg.n_drivers)
        cost, home, speed_factor = drivers[driver]
        zone = i % cfg.n_zones if i < cfg.n_zones else tr.integers(0, cfg.n_zones)
        cand = targets[zone]
        dest = cand[tr.integers(0, len(cand))]
        hr, hc = divmod(home, cfg.width)
        for _ in range(100):
            if tr.uniform() < 0.75:
                r = min(max(hr + tr.integers(-cfg.home_radius, cfg.home_radius + 1), 0), cfg.height - 1)
                c = min(max(hc + tr.integers(-cfg.home_radius, cfg.home_radius + 1), 0), cfg.width - 1)
                origin = r * cfg.width + c
            else:
                origin = tr.integers(0, n_nodes)
            if origin == dest:
                continue
            path = _shortest_path(adj, cost, origin, dest)
            speeds = cfg.speed_mps * speed_factor * np.clip(1.0 + cfg.speed_noise * tr.normal(len(path)), 0.3, None)
            seg_times = lengths[path] / speeds
            if seg_times.sum() >= (cfg.min_points - 1) * cfg.interval:
                break
        else:
            raise RuntimeError(f"could not draw a long enough trip for trajectory {i}")
        knots_t = np.concatenate([[0.0], np.cumsum(seg_times)])
        knots = np.array([net.edges[path[0]].polyline[0]] + [net.edges[e].polyline[-1] for e in path])
        times = np.arange(0.0, knots_t[-1] + 1e-9, cfg.interval)
        lng = np.interp(times, knots_t, knots[:, 0])
        lat = np.interp(times, knots_t, knots[:, 1])
        if cfg.gps_noise_m > 0:
            lng = lng + tr.normal(len(times)) * cfg.gps_noise_m / mx
            lat = lat + tr.normal(len(times)) * cfg.gps_noise_m / my
        start = cfg.start_epoch + tr.integers(0, cfg.start_window_s)
        trajectories.append(Trajectory(f"t{i:06d}", lng, lat, start + times, label=int(driver), zone=int(zone)))
    return TrajectoryDataset(trajectories, interval=cfg.interval), net


def write_dataset(dataset: TrajectoryDataset, network: RoadNetwork, out_dir) -> tuple[str, str]:
    os.makedirs(out_dir, exist_ok=True)
    traj_path = os.path.join(out_dir, "trajectories.csv")
    net_path = os.path.join(out_dir, "network.json")
    save_trajectories(dataset, traj_path)
    network.save(net_path)
    return traj_path, net_path
