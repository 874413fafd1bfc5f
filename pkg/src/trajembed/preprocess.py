"""Trajectory preprocessors: normalisation, tokenisation, pixelation, sliding
windows, augmentation, map-matching and spline fitting.

All functions are pure given an explicit :class:`SeededRng`.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import RoadNetwork, Trajectory
from .geo import haversine, to_local_xy
from .numerics.rng import SeededRng


class DegenerateFeatureError(ValueError):
    pass


# ---------------------------------------------------------------- normalisation

@dataclass(frozen=True)
class FeatureStats:
    min: np.ndarray
    max: np.ndarray
    mean: np.ndarray
    std: np.ndarray

    def to_json(self) -> dict:
        return {k: np.atleast_1d(getattr(self, k)).tolist() for k in ("min", "max", "mean", "std")}

    @classmethod
    def from_json(cls, obj: dict) -> "FeatureStats":
        return cls(*(np.asarray(obj[k], dtype=np.float64) for k in ("min", "max", "mean", "std")))


def fit_stats(values) -> FeatureStats:
    """Per-column statistics (population std) of an ``(n,)`` or ``(n, F)`` training array."""
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot fit statistics on an empty training set")
    return FeatureStats(v.min(axis=0), v.max(axis=0), v.mean(axis=0), v.std(axis=0))


def normalize_minmax(x, stats: FeatureStats):
    span = stats.max - stats.min
    if np.any(span <= 0):
        raise DegenerateFeatureError("degenerate feature: max == min")
    return np.clip((np.asarray(x, dtype=np.float64) - stats.min) / span, 0.0, 1.0)


def normalize_zscore(x, stats: FeatureStats):
    if np.any(stats.std <= 0):
        raise DegenerateFeatureError("degenerate feature: zero standard deviation")
    return (np.asarray(x, dtype=np.float64) - stats.mean) / stats.std


# ---------------------------------------------------------------- tokenisation

@dataclass(frozen=True)
class BucketSpec:
    boundaries: tuple[float, ...]

    def __post_init__(self):
        b = np.asarray(self.boundaries, dtype=np.float64)
        if b.size < 1 or np.any(np.diff(b) <= 0):
            raise ValueError("bucket boundaries must be non-empty and strictly increasing")

    @property
    def n_tokens(self) -> int:
        return len(self.boundaries) + 1

    @classmethod
    def uniform(cls, lo: float, hi: float, n_buckets: int) -> "BucketSpec":
        """``n_buckets`` equal-width interior buckets over [lo, hi] plus the two open tails."""
        return cls(tuple(np.linspace(lo, hi, n_buckets + 1)))


def tokenize_scalar(x, buckets: BucketSpec):
    """Bucket index with half-open buckets ``(-inf, b1), [b1, b2), ..., [bM, inf)``."""
    out = np.searchsorted(np.asarray(buckets.boundaries), x, side="right")
    return int(out) if np.ndim(out) == 0 else out.astype(np.int64)


@dataclass(frozen=True)
class GridSpec:
    min_lng: float
    min_lat: float
    max_lng: float
    max_lat: float
    width: int
    height: int

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid needs at least one row and column")
        if not (self.max_lng > self.min_lng and self.max_lat > self.min_lat):
            raise ValueError("grid bounding box is degenerate")

    @property
    def n_cells(self) -> int:
        return self.width * self.height

    @classmethod
    def around(cls, bbox, width: int, height: int, margin: float = 1e-6) -> "GridSpec":
        lo_lng, lo_lat, hi_lng, hi_lat = bbox
        return cls(lo_lng - margin, lo_lat - margin, hi_lng + margin, hi_lat + margin, width, height)

    def cell_of(self, lng, lat):
        col = np.floor((np.asarray(lng) - self.min_lng) / (self.max_lng - self.min_lng) * self.width)
        row = np.floor((np.asarray(lat) - self.min_lat) / (self.max_lat - self.min_lat) * self.height)
        col = np.clip(col, 0, self.width - 1).astype(np.int64)
        row = np.clip(row, 0, self.height - 1).astype(np.int64)
        return col, row

    def cell_center(self, token):
        row, col = np.divmod(np.asarray(token), self.width)
        lng = self.min_lng + (col + 0.5) * (self.max_lng - self.min_lng) / self.width
        lat = self.min_lat + (row + 0.5) * (self.max_lat - self.min_lat) / self.height
        return lng, lat

    def to_json(self) -> dict:
        return dict(vars(self))


def tokenize_point(lng, lat, grid: GridSpec):
    """Row-major cell id ``row * W + col``; points outside the box are clamped onto it."""
    col, row = grid.cell_of(lng, lat)
    tok = row * grid.width + col
    return int(tok) if np.ndim(tok) == 0 else tok


# ---------------------------------------------------------------- kinematics

def point_kinematics(lng, lat, ts):
    """Per-point speed (m/s), heading (rad) and turn rate (rad/s).

    Speed and heading describe the displacement arriving at each point; the
    first point copies the second. Turn rate is the wrapped heading change
    divided by the elapsed time.
    """
    lng, lat, ts = (np.asarray(v, dtype=np.float64) for v in (lng, lat, ts))
    n = len(lng)
    speed = np.zeros(n)
    heading = np.zeros(n)
    turn = np.zeros(n)
    if n < 2:
        return speed, heading, turn
    dist = haversine(lng[:-1], lat[:-1], lng[1:], lat[1:])
    dt = np.diff(ts)
    speed[1:] = np.divide(dist, dt, out=np.zeros_like(dist), where=dt > 0)
    speed[0] = speed[1]
    x, y = to_local_xy(lng, lat, float(np.mean(lat)))
    heading[1:] = np.arctan2(np.diff(y), np.diff(x))
    heading[0] = heading[1]
    dh = np.angle(np.exp(1j * np.diff(heading)))
    turn[1:] = np.divide(np.abs(dh), dt, out=np.zeros_like(dh), where=dt > 0)
    return speed, heading, turn


# ---------------------------------------------------------------- pixelation

PIXEL_CHANNELS = ("mask", "count", "mean-timestamp", "mean-speed", "mean-turn-rate")


def pixelate(t: Trajectory, grid: GridSpec, channels: Sequence[str] = ("mask",)) -> np.ndarray:
    """Rasterise onto the grid. Returns a ``(W, H, C)`` array indexed ``[col, row, channel]``.

    ``mean-timestamp`` is the mean elapsed fraction of the trip (0 at the first
    point, 1 at the last) so values are scale-free.
    """
    if not channels:
        raise ValueError("no channels")
    unknown = set(channels) - set(PIXEL_CHANNELS)
    if unknown:
        raise ValueError(f"unknown channels {sorted(unknown)}; known: {PIXEL_CHANNELS}")
    col, row = grid.cell_of(t.lng, t.lat)
    count = np.zeros((grid.width, grid.height))
    np.add.at(count, (col, row), 1.0)
    speed, _, turn = point_kinematics(t.lng, t.lat, t.timestamps)
    span = max(t.duration, 1e-12)
    frac = (t.timestamps - t.timestamps[0]) / span
    image = np.zeros((grid.width, grid.height, len(channels)))
    safe = np.maximum(count, 1.0)
    for c, name in enumerate(channels):
        if name == "mask":
            image[:, :, c] = count > 0
        elif name == "count":
            image[:, :, c] = count
        else:
            src = {"mean-timestamp": frac, "mean-speed": speed, "mean-turn-rate": turn}[name]
            acc = np.zeros((grid.width, grid.height))
            np.add.at(acc, (col, row), src)
            image[:, :, c] = acc / safe
    return image


# ---------------------------------------------------------------- sequences of features

@dataclass
class FeatureSequence:
    """Per-step processed features ``values[i]`` observed at ``timestamps[i]``."""

    values: np.ndarray
    timestamps: np.ndarray
    names: tuple[str, ...] = ()

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        self.timestamps = np.asarray(self.timestamps, dtype=np.float64)
        if len(self.values) != len(self.timestamps):
            raise ValueError("values and timestamps differ in length")

    def __len__(self) -> int:
        return len(self.timestamps)

    def subset(self, idx) -> "FeatureSequence":
        return FeatureSequence(self.values[idx], self.timestamps[idx], self.names)


WINDOW_FEATURES = ("distance", "duration", "speed", "turn_rate")


@dataclass(frozen=True)
class WindowSpec:
    width: float
    offset: float | None = None

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("window width must be positive")
        off = self.step
        if not 0 < off <= self.width:
            raise ValueError("window offset must be in (0, width]")

    @property
    def step(self) -> float:
        return self.width / 2 if self.offset is None else self.offset


def sliding_window(t, w: WindowSpec) -> FeatureSequence:
    """Moving-behaviour features per window.

    Windows start at ``t0 + k * offset`` and hold the points with
    ``start <= t <= start + width``; only windows that fit entirely inside the
    trajectory are emitted, except that a trajectory shorter than one window
    yields a single window covering all of it. Accepts any object with
    ``lng``, ``lat`` and ``timestamps`` arrays.
    """
    lng, lat, ts = (np.asarray(v, dtype=np.float64) for v in (t.lng, t.lat, t.timestamps))
    t0, t_end = ts[0], ts[-1]
    starts = []
    k = 0
    while t0 + k * w.step + w.width <= t_end + 1e-9:
        starts.append(t0 + k * w.step)
        k += 1
    if not starts:
        starts = [t0]
    rows = []
    for s in starts:
        sel = (ts >= s - 1e-9) & (ts <= s + w.width + 1e-9)
        a, b, c = lng[sel], lat[sel], ts[sel]
        dist = float(haversine(a[:-1], b[:-1], a[1:], b[1:]).sum()) if len(a) > 1 else 0.0
        dur = float(c[-1] - c[0]) if len(c) > 1 else 0.0
        speed = dist / dur if dur > 0 else 0.0
        _, _, turn = point_kinematics(a, b, c)
        turn_rate = float(turn[2:].mean()) if len(a) > 2 else 0.0
        rows.append((dist, dur, speed, turn_rate))
    return FeatureSequence(np.array(rows), np.array(starts), WINDOW_FEATURES)


# ---------------------------------------------------------------- augmentation

@dataclass(frozen=True)
class AugmentSpec:
    """Intensities of each augmentation; all zeros/None is the identity.

    ``noise_sigma`` is in the units of the features it perturbs (degrees for a
    raw trajectory); ``segment_drop`` bounds the removed run length as
    ``(min, max)`` points; ``maskable`` lists feature columns the mask replaces.
    """

    noise_sigma: float | tuple[float, ...] = 0.0
    segment_drop: tuple[int, int] | None = None
    point_drop: float = 0.0
    mask_prob: float = 0.0
    mask_token: float = 0.0
    maskable: tuple[int, ...] | None = None
    resample: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.point_drop < 1.0:
            raise ValueError("point_drop must be in [0, 1)")
        # masking every step is a valid (if extreme) setting
        if not 0.0 <= self.mask_prob <= 1.0:
            raise ValueError("mask_prob must be in [0, 1]")
        if np.any(np.asarray(self.noise_sigma) < 0):
            raise ValueError("noise sigma must be non-negative")
        if self.segment_drop is not None and not 1 <= self.segment_drop[0] <= self.segment_drop[1]:
            raise ValueError("segment_drop must satisfy 1 <= min <= max")


def _keep_at_least_two(keep: np.ndarray, scores: np.ndarray) -> np.ndarray:
    if keep.sum() >= 2:
        return keep
    keep = np.zeros_like(keep)
    keep[np.sort(np.argsort(-scores, kind="stable")[:2])] = True
    return keep


def augment(x, spec: AugmentSpec, rng: SeededRng):
    """Apply noise, segment drop, point drop, mask, then resample. Returns the input's type."""
    is_traj = isinstance(x, Trajectory)
    if is_traj:
        values, ts = np.stack([x.lng, x.lat], axis=1), x.timestamps.copy()
    else:
        values, ts = x.values.copy(), x.timestamps.copy()
    n = len(ts)
    if n < 2:
        raise ValueError("augmentation needs at least 2 points")

    sigma = np.broadcast_to(np.asarray(spec.noise_sigma, dtype=np.float64), (values.shape[1],))
    if np.any(sigma > 0):
        values = values + rng.normal(values.shape) * sigma

    keep = np.ones(n, dtype=bool)
    if spec.segment_drop is not None:
        lo, hi = spec.segment_drop
        if lo > n - 2:
            raise ValueError(f"segment drop of at least {lo} points leaves fewer than 2 of {n}")
        length = rng.integers(lo, min(hi, n - 2) + 1)
        start = rng.integers(0, n - length + 1)
        keep[start:start + length] = False

    if spec.point_drop > 0:
        u = rng.uniform(n)
        keep = _keep_at_least_two(keep & (u >= spec.point_drop), np.where(keep, u, -1.0))

    values, ts = values[keep], ts[keep]

    if spec.mask_prob > 0:
        if is_traj:
            raise ValueError("masking needs a FeatureSequence, not raw coordinates")
        cols = list(range(values.shape[1])) if spec.maskable is None else list(spec.maskable)
        hit = rng.uniform(len(ts)) < spec.mask_prob
        values[np.ix_(hit, cols)] = spec.mask_token

    if spec.resample is not None:
        bins = np.floor((ts - ts[0]) / spec.resample + 1e-9).astype(np.int64)
        uniq, inverse = np.unique(bins, return_inverse=True)
        if len(uniq) < 2:
            raise ValueError("resampling interval leaves fewer than 2 points")
        counts = np.bincount(inverse).astype(np.float64)
        agg = np.zeros((len(uniq), values.shape[1]))
        np.add.at(agg, inverse, values)
        values = agg / counts[:, None]
        ts = np.bincount(inverse, weights=ts) / counts

    if is_traj:
        return Trajectory(x.id, values[:, 0], values[:, 1], ts, x.label, x.zone)
    return FeatureSequence(values, ts, x.names)


# ---------------------------------------------------------------- map matching

@dataclass(frozen=True)
class MatchedPoint:
    segment_id: int
    fraction: float
    timestamp: float
    distance_m: float = 0.0


class MapMatcher:
    """Nearest-segment projection against a fixed road network.

    Distances are measured in a local equirectangular frame centred on the
    network. Candidates within ``radius`` meters are preferred; when none is in
    range every segment is considered. Ties within 1e-9 m go to the lower
    segment id.
    """

    TIE_M = 1e-9

    def __init__(self, network: RoadNetwork, radius: float = 100.0):
        if network.n_edges == 0:
            raise ValueError("empty road network")
        self.network = network
        self.radius = radius
        self.ref_lat = float(np.mean(network.node_lat))
        ax, ay, bx, by, owner, offset, edge_len = [], [], [], [], [], [], {}
        for e in sorted(network.edges, key=lambda e: e.id):
            x, y = to_local_xy(e.polyline[:, 0], e.polyline[:, 1], self.ref_lat)
            seg = np.hypot(np.diff(x), np.diff(y))
            acc = np.concatenate([[0.0], np.cumsum(seg)])
            for k in range(len(seg)):
                ax.append(x[k]); ay.append(y[k]); bx.append(x[k + 1]); by.append(y[k + 1])
                owner.append(e.id); offset.append(acc[k])
            edge_len[e.id] = acc[-1]
        self.ax, self.ay, self.bx, self.by = map(np.asarray, (ax, ay, bx, by))
        self.owner = np.asarray(owner, dtype=np.int64)
        self.offset = np.asarray(offset)
        self.edge_ids = np.array(sorted(edge_len), dtype=np.int64)
        self.edge_len = np.array([edge_len[i] for i in self.edge_ids])

    def match_arrays(self, lng, lat):
        """Vectorised matching; returns (segment ids, fractions, distances)."""
        px, py = to_local_xy(np.atleast_1d(lng), np.atleast_1d(lat), self.ref_lat)
        dx, dy = self.bx - self.ax, self.by - self.ay
        l2 = dx * dx + dy * dy
        u = ((px[:, None] - self.ax) * dx + (py[:, None] - self.ay) * dy) / np.where(l2 > 0, l2, 1.0)
        u = np.clip(u, 0.0, 1.0)
        qx, qy = self.ax + u * dx, self.ay + u * dy
        dist = np.hypot(px[:, None] - qx, py[:, None] - qy)
        seg_ids = np.empty(len(px), dtype=np.int64)
        fracs = np.empty(len(px))
        dmin = np.empty(len(px))
        for i in range(len(px)):
            d = dist[i]
            in_range = d <= self.radius
            cand = np.flatnonzero(in_range) if in_range.any() else np.arange(len(d))
            best = d[cand].min()
            tied = cand[d[cand] <= best + self.TIE_M]
            # lowest edge id among ties; pieces of one edge share an owner
            j = tied[np.argmin(self.owner[tied])]
            eid = self.owner[j]
            along = self.offset[j] + u[i, j] * np.sqrt(l2[j])
            total = self.edge_len[np.searchsorted(self.edge_ids, eid)]
            seg_ids[i] = eid
            fracs[i] = min(max(along / total, 0.0), 1.0) if total > 0 else 0.0
            dmin[i] = d[j]
        return seg_ids, fracs, dmin

    def match(self, t: Trajectory) -> list[MatchedPoint]:
        ids, fr, dist = self.match_arrays(t.lng, t.lat)
        return [MatchedPoint(int(s), float(f), float(ts), float(d)) for s, f, ts, d in zip(ids, fr, t.timestamps, dist)]


def map_match(t: Trajectory, network: RoadNetwork, radius: float = 100.0) -> list[MatchedPoint]:
    return MapMatcher(network, radius).match(t)


def write_matched_csv(matched: dict[str, list[MatchedPoint]], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("traj_id", "seq", "segment_id", "fraction", "timestamp"))
        for tid, points in matched.items():
            for i, p in enumerate(points):
                w.writerow((tid, i, p.segment_id, repr(p.fraction), int(round(p.timestamp))))


# ---------------------------------------------------------------- splines

@dataclass
class Spline:
    """Cubic Hermite spline through ``values[i]`` at ``knots[i]``."""

    knots: np.ndarray
    values: np.ndarray
    tangents: np.ndarray

    def _locate(self, tau):
        tau = np.atleast_1d(np.asarray(tau, dtype=np.float64))
        if np.any(tau < self.knots[0]) or np.any(tau > self.knots[-1]):
            raise ValueError("out of spline domain")
        i = np.clip(np.searchsorted(self.knots, tau, side="right") - 1, 0, len(self.knots) - 2)
        h = self.knots[i + 1] - self.knots[i]
        s = (tau - self.knots[i]) / h
        return tau, i, h, s

    def __call__(self, tau):
        return spline_eval(self, tau)

    def derivative(self, tau):
        _, i, h, s = self._locate(tau)
        s = s[:, None]
        h = h[:, None]
        d00 = 6 * s * s - 6 * s
        d10 = 3 * s * s - 4 * s + 1
        d01 = -6 * s * s + 6 * s
        d11 = 3 * s * s - 2 * s
        return (d00 * self.values[i] + d01 * self.values[i + 1]) / h + d10 * self.tangents[i] + d11 * self.tangents[i + 1]


def spline_fit(t: Trajectory) -> Spline:
    """Hermite spline with finite-difference tangents (one-sided secants at the ends)."""
    knots = t.timestamps.astype(np.float64)
    values = np.stack([t.lng, t.lat], axis=1)
    return spline_from_arrays(knots, values)


def spline_from_arrays(knots, values) -> Spline:
    knots = np.asarray(knots, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    if len(knots) < 2 or np.any(np.diff(knots) <= 0):
        raise ValueError("spline needs at least 2 strictly increasing knots")
    secant = np.diff(values, axis=0) / np.diff(knots)[:, None]
    tangents = np.empty_like(values)
    tangents[0] = secant[0]
    tangents[-1] = secant[-1]
    tangents[1:-1] = 0.5 * (secant[:-1] + secant[1:])
    return Spline(knots, values, tangents)


def spline_eval(s: Spline, tau):
    """Evaluate at scalar or array ``tau``; returns ``(2,)`` or ``(n, 2)``."""
    scalar = np.ndim(tau) == 0
    _, i, h, u = s._locate(tau)
    u = u[:, None]
    h = h[:, None]
    h00 = 2 * u ** 3 - 3 * u ** 2 + 1
    h10 = u ** 3 - 2 * u ** 2 + u
    h01 = -2 * u ** 3 + 3 * u ** 2
    h11 = u ** 3 - u ** 2
    out = h00 * s.values[i] + h10 * h * s.tangents[i] + h01 * s.values[i + 1] + h11 * h * s.tangents[i + 1]
    return out[0] if scalar else out
