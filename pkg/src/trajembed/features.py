"""Training-fitted featurisation: trajectories to padded token, feature, image and path batches."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .data import RoadNetwork, Trajectory
from .geo import meters_per_degree
from .numerics import SeededRng
from .preprocess import (AugmentSpec, BucketSpec, FeatureSequence, FeatureStats, GridSpec, MapMatcher,
                         WindowSpec, augment, fit_stats, normalize_zscore, pixelate, sliding_window,
                         spline_from_arrays, tokenize_point, tokenize_scalar)

# per-point columns of the base feature sequence
POINT_COLUMNS = ("token", "x", "y", "tod_sin", "tod_cos", "elapsed")
TIME_COLUMNS = (3, 4, 5)
TRAJECTORY_COLUMNS = (1, 2, 5)
PIXEL_CHANNELS_USED = ("mask", "count")
DAY_S = 86_400.0


@dataclass(frozen=True)
class FeaturizerConfig:
    grid_width: int = 20
    grid_height: int = 20
    image_width: int = 16
    image_height: int = 16
    window_s: float = 60.0
    speed_buckets: int = 6
    turn_buckets: int = 3
    match_radius: float = 100.0
    spline_steps: int = 16

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Batch:
    """Right-padded per-point arrays for ``B`` trajectories of up to ``T`` points.

    ``tokens`` and ``targets`` are int arrays (B, T); ``feats`` is (B, T, F)
    continuous input; ``time`` is (B, T, 3) time features; ``masked`` flags
    positions whose token was replaced by the mask token.
    """

    ids: list[str]
    mask: np.ndarray
    times: np.ndarray
    tokens: np.ndarray | None = None
    targets: np.ndarray | None = None
    feats: np.ndarray | None = None
    time: np.ndarray | None = None
    masked: np.ndarray | None = None
    images: np.ndarray | None = None
    path: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return len(self.ids)


def pad_stack(rows: Sequence[np.ndarray], fill=0.0, dtype=np.float64) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad a list of (n_i, ...) arrays to (B, max n_i, ...) and return the validity mask."""
    T = max(len(r) for r in rows)
    tail = np.asarray(rows[0]).shape[1:]
    out = np.full((len(rows), T) + tail, fill, dtype=dtype)
    mask = np.zeros((len(rows), T))
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
        mask[i, :len(r)] = 1.0
    return out, mask


class Featurizer:
    """Grid, normalisation, bucket and matching state fitted on the training split only."""

    def __init__(self, cfg: FeaturizerConfig = FeaturizerConfig()):
        self.cfg = cfg
        self.bbox: tuple[float, float, float, float] | None = None
        self.window_stats: FeatureStats | None = None
        self.speed_buckets: BucketSpec | None = None
        self.turn_buckets: BucketSpec | None = None
        self.n_edges = 0
        self.unigram: dict[str, list[int]] = {}
        self.network: RoadNetwork | None = None
        self._matcher: MapMatcher | None = None
        self._cache: dict[tuple, object] = {}

    # ------------------------------------------------------------ fitting

    def fit(self, train: Sequence[Trajectory], network: RoadNetwork | None = None,
            sources: Sequence[str] = ()) -> "Featurizer":
        train = list(train)
        if not train:
            raise ValueError("cannot fit features on an empty training set")
        lng = np.concatenate([t.lng for t in train])
        lat = np.concatenate([t.lat for t in train])
        self.bbox = (float(lng.min()), float(lat.min()), float(lng.max()), float(lat.max()))
        if self.bbox[2] <= self.bbox[0] or self.bbox[3] <= self.bbox[1]:
            raise ValueError("training trajectories span a degenerate bounding box")
        windows = np.concatenate([sliding_window(t, WindowSpec(self.cfg.window_s)).values for t in train])
        self.window_stats = fit_stats(windows)
        self.speed_buckets = _quantile_buckets(windows[:, 2], self.cfg.speed_buckets)
        self.turn_buckets = _quantile_buckets(windows[:, 3], self.cfg.turn_buckets)
        self.attach_network(network)
        for source in sources:
            counts = np.zeros(self.vocab_size(source) - 1, dtype=np.int64)
            for t in train:
                np.add.at(counts, self.tokens(t, source), 1)
            self.unigram[source] = counts.tolist()
        return self

    def attach_network(self, network: RoadNetwork | None) -> None:
        self.network = network
        if network is not None:
            self.n_edges = max(self.n_edges, max(e.id for e in network.edges) + 1)
            self._matcher = MapMatcher(network, self.cfg.match_radius)
        self._cache.clear()

    def _require_fit(self):
        if self.bbox is None:
            raise RuntimeError("featurizer is not fitted")

    # ------------------------------------------------------------ geometry

    @property
    def grid(self) -> GridSpec:
        self._require_fit()
        return GridSpec.around(self.bbox, self.cfg.grid_width, self.cfg.grid_height)

    @property
    def image_grid(self) -> GridSpec:
        self._require_fit()
        return GridSpec.around(self.bbox, self.cfg.image_width, self.cfg.image_height)

    def normalize_coords(self, lng, lat) -> np.ndarray:
        self._require_fit()
        lo_lng, lo_lat, hi_lng, hi_lat = self.bbox
        return np.stack([(np.asarray(lng) - lo_lng) / (hi_lng - lo_lng),
                         (np.asarray(lat) - lo_lat) / (hi_lat - lo_lat)], axis=-1)

    def denormalize_coords(self, xy) -> tuple[np.ndarray, np.ndarray]:
        lo_lng, lo_lat, hi_lng, hi_lat = self.bbox
        xy = np.asarray(xy)
        return lo_lng + xy[..., 0] * (hi_lng - lo_lng), lo_lat + xy[..., 1] * (hi_lat - lo_lat)

    def meters_to_normalized(self, meters: float) -> tuple[float, float]:
        lo_lng, lo_lat, hi_lng, hi_lat = self.bbox
        mx, my = meters_per_degree(0.5 * (lo_lat + hi_lat))
        return meters / (mx * (hi_lng - lo_lng)), meters / (my * (hi_lat - lo_lat))

    # ------------------------------------------------------------ vocabularies

    def vocab_size(self, source: str) -> int:
        """Token count including the trailing mask token."""
        if source == "grid":
            return self.cfg.grid_width * self.cfg.grid_height + 1
        if source == "segment":
            if self.n_edges == 0:
                raise ValueError("segment tokens need a road network")
            return self.n_edges + 1
        if source == "window":
            return self.speed_buckets.n_tokens * self.turn_buckets.n_tokens + 1
        raise ValueError(f"unknown token source {source!r}")

    def mask_token(self, source: str) -> int:
        return self.vocab_size(source) - 1

    @staticmethod
    def _key(kind: str, t) -> tuple:
        # prefixes keep their parent's id, so length and end time are part of the key
        return kind, t.id, len(t.timestamps), float(t.timestamps[0]), float(t.timestamps[-1])

    def segments(self, t: Trajectory) -> np.ndarray:
        key = self._key("segment", t)
        if key not in self._cache:
            if self._matcher is None:
                raise ValueError("segment tokens need a road network")
            self._cache[key] = self._matcher.match_arrays(t.lng, t.lat)[0]
        return self._cache[key]

    def window_sequence(self, t) -> FeatureSequence:
        key = self._key("window", t)
        if key not in self._cache:
            self._cache[key] = sliding_window(t, WindowSpec(self.cfg.window_s))
        return self._cache[key]

    def window_tokens(self, values: np.ndarray) -> np.ndarray:
        s = tokenize_scalar(values[:, 2], self.speed_buckets)
        r = tokenize_scalar(values[:, 3], self.turn_buckets)
        return np.atleast_1d(s * self.turn_buckets.n_tokens + r).astype(np.int64)

    def tokens(self, t: Trajectory, source: str) -> np.ndarray:
        if source == "grid":
            return np.atleast_1d(tokenize_point(t.lng, t.lat, self.grid)).astype(np.int64)
        if source == "segment":
            return self.segments(t)
        if source == "window":
            return self.window_tokens(self.window_sequence(t).values)
        raise ValueError(f"unknown token source {source!r}")

    # ------------------------------------------------------------ per-point views

    def point_sequence(self, t: Trajectory, source: str | None) -> FeatureSequence:
        """Base per-point table with columns ``POINT_COLUMNS``."""
        xy = self.normalize_coords(t.lng, t.lat)
        ts = t.timestamps
        phase = 2 * np.pi * np.mod(ts, DAY_S) / DAY_S
        tok = self.tokens(t, source) if source in ("grid", "segment") else np.zeros(len(ts))
        values = np.column_stack([tok, xy[:, 0], xy[:, 1], np.sin(phase), np.cos(phase), (ts - ts[0]) / 3600.0])
        return FeatureSequence(values, ts, POINT_COLUMNS)

    def view(self, t: Trajectory, source: str | None, spec: AugmentSpec | None, mask_prob: float,
             rng: SeededRng | None) -> tuple[FeatureSequence, np.ndarray, np.ndarray]:
        """Augmented point table plus the uncorrupted tokens and the masked flags."""
        seq = self.point_sequence(t, source)
        if spec is not None and rng is not None:
            seq = augment(seq, spec, rng)
            if source == "grid":
                lng, lat = self.denormalize_coords(seq.values[:, 1:3])
                seq.values[:, 0] = tokenize_point(lng, lat, self.grid)
        clean = seq.values[:, 0].astype(np.int64)
        masked = np.zeros(len(seq), dtype=bool)
        if mask_prob > 0 and rng is not None and source is not None:
            masked = rng.uniform(len(seq)) < mask_prob
            seq.values[masked, 0] = self.mask_token(source)
        return seq, clean, masked

    def image(self, t: Trajectory) -> np.ndarray:
        img = pixelate(t, self.image_grid, PIXEL_CHANNELS_USED)
        img[..., 1] = np.log1p(img[..., 1])
        return img

    def spline_path(self, t: Trajectory, steps: int | None = None) -> np.ndarray:
        steps = steps or self.cfg.spline_steps
        s = spline_from_arrays(t.timestamps, self.normalize_coords(t.lng, t.lat))
        tau = np.linspace(s.knots[0], s.knots[-1], steps + 1)
        return s(tau)

    # ------------------------------------------------------------ batches

    def augment_spec(self, noise_m: float, point_drop: float, segment_drop) -> AugmentSpec | None:
        segment_drop = tuple(segment_drop) if segment_drop else None
        if noise_m <= 0 and point_drop <= 0 and segment_drop is None:
            return None
        sx, sy = self.meters_to_normalized(noise_m)
        sigma = (0.0, sx, sy, 0.0, 0.0, 0.0)
        return AugmentSpec(noise_sigma=sigma, point_drop=point_drop,
                           segment_drop=segment_drop)

    def point_batch(self, trajs: Sequence[Trajectory], source: str | None, spec: AugmentSpec | None = None,
                    mask_prob: float = 0.0, rng: SeededRng | None = None) -> Batch:
        seqs, stamps, clean, masked = [], [], [], []
        for t in trajs:
            s, c, m = self.view(t, source, spec, mask_prob, rng)
            seqs.append(s.values)
            stamps.append(s.timestamps)
            clean.append(c)
            masked.append(m)
        values, mask = pad_stack(seqs)
        times, _ = pad_stack(stamps)
        targets, _ = pad_stack(clean, fill=0, dtype=np.int64)
        flags, _ = pad_stack(masked, fill=False, dtype=bool)
        return Batch(ids=[t.id for t in trajs], mask=mask, times=times,
                     tokens=values[:, :, 0].astype(np.int64) if source in ("grid", "segment") else None,
                     targets=targets if source in ("grid", "segment") else None,
                     feats=values[:, :, list(TRAJECTORY_COLUMNS)], time=values[:, :, list(TIME_COLUMNS)],
                     masked=flags)

    def window_batch(self, trajs: Sequence[Trajectory]) -> Batch:
        seqs = [self.window_sequence(t) for t in trajs]
        feats, mask = pad_stack([self.scale_windows(s.values) for s in seqs])
        times, _ = pad_stack([s.timestamps for s in seqs])
        toks, _ = pad_stack([self.window_tokens(s.values) for s in seqs], fill=0, dtype=np.int64)
        return Batch(ids=[t.id for t in trajs], mask=mask, times=times, tokens=toks, targets=toks, feats=feats)

    def scale_windows(self, values: np.ndarray) -> np.ndarray:
        """Z-score window features; a feature constant over training maps to 0."""
        st = self.window_stats
        std = np.where(st.std > 0, st.std, 1.0)
        return normalize_zscore(values, FeatureStats(st.min, st.max, st.mean, std))

    def image_batch(self, trajs: Sequence[Trajectory]) -> Batch:
        imgs = np.stack([self.image(t) for t in trajs])
        return Batch(ids=[t.id for t in trajs], mask=np.ones((len(trajs), 1)), times=np.zeros((len(trajs), 1)),
                     images=imgs)

    # ------------------------------------------------------------ persistence

    def to_json(self) -> dict:
        self._require_fit()
        return {
            "config": self.cfg.to_dict(),
            "bbox": list(self.bbox),
            "window_stats": self.window_stats.to_json(),
            "speed_buckets": list(self.speed_buckets.boundaries),
            "turn_buckets": list(self.turn_buckets.boundaries),
            "n_edges": self.n_edges,
            "unigram": self.unigram,
        }

    @classmethod
    def from_json(cls, obj: dict, network: RoadNetwork | None = None) -> "Featurizer":
        f = cls(FeaturizerConfig(**obj["config"]))
        f.bbox = tuple(obj["bbox"])
        f.window_stats = FeatureStats.from_json(obj["window_stats"])
        f.speed_buckets = BucketSpec(tuple(obj["speed_buckets"]))
        f.turn_buckets = BucketSpec(tuple(obj["turn_buckets"]))
        f.n_edges = int(obj["n_edges"])
        f.unigram = {k: list(v) for k, v in obj["unigram"].items()}
        f.attach_network(network)
        return f


def _quantile_buckets(values: np.ndarray, n: int) -> BucketSpec:
    qs = np.unique(np.quantile(values, np.linspace(0, 1, n + 1)[1:-1]))
    if qs.size == 0:
        qs = np.array([float(np.median(values)) + 1e-9])
    return BucketSpec(tuple(float(q) for q in qs))
