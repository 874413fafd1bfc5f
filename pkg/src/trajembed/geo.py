"""Spherical and local-planar distance helpers."""

from __future__ import annotations

import numpy as np

EARTH_RADIUS_M = 6_371_000.0


def haversine(lng1, lat1, lng2, lat2):
    """Great-circle distance in meters; broadcasts over numpy inputs."""
    lng1, lat1, lng2, lat2 = (np.radians(np.asarray(v, dtype=np.float64)) for v in (lng1, lat1, lng2, lat2))
    a = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lng2 - lng1) / 2) ** 2
    return 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def meters_per_degree(lat: float) -> tuple[float, float]:
    """Local (x, y) meters per degree of longitude / latitude at ``lat``."""
    k = np.pi / 180.0 * EARTH_RADIUS_M
    return k * np.cos(np.radians(lat)), k


def to_local_xy(lng, lat, ref_lat: float):
    mx, my = meters_per_degree(ref_lat)
    return np.asarray(lng, dtype=np.float64) * mx, np.asarray(lat, dtype=np.float64) * my
