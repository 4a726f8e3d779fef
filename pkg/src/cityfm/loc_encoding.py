"""Parameter-free sinusoidal encoding of (lat, lon) positions."""

from __future__ import annotations

import numpy as np

from cityfm.corpus import GeoPoint


def frequencies(d: int = 128, lam: float = 100.0) -> np.ndarray:
    """omega_k = lam / 10000**(2k/d) for k = 0 .. d/2 - 1."""
    if d < 2 or d % 2:
        raise ValueError(f"d must be even and >= 2, got {d}")
    if not lam > 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    k = np.arange(d // 2, dtype=np.float64)
    return lam / 10000.0 ** (2.0 * k / d)


def encode_coordinate(values: np.ndarray, d: int = 128, lam: float = 100.0) -> np.ndarray:
    """(n, d) block: column 2k = sin(omega_k * p), column 2k+1 = cos(omega_k * p). Angles in degrees as given."""
    omega = frequencies(d, lam)
    angles = np.asarray(values, dtype=np.float64)[:, None] * omega[None, :]
    out = np.empty((angles.shape[0], d), dtype=np.float64)
    out[:, 0::2] = np.sin(angles)
    out[:, 1::2] = np.cos(angles)
    return out


def encode_locations(latlon: np.ndarray, d: int = 128, lam: float = 100.0) -> np.ndarray:
    """(n, 2d) codes, latitude block then longitude block."""
    latlon = np.atleast_2d(np.asarray(latlon, dtype=np.float64))
    return np.concatenate([encode_coordinate(latlon[:, 0], d, lam), encode_coordinate(latlon[:, 1], d, lam)], axis=1)


def encode_location(p: GeoPoint, d: int = 128, lam: float = 100.0) -> np.ndarray:
    """2d-dimensional location code of a single point."""
    return encode_locations(np.array([[p.lat, p.lon]]), d, lam)[0]
