"""Spherical geometry helpers shared by de-identification and location features."""

import numpy as np

EARTH_RADIUS_KM = 6371.0


def haversine(lat1, lon1, lat2, lon2):
    """Great-circle distance in km between points given in degrees.

    Broadcasts over numpy arrays.
    """
    phi1, phi2 = np.radians(lat1), np.radians(lat2)
    dphi = phi2 - phi1
    dlmb = np.radians(np.asarray(lon2) - np.asarray(lon1))
    a = np.sin(dphi / 2) ** 2 + np.cos(phi1) * np.cos(phi2) * np.sin(dlmb / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))


def to_unit_vectors(lat, lon):
    phi, lmb = np.radians(lat), np.radians(lon)
    return np.stack(
        [np.cos(phi) * np.cos(lmb), np.cos(phi) * np.sin(lmb), np.sin(phi)], axis=-1
    )


def from_unit_vectors(v):
    v = v / np.linalg.norm(v, axis=-1, keepdims=True)
    lat = np.degrees(np.arcsin(np.clip(v[..., 2], -1.0, 1.0)))
    lon = np.degrees(np.arctan2(v[..., 1], v[..., 0]))
    return lat, lon


def destination(lat, lon, bearing_deg, dist_km):
    """Point reached travelling ``dist_km`` along ``bearing_deg`` from (lat, lon)."""
    phi1, lmb1 = np.radians(lat), np.radians(lon)
    theta = np.radians(bearing_deg)
    delta = dist_km / EARTH_RADIUS_KM
    phi2 = np.arcsin(np.sin(phi1) * np.cos(delta) + np.cos(phi1) * np.sin(delta) * np.cos(theta))
    lmb2 = lmb1 + np.arctan2(
        np.sin(theta) * np.sin(delta) * np.cos(phi1),
        np.cos(delta) - np.sin(phi1) * np.sin(phi2),
    )
    lon2 = (np.degrees(lmb2) + 540.0) % 360.0 - 180.0
    return np.degrees(phi2), lon2


def rotation_between(lat_a, lon_a, lat_b, lon_b):
    """3x3 rotation matrix carrying point a onto point b about their common normal."""
    a = to_unit_vectors(lat_a, lon_a)
    b = to_unit_vectors(lat_b, lon_b)
    axis = np.cross(a, b)
    s = np.linalg.norm(axis)
    c = float(np.dot(a, b))
    if s < 1e-15:
        return np.eye(3)
    k = axis / s
    kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + s * kx + (1 - c) * (kx @ kx)


def rotate_points(lat, lon, rot):
    v = to_unit_vectors(np.asarray(lat, dtype=float), np.asarray(lon, dtype=float))
    return from_unit_vectors(v @ rot.T)
