"""Bit-exact rasterizer: 64x64 single-channel frames of an EnvState.

Pixels are sampled at their centers with strict point-in-shape tests and no
anti-aliasing, so identical states give byte-identical frames. Background
is 0.0; object intensity is (3 + id mod 6)/10; the gripper is a 2-pixel
radius disk at 1.0 (0.9 when the aperture is at most half closed).
"""

from __future__ import annotations

import math

import numpy as np

from .scene import EnvState, ObjectState

FRAME_SIZE = 64

_coords = (np.arange(FRAME_SIZE) + 0.5) / FRAME_SIZE
_PX, _PY = np.meshgrid(_coords, _coords)  # PX[row, col] = x, PY[row, col] = y


def object_intensity(oid: int) -> float:
    return (3 + oid % 6) / 10.0


def render(state: EnvState) -> np.ndarray:
    frame = np.zeros((FRAME_SIZE, FRAME_SIZE))
    for obj in sorted(state.objects, key=lambda o: (o.z_level, o.oid)):
        mask = _object_mask(obj)
        frame[mask] = object_intensity(obj.oid)
    g = state.gripper
    gmask = (_PX - g.x) ** 2 + (_PY - g.y) ** 2 < (2.0 / FRAME_SIZE) ** 2
    frame[gmask] = 1.0 if g.aperture > 0.5 else 0.9
    return frame


def _object_mask(obj: ObjectState) -> np.ndarray:
    if obj.kind == "disk":
        return (_PX - obj.x) ** 2 + (_PY - obj.y) ** 2 < obj.size[0] ** 2
    if obj.kind == "rect":
        return _rect_mask(obj.x, obj.y, obj.theta, obj.size[0], obj.size[1])
    if obj.kind == "bowl":
        d2 = (_PX - obj.x) ** 2 + (_PY - obj.y) ** 2
        return (d2 < obj.size[0] ** 2) & (d2 >= obj.size[1] ** 2)
    if obj.kind == "towel2link":
        length, half_w = obj.size
        m = _link_mask(obj.x, obj.y, obj.theta, length, half_w)
        phi = obj.theta + math.pi - obj.fold_angle
        return m | _link_mask(obj.x, obj.y, phi, length, half_w)
    raise ValueError(f"unknown kind {obj.kind!r}")


def _rect_mask(cx, cy, theta, half_w, half_h) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    dx = _PX - cx
    dy = _PY - cy
    u = c * dx + s * dy
    v = -s * dx + c * dy
    return (np.abs(u) < half_w) & (np.abs(v) < half_h)


def _link_mask(px, py, phi, length, half_w) -> np.ndarray:
    """A towel link: rectangle from the pivot outward along direction phi."""
    cx = px + 0.5 * length * math.cos(phi)
    cy = py + 0.5 * length * math.sin(phi)
    return _rect_mask(cx, cy, phi, 0.5 * length, half_w)


def encode_frame(frame: np.ndarray) -> bytes:
    """Pack a palette frame into one byte per pixel (intensity times ten)."""
    return np.round(frame * 10.0).astype(np.uint8).tobytes()


def decode_frame(raw: bytes) -> np.ndarray:
    arr = np.frombuffer(raw, dtype=np.uint8).reshape(FRAME_SIZE, FRAME_SIZE)
    return arr.astype(np.float64) / 10.0
