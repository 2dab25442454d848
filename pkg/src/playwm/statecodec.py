"""Fixed affine codec between EnvState/Action and the learned models' vectors.

Encoded components live in roughly [-1, 1]. The object roster (ids, kinds,
sizes) is scene metadata and never encoded; decode() needs a template state
to restore it and projects the vector back onto the valid state manifold
(clamped positions, binary height, rounded stack levels).
"""

from __future__ import annotations

import math

import numpy as np

from .dynamics import Action
from .scene import EnvState

MAX_Z_LEVEL = 2


def state_dim(n_objects: int) -> int:
    return 4 + n_objects + 5 * n_objects


def encode_state(state: EnvState) -> np.ndarray:
    g = state.gripper
    parts = [g.x * 2 - 1, g.y * 2 - 1, float(g.z) * 2 - 1, g.aperture * 2 - 1]
    for obj in state.objects:
        parts.append(1.0 if g.held == obj.oid else -1.0)
    for obj in state.objects:
        parts.extend([
            obj.x * 2 - 1,
            obj.y * 2 - 1,
            _wrap_angle(obj.theta) / math.pi,
            float(obj.z_level) - 1.0,
            obj.fold_angle / math.pi * 2 - 1,
        ])
    return np.array(parts)


def decode_state(vec: np.ndarray, template: EnvState) -> EnvState:
    vec = np.asarray(vec, dtype=np.float64)
    n = len(template.objects)
    if vec.shape[-1] != state_dim(n):
        raise ValueError(f"vector width {vec.shape[-1]} != state dim {state_dim(n)}")
    s = template.copy()
    g = s.gripper
    g.x = _unit(vec[0])
    g.y = _unit(vec[1])
    g.z = 1 if vec[2] > 0.0 else 0
    g.aperture = _unit(vec[3])
    held_slots = vec[4:4 + n]
    g.held = None
    if held_slots.size and held_slots.max() > 0.0:
        g.held = s.objects[int(held_slots.argmax())].oid
    body = vec[4 + n:]
    for i, obj in enumerate(s.objects):
        ox, oy, oth, oz, of = body[5 * i:5 * i + 5]
        obj.x = _unit(ox)
        obj.y = _unit(oy)
        obj.theta = _wrap_angle(oth * math.pi)
        obj.z_level = int(np.clip(round(oz + 1.0), 0, MAX_Z_LEVEL))
        obj.fold_angle = float(np.clip((of + 1) / 2 * math.pi, 0.0, math.pi))
    if g.held is not None:
        # held rigid objects ride at the gripper position
        obj = s.object_by_id(g.held)
        if obj.kind != "towel2link":
            obj.x, obj.y = g.x, g.y
            obj.z_level = 0
    return s


def encode_action(a: Action, a_max: float = 0.08) -> np.ndarray:
    return np.array([a.dx / a_max, a.dy / a_max, a.dz, a.dg])


def decode_action(vec: np.ndarray, a_max: float = 0.08) -> Action:
    vec = np.asarray(vec, dtype=np.float64)
    return Action(
        dx=float(np.clip(vec[0], -1, 1)) * a_max,
        dy=float(np.clip(vec[1], -1, 1)) * a_max,
        dz=float(np.clip(vec[2], -1, 1)),
        dg=float(np.clip(vec[3], -1, 1)),
    )


def _unit(v: float) -> float:
    return float(np.clip((v + 1.0) / 2.0, 0.0, 1.0))


def _wrap_angle(theta: float) -> float:
    """Wrap to [-pi, pi)."""
    return (theta + math.pi) % (2 * math.pi) - math.pi
