"""Scene and state types for the 2D tabletop environment.

The workspace is the unit square. A point gripper moves in x/y with a
binary height (0 down, 1 up) and an aperture in [0, 1]. Objects are rigid
disks and rectangles, an annular bowl, and a two-link towel hinged at its
pivot whose fold angle in [0, pi] is the one articulated degree of freedom.

Object sizes by kind:
    disk        (radius,)
    rect        (half_w, half_h)
    bowl        (outer_r, inner_r)
    towel2link  (link_len, half_width)
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

KINDS = ("disk", "rect", "bowl", "towel2link")


@dataclass(frozen=True)
class Physics:
    a_max: float = 0.08        # per-step |dx|,|dy| clamp
    r_grasp: float = 0.05      # grasp capture radius
    v_slip: float = 0.05       # deterministic slip above this held planar speed
    v_fate: float = 0.04       # a fated grasp slips above this speed
    p_slip: float = 0.05       # per-grasp slip probability
    r_stack: float = 0.04      # release within this of a base stacks or topples
    r_topple: float = 0.025    # stacking offset beyond this topples
    grip_dg: float = 0.3       # |dg| deadband before a close/open takes effect
    margin: float = 0.05       # tape margin; outside is out-of-bounds
    gripper_radius: float = 2.0 / 64.0
    max_steps: int = 30
    control_hz: float = 5.0


@dataclass
class ObjectState:
    oid: int
    kind: str
    x: float
    y: float
    theta: float
    size: tuple
    z_level: int = 0
    fold_angle: float = 0.0

    def pos(self) -> tuple[float, float]:
        return (self.x, self.y)

    def effective_radius(self) -> float:
        if self.kind == "disk":
            return self.size[0]
        if self.kind == "rect":
            return math.hypot(self.size[0], self.size[1])
        if self.kind == "bowl":
            return self.size[0]
        return self.size[0]  # towel: link length

    def towel_free_end(self) -> tuple[float, float]:
        if self.kind != "towel2link":
            raise ValueError("free end only defined for towel2link")
        length = self.size[0]
        phi = self.theta + math.pi - self.fold_angle
        return (self.x + length * math.cos(phi), self.y + length * math.sin(phi))


@dataclass
class GripperState:
    x: float = 0.5
    y: float = 0.5
    z: int = 1
    aperture: float = 1.0
    held: int | None = None


@dataclass
class EnvState:
    gripper: GripperState
    objects: list[ObjectState]
    step_index: int = 0
    slip_fated: bool = False  # hidden fate of the current grasp

    def object_by_id(self, oid: int) -> ObjectState:
        for obj in self.objects:
            if obj.oid == oid:
                return obj
        raise KeyError(f"no object with id {oid}")

    def copy(self) -> "EnvState":
        return EnvState(
            gripper=replace(self.gripper),
            objects=[replace(o) for o in self.objects],
            step_index=self.step_index,
            slip_fated=self.slip_fated,
        )


@dataclass(frozen=True)
class SceneConfig:
    objects: tuple          # tuple of ObjectState templates (nominal poses)
    physics: Physics = field(default_factory=Physics)
    seed: int = 0

    def nominal_state(self) -> EnvState:
        return EnvState(gripper=GripperState(), objects=[replace(o) for o in self.objects])


def default_scene(seed: int = 0) -> SceneConfig:
    objects = (
        ObjectState(0, "bowl", 0.28, 0.30, 0.0, (0.11, 0.085)),
        ObjectState(1, "disk", 0.60, 0.35, 0.0, (0.035,)),
        ObjectState(2, "rect", 0.45, 0.62, 0.0, (0.035, 0.027)),
        ObjectState(3, "rect", 0.68, 0.60, 0.0, (0.030, 0.030)),
        ObjectState(4, "towel2link", 0.72, 0.80, -2.3, (0.085, 0.028)),
    )
    return SceneConfig(objects=objects, seed=seed)


def scene_to_dict(cfg: SceneConfig) -> dict:
    return {
        "seed": cfg.seed,
        "physics": {k: getattr(cfg.physics, k) for k in Physics.__dataclass_fields__},
        "objects": [
            {
                "id": o.oid, "kind": o.kind, "pose": [o.x, o.y, o.theta],
                "size": list(o.size), "z_level": o.z_level, "fold_angle": o.fold_angle,
            }
            for o in cfg.objects
        ],
    }


def scene_from_dict(data: dict) -> SceneConfig:
    phys = Physics(**data.get("physics", {}))
    objs = []
    for od in data["objects"]:
        kind = od["kind"]
        if kind not in KINDS:
            raise ValueError(f"unknown object kind {kind!r}")
        x, y, theta = od["pose"]
        objs.append(ObjectState(od["id"], kind, x, y, theta, tuple(od["size"]),
                                od.get("z_level", 0), od.get("fold_angle", 0.0)))
    return SceneConfig(objects=tuple(objs), physics=phys, seed=data.get("seed", 0))


def load_scene(path: str) -> SceneConfig:
    with open(path) as fh:
        return scene_from_dict(json.load(fh))


def save_scene(cfg: SceneConfig, path: str) -> None:
    with open(path, "w") as fh:
        json.dump(scene_to_dict(cfg), fh, indent=2, sort_keys=True)


def jittered_state(cfg: SceneConfig, rng, jitter: float = 0.02) -> EnvState:
    """Nominal scene with Gaussian pose jitter, pushed apart until separated."""
    state = cfg.nominal_state()
    for obj in state.objects:
        obj.x = _clip(obj.x + rng.gauss() * jitter, 0.12, 0.88)
        obj.y = _clip(obj.y + rng.gauss() * jitter, 0.12, 0.88)
    _separate(state)
    return state


def _separate(state: EnvState, iters: int = 12) -> None:
    rigids = [o for o in state.objects if o.kind in ("disk", "rect")]
    for _ in range(iters):
        moved = False
        for i, a in enumerate(rigids):
            for b in rigids[i + 1:]:
                ra, rb = a.effective_radius(), b.effective_radius()
                dx, dy = b.x - a.x, b.y - a.y
                d = math.hypot(dx, dy)
                if d < ra + rb:
                    if d < 1e-9:
                        dx, dy, d = 1.0, 0.0, 1.0
                    push = (ra + rb - d) / 2 + 1e-4
                    b.x = _clip(b.x + dx / d * push, 0.08, 0.92)
                    b.y = _clip(b.y + dy / d * push, 0.08, 0.92)
                    a.x = _clip(a.x - dx / d * push, 0.08, 0.92)
                    a.y = _clip(a.y - dy / d * push, 0.08, 0.92)
                    moved = True
        if not moved:
            return


def _clip(v: float, lo: float, hi: float) -> float:
    return lo if v < lo else hi if v > hi else v
