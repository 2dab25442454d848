"""Episode persistence: one binary blob per episode plus a JSONL manifest.

Blob layout (little-endian throughout):

    magic   4 bytes  b"PWEP"
    version u32      1
    meta_len u32     length of the UTF-8 JSON metadata block
    meta    bytes    id, source, instruction, outcome, seed, counts
    states  (n_frames, 6 + 5*n_objects) f8   raw state rows
    actions (n_steps, 4) f8                  sanitized (dx, dy, dz, dg)
    events  (n_steps, 3) i4                  kind, oid0, oid1 (-1 if absent)
    noise   (n_steps,) f8                    per-step uniform draws
    frames  n_frames * 4096 u1               palette-packed 64x64 frames

n_frames = n_steps + 1 (initial state included). A state row is
[gx, gy, gz, aperture, held_id, slip_fated] followed by
[x, y, theta, z_level, fold_angle] per object in roster order.

Writes go to a temp file and rename into place; the manifest line carries
the blob's sha256. Such appends are atomic and re-hashable.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import Action, Event, EventKind
from .render import FRAME_SIZE, decode_frame, encode_frame
from .scene import EnvState, GripperState, ObjectState
from .skills import Instruction, Perturbation
from .tasks import BehaviorMode, TaskSpec, classify_clip

MAGIC = b"PWEP"
VERSION = 1


@dataclass
class Episode:
    eid: str
    source: str            # play | demo | human_play_sim | policy_rollout
    instruction: Instruction
    outcome: bool
    seed: int
    states: list[EnvState]
    actions: list[Action]
    events: list[Event]
    noise: list[float]
    frames: list[np.ndarray] | None = None

    @property
    def n_steps(self) -> int:
        return len(self.actions)

    @property
    def n_frames(self) -> int:
        return len(self.states)

    def validate(self) -> None:
        if not self.states:
            raise ValueError("episode has no states")
        if len(self.states) != len(self.actions) + 1:
            raise ValueError("states must be one longer than actions")
        if len(self.events) != len(self.actions) or len(self.noise) != len(self.actions):
            raise ValueError("events/noise must align with actions")
        if self.frames is not None and len(self.frames) != len(self.states):
            raise ValueError("frames must align with states")


@dataclass(frozen=True)
class ClipWindow:
    episode_id: str
    start: int
    length: int
    mode: BehaviorMode


class StoreError(RuntimeError):
    pass


class EpisodeStore:
    def __init__(self, root: str):
        self.root = root
        os.makedirs(os.path.join(root, "episodes"), exist_ok=True)
        self._manifest_path = os.path.join(root, "manifest.jsonl")
        self._index: dict[str, dict] = {}
        if os.path.exists(self._manifest_path):
            with open(self._manifest_path) as fh:
                for line in fh:
                    rec = json.loads(line)
                    self._index[rec["id"]] = rec

    def __len__(self) -> int:
        return len(self._index)

    def ids(self) -> list[str]:
        return list(self._index.keys())

    def meta(self, eid: str) -> dict:
        return self._index[eid]

    def append(self, episode: Episode) -> str:
        episode.validate()
        if episode.eid in self._index:
            raise StoreError(f"duplicate episode id {episode.eid!r}")
        blob = _pack(episode)
        digest = hashlib.sha256(blob).hexdigest()
        rel = os.path.join("episodes", f"{episode.eid}.bin")
        path = os.path.join(self.root, rel)
        tmp = path + ".tmp"
        with open(tmp, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
        rec = {
            "id": episode.eid,
            "file": rel,
            "sha256": digest,
            "source": episode.source,
            "verb": episode.instruction.task.verb,
            "outcome": episode.outcome,
            "n_steps": episode.n_steps,
            "seed": episode.seed,
        }
        line = json.dumps(rec, sort_keys=True)
        tmp_manifest = self._manifest_path + ".tmp"
        with open(tmp_manifest, "w") as fh:
            for old in self._index.values():
                fh.write(json.dumps(old, sort_keys=True) + "\n")
            fh.write(line + "\n")
        os.replace(tmp_manifest, self._manifest_path)
        self._index[episode.eid] = rec
        return episode.eid

    def read(self, eid: str) -> Episode:
        rec = self._index.get(eid)
        if rec is None:
            raise StoreError(f"unknown episode id {eid!r}")
        with open(os.path.join(self.root, rec["file"]), "rb") as fh:
            blob = fh.read()
        return _unpack(blob)

    def verify(self, eid: str) -> bool:
        rec = self._index[eid]
        with open(os.path.join(self.root, rec["file"]), "rb") as fh:
            return hashlib.sha256(fh.read()).hexdigest() == rec["sha256"]

    def manifest_hash(self) -> str:
        with open(self._manifest_path, "rb") as fh:
            return hashlib.sha256(fh.read()).hexdigest()

    def episodes(self):
        for eid in self.ids():
            yield self.read(eid)


def windows(store: EpisodeStore, W: int, stride: int | None = None) -> list[ClipWindow]:
    """All maximal windows of W frames at the given stride, mode-labeled."""
    if W < 2:
        raise ValueError("window length must be at least 2")
    stride = W if stride is None else stride
    out: list[ClipWindow] = []
    for eid in store.ids():
        ep = store.read(eid)
        n = ep.n_frames
        for start in range(0, n - W + 1, stride):
            mode = classify_clip(ep.events[start:start + W - 1], ep.instruction.task,
                                 ep.states[start + W - 1])
            out.append(ClipWindow(eid, start, W, mode))
    return out


def split(store: EpisodeStore, held_out_fraction: float, rng) -> tuple[list[str], list[str]]:
    """Episode-granularity split; windows never straddle the partition."""
    if not 0.0 < held_out_fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    ids = store.ids()
    rng.shuffle(ids)
    k = int(round(len(ids) * held_out_fraction))
    held = sorted(ids[:k])
    train = sorted(ids[k:])
    return train, held


# -- binary packing ---------------------------------------------------------

def _state_row(s: EnvState) -> list[float]:
    g = s.gripper
    row = [g.x, g.y, float(g.z), g.aperture,
           float(g.held) if g.held is not None else -1.0,
           1.0 if s.slip_fated else 0.0]
    for o in s.objects:
        row.extend([o.x, o.y, o.theta, float(o.z_level), o.fold_angle])
    return row


def _state_from_row(row: np.ndarray, meta: dict, step_index: int) -> EnvState:
    g = GripperState(x=row[0], y=row[1], z=int(row[2]), aperture=row[3],
                     held=int(row[4]) if row[4] >= 0 else None)
    objs = []
    for i, om in enumerate(meta["objects"]):
        x, y, theta, z, fold = row[6 + 5 * i:11 + 5 * i]
        objs.append(ObjectState(om["id"], om["kind"], x, y, theta,
                                tuple(om["size"]), int(z), fold))
    return EnvState(gripper=g, objects=objs, step_index=step_index,
                    slip_fated=bool(row[5] > 0.5))


def _pack(ep: Episode) -> bytes:
    task = ep.instruction.task
    perturb = ep.instruction.perturb
    meta = {
        "id": ep.eid,
        "source": ep.source,
        "outcome": ep.outcome,
        "seed": ep.seed,
        "n_steps": ep.n_steps,
        "has_frames": ep.frames is not None,
        "objects": [{"id": o.oid, "kind": o.kind, "size": list(o.size)}
                    for o in ep.states[0].objects],
        "task": {"verb": task.verb, "subject": task.subject, "target": task.target,
                 "region": list(task.region) if task.region else None},
        "perturb": {"sigma_w": perturb.sigma_w, "sigma_g": perturb.sigma_g,
                    "speed_mult": perturb.speed_mult, "synonym": perturb.synonym},
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    chunks = [MAGIC,
              np.array([VERSION, len(meta_bytes)], dtype="<u4").tobytes(),
              meta_bytes]
    states = np.array([_state_row(s) for s in ep.states], dtype="<f8")
    actions = np.array([[a.dx, a.dy, a.dz, a.dg] for a in ep.actions], dtype="<f8").reshape(ep.n_steps, 4)
    events = np.full((ep.n_steps, 3), -1, dtype="<i4")
    for i, e in enumerate(ep.events):
        events[i, 0] = int(e.kind)
        for j, oid in enumerate(e.oids[:2]):
            events[i, 1 + j] = oid
    noise = np.asarray(ep.noise, dtype="<f8")
    chunks += [states.tobytes(), actions.tobytes(), events.tobytes(), noise.tobytes()]
    if ep.frames is not None:
        for f in ep.frames:
            chunks.append(encode_frame(f))
    return b"".join(chunks)


def _unpack(blob: bytes) -> Episode:
    if blob[:4] != MAGIC:
        raise StoreError("bad magic; not an episode blob")
    version, meta_len = np.frombuffer(blob[4:12], dtype="<u4")
    if version != VERSION:
        raise StoreError(f"unsupported blob version {version}")
    off = 12
    meta = json.loads(blob[off:off + meta_len].decode())
    off += int(meta_len)
    n_steps = meta["n_steps"]
    n_frames = n_steps + 1
    n_obj = len(meta["objects"])
    row_w = 6 + 5 * n_obj

    states_arr = np.frombuffer(blob, dtype="<f8", count=n_frames * row_w, offset=off).reshape(n_frames, row_w)
    off += states_arr.nbytes
    actions_arr = np.frombuffer(blob, dtype="<f8", count=n_steps * 4, offset=off).reshape(n_steps, 4)
    off += actions_arr.nbytes
    events_arr = np.frombuffer(blob, dtype="<i4", count=n_steps * 3, offset=off).reshape(n_steps, 3)
    off += events_arr.nbytes
    noise_arr = np.frombuffer(blob, dtype="<f8", count=n_steps, offset=off)
    off += noise_arr.nbytes
    frames = None
    if meta["has_frames"]:
        frames = []
        span = FRAME_SIZE * FRAME_SIZE
        for _ in range(n_frames):
            frames.append(decode_frame(blob[off:off + span]))
            off += span

    states = [_state_from_row(states_arr[i], meta, i) for i in range(n_frames)]
    actions = [Action(*actions_arr[i]) for i in range(n_steps)]
    events = []
    for i in range(n_steps):
        kind = EventKind(int(events_arr[i, 0]))
        oids = tuple(int(v) for v in events_arr[i, 1:] if v >= 0)
        events.append(Event(kind, oids))
    task = meta["task"]
    instr = Instruction(
        TaskSpec(task["verb"], task["subject"], task["target"],
                 tuple(task["region"]) if task["region"] else None),
        Perturbation(**meta["perturb"]),
    )
    return Episode(eid=meta["id"], source=meta["source"], instruction=instr,
                   outcome=meta["outcome"], seed=meta["seed"], states=states,
                   actions=actions, events=events, noise=list(noise_arr), frames=frames)
