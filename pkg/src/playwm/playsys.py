"""Autonomous play collection: grammar proposer, executor loop, and driver.

The proposer replaces a scene-describing language model with a seeded
grammar over verbs and applicable object pairs; instruction perturbations
(waypoint noise, grasp offset, speed) are the diversity source. An
out-of-bounds object always preempts the grammar with a retrieve-to-center
instruction. Play collection never resets the scene between episodes; demo
collection resets to a jittered nominal scene and runs the zero
perturbation expert.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

from .dynamics import Action, Event, out_of_bounds_ids
from .env import Env
from .rng import Rng
from .scene import EnvState, Physics, SceneConfig, jittered_state
from .skills import Instruction, Perturbation, SkillController
from .store import Episode, EpisodeStore
from .tasks import NEAR_RADIUS, FOLD_DONE, UNFOLD_DONE, TaskSpec, check_success

log = logging.getLogger("playwm.collect")

GRAMMAR_VERBS = ("put_in", "take_out", "put_near", "stack", "unstack",
                 "fold", "unfold", "push_to")


class ProposalError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProposerConfig:
    verb_weights: dict = field(default_factory=lambda: {v: 1.0 / len(GRAMMAR_VERBS) for v in GRAMMAR_VERBS})
    sigma_w_max: float = 0.05
    sigma_g_max: float = 0.05
    speed_range: tuple = (0.7, 1.6)
    reset_priority: bool = True
    towel_transport: bool = True  # allow put_near with the towel as subject
    towel_bias: int = 1           # extra weight on towel-subject put_near tasks

    def __post_init__(self):
        total = sum(self.verb_weights.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"grammar weights sum to {total}, expected 1")


@dataclass(frozen=True)
class SafetyLimits:
    margin: float = 0.05
    step_clamp: float = 0.08
    max_episode_steps: int = 30


DEMO_VERBS = ("put_in", "take_out", "stack", "unstack", "fold", "unfold")


def expert_config() -> ProposerConfig:
    weights = {v: (1.0 / len(DEMO_VERBS) if v in DEMO_VERBS else 0.0)
               for v in GRAMMAR_VERBS}
    return ProposerConfig(verb_weights=weights, sigma_w_max=0.0, sigma_g_max=0.0,
                          speed_range=(1.0, 1.0), towel_transport=False)


def human_play_config() -> ProposerConfig:
    return ProposerConfig(sigma_w_max=0.12, sigma_g_max=0.10, speed_range=(0.5, 2.0))


def bench_config() -> ProposerConfig:
    """Source mix for the replay benchmark: biased toward the rare modes."""
    weights = {"put_in": 0.12, "take_out": 0.08, "put_near": 0.28, "stack": 0.16,
               "unstack": 0.05, "fold": 0.02, "unfold": 0.02, "push_to": 0.27}
    return ProposerConfig(verb_weights=weights, sigma_w_max=0.09, sigma_g_max=0.08,
                          speed_range=(0.6, 1.9), towel_bias=4)


PROPOSER_PRESETS = {
    "play": ProposerConfig,
    "demo": expert_config,
    "human_play": human_play_config,
    "bench": bench_config,
}


def applicable_tasks(state: EnvState, cfg: ProposerConfig, phys: Physics) -> dict[str, list[TaskSpec]]:
    """Enumerate per-verb candidate tasks whose predicates are currently false."""
    bowls = [o for o in state.objects if o.kind == "bowl"]
    rigids = [o for o in state.objects if o.kind in ("disk", "rect")]
    towels = [o for o in state.objects if o.kind == "towel2link"]
    out: dict[str, list[TaskSpec]] = {v: [] for v in GRAMMAR_VERBS}

    for bowl in bowls:
        for obj in rigids:
            inside = math.hypot(obj.x - bowl.x, obj.y - bowl.y) < bowl.size[0]
            if inside:
                out["take_out"].append(TaskSpec("take_out", obj.oid, bowl.oid))
            else:
                out["put_in"].append(TaskSpec("put_in", obj.oid, bowl.oid))

    movable = rigids + (towels if cfg.towel_transport else [])
    for subj in movable:
        copies = max(1, cfg.towel_bias) if subj.kind == "towel2link" else 1
        for other in state.objects:
            if other.oid == subj.oid:
                continue
            if math.hypot(subj.x - other.x, subj.y - other.y) >= NEAR_RADIUS:
                out["put_near"].extend([TaskSpec("put_near", subj.oid, other.oid)] * copies)

    for subj in rigids:
        for base in rigids:
            if base.oid == subj.oid:
                continue
            if subj.z_level == base.z_level + 1 and math.hypot(subj.x - base.x, subj.y - base.y) <= phys.r_stack:
                out["unstack"].append(TaskSpec("unstack", subj.oid, base.oid))
            elif subj.z_level == 0:
                out["stack"].append(TaskSpec("stack", subj.oid, base.oid))

    for towel in towels:
        if towel.fold_angle < FOLD_DONE:
            out["fold"].append(TaskSpec("fold", towel.oid))
        if towel.fold_angle > UNFOLD_DONE:
            out["unfold"].append(TaskSpec("unfold", towel.oid))

    for subj in rigids:
        out["push_to"].append(TaskSpec("push_to", subj.oid, region=None))
    return out


def propose(state: EnvState, cfg: ProposerConfig, rng: Rng,
            phys: Physics | None = None) -> Instruction:
    phys = phys or Physics()
    if not any(o.kind != "bowl" for o in state.objects):
        raise ProposalError("scene has no proposable object")

    perturb = Perturbation(
        sigma_w=rng.uniform() * cfg.sigma_w_max,
        sigma_g=rng.uniform() * cfg.sigma_g_max,
        speed_mult=cfg.speed_range[0] + rng.uniform() * (cfg.speed_range[1] - cfg.speed_range[0]),
        synonym=rng.randint(3),
    )

    if cfg.reset_priority:
        stray = [oid for oid in out_of_bounds_ids(state, phys)
                 if state.object_by_id(oid).kind != "towel2link"]
        if stray:
            return Instruction(TaskSpec("reset_retrieve", stray[0]), perturb)

    candidates = applicable_tasks(state, cfg, phys)
    verbs = [v for v in GRAMMAR_VERBS if candidates[v] and cfg.verb_weights.get(v, 0.0) > 0.0]
    if not verbs:
        raise ProposalError("no applicable instruction for this scene")
    weights = [cfg.verb_weights[v] for v in verbs]
    verb = verbs[rng.choice(weights)]
    task = candidates[verb][rng.randint(len(candidates[verb]))]
    if verb == "push_to":
        region = (0.2 + rng.uniform() * 0.6, 0.2 + rng.uniform() * 0.6)
        task = replace(task, region=region)
    return Instruction(task, perturb)


def execute(env: Env, instr: Instruction, rng: Rng,
            limits: SafetyLimits | None = None) -> Episode:
    """Run one instruction to success, terminal failure, or the step budget."""
    limits = limits or SafetyLimits()
    skill = SkillController(instr, env.state, env.phys, rng)
    states = [env.state.copy()]
    frames = [env.frame()] if env.render_frames else None
    actions: list[Action] = []
    events: list[Event] = []
    noise: list[float] = []
    success = check_success(env.state, instr.task, env.phys)
    while len(actions) < limits.max_episode_steps and not success:
        act = skill.action(env.state)
        if act is None:
            break
        act = _safety_clamp(act, limits)
        state, event, frame = env.step(act)
        states.append(state.copy())
        actions.append(act.sanitized(env.phys))
        events.append(event)
        noise.append(env.noise_log[-1])
        if frames is not None:
            frames.append(frame)
        success = check_success(state, instr.task, env.phys)
    return Episode(
        eid="", source="", instruction=instr, outcome=bool(success), seed=0,
        states=states, actions=actions, events=events, noise=noise, frames=frames,
    )


def _safety_clamp(a: Action, limits: SafetyLimits) -> Action:
    c = limits.step_clamp
    return Action(dx=_clip(a.dx, -c, c), dy=_clip(a.dy, -c, c), dz=a.dz, dg=a.dg)


def collect(scene: SceneConfig, proposer: ProposerConfig, episodes: int, rng: Rng,
            store: EpisodeStore, source: str = "play", reset_each: bool = False,
            reset_jitter: float = 0.02, limits: SafetyLimits | None = None,
            render_frames: bool = True) -> EpisodeStore:
    """Alternate propose/execute for a fixed number of episodes.

    Play mode leaves the scene wherever the last episode ended; demo mode
    (reset_each) restores a jittered nominal scene before every episode.
    """
    limits = limits or SafetyLimits(step_clamp=scene.physics.a_max,
                                    max_episode_steps=scene.physics.max_steps)
    env = Env(scene, seed=rng.spawn_seed(), render_frames=render_frames)
    if not reset_each:
        env.reset(jittered_state(scene, rng, reset_jitter))
    for i in range(episodes):
        if reset_each:
            env.reset(jittered_state(scene, rng, reset_jitter))
        ep_seed = rng.spawn_seed()
        ep_rng = Rng(ep_seed)
        instr = propose(env.state, proposer, ep_rng, env.phys)
        episode = execute(env, instr, ep_rng, limits)
        episode.eid = f"{source}-{i:06d}"
        episode.source = source
        episode.seed = ep_seed
        store.append(episode)
        hist: dict[str, int] = {}
        for e in episode.events:
            hist[e.kind.name] = hist.get(e.kind.name, 0) + 1
        log.info("episode %s %s outcome=%s events=%s", episode.eid, instr.text(),
                 episode.outcome, hist)
    return store


def _clip(v, lo, hi):
    return lo if v < lo else hi if v > hi else v
