"""Policies: the scripted expert, behavior-cloned diffusion policies, and
the degraded-variant suite used by the evaluation studies.

A diffusion policy denoises a 16-action chunk conditioned on the current
encoded state; inference is 5-step deterministic DDIM from an explicit
initial latent, which makes the policy a pure function of (state, latent)
and therefore steerable by the RL stack. By default the caller executes 8
actions before re-planning.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import autodiff as ad
from . import nets, statecodec
from .checkpoint import load_checkpoint, save_checkpoint
from .diffusion import DenoiserNet, NoiseSchedule, ddim_sample, diffusion_loss
from .dynamics import Action
from .env import Env
from .optim import Adam, clip_grad_norm
from .playsys import SafetyLimits, execute
from .rng import Rng
from .scene import EnvState, SceneConfig, jittered_state
from .skills import Instruction, Perturbation, SkillController
from .store import Episode, EpisodeStore
from .tasks import BehaviorMode, TaskSpec, check_success, classify_clip


@dataclass(frozen=True)
class PolicyConfig:
    horizon: int = 16
    denoise_steps: int = 100
    ddim_steps: int = 5
    replan: int = 8
    hidden: int = 256
    depth: int = 3
    activation: str = "silu"
    lr: float = 1e-3
    batch: int = 64
    grad_clip: float = 1.0


@dataclass
class DiffusionPolicy:
    cfg: PolicyConfig
    scene: SceneConfig
    denoiser: DenoiserNet
    schedule: NoiseSchedule
    train_steps_done: int = 0
    loss_trace: list = field(default_factory=list)

    @property
    def latent_dim(self) -> int:
        return self.cfg.horizon * 4

    def param_hash(self) -> str:
        return self.denoiser.net.param_hash()


def create_policy(scene: SceneConfig, cfg: PolicyConfig, rng: Rng) -> DiffusionPolicy:
    cond_dim = statecodec.state_dim(len(scene.objects))
    denoiser = DenoiserNet.create(cfg.horizon * 4, cond_dim, rng, hidden=cfg.hidden,
                                  depth=cfg.depth, activation=cfg.activation,
                                  x0_head=True)
    return DiffusionPolicy(cfg=cfg, scene=scene, denoiser=denoiser,
                           schedule=NoiseSchedule.linear_scaled(cfg.denoise_steps))


def make_expert(task: TaskSpec, state: EnvState, phys, rng: Rng) -> SkillController:
    """The zero-perturbation skill controller; the demo-collection policy."""
    return SkillController(Instruction(task, Perturbation()), state, phys, rng)


# -- behavior cloning ---------------------------------------------------------

def chunk_dataset(store: EpisodeStore, cfg: PolicyConfig,
                  ids: list[str] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(state, padded action chunk) pairs from every step of every episode."""
    conds, chunks = [], []
    id_set = set(ids) if ids is not None else None
    for eid in store.ids():
        if id_set is not None and eid not in id_set:
            continue
        ep = store.read(eid)
        enc_states = [statecodec.encode_state(s) for s in ep.states]
        enc_actions = [statecodec.encode_action(a) for a in ep.actions]
        for j in range(ep.n_steps):
            chunk = enc_actions[j:j + cfg.horizon]
            while len(chunk) < cfg.horizon:
                chunk.append(np.zeros(4))
            conds.append(enc_states[j])
            chunks.append(np.concatenate(chunk))
    if not conds:
        raise ValueError("no training pairs in store")
    return np.stack(conds), np.stack(chunks)


def train_bc(policy: DiffusionPolicy, demos: EpisodeStore, steps: int, rng: Rng,
             ids: list[str] | None = None, log_every: int = 50) -> list[tuple[int, float]]:
    conds, chunks = chunk_dataset(demos, policy.cfg, ids)
    opt = Adam(lr=policy.cfg.lr)
    n = conds.shape[0]
    trace = []
    for step in range(steps):
        rows = rng.randint_array(policy.cfg.batch, n)
        pvars = nets.wrap_params(policy.denoiser.net)
        loss = diffusion_loss(policy.denoiser, policy.schedule, chunks[rows],
                              conds[rows], rng, pvars, weighting="x0")
        value = float(loss.value)
        if not np.isfinite(value):
            raise FloatingPointError(f"non-finite BC loss at step {step}")
        ad.backward(loss)
        grads = nets.grads_from(pvars)
        clip_grad_norm(grads, policy.cfg.grad_clip)
        opt.step(policy.denoiser.net.params, grads)
        if step % log_every == 0 or step == steps - 1:
            trace.append((policy.train_steps_done + step, value))
    policy.train_steps_done += steps
    policy.loss_trace.extend(trace)
    return trace


# -- inference ----------------------------------------------------------------

def act(policy: DiffusionPolicy, state: EnvState, w0: np.ndarray | None = None,
        rng: Rng | None = None) -> list[Action]:
    """One denoised 16-action chunk; deterministic when w0 is supplied."""
    if w0 is None:
        if rng is None:
            raise ValueError("need either an explicit latent or an rng")
        w0 = rng.normal(policy.latent_dim)
    cond = statecodec.encode_state(state)[None, :]
    out = ddim_sample(policy.denoiser, policy.schedule, cond,
                      policy.cfg.ddim_steps, np.asarray(w0).reshape(1, -1))[0]
    return [statecodec.decode_action(out[4 * i:4 * i + 4]) for i in range(policy.cfg.horizon)]


def run_policy_env(policy: DiffusionPolicy, env: Env, task: TaskSpec, rng: Rng,
                   max_steps: int = 30, replan: int | None = None) -> Episode:
    """Closed-loop policy rollout in the real environment."""
    replan = replan if replan is not None else policy.cfg.replan
    states = [env.state.copy()]
    frames = [env.frame()] if env.render_frames else None
    actions, events, noise = [], [], []
    success = check_success(env.state, task, env.phys)
    t = 0
    while t < max_steps and not success:
        chunk = act(policy, env.state, rng=rng)
        for a in chunk[:replan]:
            if t >= max_steps or success:
                break
            state, event, frame = env.step(a)
            states.append(state.copy())
            actions.append(a.sanitized(env.phys))
            events.append(event)
            noise.append(env.noise_log[-1])
            if frames is not None:
                frames.append(frame)
            success = check_success(state, task, env.phys)
            t += 1
    return Episode(eid="", source="policy_rollout", instruction=Instruction(task),
                   outcome=bool(success), seed=0, states=states, actions=actions,
                   events=events, noise=noise, frames=frames)


# -- the degraded-policy suite -------------------------------------------------

@dataclass(frozen=True)
class PolicyVariant:
    name: str
    demo_count: int
    noise: float          # demo-collection perturbation level in [0, 1]
    train_steps: int


@dataclass(frozen=True)
class PolicySuiteSpec:
    task: TaskSpec
    variants: tuple
    n_real: int = 20
    max_steps: int = 30

    def __post_init__(self):
        if len(self.variants) < 2:
            raise ValueError("a correlation study needs at least 2 policies")


def default_suite_spec(task: TaskSpec | None = None) -> PolicySuiteSpec:
    task = task or TaskSpec("put_in", 1, 0)
    variants = (
        PolicyVariant("untrained", 0, 0.0, 0),
        PolicyVariant("d1-hi", 1, 0.8, 900),
        PolicyVariant("d2-hi", 2, 0.6, 900),
        PolicyVariant("d3-mid", 3, 0.45, 1200),
        PolicyVariant("d5-mid", 5, 0.3, 1200),
        PolicyVariant("d8-low", 8, 0.15, 1500),
        PolicyVariant("d12-low", 12, 0.05, 1500),
        PolicyVariant("d20-clean", 20, 0.0, 1800),
    )
    return PolicySuiteSpec(task=task, variants=variants)


@dataclass
class SuiteEntry:
    variant: PolicyVariant
    policy: DiffusionPolicy
    env_success: float
    mode_hist: dict[str, int]


def collect_task_demos(scene: SceneConfig, task: TaskSpec, episodes: int, noise: float,
                       rng: Rng, store: EpisodeStore, source: str = "demo",
                       render_frames: bool = True, jitter: float = 0.03) -> None:
    """Fixed-task expert demos; noise scales the perturbation knobs together."""
    for i in range(episodes):
        env = Env(scene, seed=rng.spawn_seed(), render_frames=render_frames)
        env.reset(jittered_state(scene, rng, jitter))
        perturb = Perturbation(sigma_w=0.06 * noise, sigma_g=0.05 * noise,
                               speed_mult=1.0 + 0.6 * noise * (rng.uniform() - 0.3))
        ep = execute(env, Instruction(task, perturb), rng,
                     SafetyLimits(max_episode_steps=scene.physics.max_steps))
        ep.eid = f"{source}-{len(store):06d}"
        ep.source = source
        ep.seed = i
        store.append(ep)


def measure_env_success(policy: DiffusionPolicy, scene: SceneConfig, task: TaskSpec,
                        n_rollouts: int, rng: Rng, max_steps: int = 30,
                        replan: int | None = None) -> tuple[float, dict[str, int], list[Episode]]:
    wins = 0
    hist: dict[str, int] = {m.value: 0 for m in BehaviorMode}
    rollouts = []
    for _ in range(n_rollouts):
        env = Env(scene, seed=rng.spawn_seed(), render_frames=False)
        env.reset(jittered_state(scene, rng, 0.03))
        ep = run_policy_env(policy, env, task, rng, max_steps=max_steps, replan=replan)
        wins += ep.outcome
        mode = classify_clip(ep.events, task, ep.states[-1])
        hist[mode.value] += 1
        rollouts.append(ep)
    return wins / n_rollouts, hist, rollouts


def build_suite(spec: PolicySuiteSpec, scene: SceneConfig, rng: Rng,
                store_root: str | None = None) -> list[SuiteEntry]:
    """Train every variant and measure its ground-truth env success rate."""
    import os
    import tempfile

    root = store_root or tempfile.mkdtemp(prefix="suite-demos-")
    entries: list[SuiteEntry] = []
    for variant in spec.variants:
        policy = create_policy(scene, PolicyConfig(), Rng(rng.spawn_seed()))
        if variant.demo_count > 0:
            demo_store = EpisodeStore(os.path.join(root, variant.name))
            collect_task_demos(scene, spec.task, variant.demo_count, variant.noise,
                               Rng(rng.spawn_seed()), demo_store, render_frames=False)
            train_bc(policy, demo_store, variant.train_steps, Rng(rng.spawn_seed()))
        rate, hist, _ = measure_env_success(policy, scene, spec.task, spec.n_real,
                                            Rng(rng.spawn_seed()), spec.max_steps)
        entries.append(SuiteEntry(variant=variant, policy=policy,
                                  env_success=rate, mode_hist=hist))
    return entries


# -- persistence ----------------------------------------------------------

def save_policy(policy: DiffusionPolicy, path: str) -> None:
    from .scene import scene_to_dict

    header = {
        "config": asdict(policy.cfg),
        "scene": scene_to_dict(policy.scene),
        "train_steps_done": policy.train_steps_done,
    }
    save_checkpoint(path, "policy", header, policy.denoiser.net.params)


def load_policy(path: str) -> DiffusionPolicy:
    from .scene import scene_from_dict

    kind, header, params = load_checkpoint(path)
    if kind != "policy":
        raise ValueError(f"checkpoint kind {kind!r} is not a policy")
    policy = create_policy(scene_from_dict(header["scene"]),
                           PolicyConfig(**header["config"]), Rng(0))
    policy.denoiser.net.params = params
    policy.train_steps_done = header["train_steps_done"]
    return policy
