"""Study orchestration: replay benchmark, policy-evaluation correlation,
and the data-scaling curve.

Replay: held-out clips balanced across the six behavior modes; the model
conditions on the H-frame prefix, replays the ground-truth actions, and its
rendered predictions are scored against the true future frames. Oracle mode
substitutes the simulator (replaying each clip's recorded noise draws) and
must reach the ideal scores, bounding harness error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import metrics, statecodec
from .curation import Embedder
from .diffusion import ddpm_sample
from .dynamics import Action
from .env import Env
from .metrics import lpips_proxy, mse, psnr, ssim
from .policies import DiffusionPolicy, SuiteEntry, act
from .render import render
from .rng import Rng
from .scene import EnvState, SceneConfig, jittered_state
from .store import ClipWindow, EpisodeStore
from .tasks import (BehaviorMode, MODES, TaskSpec, check_success, classify_clip,
                    infer_transition_event)
from .worldmodel import WorldModel

FAILURE_BENCH_MODES = (BehaviorMode.MISSED_GRASP, BehaviorMode.SLIDE,
                       BehaviorMode.SLIP, BehaviorMode.COLLISION)


class BenchmarkError(RuntimeError):
    pass


@dataclass
class ReplayClip:
    store_name: str
    window: ClipWindow
    hist_states: np.ndarray      # (H, width) encoded
    actions: np.ndarray          # (H-1+C, 4) encoded
    gt_frames: list[np.ndarray]  # C ground-truth future frames
    init_state: EnvState         # state at the last history frame
    raw_actions: list[Action]    # the C driving actions
    noise: list[float]           # the C noise draws for oracle replay


@dataclass
class ReplayBenchmark:
    history: int
    chunk: int
    clips: list[ReplayClip]

    def by_mode(self) -> dict[BehaviorMode, list[int]]:
        out: dict[BehaviorMode, list[int]] = {m: [] for m in MODES}
        for i, c in enumerate(self.clips):
            out[c.window.mode].append(i)
        return out


def build_benchmark(stores: dict[str, EpisodeStore], heldout: dict[str, list[str]],
                    target_per_mode: int, rng: Rng, history: int = 7,
                    chunk: int = 5, stride: int = 3,
                    min_fraction: float = 0.8) -> ReplayBenchmark:
    """Draw a mode-balanced clip set from held-out episodes only."""
    W = history + chunk
    candidates: dict[BehaviorMode, list[tuple[str, ClipWindow]]] = {m: [] for m in MODES}
    for name, store in stores.items():
        allowed = set(heldout.get(name, []))
        for eid in store.ids():
            if eid not in allowed:
                continue
            ep = store.read(eid)
            for start in range(0, ep.n_frames - W + 1, stride):
                mode = classify_clip(ep.events[start:start + W - 1], ep.instruction.task,
                                     ep.states[start + W - 1])
                candidates[mode].append((name, ClipWindow(eid, start, W, mode)))
    floor = int(np.ceil(target_per_mode * min_fraction))
    shortfall = {m.value: len(candidates[m]) for m in MODES
                 if len(candidates[m]) < floor}
    if shortfall:
        raise BenchmarkError(
            f"insufficient held-out clips per mode (need >= {floor}): {shortfall}")
    clips: list[ReplayClip] = []
    for mode in MODES:
        pool = candidates[mode]
        picks = list(range(len(pool)))
        rng.shuffle(picks)
        for idx in picks[:min(target_per_mode, len(pool))]:
            name, w = pool[idx]
            clips.append(_load_clip(stores[name], name, w, history, chunk))
    return ReplayBenchmark(history=history, chunk=chunk, clips=clips)


def _load_clip(store: EpisodeStore, name: str, w: ClipWindow, H: int, C: int) -> ReplayClip:
    ep = store.read(w.episode_id)
    if ep.frames is None:
        raise BenchmarkError(f"episode {w.episode_id} has no frames")
    s0 = w.start
    hist = np.stack([statecodec.encode_state(s) for s in ep.states[s0:s0 + H]])
    acts = np.stack([statecodec.encode_action(a) for a in ep.actions[s0:s0 + H - 1 + C]])
    return ReplayClip(
        store_name=name, window=w, hist_states=hist, actions=acts,
        gt_frames=[ep.frames[s0 + H + i] for i in range(C)],
        init_state=ep.states[s0 + H - 1],
        raw_actions=ep.actions[s0 + H - 1:s0 + H - 1 + C],
        noise=ep.noise[s0 + H - 1:s0 + H - 1 + C],
    )


def run_replay(benchmark: ReplayBenchmark, model: WorldModel | str, embedder: Embedder,
               rng: Rng | None = None, scene: SceneConfig | None = None) -> metrics.MetricReport:
    """Score predicted future frames per clip; model may be "oracle"."""
    C = benchmark.chunk
    if isinstance(model, str):
        if model != "oracle":
            raise ValueError(f"unknown predictor {model!r}")
        if scene is None:
            raise ValueError("oracle replay needs the scene config")
        pred_frames = _oracle_predictions(benchmark, scene)
    else:
        pred_frames = _model_predictions(benchmark, model, rng or Rng(0))
    rows = []
    for clip, frames in zip(benchmark.clips, pred_frames):
        vals = {"mse": 0.0, "psnr": 0.0, "ssim": 0.0, "lpips_proxy": 0.0}
        for f_pred, f_gt in zip(frames, clip.gt_frames):
            vals["mse"] += mse(f_pred, f_gt)
            vals["psnr"] += psnr(f_pred, f_gt)
            vals["ssim"] += ssim(f_pred, f_gt)
            vals["lpips_proxy"] += lpips_proxy(embedder, f_pred, f_gt)
        for k in vals:
            vals[k] /= C
        rows.append({"episode": clip.window.episode_id, "start": clip.window.start,
                     "mode": clip.window.mode.value, **vals})
    return metrics.MetricReport.from_rows(rows)


def _model_predictions(benchmark: ReplayBenchmark, wm: WorldModel, rng: Rng):
    from .worldmodel import predict_chunk

    clips = benchmark.clips
    hist = np.stack([c.hist_states for c in clips])
    acts = np.stack([c.actions for c in clips])
    chunks = predict_chunk(wm, hist, acts, rng)
    template = wm.scene.nominal_state()
    out = []
    for row in chunks:
        states = [statecodec.decode_state(vec, template) for vec in row]
        out.append([render(s) for s in states])
    return out


def _oracle_predictions(benchmark: ReplayBenchmark, scene: SceneConfig):
    out = []
    for clip in benchmark.clips:
        env = Env(scene, seed=0, render_frames=True)
        env.reset(clip.init_state)
        frames = []
        for a, u in zip(clip.raw_actions, clip.noise):
            _, _, frame = env.step(a, u=u)
            frames.append(frame)
        out.append(frames)
    return out


# -- policy evaluation study ----------------------------------------------

@dataclass(frozen=True)
class EvalStudyConfig:
    task: TaskSpec
    n_real: int = 20
    n_wm: int = 50
    max_steps: int = 30
    replan: int = 5      # aligned with the model chunk inside rollouts
    init_jitter: float = 0.03


@dataclass
class PolicyEvalRow:
    name: str
    real_success: float
    predicted_success: float
    real_modes: dict[str, int]
    predicted_modes: dict[str, int]
    tv: float


@dataclass
class PolicyEvalReport:
    rows: list[PolicyEvalRow]
    pearson: float | None
    mean_tv: float
    flagged: str | None = None

    def to_csv(self) -> str:
        lines = ["policy,real_success,predicted_success,tv"]
        for r in self.rows:
            lines.append(f"{r.name},{r.real_success:.4f},{r.predicted_success:.4f},{r.tv:.4f}")
        return "\n".join(lines) + "\n"


def _mode_distribution(hist: dict[str, int]) -> np.ndarray:
    vec = np.array([hist.get(m.value, 0) for m in MODES], dtype=np.float64)
    total = vec.sum()
    return vec / total if total > 0 else np.full(len(MODES), 1.0 / len(MODES))


def measure_real(policy: DiffusionPolicy, scene: SceneConfig, cfg: EvalStudyConfig,
                 rng: Rng) -> tuple[float, dict[str, int]]:
    wins = 0
    hist = {m.value: 0 for m in MODES}
    for _ in range(cfg.n_real):
        env = Env(scene, seed=rng.spawn_seed(), render_frames=False)
        env.reset(jittered_state(scene, rng, cfg.init_jitter))
        states = [env.state.copy()]
        events = []
        t = 0
        success = check_success(env.state, cfg.task, env.phys)
        while t < cfg.max_steps and not success:
            chunk = act(policy, env.state, rng=rng)
            for a in chunk[:cfg.replan]:
                if t >= cfg.max_steps or success:
                    break
                s, ev, _ = env.step(a)
                states.append(s.copy())
                events.append(ev)
                success = check_success(s, cfg.task, env.phys)
                t += 1
        wins += success
        mode = classify_clip(events, cfg.task, states[-1])
        hist[mode.value] += 1
    return wins / cfg.n_real, hist


def measure_imagined(policy: DiffusionPolicy, wm: WorldModel | SceneConfig,
                     cfg: EvalStudyConfig, rng: Rng) -> tuple[float, dict[str, int]]:
    """Closed-loop rollouts inside the model (or the env, for oracle mode)."""
    if isinstance(wm, WorldModel):
        return _measure_imagined_batch(policy, wm, cfg, rng)
    wins = 0
    hist = {m.value: 0 for m in MODES}
    scene = wm
    for _ in range(cfg.n_wm):
        env = Env(scene, seed=rng.spawn_seed(), render_frames=False)
        env.reset(jittered_state(scene, rng, cfg.init_jitter))
        states = [env.state.copy()]
        events = []
        t = 0
        success = check_success(env.state, cfg.task, env.phys)
        while t < cfg.max_steps and not success:
            chunk = act(policy, env.state, rng=rng)
            for a in chunk[:cfg.replan]:
                if t >= cfg.max_steps or success:
                    break
                s, ev, _ = env.step(a)
                states.append(s.copy())
                events.append(ev)
                success = check_success(s, cfg.task, env.phys)
                t += 1
        wins += success
        hist[classify_clip(events, cfg.task, states[-1]).value] += 1
    return wins / cfg.n_wm, hist


def _measure_imagined_batch(policy: DiffusionPolicy, wm: WorldModel,
                            cfg: EvalStudyConfig, rng: Rng) -> tuple[float, dict[str, int]]:
    """All rollouts advance in lockstep so the denoiser runs on full batches."""
    B = cfg.n_wm
    H, C = wm.cfg.history, wm.cfg.chunk
    width = wm.state_width
    template = wm.scene.nominal_state()
    init_rng = rng
    cur_states: list[EnvState] = []
    for _ in range(B):
        cur_states.append(jittered_state(wm.scene, init_rng, cfg.init_jitter))
    enc = np.stack([statecodec.encode_state(s) for s in cur_states])
    hist_states = np.repeat(enc[:, None, :], H, axis=1)
    hist_actions = np.zeros((B, H - 1, 4))
    succeeded = np.zeros(B, dtype=bool)
    all_events: list[list] = [[] for _ in range(B)]
    t = 0
    assert cfg.replan == C, "imagined rollouts re-plan once per model chunk"
    while t < cfg.max_steps:
        from .worldmodel import predict_chunk

        conds = np.stack([statecodec.encode_state(s) for s in cur_states])
        w0 = rng.normal((B, policy.latent_dim))
        chunks = _act_batch(policy, conds, w0)
        acts_enc = chunks[:, :C * 4].reshape(B, C, 4)
        window_actions = np.concatenate([hist_actions, acts_enc], axis=1)
        pred = predict_chunk(wm, hist_states, window_actions, rng)
        for b in range(B):
            if succeeded[b]:
                continue
            prev = cur_states[b]
            for i in range(C):
                s = statecodec.decode_state(pred[b, i], template)
                a = statecodec.decode_action(acts_enc[b, i])
                all_events[b].append(infer_transition_event(prev, a, s))
                prev = s
                if check_success(s, cfg.task, wm.scene.physics):
                    succeeded[b] = True
                    cur_states[b] = s
                    break
            if not succeeded[b]:
                cur_states[b] = prev
        clean = np.stack([
            np.stack([statecodec.encode_state(statecodec.decode_state(pred[b, i], template))
                      for i in range(C)]) for b in range(B)])
        hist_states = np.concatenate([hist_states, clean], axis=1)[:, -H:, :]
        hist_actions = np.concatenate([hist_actions, acts_enc], axis=1)[:, -(H - 1):, :]
        t += C
    hist = {m.value: 0 for m in MODES}
    for b in range(B):
        hist[classify_clip(all_events[b], cfg.task, cur_states[b]).value] += 1
    return float(succeeded.mean()), hist


def _act_batch(policy: DiffusionPolicy, conds: np.ndarray, w0: np.ndarray) -> np.ndarray:
    from .diffusion import ddim_sample

    return ddim_sample(policy.denoiser, policy.schedule, conds,
                       policy.cfg.ddim_steps, w0)


def run_policy_eval(entries: list[SuiteEntry], wm: WorldModel | SceneConfig,
                    scene: SceneConfig, cfg: EvalStudyConfig, rng: Rng) -> PolicyEvalReport:
    if len(entries) < 6:
        raise ValueError("the correlation study needs at least 6 policies")
    rows = []
    for entry in entries:
        real_rate, real_hist = measure_real(entry.policy, scene, cfg, Rng(rng.spawn_seed()))
        pred_rate, pred_hist = measure_imagined(entry.policy, wm, cfg, Rng(rng.spawn_seed()))
        tv = metrics.tv_distance(_mode_distribution(real_hist), _mode_distribution(pred_hist))
        rows.append(PolicyEvalRow(entry.variant.name, real_rate, pred_rate,
                                  real_hist, pred_hist, tv))
    reals = [r.real_success for r in rows]
    preds = [r.predicted_success for r in rows]
    flagged = None
    r = None
    try:
        r = metrics.pearson(reals, preds)
    except metrics.MetricError as exc:
        flagged = f"correlation omitted: {exc}"
    return PolicyEvalReport(rows=rows, pearson=r,
                            mean_tv=float(np.mean([x.tv for x in rows])), flagged=flagged)


# -- scaling study ----------------------------------------------------------

@dataclass
class ScalingPoint:
    fraction: float
    n_episodes: int
    lpips_proxy: float
    normalized: float


def run_scaling(play_store: EpisodeStore, train_ids: list[str], fractions: list[float],
                steps_per_point: int, benchmark: ReplayBenchmark, scene: SceneConfig,
                embedder: Embedder, rng: Rng, wm_config=None,
                curriculum: bool = False) -> list[ScalingPoint]:
    """One fresh model per data fraction, all scored on the fixed benchmark."""
    from .worldmodel import WmConfig, build_dataset, create_worldmodel, train

    cfg = wm_config or WmConfig()
    order = list(train_ids)
    rng.shuffle(order)
    points = []
    for frac in fractions:
        k = max(1, int(round(len(order) * frac)))
        ids = order[:k]
        wm = create_worldmodel(scene, cfg, Rng(rng.spawn_seed()))
        dataset = build_dataset(play_store, cfg, ids=ids)
        train(wm, dataset, steps_per_point, Rng(rng.spawn_seed()))
        report = run_replay(benchmark, wm, embedder, Rng(rng.spawn_seed()))
        raw = report.overall["lpips_proxy"]
        points.append(ScalingPoint(fraction=frac, n_episodes=k, lpips_proxy=raw,
                                   normalized=metrics.normalize_score(raw)))
    return points
