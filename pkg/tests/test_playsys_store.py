import numpy as np
import pytest

from playwm.dynamics import EventKind
from playwm.env import Env
from playwm.playsys import (ProposalError, ProposerConfig, SafetyLimits,
                            applicable_tasks, collect, execute, expert_config,
                            human_play_config, propose)
from playwm.rng import Rng
from playwm.scene import EnvState, GripperState, ObjectState, Physics, default_scene, jittered_state
from playwm.skills import Instruction, Perturbation
from playwm.store import EpisodeStore, split, windows
from playwm.tasks import BehaviorMode, TaskSpec, check_success


def fresh_env(seed=0, render=False):
    return Env(default_scene(), seed=seed, render_frames=render)


def expert_instruction(task):
    return Instruction(task, Perturbation())


class TestSkills:
    def test_expert_put_in_succeeds(self):
        env = fresh_env()
        ep = execute(env, expert_instruction(TaskSpec("put_in", 1, 0)), Rng(1))
        assert ep.outcome, [e.kind.name for e in ep.events]
        assert ep.n_steps <= 30

    def test_expert_success_rate_over_seeded_scenes(self):
        wins = 0
        scene = default_scene()
        for seed in range(100):
            rng = Rng(1000 + seed)
            env = Env(scene, seed=rng.spawn_seed(), render_frames=False)
            env.reset(jittered_state(scene, rng, 0.03))
            task = [TaskSpec("put_in", 1, 0), TaskSpec("stack", 1, 3),
                    TaskSpec("put_near", 2, 1), TaskSpec("fold", 4)][seed % 4]
            ep = execute(env, expert_instruction(task), rng)
            wins += ep.outcome
        assert wins >= 95, f"expert won only {wins}/100"

    def test_grasp_offset_noise_causes_misses(self):
        misses = 0
        scene = default_scene()
        for seed in range(100):
            rng = Rng(seed)
            env = Env(scene, seed=rng.spawn_seed(), render_frames=False)
            env.reset(jittered_state(scene, rng, 0.03))
            instr = Instruction(TaskSpec("put_in", 1, 0), Perturbation(sigma_g=0.08))
            ep = execute(env, instr, rng)
            if any(e.kind == EventKind.GRASP_MISS for e in ep.events):
                misses += 1
        assert misses > 50

    def test_episode_length_capped(self):
        env = fresh_env()
        instr = Instruction(TaskSpec("put_in", 1, 0), Perturbation(sigma_w=0.3, sigma_g=0.3))
        ep = execute(env, instr, Rng(2), SafetyLimits(max_episode_steps=30))
        assert ep.n_steps <= 30

    def test_expert_fold_then_unfold(self):
        env = fresh_env()
        ep = execute(env, expert_instruction(TaskSpec("fold", 4)), Rng(3))
        assert ep.outcome
        ep2 = execute(env, expert_instruction(TaskSpec("unfold", 4)), Rng(4))
        assert ep2.outcome

    def test_expert_push_to(self):
        env = fresh_env()
        ep = execute(env, expert_instruction(TaskSpec("push_to", 1, region=(0.45, 0.5))), Rng(5))
        assert ep.outcome
        assert any(e.kind == EventKind.CONTACT_SLIDE for e in ep.events)

    def test_expert_stack_then_unstack(self):
        env = fresh_env()
        ep = execute(env, expert_instruction(TaskSpec("stack", 1, 3)), Rng(6))
        assert ep.outcome
        ep2 = execute(env, expert_instruction(TaskSpec("unstack", 1, 3)), Rng(7))
        assert ep2.outcome


class TestProposer:
    def test_oob_priority(self):
        s = default_scene().nominal_state()
        s.object_by_id(1).x = 0.01
        instr = propose(s, ProposerConfig(), Rng(0))
        assert instr.task.verb == "reset_retrieve"
        assert instr.task.subject == 1

    def test_determinism(self):
        s = default_scene().nominal_state()
        a = propose(s, ProposerConfig(), Rng(9))
        b = propose(s, ProposerConfig(), Rng(9))
        assert a == b

    def test_degenerate_grammar(self):
        weights = {v: 0.0 for v in ProposerConfig().verb_weights}
        weights["put_in"] = 1.0
        cfg = ProposerConfig(verb_weights=weights)
        s = default_scene().nominal_state()
        for seed in range(10):
            instr = propose(s, cfg, Rng(seed))
            assert instr.task.verb == "put_in"
            assert s.object_by_id(instr.task.subject).kind in ("disk", "rect")

    def test_empty_scene_raises(self):
        s = EnvState(gripper=GripperState(), objects=[])
        with pytest.raises(ProposalError):
            propose(s, ProposerConfig(), Rng(0))

    def test_verb_frequency_uniform(self):
        # scene where every verb is applicable
        objs = [
            ObjectState(0, "bowl", 0.3, 0.3, 0.0, (0.11, 0.085)),
            ObjectState(1, "disk", 0.31, 0.3, 0.0, (0.035,)),       # in bowl
            ObjectState(2, "rect", 0.6, 0.6, 0.0, (0.03, 0.03)),
            ObjectState(3, "rect", 0.602, 0.602, 0.0, (0.03, 0.03), z_level=1),  # stacked
            ObjectState(4, "towel2link", 0.72, 0.75, -2.3, (0.085, 0.028), fold_angle=1.5),
            ObjectState(5, "disk", 0.8, 0.3, 0.0, (0.035,)),
        ]
        s = EnvState(gripper=GripperState(), objects=objs)
        cfg = ProposerConfig()
        avail = applicable_tasks(s, cfg, Physics())
        assert all(avail[v] for v in avail), {k: len(v) for k, v in avail.items()}
        rng = Rng(123)
        counts = {}
        n = 10_000
        for _ in range(n):
            instr = propose(s, cfg, rng, Physics())
            counts[instr.task.verb] = counts.get(instr.task.verb, 0) + 1
        for verb, c in counts.items():
            assert abs(c / n - 1 / 8) < 0.02, (verb, c / n)

    def test_grammar_weights_must_sum_to_one(self):
        with pytest.raises(ValueError):
            ProposerConfig(verb_weights={"put_in": 0.5})


class TestCollect:
    def test_collect_counts_and_clamps(self, tmp_path):
        store = EpisodeStore(str(tmp_path / "s"))
        collect(default_scene(), ProposerConfig(), 10, Rng(5), store, render_frames=False)
        assert len(store) == 10
        for ep in store.episodes():
            for a in ep.actions:
                assert abs(a.dx) <= 0.08 + 1e-12 and abs(a.dy) <= 0.08 + 1e-12

    def test_two_runs_identical_manifests(self, tmp_path):
        h = []
        for d in ("a", "b"):
            store = EpisodeStore(str(tmp_path / d))
            collect(default_scene(), ProposerConfig(), 8, Rng(7), store, render_frames=True)
            h.append(store.manifest_hash())
        assert h[0] == h[1]

    def test_play_initial_variance_exceeds_demo(self, tmp_path):
        play = EpisodeStore(str(tmp_path / "play"))
        collect(default_scene(), ProposerConfig(), 60, Rng(1), play,
                source="play", reset_each=False, render_frames=False)
        demo = EpisodeStore(str(tmp_path / "demo"))
        collect(default_scene(), expert_config(), 60, Rng(1), demo,
                source="demo", reset_each=True, render_frames=False)

        def initial_var(store):
            pos = []
            for ep in store.episodes():
                for o in ep.states[0].objects:
                    if o.kind in ("disk", "rect"):
                        pos.append([o.x, o.y])
            return np.var(np.array(pos), axis=0).sum()

        assert initial_var(play) > initial_var(demo)

    def test_oob_recovery(self, tmp_path):
        store = EpisodeStore(str(tmp_path / "s"))
        collect(default_scene(), human_play_config(), 40, Rng(11), store, render_frames=False)
        # reset priority keeps strays from persisting over consecutive episodes
        consecutive = 0
        worst = 0
        for ep in store.episodes():
            oob_start = any(not (0.05 <= o.x <= 0.95 and 0.05 <= o.y <= 0.95)
                            for o in ep.states[0].objects if o.kind != "towel2link")
            consecutive = consecutive + 1 if oob_start else 0
            worst = max(worst, consecutive)
        assert worst <= 3


class TestStore:
    def test_roundtrip_identity(self, tmp_path):
        store = EpisodeStore(str(tmp_path / "s"))
        env = fresh_env(render=True)
        ep = execute(env, expert_instruction(TaskSpec("put_in", 1, 0)), Rng(1))
        ep.eid, ep.source, ep.seed = "e1", "demo", 42
        store.append(ep)
        back = store.read("e1")
        assert back.eid == ep.eid and back.outcome == ep.outcome
        assert back.instruction == ep.instruction
        assert len(back.states) == len(ep.states)
        for a, b in zip(back.states, ep.states):
            assert a.gripper == b.gripper
            assert a.objects == b.objects
        assert back.actions == ep.actions
        assert back.events == ep.events
        assert back.noise == ep.noise
        for fa, fb in zip(back.frames, ep.frames):
            assert fa.tobytes() == fb.tobytes()

    def test_hash_verifies(self, tmp_path):
        store = EpisodeStore(str(tmp_path / "s"))
        env = fresh_env(render=True)
        ep = execute(env, expert_instruction(TaskSpec("put_in", 1, 0)), Rng(1))
        ep.eid, ep.source = "e1", "demo"
        store.append(ep)
        assert store.verify("e1")

    def test_duplicate_id_rejected(self, tmp_path):
        store = EpisodeStore(str(tmp_path / "s"))
        env = fresh_env(render=False)
        ep = execute(env, expert_instruction(TaskSpec("put_in", 1, 0)), Rng(1))
        ep.eid, ep.source = "e1", "demo"
        store.append(ep)
        with pytest.raises(Exception, match="duplicate"):
            store.append(ep)

    def test_reload_from_disk(self, tmp_path):
        path = str(tmp_path / "s")
        store = EpisodeStore(path)
        env = fresh_env(render=False)
        ep = execute(env, expert_instruction(TaskSpec("put_in", 1, 0)), Rng(1))
        ep.eid, ep.source = "e1", "demo"
        store.append(ep)
        again = EpisodeStore(path)
        assert again.ids() == ["e1"]
        assert again.read("e1").outcome == ep.outcome


class TestWindows:
    def _store_with_lengths(self, tmp_path, lengths):
        store = EpisodeStore(str(tmp_path / "s"))
        env = fresh_env(render=False)
        for i, n in enumerate(lengths):
            instr = Instruction(TaskSpec("put_in", 1, 0), Perturbation(sigma_w=0.2, sigma_g=0.1))
            ep = execute(env, instr, Rng(i), SafetyLimits(max_episode_steps=n))
            # pad/trim to exactly n steps by construction is not guaranteed; skip short ones
            ep.eid, ep.source = f"e{i}", "play"
            store.append(ep)
        return store

    def test_window_counts(self, tmp_path):
        store = self._store_with_lengths(tmp_path, [30])
        ep = store.read(store.ids()[0])
        n = ep.n_frames
        ws = windows(store, 5, 5)
        assert len(ws) == (n - 5) // 5 + 1 if n >= 5 else 0

    def test_short_episode_yields_nothing(self, tmp_path):
        store = EpisodeStore(str(tmp_path / "s"))
        env = fresh_env(render=False)
        ep = execute(env, expert_instruction(TaskSpec("put_in", 1, 0)), Rng(1),
                     SafetyLimits(max_episode_steps=3))
        ep.eid, ep.source = "e1", "play"
        store.append(ep)  # 4 frames
        assert windows(store, 5, 1) == []

    def test_stride_one_covers_every_position(self, tmp_path):
        store = self._store_with_lengths(tmp_path, [20])
        ep = store.read(store.ids()[0])
        ws = windows(store, 5, 1)
        starts = {w.start for w in ws}
        assert starts == set(range(ep.n_frames - 5 + 1))

    def test_miss_windows_labeled(self, tmp_path):
        store = EpisodeStore(str(tmp_path / "s"))
        scene = default_scene()
        for i in range(20):
            rng = Rng(100 + i)
            env = Env(scene, seed=rng.spawn_seed(), render_frames=False)
            instr = Instruction(TaskSpec("put_in", 1, 0), Perturbation(sigma_g=0.09))
            ep = execute(env, instr, rng)
            ep.eid, ep.source = f"e{i}", "play"
            store.append(ep)
        ws = windows(store, 5, 1)
        miss_eps = set()
        for eid in store.ids():
            ep = store.read(eid)
            for j, e in enumerate(ep.events):
                if e.kind == EventKind.GRASP_MISS:
                    miss_eps.add((eid, j))
        labeled = {w.episode_id for w in ws if w.mode == BehaviorMode.MISSED_GRASP}
        # every episode with a miss has at least one miss-labeled window
        assert {eid for eid, _ in miss_eps} <= labeled | set()


class TestSplit:
    def test_fraction_and_disjoint(self, tmp_path):
        store = EpisodeStore(str(tmp_path / "s"))
        env = fresh_env(render=False)
        for i in range(100):
            ep = execute(env, expert_instruction(TaskSpec("put_near", 1, 2)), Rng(i),
                         SafetyLimits(max_episode_steps=5))
            ep.eid, ep.source = f"e{i}", "play"
            store.append(ep)
        train, held = split(store, 0.2, Rng(3))
        assert len(train) == 80 and len(held) == 20
        assert not set(train) & set(held)
        train2, held2 = split(store, 0.2, Rng(3))
        assert train == train2 and held == held2
