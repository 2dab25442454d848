"""Progress regressor and the dense telescoping reward built on it.

The model maps an encoded state to a sigmoid progress value; training
targets are the normalized time indices of successful demo episodes, with
early stopping on a held-out demo split.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nets, statecodec
from .checkpoint import load_checkpoint, save_checkpoint
from .optim import Adam, clip_grad_norm
from .rng import Rng
from .scene import EnvState, SceneConfig
from .store import EpisodeStore


@dataclass
class ProgressModel:
    net: nets.Mlp
    scene: SceneConfig

    def __call__(self, state: EnvState) -> float:
        return self.value(statecodec.encode_state(state))

    def value(self, enc: np.ndarray) -> float:
        out = nets.forward(self.net, np.asarray(enc).reshape(1, -1))
        return float(1.0 / (1.0 + np.exp(-out[0, 0])))


class NoSuccessDemos(ValueError):
    pass


def train_progress(demos: EpisodeStore, scene: SceneConfig, rng: Rng,
                   steps: int = 1500, hidden: int = 64, batch: int = 64,
                   eval_every: int = 50, patience: int = 8) -> ProgressModel:
    success_ids = [eid for eid in demos.ids() if demos.meta(eid)["outcome"]]
    if len(success_ids) < 3:
        raise NoSuccessDemos(f"need at least 3 successful demos, got {len(success_ids)}")
    rng.shuffle(success_ids)
    n_held = max(1, len(success_ids) // 5)
    held_ids, train_ids = success_ids[:n_held], success_ids[n_held:]

    def pairs(ids):
        xs, ys = [], []
        for eid in ids:
            ep = demos.read(eid)
            T = ep.n_frames
            for j, s in enumerate(ep.states):
                xs.append(statecodec.encode_state(s))
                ys.append(j / (T - 1) if T > 1 else 1.0)
        return np.stack(xs), np.array(ys)[:, None]

    x_tr, y_tr = pairs(train_ids)
    x_ho, y_ho = pairs(held_ids)
    width = statecodec.state_dim(len(scene.objects))
    net = nets.init_mlp([width, hidden, hidden, 1], rng, "silu")
    opt = Adam(lr=3e-3)
    best = {k: v.copy() for k, v in net.params.items()}
    best_err = np.inf
    stale = 0
    n = x_tr.shape[0]
    for step in range(steps):
        rows = rng.randint_array(batch, n)
        pvars = nets.wrap_params(net)
        out = nets.forward(net, x_tr[rows], pvars)
        pred = ad.sigmoid(out)
        loss = ad.mse(pred, y_tr[rows])
        ad.backward(loss)
        grads = nets.grads_from(pvars)
        clip_grad_norm(grads, 1.0)
        opt.step(net.params, grads)
        if step % eval_every == 0 or step == steps - 1:
            p = 1.0 / (1.0 + np.exp(-nets.forward(net, x_ho)))
            err = float(((p - y_ho) ** 2).mean())
            if err < best_err - 1e-6:
                best_err = err
                best = {k: v.copy() for k, v in net.params.items()}
                stale = 0
            else:
                stale += 1
                if stale >= patience:
                    break
    net.params = best
    return ProgressModel(net=net, scene=scene)


def dense_reward(model: ProgressModel, s: EnvState, s_next: EnvState) -> float:
    """Per-step reward: change in predicted progress (telescoping by design)."""
    return model(s_next) - model(s)


def save_progress(model: ProgressModel, path: str) -> None:
    from .scene import scene_to_dict

    save_checkpoint(path, "progress", {"scene": scene_to_dict(model.scene),
                                       "widths": model.net.widths},
                    model.net.params)


def load_progress(path: str) -> ProgressModel:
    from .scene import scene_from_dict

    kind, header, params = load_checkpoint(path)
    if kind != "progress":
        raise ValueError(f"checkpoint kind {kind!r} is not a progress model")
    net = nets.Mlp(widths=header["widths"], activation="silu", params=params)
    return ProgressModel(net=net, scene=scene_from_dict(header["scene"]))
