"""Plain fully connected networks over the autodiff tape.

An Mlp owns named float64 parameter arrays ("w0", "b0", ...). forward()
runs in one of two modes: inference (pure numpy, no graph) or training
(parameters wrapped in Vars so backward() can reach them).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .rng import Rng

ACTIVATIONS = {
    "tanh": (ad.tanh, np.tanh),
    "relu": (ad.relu, lambda x: np.maximum(x, 0.0)),
    "silu": (ad.silu, lambda x: x / (1.0 + np.exp(-x))),
    "identity": (ad.identity, lambda x: x),
}


class ShapeError(ValueError):
    pass


@dataclass
class Mlp:
    widths: list[int]
    activation: str = "silu"
    layer_norm: bool = False
    params: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def in_dim(self) -> int:
        return self.widths[0]

    @property
    def out_dim(self) -> int:
        return self.widths[-1]

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def param_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name]).tobytes())
        return h.hexdigest()


def init_mlp(widths: list[int], rng: Rng, activation: str = "silu", layer_norm: bool = False) -> Mlp:
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    params: dict[str, np.ndarray] = {}
    for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
        std = 1.0 / np.sqrt(fan_in)
        params[f"w{i}"] = rng.normal((fan_in, fan_out)) * std
        params[f"b{i}"] = np.zeros(fan_out)
    return Mlp(widths=list(widths), activation=activation, layer_norm=layer_norm, params=params)


def forward(net: Mlp, x, pvars: dict[str, ad.Var] | None = None):
    """Run the net on a (batch, in_dim) array or Var.

    With pvars (training mode) the result is a Var wired to those parameter
    Vars; a Var input also joins the graph (used when gradients must flow
    into the inputs, e.g. an actor update through a critic). Hidden layers
    apply the activation (and layer norm first, when enabled); the output
    layer is linear.
    """
    in_var = isinstance(x, ad.Var)
    raw = x.value if in_var else np.asarray(x, dtype=np.float64)
    if raw.ndim == 1:
        raw = raw[None, :]
        if in_var:
            raise ShapeError("Var inputs must already be 2-dimensional")
    if raw.shape[-1] != net.in_dim:
        raise ShapeError(f"input width {raw.shape[-1]} != layer 0 width {net.in_dim}")
    n_layers = len(net.widths) - 1
    act_var, act_np = ACTIVATIONS[net.activation]
    if pvars is None and not in_var:
        h = raw
        for i in range(n_layers):
            h = h @ net.params[f"w{i}"] + net.params[f"b{i}"]
            if i < n_layers - 1:
                if net.layer_norm:
                    mu = h.mean(axis=-1, keepdims=True)
                    hc = h - mu
                    h = hc / np.sqrt((hc * hc).mean(axis=-1, keepdims=True) + 1e-5)
                h = act_np(h)
        return h
    if pvars is None:
        pvars = wrap_params(net)
    hv = x if in_var else ad.Var(raw)
    for i in range(n_layers):
        hv = ad.add(ad.matmul(hv, pvars[f"w{i}"]), pvars[f"b{i}"])
        if i < n_layers - 1:
            if net.layer_norm:
                hv = ad.layer_norm(hv)
            hv = act_var(hv)
    return hv


def wrap_params(net: Mlp) -> dict[str, ad.Var]:
    return {name: ad.Var(arr) for name, arr in net.params.items()}


def grads_from(pvars: dict[str, ad.Var]) -> dict[str, np.ndarray]:
    out = {}
    for name, v in pvars.items():
        out[name] = v.grad if v.grad is not None else np.zeros_like(v.value)
    return out
