"""Fully-connected tanh networks mapping (x, t) to scalar fields.

Networks are built directly as autodiff expression graphs whose weights and
biases live in registered parameter-store blocks, so field jets and parameter
gradients come from the same engine that evaluates closed-form solutions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of one network: inputs are fixed at (x, t)."""

    hidden_layers: int
    width: int
    outputs: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.hidden_layers < 1 or self.width < 1 or self.outputs < 1:
            raise ValueError("hidden_layers, width and outputs must be >= 1")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [2] + [self.width] * self.hidden_layers + [self.outputs]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]

    @property
    def n_params(self) -> int:
        return sum(o * i + o for o, i in self.layer_dims)


class Mlp:
    """A tanh MLP expressed as a shared expression graph.

    All outputs share the hidden layers; ``outputs[i]`` is the scalar
    expression for output column i. Parameters occupy one contiguous block of
    the store: Glorot-uniform weights, zero biases, drawn deterministically
    from the spec seed.
    """

    def __init__(self, spec: MlpSpec, store: ad.Params, name: str = "net",
                 input_scale=None):
        self.spec = spec
        self.store = store
        self.name = name
        self.input_scale = input_scale
        rng = np.random.default_rng(spec.seed)
        self.start = store.n
        self.blocks = []
        for li, (fan_out, fan_in) in enumerate(spec.layer_dims):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in))
            w_start = store.add_block(f"{name}.W{li}", w)
            b_start = store.add_block(f"{name}.b{li}", np.zeros(fan_out))
            self.blocks.append((w_start, (fan_out, fan_in), b_start))
        self.n_params = store.n - self.start

        x, t = ad.x_input(), ad.t_input()
        if input_scale is not None:
            (ax, bx), (at, bt) = input_scale
            x = ax * x + bx
            t = at * t + bt
        h = ad.stack([x, t])
        last = len(self.blocks) - 1
        for li, (w_start, w_shape, b_start) in enumerate(self.blocks):
            h = ad.affine(h, store, w_start, w_shape, b_start)
            if li != last:
                h = ad.tanh(h)
        self.outputs = tuple(ad.take(h, i) for i in range(spec.outputs))

    # -- flat parameter vector ----------------------------------------------

    def flatten(self) -> np.ndarray:
        return self.store.values[self.start:self.start + self.n_params].copy()

    def assign(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.n_params,):
            raise ValueError(
                f"expected {self.n_params} parameters, got {vec.shape}")
        self.store.values[self.start:self.start + self.n_params] = vec

    def save_params(self, path) -> None:
        """Checkpoint: one JSON header line (spec + seed), then one value
        per line in full-precision hex."""
        with open(path, "w") as fh:
            header = {"hidden_layers": self.spec.hidden_layers,
                      "width": self.spec.width,
                      "outputs": self.spec.outputs,
                      "seed": self.spec.seed,
                      "n_params": self.n_params}
            fh.write(json.dumps(header) + "\n")
            for v in self.flatten():
                fh.write(float(v).hex() + "\n")

    def load_params(self, path) -> None:
        with open(path) as fh:
            header = json.loads(fh.readline())
            if header["n_params"] != self.n_params:
                raise ValueError("checkpoint does not match network shape")
            vec = np.array([float.fromhex(line.strip()) for line in fh])
        self.assign(vec)


def mlp_new(spec: MlpSpec, store: ad.Params = None, name: str = "net",
            input_scale=None) -> Mlp:
    """Build a network; returns the Mlp (``.outputs`` holds one Expr per field).

    input_scale, when given as ((ax, bx), (at, bt)), maps the raw inputs to
    ax*x + bx and at*t + bt before the first layer (domain normalization).
    """
    return Mlp(spec, store if store is not None else ad.Params(), name,
               input_scale=input_scale)


def field_jet(net: Mlp, output_index: int, point,
              orders=None) -> ad.Jet:
    """Jet of one network output at a point (same contract as eval_jet)."""
    if not 0 <= output_index < len(net.outputs):
        raise ValueError(f"output index {output_index} out of range")
    return ad.eval_jet(net.outputs[output_index], point, orders)
