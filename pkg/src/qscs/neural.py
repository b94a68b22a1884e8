"""Small dense ReLU networks with hand-written backprop and Adam.

Parameters live in one flat float64 vector (layer-major, weights before
biases, weights row-major with shape ``(out, in)``); per-layer arrays are
views into it, so optimizer updates on the flat vector are seen by forward.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import json
import math

import numpy as np

from . import kernels


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple
    seed: int = 0

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError(f"need at least two positive layer sizes, got {self.layer_sizes}")
        object.__setattr__(self, "layer_sizes", sizes)

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))


def _layer_views(spec: MlpSpec, flat: np.ndarray):
    weights, biases = [], []
    pos = 0
    for n_in, n_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        weights.append(flat[pos:pos + n_in * n_out].reshape(n_out, n_in))
        pos += n_in * n_out
        biases.append(flat[pos:pos + n_out])
        pos += n_out
    return weights, biases


class MlpParams:
    def __init__(self, spec: MlpSpec, flat: np.ndarray | None = None):
        self.spec = spec
        if flat is None:
            flat = np.zeros(spec.n_params)
        flat = np.array(flat, dtype=np.float64)
        if flat.shape != (spec.n_params,):
            raise ValueError(f"flat vector has length {flat.size}, spec needs {spec.n_params}")
        self.flat = flat
        self.weights, self.biases = _layer_views(spec, self.flat)

    @classmethod
    def init(cls, spec: MlpSpec) -> "MlpParams":
        """He-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
        rng = np.random.default_rng(spec.seed)
        p = cls(spec)
        for w in p.weights:
            bound = math.sqrt(6.0 / w.shape[1])
            w[...] = rng.uniform(-bound, bound, size=w.shape)
        return p

    def copy(self) -> "MlpParams":
        return MlpParams(self.spec, self.flat)

    @property
    def n_inputs(self) -> int:
        return self.spec.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.spec.layer_sizes[-1]


def _as_batch(params: MlpParams, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != params.n_inputs:
        raise ValueError(f"input shape {x.shape} incompatible with {params.n_inputs} inputs")
    return np.ascontiguousarray(x), single


def forward(params: MlpParams, x) -> np.ndarray:
    """Network output for one input vector or a ``(batch, in)`` matrix."""
    xb, single = _as_batch(params, x)
    out = kernels.mlp_forward(params.weights, params.biases, xb)[-1]
    return out[0] if single else out


def forward_cached(params: MlpParams, x):
    xb, _ = _as_batch(params, x)
    return kernels.mlp_forward(params.weights, params.biases, xb)


def backward_from_cache(params: MlpParams, acts, output_grad) -> np.ndarray:
    """Flat gradient of sum_i <output_grad_i, f(x_i)>, using cached activations."""
    g = np.ascontiguousarray(output_grad, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != acts[-1].shape:
        raise ValueError(f"output_grad shape {g.shape} does not match output {acts[-1].shape}")
    grad = np.empty(params.spec.n_params)
    gw, gb = _layer_views(params.spec, grad)
    kernels.mlp_backward(params.weights, acts, g, gw, gb)
    return grad


def backward(params: MlpParams, x, output_grad) -> np.ndarray:
    """Gradient of <output_grad, forward(params, x)> w.r.t. the flat parameters.

    For a batch, returns the mean of the per-sample gradients.
    """
    xb, single = _as_batch(params, x)
    g = np.asarray(output_grad, dtype=np.float64)
    if single and g.ndim == 1:
        g = g[None, :]
    acts = kernels.mlp_forward(params.weights, params.biases, xb)
    grad = backward_from_cache(params, acts, g)
    return grad / xb.shape[0]


@dataclass
class AdamState:
    n_params: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.n_params)
        if self.v is None:
            self.v = np.zeros(self.n_params)


def adam_step(opt: AdamState, params: MlpParams, grad: np.ndarray) -> None:
    """In-place bias-corrected Adam descent step."""
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    if grad.shape != params.flat.shape or opt.m.shape != params.flat.shape:
        raise ValueError("gradient, optimizer and parameter lengths differ")
    if not np.all(np.isfinite(grad)):
        raise FloatingPointError("non-finite gradient; Adam update refused")
    opt.step += 1
    kernels.adam_update(params.flat, grad, opt.m, opt.v, opt.step, opt.lr, opt.beta1, opt.beta2, opt.eps)


def clip_grad_norm(grad: np.ndarray, max_norm: float) -> np.ndarray:
    n = float(np.linalg.norm(grad))
    if n > max_norm:
        return grad * (max_norm / n)
    return grad


def hard_update(target: MlpParams, online: MlpParams) -> None:
    if target.spec.layer_sizes != online.spec.layer_sizes:
        raise ValueError("target and online networks have different architectures")
    target.flat[...] = online.flat


# ---------------------------------------------------------------------------
# checkpoints: one JSON header line, then little-endian float64 parameters

def save_params(params: MlpParams, path) -> None:
    header = {"layer_sizes": list(params.spec.layer_sizes), "seed": params.spec.seed,
              "n_params": params.spec.n_params, "dtype": "<f8"}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(params.flat.astype("<f8").tobytes())


def load_params(path) -> MlpParams:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        data = np.frombuffer(fh.read(), dtype="<f8")
    spec = MlpSpec(tuple(header["layer_sizes"]), int(header["seed"]))
    if data.size != spec.n_params:
        raise ValueError(f"checkpoint holds {data.size} values, header expects {spec.n_params}")
    return MlpParams(spec, data.astype(np.float64))
