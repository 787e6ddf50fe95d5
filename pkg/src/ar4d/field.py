"""Coordinate-network machinery: sinusoidal encoding, a small ReLU MLP with
hand-written backprop, Adam, and the log-linear learning-rate decay."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class OptimizerDivergenceError(FloatingPointError):
    pass


@dataclass(frozen=True)
class PositionalEncodingConfig:
    num_frequencies: int = 10
    include_input: bool = False

    def output_dim(self, input_dim: int = 3) -> int:
        return input_dim * (2 * self.num_frequencies + int(self.include_input))


def positional_encode(x, config: PositionalEncodingConfig = PositionalEncodingConfig()) -> np.ndarray:
    """gamma(x) per component: (sin 2^0 x, cos 2^0 x, ..., sin 2^(L-1) x, cos 2^(L-1) x).

    Accepts a single vector or an (N, D) batch. Components are concatenated
    in input order; the raw input is prepended when include_input is set.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = np.atleast_2d(x)
    freqs = 2.0 ** np.arange(config.num_frequencies)
    angles = x2[:, :, None] * freqs  # (N, D, L)
    enc = np.stack([np.sin(angles), np.cos(angles)], axis=-1).reshape(x2.shape[0], -1)
    if config.include_input:
        enc = np.concatenate([x2, enc], axis=1)
    return enc[0] if single else enc


def positional_encode_backward(x, d_enc, config: PositionalEncodingConfig = PositionalEncodingConfig()) -> np.ndarray:
    x2 = np.atleast_2d(np.asarray(x, dtype=np.float64))
    d_enc = np.atleast_2d(d_enc)
    n, dim = x2.shape
    d_x = np.zeros_like(x2)
    if config.include_input:
        d_x += d_enc[:, :dim]
        d_enc = d_enc[:, dim:]
    freqs = 2.0 ** np.arange(config.num_frequencies)
    angles = x2[:, :, None] * freqs
    pairs = d_enc.reshape(n, dim, config.num_frequencies, 2)
    d_x += np.sum((pairs[..., 0] * np.cos(angles) - pairs[..., 1] * np.sin(angles)) * freqs, axis=-1)
    return d_x


@dataclass
class MlpParams:
    """Weights are stored (out, in) so a layer computes W @ x + b."""

    weights: list
    biases: list

    @property
    def dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def output_dim(self) -> int:
        return self.weights[-1].shape[0]

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list in layer order: W0, b0, W1, b1, ..."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @classmethod
    def from_arrays(cls, arrays) -> "MlpParams":
        arrays = list(arrays)
        return cls(arrays[0::2], arrays[1::2])

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_mlp(input_dim: int, output_dim: int, depth: int = 4, width: int = 64, rng=None, zero_output=True) -> MlpParams:
    """He-uniform hidden layers; the output layer starts at zero so the
    network is an exact zero map until it is trained."""
    rng = np.random.default_rng(rng)
    dims = [input_dim] + [width] * depth + [output_dim]
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        last = i == len(dims) - 2
        if last and zero_output:
            weights.append(np.zeros((fan_out, fan_in)))
        else:
            bound = np.sqrt(6.0 / fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases)


@dataclass
class MlpCache:
    inputs: list  # input to each layer (post-activation of the previous one)
    pre: list  # pre-activation of each hidden layer


def mlp_forward(params: MlpParams, x) -> tuple[np.ndarray, MlpCache]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != params.input_dim:
        raise ValueError(f"input dim {h.shape[1]} does not match network input {params.input_dim}")
    inputs, pre = [], []
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        inputs.append(h)
        z = h @ w.T + b
        if i < last:
            pre.append(z)
            h = np.maximum(z, 0.0)
        else:
            h = z
    return (h[0] if single else h), MlpCache(inputs, pre)


def mlp_backward(params: MlpParams, cache: MlpCache, d_out) -> tuple[MlpParams, np.ndarray]:
    """Returns (gradients shaped like params, d_input). ReLU'(0) is taken as 0."""
    d_out = np.asarray(d_out, dtype=np.float64)
    single = d_out.ndim == 1
    g = np.atleast_2d(d_out)
    if len(cache.inputs) != len(params.weights) or g.shape != (cache.inputs[0].shape[0], params.output_dim):
        raise ValueError("cache does not belong to this network or batch")
    d_w = [None] * len(params.weights)
    d_b = [None] * len(params.weights)
    for i in range(len(params.weights) - 1, -1, -1):
        if i < len(params.weights) - 1:
            g = g * (cache.pre[i] > 0)
        d_w[i] = g.T @ cache.inputs[i]
        d_b[i] = g.sum(axis=0)
        g = g @ params.weights[i]
    return MlpParams(d_w, d_b), (g[0] if single else g)


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr) -> tuple[list, AdamState]:
    """One bias-corrected Adam update. ``lr`` may be a scalar or one per array.

    Returns fresh arrays; ``state`` is updated in place and returned.
    """
    params, grads = list(params), list(grads)
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state disagree in length")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} does not match parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise OptimizerDivergenceError("non-finite gradient")
    lrs = [lr] * len(params) if np.isscalar(lr) else list(lr)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        out.append(p - lrs[i] * m_hat / (np.sqrt(v_hat) + state.eps))
    return out, state


@dataclass(frozen=True)
class LrSchedule:
    lr_initial: float = 5e-4
    lr_final: float = 1e-6
    total_steps: int = 2000

    def __post_init__(self):
        if not self.lr_initial >= self.lr_final > 0:
            raise ValueError("need lr_initial >= lr_final > 0")


def lr_at(schedule: LrSchedule, step: int) -> float:
    """Exponential interpolation between the two endpoints; steps are clamped."""
    if schedule.total_steps <= 0:
        return schedule.lr_final
    frac = min(max(step / schedule.total_steps, 0.0), 1.0)
    return float(schedule.lr_initial * (schedule.lr_final / schedule.lr_initial) ** frac)
