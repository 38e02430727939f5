"""Dense-network engine: forward pass, exact backprop, Adam, Polyak averaging.

Parameters live in a single flat float32 vector (little-endian on disk);
per-layer weight/bias matrices are views into it. All arithmetic runs in
float64 so analytic gradients match finite differences to tight tolerances,
and every operation is a pure function of its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

OUTPUT_ACTIVATIONS = ("identity", "tanh")


class NumericError(RuntimeError):
    """A non-finite value reached a numeric update."""


def _check_layer_sizes(layer_sizes: Sequence[int]) -> tuple[int, ...]:
    sizes = tuple(int(s) for s in layer_sizes)
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ValueError(f"layer_sizes must have >= 2 positive entries, got {sizes}")
    return sizes


def num_params(layer_sizes: Sequence[int]) -> int:
    sizes = _check_layer_sizes(layer_sizes)
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def _layout(sizes: tuple[int, ...]) -> list[tuple[slice, slice, tuple[int, int]]]:
    """Per layer: (weight slice, bias slice, weight shape) into the flat vector."""
    out = []
    off = 0
    for a, b in zip(sizes[:-1], sizes[1:]):
        w = slice(off, off + a * b)
        off += a * b
        bsl = slice(off, off + b)
        off += b
        out.append((w, bsl, (a, b)))
    return out


@dataclass
class MlpParams:
    """Flat-stored dense network. Hidden layers are ReLU; the output head is
    identity or tanh scaled by ``output_scale`` (action-bound heads)."""

    layer_sizes: tuple[int, ...]
    flat: np.ndarray  # float32, length num_params(layer_sizes)
    output_activation: str = "identity"
    output_scale: float = 1.0

    @property
    def weights(self) -> list[np.ndarray]:
        return [self.flat[w].reshape(shape) for w, _, shape in _layout(self.layer_sizes)]

    @property
    def biases(self) -> list[np.ndarray]:
        return [self.flat[b] for _, b, _ in _layout(self.layer_sizes)]

    def with_flat(self, flat: np.ndarray) -> "MlpParams":
        return replace(self, flat=np.asarray(flat, dtype=np.float32))

    def copy(self) -> "MlpParams":
        return replace(self, flat=self.flat.copy())


def mlp_init(
    layer_sizes: Sequence[int],
    output_activation: str = "identity",
    seed: int | np.random.SeedSequence = 0,
    output_scale: float = 1.0,
) -> MlpParams:
    """Fan-in scaled uniform init U(-1/sqrt(fan_in), 1/sqrt(fan_in)); biases zero.

    Bit-reproducible for a fixed seed.
    """
    sizes = _check_layer_sizes(layer_sizes)
    if output_activation not in OUTPUT_ACTIVATIONS:
        raise ValueError(f"unknown output_activation {output_activation!r}")
    seq = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    rng = np.random.Generator(np.random.PCG64(seq))
    flat = np.zeros(num_params(sizes), dtype=np.float32)
    params = MlpParams(sizes, flat, output_activation, float(output_scale))
    for wsl, _, (fan_in, fan_out) in _layout(sizes):
        bound = 1.0 / np.sqrt(fan_in)
        flat[wsl] = rng.uniform(-bound, bound, size=fan_in * fan_out).astype(np.float32)
    return params


def _promote(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    if x.ndim != 2:
        raise ValueError(f"expected 1-D or 2-D input, got shape {x.shape}")
    return x, False


def _forward(params: MlpParams, flat: np.ndarray, x: np.ndarray, want_trace: bool):
    sizes = params.layer_sizes
    if x.shape[1] != sizes[0]:
        raise ValueError(f"input width {x.shape[1]} != layer_sizes[0] {sizes[0]}")
    layers = _layout(sizes)
    acts = [x] if want_trace else None
    z = x
    for i, (wsl, bsl, shape) in enumerate(layers):
        w = flat[wsl].reshape(shape)
        z = z @ w + flat[bsl]
        if i < len(layers) - 1:
            z = np.maximum(z, 0.0)
            if want_trace:
                acts.append(z)
    tanh_out = None
    if params.output_activation == "tanh":
        tanh_out = np.tanh(z)
        z = params.output_scale * tanh_out
    if want_trace:
        return z, (acts, tanh_out)
    return z


def mlp_forward_at(params: MlpParams, flat: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Forward pass using an alternate parameter vector (any float dtype)."""
    xb, single = _promote(x)
    y = _forward(params, np.asarray(flat), xb, want_trace=False)
    return y[0] if single else y


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(params.flat)):
        raise NumericError("non-finite network parameters")
    return mlp_forward_at(params, params.flat, x)


def mlp_forward_trace(params: MlpParams, x: np.ndarray):
    """Forward pass that also returns the activation trace for a backward pass."""
    xb, _ = _promote(x)
    return _forward(params, params.flat, xb, want_trace=True)


def mlp_forward_trace_at(params: MlpParams, flat: np.ndarray, x: np.ndarray):
    """Traced forward pass at an alternate parameter vector (any float dtype)."""
    xb, _ = _promote(x)
    return _forward(params, np.asarray(flat), xb, want_trace=True)


def mlp_backward_at(params: MlpParams, flat: np.ndarray, trace, upstream: np.ndarray):
    """Exact gradients of sum_batch <upstream, output> at parameter vector ``flat``.

    Returns (flat parameter gradient, input gradient), both float64.
    """
    acts, tanh_out = trace
    sizes = params.layer_sizes
    layers = _layout(sizes)
    g = np.asarray(upstream, dtype=np.float64)
    if g.ndim == 1:
        g = g[None, :]
    if g.shape != (acts[0].shape[0], sizes[-1]):
        raise ValueError(f"upstream shape {g.shape} != ({acts[0].shape[0]}, {sizes[-1]})")
    if params.output_activation == "tanh":
        g = g * (params.output_scale * (1.0 - tanh_out**2))
    grad = np.empty(flat.shape[0], dtype=np.float64)
    for i in range(len(layers) - 1, -1, -1):
        wsl, bsl, shape = layers[i]
        a = acts[i]
        grad[wsl] = (a.T @ g).ravel()
        grad[bsl] = g.sum(axis=0)
        g = g @ np.asarray(flat[wsl]).reshape(shape).T
        if i > 0:
            g = g * (acts[i] > 0)
    return grad, g


def mlp_backward(params: MlpParams, trace, upstream: np.ndarray):
    return mlp_backward_at(params, params.flat, trace, upstream)


def mlp_gradients(params: MlpParams, inputs: np.ndarray, upstream: np.ndarray):
    """Gradients of sum_batch <upstream, output> w.r.t. parameters and inputs."""
    xb, _ = _promote(inputs)
    _, trace = _forward(params, params.flat, xb, want_trace=True)
    return mlp_backward(params, trace, upstream)


@dataclass
class AdamState:
    m: np.ndarray  # float64 first moments
    v: np.ndarray  # float64 second moments (>= 0)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(n: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(np.zeros(n), np.zeros(n), 0, beta1, beta2, eps)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState, lr: float):
    """One Adam step minimizing along ``grads``; returns (params', state').

    Raises NumericError on non-finite gradients so the caller can decide to
    skip or abort.
    """
    if lr <= 0:
        raise ValueError(f"lr must be > 0, got {lr}")
    g = np.asarray(grads, dtype=np.float64)
    if g.shape != params.shape:
        raise ValueError(f"grad shape {g.shape} != param shape {params.shape}")
    total = float(g.sum())
    if not np.isfinite(total) and not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient in adam_step")
    step = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    mhat = m / (1.0 - state.beta1**step)
    vhat = v / (1.0 - state.beta2**step)
    delta = lr * mhat / (np.sqrt(vhat) + state.eps)
    new = (params.astype(np.float64) - delta).astype(params.dtype)
    return new, AdamState(m, v, step, state.beta1, state.beta2, state.eps)


def polyak_update(target: MlpParams, online: MlpParams, rho: float) -> MlpParams:
    """target' = (1 - rho) * target + rho * online, elementwise."""
    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be in [0, 1], got {rho}")
    if target.layer_sizes != online.layer_sizes:
        raise ValueError("target/online layer_sizes mismatch")
    mixed = (1.0 - rho) * target.flat.astype(np.float64) + rho * online.flat.astype(np.float64)
    return target.with_flat(mixed)


# -- parameter snapshot serialization -----------------------------------------
# Little-endian int32 header (layer count, then layer_sizes) followed by the
# flat float32 parameter vector.


def params_to_bytes(params: MlpParams) -> bytes:
    header = np.array([len(params.layer_sizes), *params.layer_sizes], dtype="<i4")
    return header.tobytes() + params.flat.astype("<f4").tobytes()


def params_from_bytes(
    data: bytes, output_activation: str = "identity", output_scale: float = 1.0
) -> MlpParams:
    n = int(np.frombuffer(data[:4], dtype="<i4")[0])
    sizes = tuple(int(s) for s in np.frombuffer(data[4 : 4 + 4 * n], dtype="<i4"))
    flat = np.frombuffer(data[4 + 4 * n :], dtype="<f4").astype(np.float32)
    if flat.size != num_params(sizes):
        raise ValueError("parameter payload does not match the shape header")
    return MlpParams(sizes, flat, output_activation, output_scale)
