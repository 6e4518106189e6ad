"""
Velocity network u(X_t, X_img, C, t; theta): a fully connected tanh network
over the flattened clip, the reference frame, an optional condition vector and
four sinusoidal time features, with exact reverse-mode gradients.
"""
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import InvalidArgumentError, SnapshotFormatError, TrainingDivergedError
from .numerics import RngState, Tensor, check_finite

TIME_FEATURES = 4
CHECKPOINT_MAGIC = b"ERFT1"
_HEADER = struct.Struct("<5i")


@dataclass(frozen=True)
class NetDims:
    """
    Network geometry.

    ``hidden_layers`` counts tanh layers; 0 gives a single linear map from
    input to output.
    """

    frames: int
    dim: int
    cond_dim: int = 0
    hidden_layers: int = 2
    width: int = 64

    def __post_init__(self):
        if self.frames < 1 or self.dim < 1 or self.cond_dim < 0:
            raise InvalidArgumentError(f"invalid clip geometry {self}")
        if self.hidden_layers < 0 or (self.hidden_layers > 0 and self.width < 1):
            raise InvalidArgumentError(f"invalid layer geometry {self}")

    @property
    def input_size(self) -> int:
        return self.frames * self.dim + self.dim + self.cond_dim + TIME_FEATURES

    @property
    def output_size(self) -> int:
        return self.frames * self.dim

    @property
    def layer_shapes(self) -> List[Tuple[int, int]]:
        if self.hidden_layers == 0:
            return [(self.input_size, self.output_size)]
        shapes = [(self.input_size, self.width)]
        shapes += [(self.width, self.width)] * (self.hidden_layers - 1)
        shapes.append((self.width, self.output_size))
        return shapes

    @property
    def parameter_count(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layer_shapes)


@dataclass
class NetInput:
    """One network query: noisy clip, reference frame, condition, time."""

    noisy_clip: Tensor
    reference: Tensor
    condition: Tensor
    t: float

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise InvalidArgumentError(f"t must lie in [0, 1], got {self.t}")


@dataclass
class VelocityNetParams:
    """Weights and biases, layer by layer; treated as an immutable value."""

    dims: NetDims
    weights: List[Tensor]
    biases: List[Tensor]

    def velocity(self, noisy_clip: Tensor, reference: Tensor, condition: Optional[Tensor], t: float) -> Tensor:
        return forward(self, NetInput(noisy_clip, reference, _condition(self.dims, condition), t))

    def flat(self) -> Tensor:
        """All parameters in checkpoint order: per layer, weight row-major then bias."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b.ravel())
        return np.concatenate(parts)

    @classmethod
    def from_flat(cls, dims: NetDims, values: Tensor) -> "VelocityNetParams":
        values = np.asarray(values, dtype=np.float64)
        if values.size != dims.parameter_count:
            raise InvalidArgumentError(
                f"expected {dims.parameter_count} parameters, got {values.size}"
            )
        weights, biases, offset = [], [], 0
        for fan_in, fan_out in dims.layer_shapes:
            weights.append(values[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out).copy())
            offset += fan_in * fan_out
            biases.append(values[offset:offset + fan_out].copy())
            offset += fan_out
        return cls(dims, weights, biases)

    def map(self, fn) -> "VelocityNetParams":
        return VelocityNetParams(
            self.dims, [fn(w) for w in self.weights], [fn(b) for b in self.biases]
        )

    def arrays(self) -> List[Tensor]:
        return [a for pair in zip(self.weights, self.biases) for a in pair]

    @classmethod
    def from_arrays(cls, dims: NetDims, arrays: Sequence[Tensor]) -> "VelocityNetParams":
        return cls(dims, list(arrays[0::2]), list(arrays[1::2]))


def _condition(dims: NetDims, condition: Optional[Tensor]) -> Tensor:
    if condition is None:
        return np.zeros(dims.cond_dim)
    return np.asarray(condition, dtype=np.float64)


def init_params(dims: NetDims, rng: RngState, zero: bool = False) -> VelocityNetParams:
    """
    Create network parameters.

    Args:
        dims: Network geometry
        rng: Random state for the weights
        zero: Return all-zero parameters instead

    Returns:
        Weights ~ N(0, 1/fan_in), zero biases
    """
    weights, biases = [], []
    for fan_in, fan_out in dims.layer_shapes:
        if zero:
            weights.append(np.zeros((fan_in, fan_out)))
        else:
            weights.append(rng.normal((fan_in, fan_out)) / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return VelocityNetParams(dims, weights, biases)


def time_features(t: Union[float, Tensor]) -> Tensor:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    return np.stack(
        [np.sin(np.pi * t), np.cos(np.pi * t), np.sin(2 * np.pi * t), np.cos(2 * np.pi * t)],
        axis=-1,
    )


def assemble_inputs(
    dims: NetDims,
    noisy_clips: Tensor,
    references: Tensor,
    conditions: Optional[Tensor],
    ts: Tensor,
) -> Tensor:
    """
    Build the [batch x input_size] design matrix.

    Args:
        dims: Network geometry
        noisy_clips: [batch, frames, dim]
        references: [batch, dim]
        conditions: [batch, cond_dim] or None when cond_dim is 0
        ts: [batch] times in [0, 1]
    """
    noisy_clips = np.asarray(noisy_clips, dtype=np.float64)
    references = np.asarray(references, dtype=np.float64)
    ts = np.asarray(ts, dtype=np.float64)
    batch = noisy_clips.shape[0]
    if noisy_clips.shape[1:] != (dims.frames, dims.dim):
        raise InvalidArgumentError(
            f"noisy clip shape {noisy_clips.shape[1:]} does not match {(dims.frames, dims.dim)}"
        )
    if references.shape != (batch, dims.dim) or noisy_clips.shape[0] != batch:
        raise InvalidArgumentError(f"reference shape {references.shape[1:]} does not match ({dims.dim},)")
    if conditions is None:
        conditions = np.zeros((batch, dims.cond_dim))
    conditions = np.asarray(conditions, dtype=np.float64)
    if conditions.shape != (batch, dims.cond_dim):
        raise InvalidArgumentError(f"condition shape {conditions.shape[1:]} does not match ({dims.cond_dim},)")
    if ts.shape != (batch,) or np.any(ts < 0.0) or np.any(ts > 1.0):
        raise InvalidArgumentError("times must be a [batch] vector in [0, 1]")
    return np.concatenate(
        [noisy_clips.reshape(batch, -1), references, conditions, time_features(ts)], axis=1
    )


def _forward_cached(params: VelocityNetParams, inputs: Tensor) -> Tuple[Tensor, List[Tensor]]:
    activations = [inputs]
    h = inputs
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        if i == last:
            return z, activations
        h = np.tanh(z)
        activations.append(h)
    raise InvalidArgumentError("network has no layers")


def forward_batch(params: VelocityNetParams, inputs: Tensor) -> Tensor:
    """Velocity predictions [batch x output_size] for an assembled design matrix."""
    out, _ = _forward_cached(params, inputs)
    return out


def forward(params: VelocityNetParams, net_input: NetInput) -> Tensor:
    dims = params.dims
    inputs = assemble_inputs(
        dims,
        np.asarray(net_input.noisy_clip)[None],
        np.asarray(net_input.reference)[None],
        _condition(dims, net_input.condition)[None],
        np.array([net_input.t]),
    )
    return forward_batch(params, inputs)[0].reshape(dims.frames, dims.dim)


def batch_loss_and_grad(
    params: VelocityNetParams, inputs: Tensor, targets: Tensor
) -> Tuple[float, VelocityNetParams, Tensor]:
    """
    Mean squared error over the whole batch and its exact gradient.

    Args:
        params: Network parameters
        inputs: [batch x input_size] design matrix
        targets: [batch x output_size] target velocities

    Returns:
        (loss, gradient shaped like params, predictions)
    """
    out, activations = _forward_cached(params, inputs)
    targets = np.asarray(targets, dtype=np.float64).reshape(out.shape)
    residual = out - targets
    loss = float(np.mean(residual * residual))

    grad_w: List[Tensor] = [np.empty(0)] * len(params.weights)
    grad_b: List[Tensor] = [np.empty(0)] * len(params.biases)
    delta = 2.0 * residual / residual.size
    for i in range(len(params.weights) - 1, -1, -1):
        grad_w[i] = activations[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i].T) * (1.0 - activations[i] ** 2)
    return loss, VelocityNetParams(params.dims, grad_w, grad_b), out


def loss_and_grad(
    params: VelocityNetParams, net_input: NetInput, target: Tensor
) -> Tuple[float, VelocityNetParams]:
    dims = params.dims
    target = np.asarray(target, dtype=np.float64)
    if target.shape != (dims.frames, dims.dim):
        raise InvalidArgumentError(f"target shape {target.shape} does not match {(dims.frames, dims.dim)}")
    inputs = assemble_inputs(
        dims,
        np.asarray(net_input.noisy_clip)[None],
        np.asarray(net_input.reference)[None],
        _condition(dims, net_input.condition)[None],
        np.array([net_input.t]),
    )
    loss, grads, _ = batch_loss_and_grad(params, inputs, target.reshape(1, -1))
    return loss, grads


@dataclass
class AdamState:
    """
    Optimizer moments. ``mode="sgd"`` turns the update into plain gradient descent.
    """

    mode: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: List[Tensor] = field(default_factory=list)
    v: List[Tensor] = field(default_factory=list)

    def apply(self, arrays: Sequence[Tensor], grads: Sequence[Tensor], lr: float) -> List[Tensor]:
        """Return updated copies of ``arrays``; moments advance in place."""
        if lr < 0:
            raise InvalidArgumentError(f"learning rate must be >= 0, got {lr}")
        for g in grads:
            check_finite(g, TrainingDivergedError, "gradient")
        if self.mode == "sgd":
            return [a - lr * g for a, g in zip(arrays, grads)]
        if self.mode != "adam":
            raise InvalidArgumentError(f"unknown optimizer mode {self.mode!r}")
        if not self.m:
            self.m = [np.zeros_like(g) for g in grads]
            self.v = [np.zeros_like(g) for g in grads]
        self.step += 1
        correction1 = 1.0 - self.beta1 ** self.step
        correction2 = 1.0 - self.beta2 ** self.step
        updated = []
        for i, (a, g) in enumerate(zip(arrays, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            m_hat = self.m[i] / correction1
            v_hat = self.v[i] / correction2
            updated.append(a - lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return updated


def sgd_step(
    params: VelocityNetParams, grads: VelocityNetParams, lr: float, adam_state: AdamState
) -> VelocityNetParams:
    """
    One optimizer update.

    Args:
        params: Current parameters
        grads: Gradient shaped like params
        lr: Learning rate
        adam_state: Optimizer state, advanced in place

    Returns:
        New parameters; ``params`` is left untouched
    """
    updated = adam_state.apply(params.arrays(), grads.arrays(), lr)
    return VelocityNetParams.from_arrays(params.dims, updated)


def gradient_check(
    params: VelocityNetParams, net_input: NetInput, target: Tensor, h: float = 1e-4
) -> float:
    """
    Compare analytic gradients against central finite differences.

    Returns:
        max |analytic - numeric| / max(max |analytic|, max |numeric|)
    """
    _, grads = loss_and_grad(params, net_input, target)
    analytic = grads.flat()
    base = params.flat()
    numeric = np.empty_like(base)
    for i in range(base.size):
        shifted = base.copy()
        shifted[i] += h
        plus, _ = loss_and_grad(VelocityNetParams.from_flat(params.dims, shifted), net_input, target)
        shifted[i] -= 2 * h
        minus, _ = loss_and_grad(VelocityNetParams.from_flat(params.dims, shifted), net_input, target)
        numeric[i] = (plus - minus) / (2 * h)
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


def params_to_bytes(params: VelocityNetParams) -> bytes:
    d = params.dims
    header = _HEADER.pack(d.frames, d.dim, d.cond_dim, d.hidden_layers, d.width)
    return CHECKPOINT_MAGIC + header + params.flat().astype("<f8").tobytes()


def params_from_bytes(blob: bytes) -> VelocityNetParams:
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise SnapshotFormatError("checkpoint magic bytes missing")
    offset = len(CHECKPOINT_MAGIC)
    if len(blob) < offset + _HEADER.size:
        raise SnapshotFormatError("checkpoint header truncated")
    try:
        dims = NetDims(*_HEADER.unpack_from(blob, offset))
    except InvalidArgumentError as e:
        raise SnapshotFormatError(f"checkpoint header invalid: {e}") from e
    payload = blob[offset + _HEADER.size:]
    if len(payload) != 8 * dims.parameter_count:
        raise SnapshotFormatError(
            f"checkpoint payload has {len(payload)} bytes, expected {8 * dims.parameter_count}"
        )
    return VelocityNetParams.from_flat(dims, np.frombuffer(payload, dtype="<f8").astype(np.float64))


def save_params(path: Union[str, Path], params: VelocityNetParams) -> Path:
    path = Path(path)
    path.write_bytes(params_to_bytes(params))
    return path


def load_params(path: Union[str, Path]) -> VelocityNetParams:
    return params_from_bytes(Path(path).read_bytes())
