"""Neural network layers with explicit forward and backward passes.

Each layer follows the same informal protocol:

* ``forward(x)`` consumes a (batch, features) float64 array, caches whatever
  the backward pass needs, and returns the activation.
* ``backward(grad)`` consumes the upstream gradient with the shape of the
  forward output, accumulates parameter gradients in place, and returns the
  gradient with respect to the forward input.
* layers with parameters expose ``parameters()`` as a list of
  ``(name, value, grad)`` triples sharing storage with the layer.

Gradients accumulate across backward calls until ``zero_grad()``; the
trainer zeroes them once per batch. Stochastic layers (dropout) own a
dedicated random generator so the sampling sequence is reproducible and
serialisable independently of anything else that draws random numbers.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError
from .linalg import matmul

Param = tuple[str, np.ndarray, np.ndarray]


def as_batch(x: np.ndarray, name: str = "input") -> np.ndarray:
    """Validate a (batch, features) array and return it as float64."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-d (batch, features), got shape {x.shape}")
    return x


class Linear:
    """Affine map ``y = x W^T + b``.

    ``weight`` has shape (out_features, in_features) and is drawn uniformly
    from ``[-a, a]`` with ``a = sqrt(6 / (in_features + out_features))``;
    ``bias`` starts at zero. Backward accumulates

        dW = g^T x,   db = sum_rows(g),   dx = g W.
    """

    def __init__(
        self,
        in_features: int,
        out_features: int,
        rng: np.random.Generator,
        deterministic: bool = True,
    ) -> None:
        if in_features < 1 or out_features < 1:
            raise ShapeError(
                f"linear layer needs positive sizes, got {in_features}x{out_features}"
            )
        bound = np.sqrt(6.0 / (in_features + out_features))
        self.in_features = in_features
        self.out_features = out_features
        self.deterministic = deterministic
        self.weight = rng.uniform(-bound, bound, size=(out_features, in_features))
        self.bias = np.zeros(out_features)
        self.grad_weight = np.zeros_like(self.weight)
        self.grad_bias = np.zeros_like(self.bias)
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = as_batch(x)
        if x.shape[1] != self.in_features:
            raise ShapeError(
                f"linear layer expects {self.in_features} input features, "
                f"got shape {x.shape}"
            )
        self._x = x
        y = matmul(x, self.weight.T, self.deterministic)
        return y + self.bias

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise RuntimeError("backward called before forward")
        grad = as_batch(grad, "gradient")
        self.grad_weight += matmul(grad.T, self._x, self.deterministic)
        self.grad_bias += grad.sum(axis=0)
        return matmul(grad, self.weight, self.deterministic)

    def parameters(self) -> list[Param]:
        return [
            ("weight", self.weight, self.grad_weight),
            ("bias", self.bias, self.grad_bias),
        ]


class ReLU:
    """Elementwise ``max(x, 0)``. The subgradient at exactly zero is zero."""

    def __init__(self) -> None:
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = as_batch(x)
        self._mask = x > 0.0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._mask is None:
            raise RuntimeError("backward called before forward")
        return np.where(self._mask, grad, 0.0)


class LayerNorm:
    """Per-row standardisation with learnable gain and shift.

    For each row: ``y = gain * (x - mean) / sqrt(var + eps) + shift`` where
    mean and variance are taken over the feature axis (population variance,
    divisor ``dim``). Gain starts at one, shift at zero.

    Backward uses the standard closed form. With ``xn`` the normalised row,
    ``g`` the incoming gradient scaled by gain, and ``d`` the feature count:

        dx = (d * g - sum(g) - xn * sum(g * xn)) / (d * sqrt(var + eps))
    """

    def __init__(self, dim: int, epsilon: float = 1e-5) -> None:
        if dim < 1:
            raise ShapeError(f"layer norm needs a positive width, got {dim}")
        if not epsilon > 0.0:
            raise ValueError(f"epsilon must be positive, got {epsilon}")
        self.dim = dim
        self.epsilon = epsilon
        self.gain = np.ones(dim)
        self.shift = np.zeros(dim)
        self.grad_gain = np.zeros_like(self.gain)
        self.grad_shift = np.zeros_like(self.shift)
        self._xn: np.ndarray | None = None
        self._inv_std: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = as_batch(x)
        if x.shape[1] != self.dim:
            raise ShapeError(f"layer norm width is {self.dim}, got shape {x.shape}")
        mean = x.mean(axis=1, keepdims=True)
        var = x.var(axis=1, keepdims=True)
        self._inv_std = 1.0 / np.sqrt(var + self.epsilon)
        self._xn = (x - mean) * self._inv_std
        return self.gain * self._xn + self.shift

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._xn is None or self._inv_std is None:
            raise RuntimeError("backward called before forward")
        grad = as_batch(grad, "gradient")
        xn = self._xn
        self.grad_gain += (grad * xn).sum(axis=0)
        self.grad_shift += grad.sum(axis=0)
        g = grad * self.gain
        dim = float(self.dim)
        return (
            g - g.mean(axis=1, keepdims=True) - xn * (g * xn).mean(axis=1, keepdims=True)
        ) * self._inv_std

    def parameters(self) -> list[Param]:
        return [
            ("gain", self.gain, self.grad_gain),
            ("shift", self.shift, self.grad_shift),
        ]


class Dropout:
    """Inverted dropout.

    In training mode each entry is kept with probability ``1 - rate`` and the
    kept entries are scaled by ``1 / (1 - rate)``, so the map has unit
    expectation. In eval mode forward and backward are the identity. The
    layer owns its generator; eval-mode passes do not draw from it.
    """

    def __init__(self, rate: float, rng: np.random.Generator) -> None:
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self.training = True
        self._scaled_mask: np.ndarray | None = None

    def set_mode(self, training: bool) -> None:
        self.training = training

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = as_batch(x)
        if not self.training:
            self._scaled_mask = None
            return x
        keep = self.rng.random(x.shape) >= self.rate
        self._scaled_mask = keep / (1.0 - self.rate)
        return x * self._scaled_mask

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if not self.training:
            return grad
        if self._scaled_mask is None:
            raise RuntimeError("backward called before forward")
        return grad * self._scaled_mask

    @property
    def rng_state(self) -> dict:
        return self.rng.bit_generator.state

    @rng_state.setter
    def rng_state(self, state: dict) -> None:
        self.rng.bit_generator.state = state


class Softmax:
    """Row-wise softmax, shifted by the row maximum for overflow safety.

    Backward propagates through the full Jacobian:
    ``dx = p * (g - sum(g * p, axis=1))``. The trainer never uses this path
    for the cross-entropy head (that gradient is fused at the logits), but
    the layer stays a complete citizen for gradient checking.
    """

    def __init__(self) -> None:
        self._probs: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = as_batch(x)
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        self._probs = e / e.sum(axis=1, keepdims=True)
        return self._probs

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._probs is None:
            raise RuntimeError("backward called before forward")
        p = self._probs
        return p * (grad - (grad * p).sum(axis=1, keepdims=True))


class Sigmoid:
    """Elementwise logistic function, evaluated without overflow.

    Negative inputs use the ``exp(x) / (1 + exp(x))`` form so ``exp`` never
    sees a positive argument. Backward is ``g * y * (1 - y)``.
    """

    def __init__(self) -> None:
        self._y: np.ndarray | None = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = as_batch(x)
        y = np.empty_like(x)
        pos = x >= 0.0
        y[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        y[~pos] = ex / (1.0 + ex)
        self._y = y
        return y

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._y is None:
            raise RuntimeError("backward called before forward")
        return grad * self._y * (1.0 - self._y)


class Identity:
    """Pass-through layer; marks a head that emits unbounded raw values."""

    def forward(self, x: np.ndarray) -> np.ndarray:
        return as_batch(x)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad


class LayerStack:
    """A named sequence of layers applied in order.

    ``backward`` visits the layers in reverse. ``backward_from(grad, index)``
    starts the reverse walk just below ``index``, which lets a fused loss
    gradient (already expressed at some inner layer's input) skip the layers
    above it.
    """

    def __init__(self, name: str, layers: list) -> None:
        self.name = name
        self.layers = layers

    def forward(self, x: np.ndarray) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return self.backward_from(grad, len(self.layers))

    def backward_from(self, grad: np.ndarray, index: int) -> np.ndarray:
        for layer in reversed(self.layers[:index]):
            grad = layer.backward(grad)
        return grad

    def set_mode(self, training: bool) -> None:
        for layer in self.layers:
            if hasattr(layer, "set_mode"):
                layer.set_mode(training)

    def parameters(self) -> list[Param]:
        params: list[Param] = []
        for i, layer in enumerate(self.layers):
            if hasattr(layer, "parameters"):
                for name, value, grad in layer.parameters():
                    params.append((f"{self.name}.{i}.{name}", value, grad))
        return params

    def zero_grad(self) -> None:
        for _, _, grad in self.parameters():
            grad[...] = 0.0

    def dropout_layers(self) -> list[Dropout]:
        return [layer for layer in self.layers if isinstance(layer, Dropout)]
