"""The quality model: one shared embedding trunk, three heads on top.

* trunk: Linear -> ReLU -> LayerNorm -> Dropout, producing the latent
  embedding every head consumes.
* class head: two-layer perceptron ending in softmax over the four quality
  categories.
* pair head: two-layer perceptron scoring latent difference vectors; for a
  batch it sees one row per unordered sample pair (i < j), built as
  ``latent[i] - latent[j]``, and regresses the matching score difference.
* dual-stream regressor: two parallel two-layer perceptrons over the
  latent. One ends in a sigmoid and acts as a per-sample weight, the other
  is unbounded; the quality estimate is their elementwise product.

Only the trunk and the dual-stream regressor participate in inference. The
class and pair heads exist to shape the shared embedding during training
and can be disabled independently.

All stochastic state (weight init, each dropout layer) derives from one
seed through separate child generators, in a fixed documented order, so a
model is reproducible from ``(config, seed)`` alone.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .layers import (
    Dropout,
    Identity,
    LayerStack,
    Linear,
    ReLU,
    Sigmoid,
    Softmax,
)
from .layers import LayerNorm as LayerNormLayer
from .layers import Param

NUM_CLASSES = 4


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    ``num_classes`` is part of the on-disk config for forward compatibility
    but the quartile labelling fixes it at four.
    """

    input_dim: int = 512
    embed_dim: int = 512
    hidden_dim: int = 256
    num_classes: int = 4
    dropout_rate: float = 0.2
    layernorm_epsilon: float = 1e-5
    class_head_enabled: bool = True
    pair_head_enabled: bool = True
    weight_stream_enabled: bool = True

    def __post_init__(self) -> None:
        for label, value in (
            ("input_dim", self.input_dim),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
        ):
            if not isinstance(value, int) or value < 1:
                raise ConfigError(f"{label} must be a positive integer, got {value}")
        if self.num_classes != NUM_CLASSES:
            raise ConfigError(
                f"num_classes is fixed at {NUM_CLASSES}, got {self.num_classes}"
            )
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(
                f"dropout_rate must be in [0, 1), got {self.dropout_rate}"
            )
        if not self.layernorm_epsilon > 0.0:
            raise ConfigError(
                f"layernorm_epsilon must be positive, got {self.layernorm_epsilon}"
            )


@dataclass(frozen=True)
class PairBatch:
    """All unordered index pairs of a batch with their latent and score gaps.

    ``index_pairs`` has shape (K, 2) with ``i < j`` row-wise, ordered by
    ascending i then ascending j, K = n * (n - 1) / 2. ``feature_gaps`` is
    ``latent[i] - latent[j]`` and ``score_gaps`` the matching difference of
    normalised scores.
    """

    index_pairs: np.ndarray
    feature_gaps: np.ndarray
    score_gaps: np.ndarray


def pair_indices(n: int) -> np.ndarray:
    """The (K, 2) array of unordered index pairs of range(n), i < j."""
    if n < 2:
        raise ShapeError(f"pairs need at least 2 samples, got {n}")
    i, j = np.triu_indices(n, k=1)
    return np.column_stack([i, j])


def make_pair_batch(latent: np.ndarray, norm_scores: np.ndarray) -> PairBatch:
    latent = np.asarray(latent, dtype=np.float64)
    norm_scores = np.asarray(norm_scores, dtype=np.float64)
    if latent.ndim != 2 or norm_scores.shape != (latent.shape[0],):
        raise ShapeError(
            f"latent shape {latent.shape} and scores shape {norm_scores.shape} "
            "do not describe one batch"
        )
    pairs = pair_indices(latent.shape[0])
    i = pairs[:, 0]
    j = pairs[:, 1]
    return PairBatch(
        index_pairs=pairs,
        feature_gaps=latent[i] - latent[j],
        score_gaps=norm_scores[i] - norm_scores[j],
    )


class LpfModel:
    """Latent-plus-heads quality model with hand-written backward passes."""

    def __init__(
        self, config: ModelConfig, seed: int = 0, deterministic: bool = True
    ) -> None:
        self.config = config
        self.seed = seed
        self.deterministic = deterministic
        self.training = True

        # One child stream per consumer, in fixed order: weight init first,
        # then one per dropout layer (trunk, class, pair, weight, score).
        children = np.random.SeedSequence(seed).spawn(6)
        init_rng = np.random.default_rng(children[0])
        drop_rngs = [np.random.default_rng(c) for c in children[1:]]

        c = config

        def linear(i: int, o: int) -> Linear:
            return Linear(i, o, init_rng, deterministic)

        self.trunk = LayerStack(
            "trunk",
            [
                linear(c.input_dim, c.embed_dim),
                ReLU(),
                LayerNormLayer(c.embed_dim, c.layernorm_epsilon),
                Dropout(c.dropout_rate, drop_rngs[0]),
            ],
        )
        self.class_head = LayerStack(
            "class_head",
            [
                linear(c.embed_dim, c.hidden_dim),
                ReLU(),
                Dropout(c.dropout_rate, drop_rngs[1]),
                linear(c.hidden_dim, c.num_classes),
                Softmax(),
            ],
        )
        self.pair_head = LayerStack(
            "pair_head",
            [
                linear(c.embed_dim, c.hidden_dim),
                ReLU(),
                Dropout(c.dropout_rate, drop_rngs[2]),
                linear(c.hidden_dim, 1),
            ],
        )
        self.weight_stream = LayerStack(
            "weight_stream",
            [
                linear(c.embed_dim, c.hidden_dim),
                ReLU(),
                Dropout(c.dropout_rate, drop_rngs[3]),
                linear(c.hidden_dim, 1),
                Sigmoid(),
            ],
        )
        self.score_stream = LayerStack(
            "score_stream",
            [
                linear(c.embed_dim, c.hidden_dim),
                ReLU(),
                Dropout(c.dropout_rate, drop_rngs[4]),
                linear(c.hidden_dim, 1),
                Identity(),
            ],
        )
        self.set_train()

    # -- mode handling ------------------------------------------------------

    def stacks(self) -> list[LayerStack]:
        return [
            self.trunk,
            self.class_head,
            self.pair_head,
            self.weight_stream,
            self.score_stream,
        ]

    def set_train(self) -> None:
        self.training = True
        for stack in self.stacks():
            stack.set_mode(True)

    def set_eval(self) -> None:
        self.training = False
        for stack in self.stacks():
            stack.set_mode(False)

    # -- forward passes -----------------------------------------------------

    def embed(self, features: np.ndarray) -> np.ndarray:
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.config.input_dim:
            raise ShapeError(
                f"model expects (n, {self.config.input_dim}) features, "
                f"got shape {features.shape}"
            )
        return self.trunk.forward(features)

    def class_probs(self, latent: np.ndarray) -> np.ndarray:
        return self.class_head.forward(latent)

    def class_backward_from_logits(self, grad_logits: np.ndarray) -> np.ndarray:
        # The cross-entropy gradient arrives already at the logits, so the
        # reverse walk starts below the terminal softmax.
        return self.class_head.backward_from(grad_logits, len(self.class_head.layers) - 1)

    def pair_scores(self, pairs: PairBatch) -> np.ndarray:
        return self.pair_head.forward(pairs.feature_gaps)[:, 0]

    def quality(self, latent: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Per-sample (weight, raw score, estimate); estimate = weight * raw."""
        if self.config.weight_stream_enabled:
            weights = self.weight_stream.forward(latent)[:, 0]
        else:
            weights = np.ones(latent.shape[0])
        raw = self.score_stream.forward(latent)[:, 0]
        return weights, raw, weights * raw

    def predict(self, features: np.ndarray) -> np.ndarray:
        """Quality estimates for a feature matrix. Requires eval mode."""
        if self.training:
            raise RuntimeError("predict requires eval mode; call set_eval() first")
        latent = self.embed(features)
        _, _, estimate = self.quality(latent)
        return estimate

    # -- parameter access ---------------------------------------------------

    def parameters(self) -> list[Param]:
        params: list[Param] = []
        for stack in self.stacks():
            params.extend(stack.parameters())
        return params

    def trainable_parameters(self) -> list[Param]:
        """Parameters updated by the optimiser under the current toggles.

        The score stream and trunk always train; the weight stream trains
        unless disabled; the auxiliary heads train only while enabled.
        """
        stacks: list[LayerStack] = [self.trunk]
        if self.config.class_head_enabled:
            stacks.append(self.class_head)
        if self.config.pair_head_enabled:
            stacks.append(self.pair_head)
        if self.config.weight_stream_enabled:
            stacks.append(self.weight_stream)
        stacks.append(self.score_stream)
        params: list[Param] = []
        for stack in stacks:
            params.extend(stack.parameters())
        return params

    def parameter_count(self) -> int:
        return sum(value.size for _, value, _ in self.parameters())

    def zero_grad(self) -> None:
        for stack in self.stacks():
            stack.zero_grad()

    # -- stochastic state ---------------------------------------------------

    def dropout_layers(self) -> list[tuple[str, Dropout]]:
        named: list[tuple[str, Dropout]] = []
        for stack in self.stacks():
            for i, layer in enumerate(stack.layers):
                if isinstance(layer, Dropout):
                    named.append((f"{stack.name}.{i}", layer))
        return named

    def rng_states(self) -> dict[str, dict]:
        return {name: layer.rng_state for name, layer in self.dropout_layers()}

    def set_rng_states(self, states: dict[str, dict]) -> None:
        layers = dict(self.dropout_layers())
        if set(states) != set(layers):
            raise ShapeError(
                f"rng state keys {sorted(states)} do not match dropout layers "
                f"{sorted(layers)}"
            )
        for name, state in states.items():
            layers[name].rng_state = state

    def param_dict(self) -> dict[str, np.ndarray]:
        return {name: value for name, value, _ in self.parameters()}

    def load_param_dict(self, params: dict[str, np.ndarray]) -> None:
        current = {name: value for name, value, _ in self.parameters()}
        if set(params) != set(current):
            missing = sorted(set(current) - set(params))
            extra = sorted(set(params) - set(current))
            raise ShapeError(
                f"parameter names do not match model (missing {missing}, extra {extra})"
            )
        for name, value in params.items():
            target = current[name]
            value = np.asarray(value, dtype=np.float64)
            if value.shape != target.shape:
                raise ShapeError(
                    f"parameter {name} has shape {value.shape}, expected {target.shape}"
                )
            target[...] = value
