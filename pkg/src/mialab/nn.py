"""Fully connected ReLU classifier trained by Adam, with an optional
differentially private path (per-example clipping + Gaussian noise).

The functional core operates on immutable MlpModel values; MlpClassifier
wraps it in a fit/predict estimator for array-based callers. Parameters
flatten in a fixed canonical order (per layer: weight matrix row-major,
then bias vector) used by gradients and checkpoints alike.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import dp
from .dataio import Sample
from .errors import MialabError, TrainingDiverged
from .rngs import as_generator

PROB_FLOOR = 1e-30
CHECKPOINT_VERSION = 1
_GRAD_CHUNK = 64


@dataclass(frozen=True)
class MlpModel:
    layer_dims: tuple[int, ...]
    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]

    def __post_init__(self):
        dims = self.layer_dims
        if len(dims) < 2:
            raise MialabError(f"need at least input and output dims, got {dims}")
        if any(d < 1 for d in dims):
            raise MialabError(f"layer dims must be positive, got {dims}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise MialabError("one weight matrix and bias vector per layer expected")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise MialabError(f"layer {i}: shape mismatch for dims {dims}")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise MialabError(f"layer {i}: non-finite parameter")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def n_params(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def flatten(self) -> np.ndarray:
        parts = []
        for W, b in zip(self.weights, self.biases):
            parts.append(W.ravel())
            parts.append(b)
        return np.concatenate(parts)

    @classmethod
    def unflatten(cls, layer_dims: Sequence[int], flat: np.ndarray) -> "MlpModel":
        dims = tuple(int(d) for d in layer_dims)
        weights, biases = [], []
        pos = 0
        for i in range(len(dims) - 1):
            size = dims[i] * dims[i + 1]
            weights.append(flat[pos : pos + size].reshape(dims[i], dims[i + 1]).copy())
            pos += size
            biases.append(flat[pos : pos + dims[i + 1]].copy())
            pos += dims[i + 1]
        if pos != flat.size:
            raise MialabError(f"flat vector has {flat.size} entries, expected {pos}")
        return cls(layer_dims=dims, weights=tuple(weights), biases=tuple(biases))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 200
    learning_rate: float = 1e-2
    l2_coefficient: float = 1e-5
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_epsilon: float = 1e-8
    seed: int = 0
    debug_checks: bool = False

    def __post_init__(self):
        if self.epochs < 1:
            raise MialabError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise MialabError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.learning_rate > 0:
            raise MialabError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.l2_coefficient < 0:
            raise MialabError(f"l2_coefficient must be >= 0, got {self.l2_coefficient}")
        b1, b2 = self.adam_betas
        if not (0 <= b1 < 1 and 0 <= b2 < 1):
            raise MialabError(f"adam betas must be in [0, 1), got {self.adam_betas}")


def init_model(layer_dims: Sequence[int], seed) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    dims = tuple(int(d) for d in layer_dims)
    rng = as_generator(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims, dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(layer_dims=dims, weights=tuple(weights), biases=tuple(biases))


def _forward_states(model: MlpModel, X: np.ndarray):
    pre_acts = []
    activations = [X]
    h = X
    last = model.n_layers - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ W + b
        pre_acts.append(z)
        h = np.maximum(z, 0.0) if i < last else z
        activations.append(h)
    return pre_acts, activations


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def forward(model: MlpModel, features) -> np.ndarray:
    """Class probability vector(s); accepts a single feature vector or a
    batch of rows."""
    X = np.asarray(features, dtype=np.float64)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != model.layer_dims[0]:
        raise MialabError(
            f"feature width {X.shape[1]} does not match input dim {model.layer_dims[0]}"
        )
    _, acts = _forward_states(model, X)
    probs = _softmax(acts[-1])
    return probs[0] if single else probs


def logloss(model: MlpModel, sample: Sample) -> float:
    probs = forward(model, sample.features)
    return -math.log(max(float(probs[sample.label]), PROB_FLOOR))


def loglosses(model: MlpModel, samples: Sequence[Sample]) -> np.ndarray:
    X = np.stack([s.features for s in samples])
    y = np.array([s.label for s in samples])
    probs = forward(model, X)
    p_true = np.clip(probs[np.arange(len(samples)), y], PROB_FLOOR, None)
    return -np.log(p_true)


def _per_example_grads(model: MlpModel, X: np.ndarray, y: np.ndarray,
                       l2_coefficient: float) -> np.ndarray:
    """Per-example gradients of (logloss + l2/2 * ||weights||^2), flattened
    in canonical order; shape (batch, n_params)."""
    B = X.shape[0]
    pre, acts = _forward_states(model, X)
    probs = _softmax(acts[-1])
    delta = probs.copy()
    delta[np.arange(B), y] -= 1.0
    deltas = [None] * model.n_layers
    deltas[-1] = delta
    for i in range(model.n_layers - 2, -1, -1):
        deltas[i] = (deltas[i + 1] @ model.weights[i + 1].T) * (pre[i] > 0)
    out = np.empty((B, model.flatten().size))
    pos = 0
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        gw = np.einsum("bi,bj->bij", acts[i], deltas[i]).reshape(B, -1)
        if l2_coefficient:
            gw += l2_coefficient * W.ravel()
        out[:, pos : pos + W.size] = gw
        pos += W.size
        out[:, pos : pos + b.size] = deltas[i]
        pos += b.size
    return out


def per_example_grad(model: MlpModel, sample: Sample, l2_coefficient: float) -> np.ndarray:
    """Gradient of this sample's regularized loss with respect to all
    parameters, flattened in canonical order."""
    return _per_example_grads(
        model, sample.features[None, :], np.array([sample.label]), l2_coefficient
    )[0]


def _mean_grad_and_loss(model: MlpModel, X: np.ndarray, y: np.ndarray,
                        l2_coefficient: float) -> tuple[np.ndarray, float]:
    B = X.shape[0]
    pre, acts = _forward_states(model, X)
    probs = _softmax(acts[-1])
    p_true = np.clip(probs[np.arange(B), y], PROB_FLOOR, None)
    loss = float(-np.log(p_true).mean())
    delta = probs
    delta[np.arange(B), y] -= 1.0
    delta /= B
    deltas = [None] * model.n_layers
    deltas[-1] = delta
    for i in range(model.n_layers - 2, -1, -1):
        deltas[i] = (deltas[i + 1] @ model.weights[i + 1].T) * (pre[i] > 0)
    parts = []
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        gw = acts[i].T @ deltas[i]
        if l2_coefficient:
            gw = gw + l2_coefficient * W
            loss += 0.5 * l2_coefficient * float(np.sum(W * W))
        parts.append(gw.ravel())
        parts.append(deltas[i].sum(axis=0))
    return np.concatenate(parts), loss


def training_steps(n: int, cfg: TrainConfig) -> int:
    return cfg.epochs * math.ceil(n / cfg.batch_size)


def sampling_rate(n: int, cfg: TrainConfig) -> float:
    return min(1.0, cfg.batch_size / n)


class _Adam:
    def __init__(self, size: int, cfg: TrainConfig):
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0
        self.cfg = cfg

    def update(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        b1, b2 = self.cfg.adam_betas
        self.t += 1
        self.m = b1 * self.m + (1 - b1) * grad
        self.v = b2 * self.v + (1 - b2) * grad * grad
        m_hat = self.m / (1 - b1**self.t)
        v_hat = self.v / (1 - b2**self.t)
        return params - self.cfg.learning_rate * m_hat / (np.sqrt(v_hat) + self.cfg.adam_epsilon)


def train(
    init: MlpModel,
    members: Sequence[Sample],
    cfg: TrainConfig,
    privacy: "dp.PrivacyParams | None" = None,
    loss_callback=None,
) -> MlpModel:
    """Train on the member samples and return the final model.

    Without privacy: minibatch Adam on the batch-mean gradient, one shuffled
    pass per epoch. With privacy: each step draws a Poisson batch at rate
    batch_size/n, clips every per-example gradient to the clip norm, sums,
    adds Gaussian noise of std noise_multiplier * clip_norm per coordinate,
    divides by the expected batch size, and applies the Adam update.
    Deterministic given cfg.seed.
    """
    if not members:
        raise MialabError("cannot train on an empty member set")
    n = len(members)
    if cfg.batch_size > n:
        raise MialabError(f"batch_size {cfg.batch_size} exceeds the {n} training samples")
    X = np.stack([s.features for s in members])
    y = np.array([s.label for s in members], dtype=np.int64)
    rng = as_generator(cfg.seed)
    params = init.flatten()
    adam = _Adam(params.size, cfg)
    model = init
    steps = training_steps(n, cfg)
    if privacy is None:
        step = 0
        for _ in range(cfg.epochs):
            order = rng.permutation(n)
            for start in range(0, n, cfg.batch_size):
                idx = order[start : start + cfg.batch_size]
                grad, loss = _mean_grad_and_loss(model, X[idx], y[idx], cfg.l2_coefficient)
                if not math.isfinite(loss):
                    raise TrainingDiverged(step, loss)
                if loss_callback is not None:
                    loss_callback(step, loss)
                params = adam.update(params, grad)
                model = MlpModel.unflatten(init.layer_dims, params)
                step += 1
        return model
    privacy.warn_if_delta_large(n)
    q = sampling_rate(n, cfg)
    expected_batch = q * n
    for step in range(steps):
        mask = rng.random(n) < q
        idx = np.flatnonzero(mask)
        clipped_sum = np.zeros(params.size)
        for start in range(0, idx.size, _GRAD_CHUNK):
            sel = idx[start : start + _GRAD_CHUNK]
            grads = _per_example_grads(model, X[sel], y[sel], cfg.l2_coefficient)
            norms = np.sqrt(np.einsum("ij,ij->i", grads, grads))
            if not np.all(np.isfinite(norms)):
                raise TrainingDiverged(step, float(norms.max()))
            scale = np.minimum(1.0, privacy.clip_norm / np.maximum(norms, 1e-300))
            grads *= scale[:, None]
            if cfg.debug_checks:
                post = np.sqrt(np.einsum("ij,ij->i", grads, grads))
                if not np.all(post <= privacy.clip_norm * (1 + 1e-9)):
                    raise AssertionError(
                        f"clipping violated at step {step}: max norm {post.max()}"
                    )
            clipped_sum += grads.sum(axis=0)
        grad = dp.noisy_mean(
            clipped_sum[None, :] if idx.size else np.empty((0, params.size)),
            privacy.clip_norm,
            privacy.noise_multiplier,
            expected_batch,
            rng,
            dim=params.size,
        )
        params = adam.update(params, grad)
        model = MlpModel.unflatten(init.layer_dims, params)
    return model


def accuracy(model: MlpModel, samples: Sequence[Sample]) -> float:
    """Fraction of samples whose argmax prediction matches the label;
    argmax ties break toward the lower class index."""
    if not samples:
        raise MialabError("accuracy over an empty sample list")
    X = np.stack([s.features for s in samples])
    y = np.array([s.label for s in samples])
    probs = forward(model, X)
    return float(np.mean(np.argmax(probs, axis=1) == y))


def save_model(model: MlpModel, path: "str | Path") -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "layer_dims": list(model.layer_dims),
        "parameters": model.flatten().tolist(),
    }
    Path(path).write_text(json.dumps(doc), encoding="utf-8")


def load_model(path: "str | Path") -> MlpModel:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise MialabError(f"unsupported checkpoint version {doc.get('format_version')!r}")
    return MlpModel.unflatten(doc["layer_dims"], np.array(doc["parameters"], dtype=np.float64))


class MlpClassifier:
    """Estimator-style interface over the functional training core.

    Parameters mirror TrainConfig plus the architecture and an optional
    PrivacyParams; follows the fit/predict/get_params protocol so it can sit
    in standard model-selection tooling.
    """

    def __init__(
        self,
        hidden_units: tuple[int, ...] = (256, 256),
        epochs: int = 100,
        batch_size: int = 200,
        learning_rate: float = 1e-2,
        l2: float = 1e-5,
        adam_betas: tuple[float, float] = (0.9, 0.999),
        adam_epsilon: float = 1e-8,
        privacy: "dp.PrivacyParams | None" = None,
        seed: int = 0,
    ):
        self.hidden_units = hidden_units
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.l2 = l2
        self.adam_betas = adam_betas
        self.adam_epsilon = adam_epsilon
        self.privacy = privacy
        self.seed = seed

    _PARAM_NAMES = (
        "hidden_units",
        "epochs",
        "batch_size",
        "learning_rate",
        "l2",
        "adam_betas",
        "adam_epsilon",
        "privacy",
        "seed",
    )

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params) -> "MlpClassifier":
        for name, value in params.items():
            if name not in self._PARAM_NAMES:
                raise ValueError(f"unknown parameter {name!r}")
            setattr(self, name, value)
        return self

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            l2_coefficient=self.l2,
            adam_betas=self.adam_betas,
            adam_epsilon=self.adam_epsilon,
            seed=self.seed,
        )

    def fit(self, X, y) -> "MlpClassifier":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2:
            raise MialabError(f"X must be 2-D, got shape {X.shape}")
        if y.shape != (X.shape[0],):
            raise MialabError(f"y shape {y.shape} does not match X rows {X.shape[0]}")
        if y.min() < 0:
            raise MialabError("labels must be non-negative class indices")
        self.classes_ = np.arange(int(y.max()) + 1)
        self.n_features_in_ = X.shape[1]
        dims = (X.shape[1], *self.hidden_units, len(self.classes_))
        samples = [Sample(X[i], int(y[i])) for i in range(X.shape[0])]
        model = init_model(dims, self.seed)
        self.model_ = train(model, samples, self._train_config(), self.privacy)
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise MialabError("classifier is not fitted")

    def predict_proba(self, X) -> np.ndarray:
        self._check_fitted()
        return forward(self.model_, np.asarray(X, dtype=np.float64))

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=-1)

    def score(self, X, y) -> float:
        return float(np.mean(self.predict(X) == np.asarray(y)))
