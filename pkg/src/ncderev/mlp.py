"""Feedforward spectral mapper: context-stacked reverberant log-Mel in,
clean 40-dim log-Mel out, trained by mini-batch gradient descent on MSE.

Hidden layers use the sigmoid; the output layer is affine. Training
follows plain SGD with a halving learning-rate schedule driven by the
validation loss, and returns the parameters of the best validation epoch.
"""

import base64
import json
from dataclasses import dataclass

import numpy as np


class TrainingDivergedError(RuntimeError):
    """Training loss became non-finite; carries the loss trace so far."""

    def __init__(self, message, trace):
        super().__init__(message)
        self.trace = trace


@dataclass
class MlpModel:
    """Layer dimensions plus weight matrices (fan_in x fan_out) and biases."""

    layer_dims: list
    weights: list
    biases: list

    def __post_init__(self):
        dims = [int(d) for d in self.layer_dims]
        if len(dims) < 2 or any(d < 1 for d in dims):
            raise ValueError(f"invalid layer dims {self.layer_dims}")
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("need one weight matrix and bias per layer transition")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ValueError(
                    f"layer {i}: expected {(dims[i], dims[i + 1])} weights and "
                    f"({dims[i + 1]},) bias, got {w.shape} and {b.shape}"
                )
        self.layer_dims = dims

    @property
    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def copy(self) -> "MlpModel":
        return MlpModel(
            list(self.layer_dims),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
        )


@dataclass
class TrainConfig:
    """SGD hyperparameters; the halving rule adapts the learning rate."""

    learning_rate: float = 0.1
    batch_size: int = 200
    epochs: int = 100
    improvement_threshold: float = 0.001  # relative validation gain per epoch
    max_halvings: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate < 0 or self.batch_size < 1 or self.epochs < 1:
            raise ValueError("learning_rate must be >= 0, batch_size/epochs >= 1")


def init_model(layer_dims, seed: int) -> MlpModel:
    """Uniform fan-based initialization: W ~ U(-s, s), s = sqrt(6/(fan_in+fan_out)).

    Biases start at zero. Deterministic per seed.
    """
    rng = np.random.default_rng(seed)
    weights = []
    biases = []
    for fan_in, fan_out in zip(layer_dims[:-1], layer_dims[1:]):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-s, s, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpModel(list(layer_dims), weights, biases)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _forward_all(model, x):
    """Activations of every layer for a (B, d_in) batch."""
    acts = [x]
    h = x
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        h = z if i == last else _sigmoid(z)
        acts.append(h)
    return acts


def forward(model: MlpModel, x) -> np.ndarray:
    """Map context vectors to 40-dim clean-frame estimates.

    Accepts a single vector or a (batch, d_in) matrix.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != model.layer_dims[0]:
        raise ValueError(
            f"input dim {x.shape[1]} does not match model input "
            f"{model.layer_dims[0]}"
        )
    out = _forward_all(model, x)[-1]
    return out[0] if single else out


def mse_loss(outputs, targets) -> float:
    """Mean over batch and feature dimensions of squared differences."""
    outputs = np.asarray(outputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if outputs.shape != targets.shape:
        raise ValueError(f"shape mismatch: {outputs.shape} vs {targets.shape}")
    return float(np.mean((outputs - targets) ** 2))


def gradients(model: MlpModel, x, targets):
    """Backpropagated gradients of mse_loss for one batch.

    Returns (weight_grads, bias_grads, loss).
    """
    x = np.asarray(x, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    acts = _forward_all(model, x)
    out = acts[-1]
    batch = x.shape[0]
    loss = float(np.mean((out - targets) ** 2))
    delta = 2.0 * (out - targets) / (batch * targets.shape[1])
    w_grads = [None] * len(model.weights)
    b_grads = [None] * len(model.weights)
    for i in range(len(model.weights) - 1, -1, -1):
        w_grads[i] = acts[i].T @ delta
        b_grads[i] = delta.sum(axis=0)
        if i > 0:
            h = acts[i]
            delta = (delta @ model.weights[i].T) * h * (1.0 - h)
    return w_grads, b_grads, loss


def input_gradient(model: MlpModel, x) -> np.ndarray:
    """Jacobian-vector style gradient of sum(outputs) with respect to one input."""
    x = np.asarray(x, dtype=np.float64)[None, :]
    acts = _forward_all(model, x)
    delta = np.ones((1, model.layer_dims[-1]))
    for i in range(len(model.weights) - 1, -1, -1):
        delta = delta @ model.weights[i].T
        if i > 0:
            h = acts[i]
            delta = delta * h * (1.0 - h)
    return delta[0]


def train(model: MlpModel, inputs, targets, config: TrainConfig,
          valid_inputs=None, valid_targets=None):
    """Mini-batch SGD over shuffled epochs with a halving learning rate.

    The learning rate is halved whenever the validation loss fails to
    improve by ``improvement_threshold`` relative to the previous epoch;
    training stops after ``max_halvings`` consecutive halvings or when
    the epoch budget runs out. Without a validation set the training
    loss drives the schedule.

    Returns:
        (best_model, trace) where best_model holds the parameters of the
        best validation epoch and trace is a list of
        (epoch, train_mse, valid_mse, learning_rate).

    Raises TrainingDivergedError (carrying the partial trace) when the
    loss becomes non-finite.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if inputs.ndim != 2 or inputs.shape[0] == 0:
        raise ValueError("empty training set")
    if inputs.shape[0] != targets.shape[0]:
        raise ValueError("inputs and targets differ in sample count")
    has_valid = valid_inputs is not None and valid_targets is not None
    if has_valid:
        valid_inputs = np.asarray(valid_inputs, dtype=np.float64)
        valid_targets = np.asarray(valid_targets, dtype=np.float64)

    rng = np.random.default_rng(config.seed)
    model = model.copy()
    lr = config.learning_rate
    trace = []
    best = model.copy()
    best_valid = np.inf
    prev_valid = None
    halvings = 0
    n = inputs.shape[0]
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        with np.errstate(over="ignore", invalid="ignore"):
            for start in range(0, n, config.batch_size):
                sel = order[start:start + config.batch_size]
                w_grads, b_grads, batch_loss = gradients(
                    model, inputs[sel], targets[sel])
                if not np.isfinite(batch_loss):
                    raise TrainingDivergedError(
                        f"non-finite loss in epoch {epoch}", trace
                    )
                if lr:
                    for w, b, gw, gb in zip(model.weights, model.biases,
                                            w_grads, b_grads):
                        w -= lr * gw
                        b -= lr * gb
            train_mse = mse_loss(forward(model, inputs), targets)
            valid_mse = (mse_loss(forward(model, valid_inputs), valid_targets)
                         if has_valid else train_mse)
        if not (np.isfinite(train_mse) and np.isfinite(valid_mse)):
            raise TrainingDivergedError(f"non-finite loss in epoch {epoch}", trace)
        trace.append((epoch, train_mse, valid_mse, lr))
        if valid_mse < best_valid:
            best_valid = valid_mse
            best = model.copy()
        if prev_valid is not None:
            improvement = ((prev_valid - valid_mse) / prev_valid
                           if prev_valid > 0 else 0.0)
            if improvement < config.improvement_threshold:
                lr *= 0.5
                halvings += 1
                if halvings >= config.max_halvings:
                    prev_valid = valid_mse
                    break
            else:
                halvings = 0
        prev_valid = valid_mse
    return best, trace


def dereverberate_features(model: MlpModel, reverb_feats, p: int, q: int) -> np.ndarray:
    """Context-stack a reverberant feature sequence and map it frame-wise."""
    from .features import stack_context

    reverb_feats = np.asarray(reverb_feats, dtype=np.float64)
    expected = (p + q + 1) * reverb_feats.shape[1]
    if model.layer_dims[0] != expected:
        raise ValueError(
            f"model input dim {model.layer_dims[0]} does not match "
            f"(p+q+1)*{reverb_feats.shape[1]} = {expected}"
        )
    return forward(model, stack_context(reverb_feats, p, q))


def save_model(model: MlpModel, path, seed=None) -> None:
    """Serialize to JSON with base64-encoded little-endian f32 blocks per layer."""
    payload = {
        "layer_dims": model.layer_dims,
        "seed": seed,
        "layers": [
            {
                "weights": base64.b64encode(
                    w.astype("<f4").tobytes()).decode("ascii"),
                "bias": base64.b64encode(
                    b.astype("<f4").tobytes()).decode("ascii"),
            }
            for w, b in zip(model.weights, model.biases)
        ],
    }
    with open(path, "w", encoding="ascii") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def load_model(path) -> MlpModel:
    with open(path, "r", encoding="ascii") as fh:
        payload = json.load(fh)
    dims = payload["layer_dims"]
    weights = []
    biases = []
    for i, layer in enumerate(payload["layers"]):
        w = np.frombuffer(base64.b64decode(layer["weights"]), dtype="<f4")
        b = np.frombuffer(base64.b64decode(layer["bias"]), dtype="<f4")
        weights.append(w.astype(np.float64).reshape(dims[i], dims[i + 1]))
        biases.append(b.astype(np.float64))
    return MlpModel(dims, weights, biases)
