"""Minimal feedforward network: dense layers, ReLU/linear/exponential
activations, dropout, Adam, early stopping, and per-layer activation
extraction.

Layers are indexed 1..L where layer 1 is the raw input and layer L the output,
so ``hidden_representation(model, x, l)`` exposes the mapping to any layer.
Dropout uses the non-inverted convention: stochastic passes multiply
activations by Bernoulli(keep) masks, while inference passes scale by the keep
probability (the weight scaling inference rule).

Loss families:

* ``mse`` - single linear output head.
* ``gaussian_nll`` - single linear mean head plus one trainable log-sd scalar
  (homoscedastic).
* ``gamma_nll`` - exponential mean head plus a bias-only exponential shape
  unit (weights fixed at zero), giving one global shape for all inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy import special

from .distributions import Empirical, Gamma, LogNormal, Normal
from .errors import DomainError, TrainingError

_ACTIVATIONS = ("relu", "linear", "exponential")
_LOSSES = ("mse", "gaussian_nll", "gamma_nll")
_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class LayerSpec:
    width: int
    activation: str = "relu"
    dropout: float = 0.0

    def __post_init__(self):
        if self.width < 1:
            raise DomainError("layer width must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")
        if not (0.0 <= self.dropout < 1.0):
            raise DomainError("dropout must lie in [0, 1)")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    max_epochs: int = 100
    patience: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0.0:
            raise DomainError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if self.patience < 1:
            raise DomainError("patience must be >= 1")


def _apply_activation(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "exponential":
        # overflow becomes inf and surfaces as a non-finite loss downstream
        with np.errstate(over="ignore"):
            return np.exp(z)
    return z


def _activation_grad(name, z, a):
    if name == "relu":
        return (z > 0.0).astype(float)
    if name == "exponential":
        return a
    return np.ones_like(z)


class MlpModel:
    """Feedforward network; weights live in ``weights``/``biases`` plus the
    loss-specific scalar in ``extras``."""

    def __init__(self, input_dim, hidden, loss="mse", rng_seed=0, output_bias=0.0):
        if input_dim < 1:
            raise DomainError("input_dim must be >= 1")
        if loss not in _LOSSES:
            raise DomainError(f"unknown loss {loss!r}")
        self.input_dim = int(input_dim)
        self.hidden = tuple(h if isinstance(h, LayerSpec) else LayerSpec(**h) for h in hidden)
        self.loss = loss
        self.rng_seed = int(rng_seed)
        out_activation = "exponential" if loss == "gamma_nll" else "linear"
        self.layer_specs = self.hidden + (LayerSpec(1, out_activation, 0.0),)
        self.output_heads = 2 if loss == "gamma_nll" else 1

        rng = np.random.default_rng(self.rng_seed)
        self.weights = []
        self.biases = []
        fan_in = self.input_dim
        for spec in self.layer_specs:
            s = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-s, s, size=(fan_in, spec.width)))
            self.biases.append(np.zeros(spec.width))
            fan_in = spec.width
        self.biases[-1][:] = float(output_bias)

        self.extras = {}
        if loss == "gamma_nll":
            # bias-only exponential shape head; its input weights stay zero
            self.extras["log_shape"] = np.zeros(())
        elif loss == "gaussian_nll":
            self.extras["log_sd"] = np.zeros(())
        self._rng = np.random.default_rng(self.rng_seed)

    # layer 1 is the input, layer L the output
    @property
    def num_layers(self):
        return len(self.layer_specs) + 1

    def layer_width(self, l):
        if not 1 <= l <= self.num_layers:
            raise DomainError(f"layer index {l} out of range 1..{self.num_layers}")
        if l == 1:
            return self.input_dim
        if l == self.num_layers:
            return self.output_heads
        return self.layer_specs[l - 2].width

    def reset_stream(self):
        """Re-seed the model's private dropout stream to its initial state."""
        self._rng = np.random.default_rng(self.rng_seed)

    def has_dropout(self):
        return any(spec.dropout > 0.0 for spec in self.layer_specs)

    def parameters(self):
        return self.weights + self.biases + list(self.extras.values())

    def _check_input(self, x):
        arr = np.asarray(x, dtype=float)
        single = arr.ndim == 1
        if single:
            arr = arr[None, :]
        if arr.ndim != 2 or arr.shape[1] != self.input_dim:
            raise DomainError(f"input has shape {np.shape(x)}, model expects dimension {self.input_dim}")
        return arr, single

    def _forward_full(self, x, mode, rng=None):
        """Run the network, returning (outputs, activations, caches).

        activations[l-1] is the value of layer l (activations[0] is the input,
        the last entry the output, including the shape/sd head where present).
        caches hold pre-activations and dropout masks for backprop.
        """
        if mode not in ("inference", "dropout"):
            raise DomainError(f"unknown forward mode {mode!r}")
        if mode == "dropout" and rng is None:
            rng = self._rng
        a = x
        activations = [a]
        zs = []
        masks = []
        for W, b, spec in zip(self.weights, self.biases, self.layer_specs):
            z = a @ W + b
            a = _apply_activation(spec.activation, z)
            if spec.dropout > 0.0:
                keep = 1.0 - spec.dropout
                if mode == "dropout":
                    mask = (rng.random(a.shape) < keep).astype(float)
                else:
                    mask = np.full_like(a, keep)
                a = a * mask
            else:
                mask = None
            zs.append(z)
            masks.append(mask)
            activations.append(a)
        outputs = activations[-1]
        if self.loss == "gamma_nll":
            shape_col = np.full((outputs.shape[0], 1), np.exp(float(self.extras["log_shape"])))
            outputs = np.concatenate([outputs, shape_col], axis=1)
            activations[-1] = outputs
        return outputs, activations, (zs, masks)


def forward(model, x, mode="inference", rng=None):
    """Forward pass. Returns (outputs, per-layer activations).

    ``mode="inference"`` is deterministic (weight-scaled dropout);
    ``mode="dropout"`` draws fresh Bernoulli masks from the model's stream or
    the supplied generator. For a single input vector, outputs has shape
    (heads,) and each activation is a vector.
    """
    arr, single = model._check_input(x)
    outputs, activations, _ = model._forward_full(arr, mode, rng)
    if single:
        return outputs[0], [a[0] for a in activations]
    return outputs, activations


def hidden_representation(model, x, l):
    """The network's mapping to layer ``l`` (inference mode): l=1 returns the
    input itself, l=L the output layer."""
    if not isinstance(l, (int, np.integer)) or not 1 <= l <= model.num_layers:
        raise DomainError(f"layer index {l} out of range 1..{model.num_layers}")
    arr, single = model._check_input(x)
    if l == 1:
        return arr[0] if single else arr
    outputs, activations, _ = model._forward_full(arr, "inference")
    rep = activations[l - 1]
    return rep[0] if single else rep


def mc_dropout_sample(model, x, T, rng=None):
    """T stochastic-dropout forward passes. Returns an array of T draws for a
    single input (T x m for a batch); reproducible given a seeded generator."""
    if not model.has_dropout():
        raise DomainError("mc_dropout_sample requires at least one dropout layer with rate > 0")
    if T < 1:
        raise DomainError("T must be >= 1")
    arr, single = model._check_input(x)
    if rng is None:
        rng = model._rng
    draws = np.empty((T, arr.shape[0]))
    for t in range(T):
        out, _, _ = model._forward_full(arr, "dropout", rng)
        draws[t] = out[:, 0]
    return draws[:, 0] if single else draws


def _loss_and_output_grad(model, outputs, y):
    """Loss value plus gradients w.r.t. the dense output column and extras.

    Overflow is not masked: a diverging model yields a non-finite loss, which
    the trainer reports as a TrainingError.
    """
    mu = outputs[:, 0]
    n = y.size
    extra_grads = {}
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        if model.loss == "mse":
            resid = mu - y
            loss = float(np.mean(resid ** 2))
            d_mu = 2.0 * resid / n
        elif model.loss == "gaussian_nll":
            log_sd = float(model.extras["log_sd"])
            inv_var = np.exp(-2.0 * log_sd)
            resid = mu - y
            loss = float(np.mean(0.5 * _LOG_2PI + log_sd + 0.5 * resid ** 2 * inv_var))
            d_mu = resid * inv_var / n
            extra_grads["log_sd"] = np.asarray(np.mean(1.0 - resid ** 2 * inv_var))
        else:  # gamma_nll
            alpha = float(np.exp(model.extras["log_shape"]))
            log_mu = np.log(mu)
            log_y = np.log(y)
            loss = float(np.mean(special.gammaln(alpha) + alpha * log_mu - alpha * np.log(alpha)
                                 - (alpha - 1.0) * log_y + y * alpha / mu))
            d_mu = alpha * (mu - y) / (mu ** 2) / n
            d_alpha = np.mean(special.digamma(alpha) + log_mu - np.log(alpha) - 1.0 - log_y + y / mu)
            extra_grads["log_shape"] = np.asarray(d_alpha * alpha)
    return loss, d_mu[:, None], extra_grads


def loss_and_gradients(model, x, y, mode="inference", rng=None):
    """Loss and gradients for every parameter (weights, biases, extras).

    Used by the Adam loop and by finite-difference checks; mode selects
    whether dropout masks are sampled.
    """
    arr, _ = model._check_input(x)
    y = np.asarray(y, dtype=float).ravel()
    if y.size != arr.shape[0]:
        raise DomainError("x and y must have matching lengths")
    outputs, activations, (zs, masks) = model._forward_full(arr, mode, rng)
    loss, delta, extra_grads = _loss_and_output_grad(model, outputs, y)

    grad_w = [None] * len(model.weights)
    grad_b = [None] * len(model.biases)
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(len(model.layer_specs) - 1, -1, -1):
            spec = model.layer_specs[i]
            if masks[i] is not None:
                delta = delta * masks[i]
            a_pre_drop = _apply_activation(spec.activation, zs[i])
            delta = delta * _activation_grad(spec.activation, zs[i], a_pre_drop)
            inputs = activations[i] if i > 0 else arr
            grad_w[i] = inputs.T @ delta
            grad_b[i] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ model.weights[i].T
    return loss, grad_w + grad_b + [extra_grads.get(k, np.zeros(())) for k in model.extras]


def train(model, train_data, val_data, config):
    """Minibatch Adam with early stopping on validation loss.

    Returns (model, history); the model keeps the weights of the best
    validation epoch. Deterministic given ``config.seed``.
    """
    x_train, y_train = _check_split(model, train_data, "train")
    x_val, y_val = _check_split(model, val_data, "validation")

    rng = np.random.default_rng(config.seed)
    params = model.parameters()
    m_state = [np.zeros_like(p) for p in params]
    v_state = [np.zeros_like(p) for p in params]
    t = 0
    history = {"train": [], "val": []}
    best_val = np.inf
    best_epoch = -1
    best_params = [p.copy() for p in params]
    stall = 0

    n = x_train.shape[0]
    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for s in range(0, n, config.batch_size):
            idx = order[s:s + config.batch_size]
            loss, grads = loss_and_gradients(model, x_train[idx], y_train[idx], mode="dropout", rng=rng)
            if not np.isfinite(loss):
                raise TrainingError(f"training loss became non-finite at epoch {epoch}", epoch=epoch)
            epoch_loss += loss * idx.size
            t += 1
            b1c = 1.0 - config.beta1 ** t
            b2c = 1.0 - config.beta2 ** t
            for p, g, ms, vs in zip(params, grads, m_state, v_state):
                ms *= config.beta1
                ms += (1.0 - config.beta1) * g
                vs *= config.beta2
                vs += (1.0 - config.beta2) * g * g
                p -= config.learning_rate * (ms / b1c) / (np.sqrt(vs / b2c) + config.adam_eps)
        val_loss = evaluate_loss(model, x_val, y_val)
        if not np.isfinite(val_loss):
            raise TrainingError(f"validation loss became non-finite at epoch {epoch}", epoch=epoch)
        history["train"].append(epoch_loss / n)
        history["val"].append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = [p.copy() for p in params]
            stall = 0
        else:
            stall += 1
            if stall >= config.patience:
                break

    for p, best in zip(params, best_params):
        p[...] = best
    history["best_epoch"] = best_epoch
    history["best_val"] = best_val
    return model, history


def evaluate_loss(model, x, y):
    """Inference-mode loss on a dataset."""
    outputs, _, _ = model._forward_full(model._check_input(x)[0], "inference")
    loss, _, _ = _loss_and_output_grad(model, outputs, np.asarray(y, dtype=float).ravel())
    return loss


def _check_split(model, data, name):
    x, y = data
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    y = np.asarray(y, dtype=float).ravel()
    if x.shape[0] == 0:
        raise DomainError(f"{name} split is empty")
    if x.shape[0] != y.size:
        raise DomainError(f"{name} split has mismatched lengths")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise DomainError(f"{name} split contains non-finite values")
    if model.loss == "gamma_nll" and np.any(y <= 0.0):
        raise DomainError(f"{name} responses must be > 0 for the gamma likelihood")
    return x, y


def predictive_distribution(model, x, method, residual_sd=None, T=None, rng=None):
    """Predictive distribution for one input vector.

    Methods: ``wsir_gaussian`` (Normal around the deterministic output),
    ``wsir_log_gaussian`` (log-normal: the output is a log-scale mean),
    ``gamma_heads`` (two-head gamma model), ``mc_dropout`` (empirical over T
    stochastic passes).
    """
    if method in ("wsir_gaussian", "wsir_log_gaussian"):
        if residual_sd is None or not residual_sd > 0.0:
            raise DomainError("residual_sd must be > 0 for weight-scaled predictions")
        out, _ = forward(model, x, "inference")
        if method == "wsir_gaussian":
            return Normal(float(out[0]), float(residual_sd))
        return LogNormal(float(out[0]), float(residual_sd))
    if method == "gamma_heads":
        if model.output_heads != 2:
            raise DomainError("gamma_heads requires a two-head model")
        out, _ = forward(model, x, "inference")
        mu, alpha = float(out[0]), float(out[1])
        return Gamma(shape=alpha, scale=mu / alpha)
    if method == "mc_dropout":
        if T is None or T < 2:
            raise DomainError("mc_dropout requires T >= 2 draws")
        return Empirical(mc_dropout_sample(model, x, T, rng=rng))
    raise DomainError(f"unknown predictive method {method!r}")


def predictive_distributions(model, X, method, residual_sd=None, T=None, rng=None):
    """Vector version of :func:`predictive_distribution` for a batch of inputs."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if method in ("wsir_gaussian", "wsir_log_gaussian"):
        if residual_sd is None or not residual_sd > 0.0:
            raise DomainError("residual_sd must be > 0 for weight-scaled predictions")
        out, _ = forward(model, X, "inference")
        fam = Normal if method == "wsir_gaussian" else LogNormal
        return [fam(float(o), float(residual_sd)) for o in out[:, 0]]
    if method == "gamma_heads":
        if model.output_heads != 2:
            raise DomainError("gamma_heads requires a two-head model")
        out, _ = forward(model, X, "inference")
        return [Gamma(shape=float(al), scale=float(mu) / float(al)) for mu, al in out]
    if method == "mc_dropout":
        if T is None or T < 2:
            raise DomainError("mc_dropout requires T >= 2 draws")
        draws = mc_dropout_sample(model, X, T, rng=rng)
        return [Empirical(draws[:, j]) for j in range(X.shape[0])]
    raise DomainError(f"unknown predictive method {method!r}")


CHECKPOINT_VERSION = 1


def save_checkpoint(model, path, extra=None):
    """Write the model to a versioned npz container (bit-exact round trip)."""
    payload = {
        "format_version": np.asarray(CHECKPOINT_VERSION),
        "input_dim": np.asarray(model.input_dim),
        "rng_seed": np.asarray(model.rng_seed),
        "loss": np.asarray(model.loss),
        "widths": np.asarray([s.width for s in model.hidden], dtype=np.int64),
        "activations": np.asarray([s.activation for s in model.hidden]),
        "dropouts": np.asarray([s.dropout for s in model.hidden]),
        "extra_json": np.asarray(json.dumps(extra if extra is not None else {})),
    }
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        payload[f"w{i}"] = w
        payload[f"b{i}"] = b
    for key, value in model.extras.items():
        payload[f"extra_{key}"] = value
    with open(path, "wb") as fh:
        np.savez(fh, **payload)


def load_checkpoint(path):
    """Read a checkpoint written by :func:`save_checkpoint`.

    Returns (model, extra) where extra is the caller metadata dict.
    """
    with np.load(path, allow_pickle=False) as data:
        version = int(data["format_version"])
        if version != CHECKPOINT_VERSION:
            raise DomainError(f"unsupported checkpoint version {version}")
        hidden = [LayerSpec(int(w), str(a), float(d))
                  for w, a, d in zip(data["widths"], data["activations"], data["dropouts"])]
        model = MlpModel(int(data["input_dim"]), hidden, loss=str(data["loss"]),
                         rng_seed=int(data["rng_seed"]))
        for i in range(len(model.weights)):
            model.weights[i] = data[f"w{i}"].copy()
            model.biases[i] = data[f"b{i}"].copy()
        for key in list(model.extras):
            model.extras[key] = data[f"extra_{key}"].copy()
        extra = json.loads(str(data["extra_json"]))
    return model, extra
