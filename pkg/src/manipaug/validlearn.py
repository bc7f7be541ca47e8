"""Learned transform-validity penalty.

Probe transitions are re-simulated under random transforms of growing
magnitude; the error between the transformed outcome and the re-simulated
outcome says how physically plausible a transform is. A small tanh MLP
regresses that error from the transform parameters and then serves as a smooth
penalty with an exact input gradient.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .transforms import TransformBounds, TransformParams

log = logging.getLogger(__name__)

DEFAULT_HIDDEN = (32, 32)
DEFAULT_EPOCHS = 2000
DEFAULT_LR = 0.01


class TrainingDiverged(RuntimeError):
    def __init__(self, epoch: int, last_loss: float):
        super().__init__(f"training diverged at epoch {epoch}; last finite loss {last_loss:.6g}")
        self.epoch = epoch
        self.last_loss = last_loss


@dataclass(frozen=True)
class ValidityExample:
    transform: TransformParams
    error: float

    def __post_init__(self):
        if not (math.isfinite(self.error) and self.error >= 0):
            raise ValueError(f"validity error must be finite and nonnegative, got {self.error}")


def n_valid_for(d: int) -> int:
    """Number of validity examples to collect, ceil(sqrt(10**d))."""
    return math.isqrt(10 ** d - 1) + 1


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(eq=False)
class ValidityModel:
    weights: list
    biases: list
    lower: np.ndarray
    upper: np.ndarray
    # prediction is y_scale * softplus(raw output)
    y_scale: float = 1.0
    final_loss: float = float("nan")
    meta: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.weights[0].shape[1]

    @property
    def sizes(self) -> list:
        return [self.d] + [w.shape[0] for w in self.weights]

    def _input_scale(self):
        cached = self.__dict__.get("_scale")
        if cached is not None and cached[0] is self.lower and cached[1] is self.upper:
            return cached[2], cached[3]
        span = self.upper - self.lower
        safe = np.where(span > 0, span, 1.0)
        gain = np.where(span > 0, 2.0 / safe, 0.0)
        offset = np.where(span > 0, -2.0 * self.lower / safe - 1.0, 0.0)
        self.__dict__["_scale"] = (self.lower, self.upper, gain, offset)
        return gain, offset

    def _forward(self, x):
        """x: (n, d) normalized inputs. Returns pre-activations and activations."""
        acts = [x]
        h = x
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(h @ W.T + b)
            acts.append(h)
        u = (h @ self.weights[-1].T + self.biases[-1])[:, 0]
        return acts, u

    def predict(self, values) -> np.ndarray:
        values = np.atleast_2d(np.asarray(values, dtype=float))
        self._check(values.shape[1])
        gain, offset = self._input_scale()
        _, u = self._forward(values * gain + offset)
        return self.y_scale * _softplus(u)

    def evaluate_with_gradient(self, values):
        values = np.asarray(values, dtype=float).reshape(-1)
        self._check(values.shape[0])
        gain, offset = self._input_scale()
        # single-vector forward pass; the solver calls this once per step
        h = values * gain + offset
        acts = []
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            h = np.tanh(W @ h + b)
            acts.append(h)
        u = float(self.weights[-1][0] @ h + self.biases[-1][0])
        value = self.y_scale * (max(u, 0.0) + math.log1p(math.exp(-abs(u))))
        g = (self.y_scale * 0.5 * (1.0 + math.tanh(0.5 * u))) * self.weights[-1][0]
        for layer in range(len(self.weights) - 2, -1, -1):
            h = acts[layer]
            g = (g * (1.0 - h * h)) @ self.weights[layer]
        return value, g * gain

    def _check(self, d: int):
        if d != self.d:
            raise ValueError(f"model expects {self.d} transform parameters, got {d}")

    def to_json(self) -> dict:
        return {
            "sizes": self.sizes,
            "activation": "tanh",
            "output": "softplus",
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "bounds": {"lower": self.lower.tolist(), "upper": self.upper.tolist()},
            "y_scale": self.y_scale,
            "final_loss": self.final_loss,
            "meta": self.meta,
        }

    @classmethod
    def from_json(cls, rec: dict) -> ValidityModel:
        weights = [np.asarray(w, dtype=float) for w in rec["weights"]]
        biases = [np.asarray(b, dtype=float) for b in rec["biases"]]
        sizes = list(rec["sizes"])
        if len(weights) != len(sizes) - 1 or len(biases) != len(weights):
            raise ValueError("model layer count disagrees with sizes")
        for i, (W, b) in enumerate(zip(weights, biases)):
            if W.shape != (sizes[i + 1], sizes[i]) or b.shape != (sizes[i + 1],):
                raise ValueError(f"layer {i} has shape {W.shape}/{b.shape}, sizes say {sizes[i + 1]}x{sizes[i]}")
        if sizes[-1] != 1:
            raise ValueError("validity model must have a scalar output")
        lower = np.asarray(rec["bounds"]["lower"], dtype=float)
        upper = np.asarray(rec["bounds"]["upper"], dtype=float)
        if lower.shape != (sizes[0],) or upper.shape != (sizes[0],):
            raise ValueError("model bounds disagree with input size")
        return cls(weights, biases, lower, upper, float(rec["y_scale"]),
                   float(rec.get("final_loss", float("nan"))), dict(rec.get("meta", {})))


def save_model(model: ValidityModel, path) -> None:
    Path(path).write_text(json.dumps(model.to_json()) + "\n", encoding="utf-8")


def load_model(path, d: int | None = None) -> ValidityModel:
    with open(path, encoding="utf-8") as fh:
        model = ValidityModel.from_json(json.load(fh))
    if d is not None and model.d != d:
        raise ValueError(f"model in {path} takes {model.d} parameters, expected {d}")
    return model


def init_model(d: int, bounds: TransformBounds, rng: np.random.Generator, hidden=DEFAULT_HIDDEN) -> ValidityModel:
    sizes = [d, *hidden, 1]
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        limit = math.sqrt(6.0 / (n_in + n_out))
        weights.append(rng.uniform(-limit, limit, size=(n_out, n_in)))
        biases.append(np.zeros(n_out))
    return ValidityModel(weights, biases, bounds.lower.copy(), bounds.upper.copy())


def train_validity_model(data, bounds: TransformBounds, *, hidden=DEFAULT_HIDDEN, epochs: int = DEFAULT_EPOCHS,
                         lr: float = DEFAULT_LR, rng: np.random.Generator | None = None) -> ValidityModel:
    """Full-batch Adam on mean squared error.

    Targets are divided by their mean so the softplus head works on O(1)
    values whatever the error scale of the scenario. The output keeps that
    scale: a scenario whose probes re-simulate exactly (all errors zero up to
    rounding) gets a penalty that is zero up to rounding too.
    """
    data = list(data)
    if len(data) < 10:
        raise ValueError(f"need at least 10 validity examples, got {len(data)}")
    rng = np.random.default_rng(0) if rng is None else rng
    X = np.stack([ex.transform.values for ex in data])
    y = np.array([ex.error for ex in data])
    model = init_model(X.shape[1], bounds, rng, hidden)
    model.y_scale = float(y.mean())
    target = y / model.y_scale if model.y_scale > 0 else np.zeros_like(y)
    gain, offset = model._input_scale()
    Xn = X * gain + offset

    params = model.weights + model.biases
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    n_layers = len(model.weights)
    last = float("nan")
    for epoch in range(1, epochs + 1):
        acts, u = model._forward(Xn)
        resid = _softplus(u) - target
        loss = float(np.mean(resid ** 2))
        if not math.isfinite(loss):
            raise TrainingDiverged(epoch, last)
        last = loss
        # d loss / d u, u being the raw network output
        gu = (2.0 / len(y)) * resid * _sigmoid(u)
        grads_w = [None] * n_layers
        grads_b = [None] * n_layers
        g = gu[:, None]
        for layer in range(n_layers - 1, -1, -1):
            grads_w[layer] = g.T @ acts[layer]
            grads_b[layer] = g.sum(axis=0)
            if layer > 0:
                h = acts[layer]
                g = (g @ model.weights[layer]) * (1.0 - h * h)
        grads = grads_w + grads_b
        for i, (p, gr) in enumerate(zip(params, grads)):
            m[i] = beta1 * m[i] + (1 - beta1) * gr
            v[i] = beta2 * v[i] + (1 - beta2) * gr * gr
            mhat = m[i] / (1 - beta1 ** epoch)
            vhat = v[i] / (1 - beta2 ** epoch)
            p -= lr * mhat / (np.sqrt(vhat) + eps)
    _, u = model._forward(Xn)
    final = float(np.mean((_softplus(u) - target) ** 2))
    if not math.isfinite(final):
        raise TrainingDiverged(epochs, last)
    model.final_loss = final
    return model


def evaluate_with_gradient(model: ValidityModel, T):
    values = T.values if isinstance(T, TransformParams) else T
    return model.evaluate_with_gradient(values)


def collect_validity_data(scenario, probes, bounds: TransformBounds, n_valid: int,
                          rng: np.random.Generator) -> list:
    """Probe transforms of growing magnitude and keep the best one per round.

    ``scenario`` supplies ``simulate(s, r, a) -> (s_next, r_next)``,
    ``apply_transition(T, s, s_next, r, r_next, a)`` and ``probe_center(s)``.
    For round ``i`` every probe draws ``T ~ U[alpha*lower, alpha*upper]`` with
    ``alpha = i / n_valid``; the minimum re-simulation error over the probe set
    (and its transform) is recorded. The running minimum starts fresh each
    round.
    """
    probes = list(probes)
    if not probes:
        raise ValueError("probe set is empty")
    outcomes = []
    for s, r, a in probes:
        try:
            outcomes.append(scenario.simulate(s, r, a))
        except RuntimeError as exc:
            log.warning("probe skipped, original transition failed: %s", exc)
            outcomes.append(None)

    data = []
    for i in range(1, n_valid + 1):
        alpha = i / n_valid
        scaled = bounds.scaled(alpha)
        best_err, best_T = math.inf, None
        for (s, r, a), outcome in zip(probes, outcomes):
            values = rng.uniform(scaled.lower, scaled.upper)
            if outcome is None:
                continue
            T = TransformParams(values, scenario.probe_center(s))
            s_next, r_next = outcome
            aug_s, aug_s_next, aug_r, _, aug_a = scenario.apply_transition(T, s, s_next, r, r_next, a)
            try:
                test_s_next, _ = scenario.simulate(aug_s, aug_r, aug_a)
            except RuntimeError as exc:
                log.warning("probe skipped at round %d: %s", i, exc)
                continue
            err = float(np.linalg.norm(aug_s_next - test_s_next))
            if err < best_err:
                best_err, best_T = err, T
        if best_T is not None:
            data.append(ValidityExample(best_T, best_err))
    return data
