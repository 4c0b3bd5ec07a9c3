from __future__ import annotations

import copy
from typing import Iterable, Sequence

import numpy as np

from ..errors import ConfigurationError, DimensionError, InputError, NumericError
from . import ops
from .layers import Context, Layer, ResidualBlock
from .tensor import Tensor, check_finite


class ActivationTrace:
    """Post-activation outputs at each probe point, in layer order.

    Values are batched ``(N, n1, n2, m)`` arrays; :meth:`maps` returns the
    ``(N, m, n1, n2)`` feature-map view.
    """

    def __init__(self, entries: Sequence[tuple[str, np.ndarray]]):
        self._entries = list(entries)
        self._index = {name: i for i, (name, _) in enumerate(self._entries)}

    @property
    def names(self) -> list[str]:
        return [name for name, _ in self._entries]

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries)

    def __getitem__(self, key) -> np.ndarray:
        if isinstance(key, str):
            if key not in self._index:
                raise KeyError(f"no probe named {key!r} in trace")
            key = self._index[key]
        return self._entries[key][1]

    def maps(self, key) -> np.ndarray:
        value = self[key]
        if value.ndim == 2:  # dense probe: one 1 x n map
            return value[:, None, None, :]
        return value.transpose(0, 3, 1, 2)


class Model:
    """Ordered layer stack with named probe points.

    ``input_shape`` is ``(H, W, C)``. Probe points are conv layers with a
    ReLU and residual block outputs, in topological order; hidden dense
    layers are tracked separately in ``dense_probes``.
    """

    def __init__(self, layers: list[Layer], input_shape, num_classes: int, arch_id: str,
                 config: dict | None = None):
        self.layers = layers
        self.input_shape = tuple(int(v) for v in input_shape)
        self.num_classes = num_classes
        self.arch_id = arch_id
        self.config = dict(config or {})
        self.probe_points: list[str] = []
        self.dense_probes: list[str] = []
        for layer in layers:
            if isinstance(layer, ResidualBlock):
                self.probe_points.extend(layer.probe_names())
            elif layer.kind == "conv" and layer.probe:
                self.probe_points.append(layer.name)
            elif layer.kind == "dense" and layer.activation == "relu":
                self.dense_probes.append(layer.name)
        self.layer_shapes = self._check_shapes()

    def _check_shapes(self) -> dict[str, tuple[int, ...]]:
        shape = self.input_shape
        shapes = {}
        for layer in self.layers:
            try:
                shape = layer.output_shape(shape)
            except DimensionError as exc:
                raise DimensionError(f"architecture mismatch at layer {layer.name!r}: {exc}") from None
            shapes[layer.name] = shape
        if shape != (self.num_classes,):
            raise DimensionError(f"final layer produces {shape}, expected ({self.num_classes},)")
        return shapes

    def parameters(self) -> list[tuple[str, Tensor]]:
        return [p for layer in self.layers for p in layer.parameters()]

    @property
    def param_count(self) -> int:
        return sum(t.size for _, t in self.parameters())

    @property
    def dtype(self):
        return self.parameters()[0][1].dtype

    def init(self, seed: int) -> Model:
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init(rng)
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.parameters())
        if set(own) != set(state):
            missing = sorted(set(own) - set(state))
            extra = sorted(set(state) - set(own))
            raise DimensionError(f"state mismatch: missing {missing}, unexpected {extra}")
        for name, t in own.items():
            if state[name].shape != t.shape:
                raise DimensionError(f"tensor {name!r}: shape {state[name].shape} != {t.shape}")
            t.data[...] = state[name]

    def clone(self, dtype=None) -> Model:
        self.clear_cache()
        twin = copy.deepcopy(self)
        if dtype is not None:
            for _, t in twin.parameters():
                t.data = t.data.astype(dtype)
                t.grad = None
        return twin

    def clear_cache(self) -> None:
        for layer in self.layers:
            layer.clear_cache()

    def zero_grad(self) -> None:
        for _, t in self.parameters():
            t.zero_grad()

    def prepare_input(self, x) -> np.ndarray:
        x = np.asarray(x.data if isinstance(x, Tensor) else x)
        if x.shape == self.input_shape:
            x = x[None]
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise DimensionError(
                f"input shape {x.shape} does not match model input {self.input_shape} "
                f"(layer {self.layers[0].name!r})"
            )
        check_finite(x, "model input")
        return np.ascontiguousarray(x, dtype=self.dtype)

    def forward(self, x, capture=False, train=False, rng=None, dense=False):
        """Return ``(logits, trace)``; ``trace`` is None unless ``capture``."""
        x = self.prepare_input(x)
        probes = set(self.probe_points) | (set(self.dense_probes) if dense else set())
        ctx = Context(train=train, rng=rng, trace=[] if capture else None, probes=frozenset(probes))
        out = x
        for layer in self.layers:
            out = layer.forward(out, ctx)
        return out, (ActivationTrace(ctx.trace) if capture else None)

    def backward(self, dlogits: np.ndarray) -> None:
        grad = dlogits
        for i in range(len(self.layers) - 1, -1, -1):
            grad = self.layers[i].backward(grad, need_dx=i > 0)

    def predict_proba(self, x, batch_size: int = 256) -> np.ndarray:
        x = self.prepare_input(x)
        chunks = [ops.softmax(self.forward(x[i:i + batch_size])[0].astype(np.float64))
                  for i in range(0, len(x), batch_size)]
        return np.concatenate(chunks)

    def locate_nonfinite(self, x) -> str | None:
        """Name of the first layer whose output contains NaN/Inf, if any."""
        out = self.prepare_input(x)
        ctx = Context()
        for layer in self.layers:
            out = layer.forward(out, ctx)
            if not np.all(np.isfinite(out)):
                return layer.name
        return None

    def describe(self) -> dict:
        return {
            "arch_id": self.arch_id,
            "input_shape": list(self.input_shape),
            "num_classes": self.num_classes,
            "param_count": self.param_count,
            "probe_points": list(self.probe_points),
            "layers": [layer.describe() for layer in self.layers],
        }


def forward(model: Model, input, capture: bool = False):
    """Evaluation-mode forward pass. Returns ``(logits, trace or None)``."""
    return model.forward(input, capture=capture)


def cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy (accumulated in float64) and its gradient wrt logits."""
    logp = ops.log_softmax(logits.astype(np.float64))
    n = len(labels)
    loss = -logp[np.arange(n), labels].sum() / n
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return float(loss), grad.astype(logits.dtype)


def _check_labels(model: Model, labels) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.size == 0:
        raise InputError("batch must contain at least one label")
    if labels.dtype.kind not in "iu" or labels.min() < 0 or labels.max() >= model.num_classes:
        raise InputError(f"labels must be class indices in [0, {model.num_classes})")
    return labels.astype(np.int64)


def evaluate_loss(model: Model, inputs, labels) -> float:
    labels = _check_labels(model, labels)
    logits, _ = model.forward(inputs)
    return cross_entropy(logits, labels)[0]


class SGD:
    """SGD with optional classical momentum: ``v = mu*v + g; w -= lr*v``."""

    def __init__(self, model: Model, momentum: float = 0.0):
        if not 0 <= momentum < 1:
            raise ConfigurationError("momentum must lie in [0, 1)")
        self.model = model
        self.momentum = momentum
        self.velocity = {name: np.zeros_like(t.data) for name, t in model.parameters()} if momentum else {}

    def step(self, lr: float) -> None:
        for name, t in self.model.parameters():
            if self.momentum:
                v = self.velocity[name]
                v *= self.momentum
                v += t.grad
                t.data -= lr * v
            else:
                t.data -= lr * t.grad


def _owner(param_name: str) -> str:
    return param_name.rsplit(".", 1)[0]


def train_step(model: Model, batch, lr: float, optimizer: SGD | None = None,
               rng: np.random.Generator | None = None) -> float:
    """One SGD update on ``batch = (inputs, labels)``.

    Returns the mean cross-entropy of the batch measured before the update.
    """
    inputs, labels = batch
    labels = _check_labels(model, labels)
    if lr < 0:
        raise ConfigurationError("learning rate must be non-negative")
    if rng is None:
        rng = np.random.default_rng(0)
    x = model.prepare_input(inputs)
    if len(x) != len(labels):
        raise InputError(f"{len(x)} inputs but {len(labels)} labels")
    model.zero_grad()
    logits, _ = model.forward(x, train=True, rng=rng)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits", layer=model.locate_nonfinite(x) or model.layers[-1].name)
    loss, dlogits = cross_entropy(logits, labels)
    if not np.isfinite(loss):
        raise NumericError("non-finite loss", layer=model.layers[-1].name)
    model.backward(dlogits)
    for name, t in model.parameters():
        if not np.all(np.isfinite(t.grad)):
            raise NumericError(f"non-finite gradient for {name}", layer=_owner(name))
    if lr > 0:
        (optimizer or SGD(model)).step(lr)
    model.clear_cache()
    return loss


def analytic_gradients(model: Model, inputs, labels) -> dict[str, np.ndarray]:
    """Gradients of the eval-mode mean cross-entropy, without updating."""
    labels = _check_labels(model, labels)
    model.zero_grad()
    logits, _ = _eval_forward_with_cache(model, inputs)
    _, dlogits = cross_entropy(logits, labels)
    model.backward(dlogits)
    grads = {name: t.grad.copy() for name, t in model.parameters()}
    model.clear_cache()
    return grads


def _eval_forward_with_cache(model: Model, inputs):
    # training-mode caching with dropout forced off
    saved = [(layer, layer.rate) for layer in model.layers if layer.kind == "dropout"]
    for layer, _ in saved:
        layer.rate = 0.0
    try:
        return model.forward(inputs, train=True, rng=np.random.default_rng(0))
    finally:
        for layer, rate in saved:
            layer.rate = rate


def _loss_and_pattern(model: Model, x: np.ndarray, labels: np.ndarray) -> tuple[float, bytes]:
    """Eval loss plus a fingerprint of every ReLU on/off state and pool winner."""
    probes = frozenset(model.probe_points) | frozenset(model.dense_probes)
    ctx = Context(trace=[], probes=probes)
    parts = []
    out = x
    for layer in model.layers:
        if layer.kind == "pool":
            n, h, w, c = out.shape
            blocks = out[:, : h // 2 * 2, : w // 2 * 2].reshape(n, h // 2, 2, w // 2, 2, c)
            winner = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4).argmax(axis=-1)
            parts.append(winner.astype(np.uint8).tobytes())
        out = layer.forward(out, ctx)
    parts.extend(np.packbits(v > 0).tobytes() for _, v in ctx.trace)
    return cross_entropy(out, labels)[0], b"".join(parts)


def finite_diff_check(model: Model, sample, epsilon: float = 1e-4, n_weights: int = 100,
                      seed: int = 0, skip_kinks: bool = True, max_redraws: int = 20) -> float:
    """Max relative error between backprop and central finite differences.

    Runs on a float64 copy of ``model`` in evaluation mode (dropout off).
    Weights are drawn round-robin across parameter tensors so every layer
    is covered. With ``skip_kinks``, when the +/-epsilon probes switch a
    ReLU on or off or change a max-pool winner the loss is not differentiable
    over that interval, so the step shrinks tenfold (down to epsilon * 1e-4)
    and, failing that, the weight is redrawn.
    """
    if not 0 < epsilon <= 1e-2:
        raise ConfigurationError("epsilon must lie in (0, 1e-2]")
    inputs, labels = sample
    twin = model.clone(dtype=np.float64)
    x = twin.prepare_input(np.asarray(inputs, dtype=np.float64))
    labels = _check_labels(twin, np.atleast_1d(np.asarray(labels)))
    grads = analytic_gradients(twin, x, labels)
    params = twin.parameters()
    steps = [epsilon * 10.0 ** -k for k in range(5)] if skip_kinks else [epsilon]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in range(n_weights):
        name, t = params[k % len(params)]
        for _ in range(max_redraws):
            idx = np.unravel_index(rng.integers(t.size), t.shape)
            orig = t.data[idx]
            for eps in steps:
                t.data[idx] = orig + eps
                up, p_up = _loss_and_pattern(twin, x, labels)
                t.data[idx] = orig - eps
                down, p_down = _loss_and_pattern(twin, x, labels)
                t.data[idx] = orig
                if p_up == p_down:
                    break
            if not skip_kinks or p_up == p_down:
                break
        numeric = (up - down) / (2 * eps)
        analytic = float(grads[name][idx])
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


def batches(n: int, batch_size: int, rng: np.random.Generator | None = None) -> Iterable[np.ndarray]:
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]
