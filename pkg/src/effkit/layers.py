"""Trainable layers with explicit forward/backward passes.

Every layer keeps its parameters, accumulated gradients and non-trainable
buffers in flat dicts; composites expose children under slash-separated
names so the whole model flattens to a single name -> array mapping.
Backward accumulates into the gradient arrays (call ``zero_grads`` between
optimizer steps), which makes gradient accumulation across micro-batches a
matter of simply not zeroing.
"""

from __future__ import annotations

import numpy as np

from .convs import ConvSpec, conv_backward, conv_forward
from .norms import (
    Activation,
    NormSpec,
    QuadratureRule,
    batch_moments,
    get_activation,
    normalize,
    normalize_backward,
    pn_activation,
    pn_activation_backward,
    scaled_activation,
    scaled_activation_backward,
    sigmoid,
)


class Layer:
    def __init__(self):
        self._params: dict[str, np.ndarray] = {}
        self._grads: dict[str, np.ndarray] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, "Layer"] = {}
        self._cache = None

    # -- registration -------------------------------------------------------

    def add_param(self, name: str, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=np.float64)
        self._params[name] = value
        self._grads[name] = np.zeros_like(value)
        return value

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        value = np.asarray(value, dtype=np.float64)
        self._buffers[name] = value
        return value

    def add_child(self, name: str, child: "Layer") -> "Layer":
        self._children[name] = child
        return child

    # -- flat views ---------------------------------------------------------

    def params(self) -> dict[str, np.ndarray]:
        out = dict(self._params)
        for cname, child in self._children.items():
            for k, v in child.params().items():
                out[f"{cname}/{k}"] = v
        return out

    def grads(self) -> dict[str, np.ndarray]:
        out = dict(self._grads)
        for cname, child in self._children.items():
            for k, v in child.grads().items():
                out[f"{cname}/{k}"] = v
        return out

    def buffers(self) -> dict[str, np.ndarray]:
        out = dict(self._buffers)
        for cname, child in self._children.items():
            for k, v in child.buffers().items():
                out[f"{cname}/{k}"] = v
        return out

    def state(self) -> dict[str, np.ndarray]:
        """Parameters plus buffers, the full checkpointable state."""
        out = self.params()
        out.update(self.buffers())
        return out

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        own = self.state()
        missing = sorted(set(own) - set(state))
        if missing:
            raise KeyError(f"state is missing entries: {missing[:5]}")
        for name, arr in own.items():
            src = np.asarray(state[name], dtype=np.float64)
            if src.shape != arr.shape:
                raise ValueError(f"{name}: shape {src.shape} != expected {arr.shape}")
            arr[...] = src

    def zero_grads(self) -> None:
        for g in self._grads.values():
            g[...] = 0.0
        for child in self._children.values():
            child.zero_grads()

    # -- compute ------------------------------------------------------------

    def forward(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, x: np.ndarray, train: bool = True) -> np.ndarray:
        return self.forward(x, train=train)


class Conv(Layer):
    """Grouped convolution, no bias (the following norm supplies the shift)."""

    def __init__(self, spec: ConvSpec, rng: np.random.Generator):
        super().__init__()
        self.spec = spec
        fan_in = spec.resolved_group_size * spec.kernel * spec.kernel
        init = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=spec.weight_shape)
        self.w = self.add_param("weight", init)

    def forward(self, x, train=True):
        y, self._cache = conv_forward(x, self.w, self.spec)
        return y

    def backward(self, dy):
        dx, dw = conv_backward(self._cache, dy)
        self._grads["weight"] += dw
        return dx


class Linear(Layer):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator):
        super().__init__()
        self.w = self.add_param(
            "weight", rng.normal(0.0, np.sqrt(1.0 / in_features), size=(in_features, out_features))
        )
        self.b = self.add_param("bias", np.zeros(out_features))

    def forward(self, x, train=True):
        self._cache = x
        # einsum keeps per-sample results bit-identical across batch sizes;
        # BLAS matmul does not guarantee that.
        return np.einsum("bi,io->bo", x, self.w) + self.b

    def backward(self, dy):
        x = self._cache
        self._grads["weight"] += np.einsum("bi,bo->io", x, dy)
        self._grads["bias"] += dy.sum(axis=0)
        return np.einsum("bo,io->bi", dy, self.w)


class NormAct(Layer):
    """Normalize, apply the channel affine, then the activation.

    With ``proxy=True`` the activation output is additionally recentered and
    rescaled by its Gauss-Hermite proxy moments; the proxy shift/scale are
    trainable. Batch norm keeps running moments for evaluation.
    """

    BN_MOMENTUM = 0.99

    def __init__(
        self,
        channels: int,
        spec: NormSpec,
        activation: str = "swish",
        proxy: bool = False,
        quad: QuadratureRule | None = None,
    ):
        super().__init__()
        self.spec = spec
        self.act: Activation = get_activation(activation)
        self.proxy = proxy
        self.gamma = self.add_param("gamma", np.ones(channels))
        self.beta = self.add_param("beta", np.zeros(channels))
        if proxy:
            self.quad = quad if quad is not None else QuadratureRule.gauss_hermite()
            self.proxy_beta = self.add_param("proxy_beta", np.zeros(channels))
            self.proxy_gamma = self.add_param("proxy_gamma", np.zeros(channels))
        if spec.kind == "bn":
            self.running_mean = self.add_buffer("running_mean", np.zeros(channels))
            self.running_var = self.add_buffer("running_var", np.ones(channels))

    def forward(self, x, train=True):
        if self.spec.kind == "bn":
            if train:
                y, ncache = normalize(x, self.spec)
                mean, var = batch_moments(x)
                m = self.BN_MOMENTUM
                self.running_mean *= m
                self.running_mean += (1.0 - m) * mean
                self.running_var *= m
                self.running_var += (1.0 - m) * var
            else:
                y, ncache = normalize(x, self.spec, stats=(self.running_mean, self.running_var))
        else:
            y, ncache = normalize(x, self.spec)
        if self.proxy:
            z, acache = pn_activation(
                y, self.gamma, self.beta, self.proxy_beta, self.proxy_gamma, self.act, self.quad
            )
        else:
            z, acache = scaled_activation(y, self.gamma, self.beta, self.act)
        self._cache = (ncache, acache)
        return z

    def backward(self, dz):
        ncache, acache = self._cache
        if self.proxy:
            dy, dgamma, dbeta, dpb, dpg = pn_activation_backward(acache, dz)
            self._grads["proxy_beta"] += dpb
            self._grads["proxy_gamma"] += dpg
        else:
            dy, dgamma, dbeta = scaled_activation_backward(acache, dz)
        self._grads["gamma"] += dgamma
        self._grads["beta"] += dbeta
        return normalize_backward(ncache, dy)


class SqueezeExcite(Layer):
    """Global-pool gating: sigmoid(W2 swish(W1 mean(x))) scales each channel."""

    def __init__(self, channels: int, reduced: int, rng: np.random.Generator):
        super().__init__()
        self.fc1 = self.add_child("reduce", Linear(channels, reduced, rng))
        self.fc2 = self.add_child("expand", Linear(reduced, channels, rng))
        self._swish = get_activation("swish")

    def forward(self, x, train=True):
        pooled = x.mean(axis=(2, 3))
        a = self.fc1(pooled, train)
        h = self._swish.fn(a)
        logits = self.fc2(h, train)
        gate = sigmoid(logits)
        self._cache = (x, a, gate)
        return x * gate[:, :, None, None]

    def backward(self, dy):
        x, a, gate = self._cache
        hw = x.shape[2] * x.shape[3]
        g4 = gate[:, :, None, None]
        dgate = (dy * x).sum(axis=(2, 3))
        dlogits = dgate * gate * (1.0 - gate)
        dh = self.fc2.backward(dlogits)
        da = dh * self._swish.deriv(a)
        dpooled = self.fc1.backward(da)
        dx = dy * g4 + dpooled[:, :, None, None] / hw
        return dx


class GlobalAvgPool(Layer):
    def forward(self, x, train=True):
        self._cache = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        b, c, h, w = self._cache
        return np.broadcast_to(dy[:, :, None, None] / (h * w), (b, c, h, w)).copy()


def decay_param_names(layer: Layer, prefix: str = "") -> list[str]:
    """Parameters subject to weight decay: convolution weights and the
    proxy shift/scale of proxy-normalized activations, nothing else."""
    names = []
    if isinstance(layer, Conv):
        names.append(prefix + "weight")
    if isinstance(layer, NormAct) and layer.proxy:
        names.append(prefix + "proxy_beta")
        names.append(prefix + "proxy_gamma")
    for cname, child in layer._children.items():
        names.extend(decay_param_names(child, f"{prefix}{cname}/"))
    return names
