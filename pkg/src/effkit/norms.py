"""Normalization and proxy-normalized activations.

Two normalization families share one interface:

* batch normalization: per-channel moments over batch and spatial axes;
* batch-independent norms (layer, group, instance): per-sample moments over
  channel groups, expressed as a single grouped reduction with 1, ``groups``
  or ``C`` groups.

After normalizing, a channel affine (gamma, beta) feeds the activation. The
proxy-normalized variant additionally recenters and rescales the activation
output by its moments under a Gaussian proxy variable distributed as
N(proxy_beta, (1 + proxy_gamma)^2), evaluated per channel with Gauss-Hermite
quadrature. All forwards return an opaque cache consumed by the matching
backward.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

EPSILON = 1e-3
EPSILON_TILDE = 3e-2
GN_GROUPS = 4
QUAD_ORDER = 30

NORM_KINDS = ("bn", "ln", "gn", "in")


@dataclass(frozen=True)
class NormSpec:
    """Which normalizer to apply and with what grouping."""

    kind: str
    groups: int = GN_GROUPS
    epsilon: float = EPSILON

    def __post_init__(self):
        if self.kind not in NORM_KINDS:
            raise ValueError(f"unknown norm kind {self.kind!r}; use one of {NORM_KINDS}")
        if self.groups < 1:
            raise ValueError(f"groups must be positive, got {self.groups}")
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be non-negative, got {self.epsilon}")

    @property
    def batch_dependent(self) -> bool:
        return self.kind == "bn"

    def resolved_groups(self, channels: int) -> int:
        """Concrete group count for a channel width; must divide it."""
        if self.kind == "ln":
            g = 1
        elif self.kind == "in":
            g = channels
        elif self.kind == "gn":
            # Narrow widths fall back to fewer groups rather than failing.
            g = min(self.groups, channels)
            while channels % g != 0:
                g -= 1
        else:
            raise ValueError("batch norm has no group structure")
        return g


# ---------------------------------------------------------------------------
# Activations
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Activation:
    name: str
    fn: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray]


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Piecewise form keeps exp() off large positive arguments.
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _swish(x: np.ndarray) -> np.ndarray:
    return x * sigmoid(x)


def _swish_deriv(x: np.ndarray) -> np.ndarray:
    s = sigmoid(x)
    return s * (1.0 + x * (1.0 - s))


ACTIVATIONS = {
    "identity": Activation("identity", lambda x: x, lambda x: np.ones_like(x)),
    "relu": Activation(
        "relu",
        lambda x: np.maximum(x, 0.0),
        lambda x: (x > 0.0).astype(np.float64),
    ),
    "swish": Activation("swish", _swish, _swish_deriv),
}


def get_activation(name: str) -> Activation:
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; use one of {sorted(ACTIVATIONS)}")


# ---------------------------------------------------------------------------
# Gauss-Hermite quadrature against a unit Gaussian
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QuadratureRule:
    """Nodes/weights prescaled so E[f(N(mu, s^2))] = sum(w * f(mu + s*node))."""

    nodes: np.ndarray
    weights: np.ndarray

    @classmethod
    def gauss_hermite(cls, order: int = QUAD_ORDER) -> "QuadratureRule":
        if order < 1:
            raise ValueError(f"order must be positive, got {order}")
        x, w = np.polynomial.hermite.hermgauss(order)
        return cls(nodes=x * np.sqrt(2.0), weights=w / np.sqrt(np.pi))

    def expect(self, fn: Callable[[np.ndarray], np.ndarray], mu, sigma) -> np.ndarray:
        """E[fn(X)] for X ~ N(mu, sigma^2), broadcasting over leading axes."""
        mu = np.asarray(mu, dtype=np.float64)
        sigma = np.asarray(sigma, dtype=np.float64)
        pts = mu[..., None] + sigma[..., None] * self.nodes
        return fn(pts) @ self.weights


# ---------------------------------------------------------------------------
# Normalization (moment removal only; affine and activation live downstream)
# ---------------------------------------------------------------------------


def normalize(x: np.ndarray, spec: NormSpec, stats=None):
    """Subtract mean, divide by sqrt(var + eps); returns (y, cache).

    For ``bn`` the moments are per channel over batch and spatial axes, or
    the fixed ``stats=(mean, var)`` pair when given (evaluation mode). For
    the batch-independent kinds the moments are per sample per channel group.
    """
    if x.ndim != 4:
        raise ValueError(f"expected a 4-D tensor, got shape {x.shape}")
    b, c, h, w = x.shape
    if spec.kind == "bn":
        if stats is not None:
            mean, var = stats
            mean = mean.reshape(1, c, 1, 1)
            inv = 1.0 / np.sqrt(var.reshape(1, c, 1, 1) + spec.epsilon)
            y = (x - mean) * inv
            return y, {"mode": "static", "inv": inv}
        mean = x.mean(axis=(0, 2, 3), keepdims=True)
        var = x.var(axis=(0, 2, 3), keepdims=True)
        inv = 1.0 / np.sqrt(var + spec.epsilon)
        y = (x - mean) * inv
        cache = {"mode": "bn", "y": y, "inv": inv}
        return y, cache
    g = spec.resolved_groups(c)
    xg = x.reshape(b, g, -1)
    mean = xg.mean(axis=2, keepdims=True)
    var = xg.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + spec.epsilon)
    yg = (xg - mean) * inv
    cache = {"mode": "grouped", "y": yg, "inv": inv, "shape": x.shape}
    return yg.reshape(x.shape), cache


def normalize_backward(cache, dy: np.ndarray) -> np.ndarray:
    mode = cache["mode"]
    if mode == "static":
        return dy * cache["inv"]
    if mode == "bn":
        y, inv = cache["y"], cache["inv"]
        dmean = dy.mean(axis=(0, 2, 3), keepdims=True)
        dproj = (dy * y).mean(axis=(0, 2, 3), keepdims=True)
        return inv * (dy - dmean - y * dproj)
    y, inv = cache["y"], cache["inv"]
    dg = dy.reshape(y.shape)
    dmean = dg.mean(axis=2, keepdims=True)
    dproj = (dg * y).mean(axis=2, keepdims=True)
    dx = inv * (dg - dmean - y * dproj)
    return dx.reshape(cache["shape"])


def batch_moments(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-channel (mean, var) over batch and spatial axes, shape (C,)."""
    return x.mean(axis=(0, 2, 3)), x.var(axis=(0, 2, 3))


# ---------------------------------------------------------------------------
# Channel affine feeding an activation
# ---------------------------------------------------------------------------


def scaled_activation(y: np.ndarray, gamma: np.ndarray, beta: np.ndarray, act: Activation):
    """z = act(gamma * y + beta) with per-channel gamma/beta; (z, cache)."""
    c = y.shape[1]
    gs = gamma.reshape(1, c, 1, 1)
    bs = beta.reshape(1, c, 1, 1)
    a = gs * y + bs
    z = act.fn(a)
    return z, {"y": y, "a": a, "gamma": gs, "act": act}


def scaled_activation_backward(cache, dz: np.ndarray):
    """Returns (dy, dgamma, dbeta)."""
    da = dz * cache["act"].deriv(cache["a"])
    dy = da * cache["gamma"]
    dgamma = (da * cache["y"]).sum(axis=(0, 2, 3))
    dbeta = da.sum(axis=(0, 2, 3))
    return dy, dgamma, dbeta


# ---------------------------------------------------------------------------
# Proxy-normalized activations
# ---------------------------------------------------------------------------


def proxy_moments(
    gamma: np.ndarray,
    beta: np.ndarray,
    proxy_beta: np.ndarray,
    proxy_gamma: np.ndarray,
    act: Activation,
    quad: QuadratureRule,
):
    """Per-channel mean/variance of act(gamma * Y + beta) for the proxy
    variable Y ~ N(proxy_beta, (1 + proxy_gamma)^2); returns (mean, var)."""
    if quad.nodes.size < 2:
        # One node cannot capture second moments; the variance would be 0.
        raise ValueError(f"quadrature order must be at least 2, got {quad.nodes.size}")
    t = quad.nodes
    w = quad.weights
    u = proxy_beta[:, None] + (1.0 + proxy_gamma)[:, None] * t[None, :]
    a = gamma[:, None] * u + beta[:, None]
    phi = act.fn(a)
    m = phi @ w
    e2 = (phi * phi) @ w
    return m, e2 - m * m


def proxy_moment_grads(
    gamma: np.ndarray,
    beta: np.ndarray,
    proxy_beta: np.ndarray,
    proxy_gamma: np.ndarray,
    act: Activation,
    quad: QuadratureRule,
):
    """Analytic derivatives of the proxy mean and variance.

    Returns (m, var, dm, dvar) where dm/dvar map parameter name to the
    per-channel derivative array, for names gamma, beta, proxy_beta,
    proxy_gamma.
    """
    t = quad.nodes
    w = quad.weights
    u = proxy_beta[:, None] + (1.0 + proxy_gamma)[:, None] * t[None, :]
    a = gamma[:, None] * u + beta[:, None]
    phi = act.fn(a)
    dphi = act.deriv(a)
    m = phi @ w
    e2 = (phi * phi) @ w
    var = e2 - m * m

    da = {
        "gamma": u,
        "beta": np.ones_like(u),
        "proxy_beta": np.broadcast_to(gamma[:, None], u.shape),
        "proxy_gamma": gamma[:, None] * t[None, :],
    }
    dm = {}
    dvar = {}
    for name, d in da.items():
        dm[name] = (dphi * d) @ w
        de2 = (2.0 * phi * dphi * d) @ w
        dvar[name] = de2 - 2.0 * m * dm[name]
    return m, var, dm, dvar


def pn_activation(
    y: np.ndarray,
    gamma: np.ndarray,
    beta: np.ndarray,
    proxy_beta: np.ndarray,
    proxy_gamma: np.ndarray,
    act: Activation,
    quad: QuadratureRule,
    epsilon_tilde: float = EPSILON_TILDE,
):
    """z = (act(gamma*y + beta) - m) / sqrt(v + eps~) with (m, v) the proxy
    moments; returns (z, cache)."""
    c = y.shape[1]
    gs = gamma.reshape(1, c, 1, 1)
    a = gs * y + beta.reshape(1, c, 1, 1)
    z0 = act.fn(a)
    m, var = proxy_moments(gamma, beta, proxy_beta, proxy_gamma, act, quad)
    s = np.sqrt(var + epsilon_tilde)
    z = (z0 - m.reshape(1, c, 1, 1)) / s.reshape(1, c, 1, 1)
    cache = {
        "y": y,
        "a": a,
        "z": z,
        "s": s,
        "gamma": gamma,
        "beta": beta,
        "proxy_beta": proxy_beta,
        "proxy_gamma": proxy_gamma,
        "act": act,
        "quad": quad,
    }
    return z, cache


def pn_activation_backward(cache, dz: np.ndarray):
    """Returns (dy, dgamma, dbeta, dproxy_beta, dproxy_gamma).

    The proxy moments depend on the affine and proxy parameters, so their
    quadrature derivatives feed the parameter gradients alongside the usual
    data terms.
    """
    act = cache["act"]
    c = dz.shape[1]
    s = cache["s"].reshape(1, c, 1, 1)
    da = (dz / s) * act.deriv(cache["a"])
    dy = da * cache["gamma"].reshape(1, c, 1, 1)
    dgamma = (da * cache["y"]).sum(axis=(0, 2, 3))
    dbeta = da.sum(axis=(0, 2, 3))

    # z = (z0 - m)/s: dL/dm = -sum(dz)/s and dL/dvar = -sum(dz * z)/(2 s^2).
    s1 = dz.sum(axis=(0, 2, 3))
    s2 = (dz * cache["z"]).sum(axis=(0, 2, 3))
    dl_dm = -s1 / cache["s"]
    dl_dvar = -s2 / (2.0 * cache["s"] ** 2)

    _, _, dm, dvar = proxy_moment_grads(
        cache["gamma"],
        cache["beta"],
        cache["proxy_beta"],
        cache["proxy_gamma"],
        act,
        cache["quad"],
    )
    dgamma += dl_dm * dm["gamma"] + dl_dvar * dvar["gamma"]
    dbeta += dl_dm * dm["beta"] + dl_dvar * dvar["beta"]
    dproxy_beta = dl_dm * dm["proxy_beta"] + dl_dvar * dvar["proxy_beta"]
    dproxy_gamma = dl_dm * dm["proxy_gamma"] + dl_dvar * dvar["proxy_gamma"]
    return dy, dgamma, dbeta, dproxy_beta, dproxy_gamma
