"""From-scratch MLPs with exact reverse-mode gradients, Adam, and the
Gaussian policy head.  No autograd framework: every gradient here is
hand-derived and checked against finite differences in the test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

_LOG_2PI = float(np.log(2.0 * np.pi))


def _act(name, z):
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        # cap saturation: outputs stay strictly inside (0, 1) in float64
        return 1.0 / (1.0 + np.exp(-np.clip(z, -30.0, 30.0)))
    if name == "linear":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _act_grad(name, out):
    """Derivative expressed through the activation output."""
    if name == "tanh":
        return 1.0 - out * out
    if name == "sigmoid":
        return out * (1.0 - out)
    if name == "linear":
        return np.ones_like(out)
    raise ValueError(f"unknown activation {name!r}")


class Mlp:
    """Fully connected net; weights W[i] of shape (d_in, d_out)."""

    def __init__(self, dims, hidden="tanh", output="linear", rng=None, out_gain=1.0, dtype=np.float64):
        self.dims = list(int(d) for d in dims)
        self.hidden = hidden
        self.output = output
        self.dtype = np.dtype(dtype)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.W = []
        self.b = []
        n_layers = len(self.dims) - 1
        for i in range(n_layers):
            fan_in, fan_out = self.dims[i], self.dims[i + 1]
            scale = np.sqrt(2.0 / (fan_in + fan_out))
            if i == n_layers - 1:
                scale *= out_gain
            self.W.append((rng.standard_normal((fan_in, fan_out)) * scale).astype(self.dtype))
            self.b.append(np.zeros(fan_out, dtype=self.dtype))

    @property
    def n_layers(self):
        return len(self.W)

    def _layer_act(self, i):
        return self.output if i == self.n_layers - 1 else self.hidden

    def forward(self, x, cache=None):
        """Forward pass; pass a list as `cache` to record intermediates
        sufficient for an exact backward pass."""
        h = np.asarray(x, dtype=self.dtype)
        squeeze = h.ndim == 1
        if squeeze:
            h = h[None, :]
        if h.shape[1] != self.dims[0]:
            raise ValueError(f"input dim {h.shape[1]} != expected {self.dims[0]}")
        if cache is not None:
            cache.clear()
            cache.append(h)
        for i in range(self.n_layers):
            h = _act(self._layer_act(i), h @ self.W[i] + self.b[i])
            if cache is not None:
                cache.append(h)
        return h[0] if squeeze else h

    def backward(self, cache, dy):
        """Exact gradients from recorded intermediates.

        dy: gradient of the loss w.r.t. the net output (same shape).
        Returns (grads_W, grads_b, dx).
        """
        dy = np.asarray(dy, dtype=self.dtype)
        squeeze = dy.ndim == 1
        if squeeze:
            dy = dy[None, :]
        gW = [None] * self.n_layers
        gb = [None] * self.n_layers
        delta = dy
        for i in range(self.n_layers - 1, -1, -1):
            delta = delta * _act_grad(self._layer_act(i), cache[i + 1])
            gW[i] = cache[i].T @ delta
            gb[i] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.W[i].T
        dx = delta @ self.W[0].T
        return gW, gb, (dx[0] if squeeze else dx)

    # -- parameter plumbing -------------------------------------------------

    def parameters(self):
        out = []
        for W, b in zip(self.W, self.b):
            out.append(W)
            out.append(b)
        return out

    def param_bytes(self) -> bytes:
        return b"".join(np.ascontiguousarray(p, dtype=np.float64).tobytes() for p in self.parameters())

    def copy(self) -> "Mlp":
        dup = Mlp.__new__(Mlp)
        dup.dims = list(self.dims)
        dup.hidden = self.hidden
        dup.output = self.output
        dup.dtype = self.dtype
        dup.W = [W.copy() for W in self.W]
        dup.b = [b.copy() for b in self.b]
        return dup

    def astype(self, dtype) -> "Mlp":
        dup = self.copy()
        dup.dtype = np.dtype(dtype)
        dup.W = [W.astype(dtype) for W in dup.W]
        dup.b = [b.astype(dtype) for b in dup.b]
        return dup


class Adam:
    """Adam over a list of parameter arrays (updated in place)."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]
        self.t = 0

    def step(self, grads):
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            g = g.astype(p.dtype, copy=False)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)

    def state_arrays(self):
        return {"m": self.m, "v": self.v, "t": self.t}

    def load_state(self, m, v, t):
        for dst, src in zip(self.m, m):
            dst[:] = src
        for dst, src in zip(self.v, v):
            dst[:] = src
        self.t = int(t)


@dataclass
class GaussianPolicy:
    """Diagonal Gaussian over actions: state-dependent mean from an MLP,
    state-independent learned log standard deviation."""

    mean_net: Mlp
    log_std: np.ndarray

    @classmethod
    def create(cls, obs_dim, act_dim, hidden=(512, 512, 512), rng=None, init_std=0.1, dtype=np.float64):
        net = Mlp([obs_dim, *hidden, act_dim], rng=rng, out_gain=0.01, dtype=dtype)
        return cls(net, np.full(act_dim, np.log(init_std), dtype=dtype))

    @property
    def act_dim(self):
        return self.log_std.shape[0]

    def sample(self, obs, noise):
        """Action and log-prob for given standard-normal noise."""
        mean = self.mean_net.forward(obs)
        std = np.exp(self.log_std)
        action = mean + std * noise
        logp = self.log_prob_given_mean(mean, action)
        return action, logp

    def log_prob_given_mean(self, mean, action):
        z = (action - mean) / np.exp(self.log_std)
        return -0.5 * (z * z).sum(axis=-1) - self.log_std.sum() - 0.5 * _LOG_2PI * self.act_dim

    def log_prob(self, obs, actions, cache=None):
        mean = self.mean_net.forward(obs, cache=cache)
        return self.log_prob_given_mean(mean, actions), mean

    def log_prob_backward(self, cache, mean, actions, dlogp):
        """Gradients of sum(dlogp * logp) w.r.t. net params and log_std."""
        var = np.exp(2.0 * self.log_std)
        diff = actions - mean
        dmean = dlogp[:, None] * diff / var
        gW, gb, _ = self.mean_net.backward(cache, dmean)
        dlog_std = (dlogp[:, None] * (diff * diff / var - 1.0)).sum(axis=0)
        return gW, gb, dlog_std.astype(self.log_std.dtype)

    def parameters(self):
        return self.mean_net.parameters() + [self.log_std]

    def param_bytes(self) -> bytes:
        return self.mean_net.param_bytes() + np.ascontiguousarray(self.log_std, dtype=np.float64).tobytes()

    def copy(self):
        return GaussianPolicy(self.mean_net.copy(), self.log_std.copy())


# -- checkpoint file format -----------------------------------------------------

CKPT_MAGIC = b"GAITFORGE-CKPT v1\n"


def save_checkpoint(path, role: str, arrays: dict, meta: dict | None = None):
    """Versioned, self-describing, byte-deterministic checkpoint.

    Layout: magic line, one JSON header line (role, array names/shapes/
    dtypes in order, metadata), then the raw little-endian array blobs.
    """
    names = list(arrays.keys())
    header = {
        "format": 1,
        "role": role,
        "arrays": [
            {"name": n, "shape": list(np.asarray(arrays[n]).shape), "dtype": np.asarray(arrays[n]).dtype.str}
            for n in names
        ],
        "meta": meta or {},
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode() + b"\n"
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(arrays[n]).tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.readline()
        if magic != CKPT_MAGIC:
            raise ValueError(f"not a checkpoint file: {path}")
        header = json.loads(fh.readline().decode())
        arrays = {}
        for spec in header["arrays"]:
            dt = np.dtype(spec["dtype"])
            count = int(np.prod(spec["shape"])) if spec["shape"] else 1
            data = fh.read(count * dt.itemsize)
            arrays[spec["name"]] = np.frombuffer(data, dtype=dt).reshape(spec["shape"]).copy()
    return header["role"], arrays, header["meta"]


def mlp_to_arrays(net: Mlp, prefix=""):
    out = {}
    for i, (W, b) in enumerate(zip(net.W, net.b)):
        out[f"{prefix}W{i}"] = W
        out[f"{prefix}b{i}"] = b
    return out


def mlp_from_arrays(arrays, dims, hidden="tanh", output="linear", prefix=""):
    net = Mlp(dims, hidden=hidden, output=output, dtype=arrays[f"{prefix}W0"].dtype)
    for i in range(net.n_layers):
        net.W[i] = arrays[f"{prefix}W{i}"].copy()
        net.b[i] = arrays[f"{prefix}b{i}"].copy()
    return net


def save_policy(path, policy: GaussianPolicy, meta=None):
    arrays = mlp_to_arrays(policy.mean_net)
    arrays["log_std"] = policy.log_std
    m = {"dims": policy.mean_net.dims, "hidden": policy.mean_net.hidden, "output": policy.mean_net.output}
    m.update(meta or {})
    save_checkpoint(path, "policy", arrays, m)


def load_policy(path):
    role, arrays, meta = load_checkpoint(path)
    if role != "policy":
        raise ValueError(f"{path} holds a {role!r} checkpoint, expected policy")
    net = mlp_from_arrays(arrays, meta["dims"], hidden=meta["hidden"], output=meta["output"])
    return GaussianPolicy(net, arrays["log_std"].copy()), meta


def save_mlp(path, net: Mlp, role: str, meta=None):
    m = {"dims": net.dims, "hidden": net.hidden, "output": net.output}
    m.update(meta or {})
    save_checkpoint(path, role, mlp_to_arrays(net), m)


def load_mlp(path, expected_role=None):
    role, arrays, meta = load_checkpoint(path)
    if expected_role is not None and role != expected_role:
        raise ValueError(f"{path} holds a {role!r} checkpoint, expected {expected_role}")
    return mlp_from_arrays(arrays, meta["dims"], hidden=meta["hidden"], output=meta["output"]), meta
