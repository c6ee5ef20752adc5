"""Population-conditioned Q-network in plain numpy.

The network has two towers, one for the agent's state (one-hot) and one for
the MF state (histogram), whose embeddings meet in the first dense layer of
a fully connected head:

    z = W_s . embed_s(x) + W_m . embed_m(mu) + b

Since that layer is linear, the towers are evaluated once per *distinct*
state and distinct ``mu`` in a batch and the results gathered per sample.
On a line both towers are the identity; on a grid each tower is two 3x3
convolutions with ReLU followed by a flatten.
"""

from __future__ import annotations

import json
import struct
from typing import Optional, Sequence

import numpy as np
from scipy.sparse import csr_matrix

FORMAT_NAME = "masterfp-qnet"
FORMAT_VERSION = 1
_MAGIC = b"MFQN"


class Dense:
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, gain: float = 2.0):
        self.W = rng.normal(0.0, np.sqrt(gain / n_in), size=(n_in, n_out))
        self.b = np.zeros(n_out)

    @property
    def params(self):
        return [self.W, self.b]

    def forward(self, x):
        self._x = x
        return x @ self.W + self.b

    def backward(self, grad):
        self.grads = [self._x.T @ grad, grad.sum(axis=0)]
        return grad @ self.W.T


class ReLU:
    params: list = []

    def forward(self, x):
        self.mask = x > 0
        return x * self.mask

    def backward(self, grad):
        self.grads = []
        return grad * self.mask


class Conv2D:
    """3x3 convolution, stride 1, zero padding 1; input ``(B, C, H, W)``."""

    size = 3

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, input_grad: bool = True):
        self.input_grad = input_grad  # False on a first layer fed with data
        fan_in = c_in * self.size * self.size
        self.K = rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, self.size, self.size))
        self.b = np.zeros(c_out)

    @property
    def params(self):
        return [self.K, self.b]

    def forward(self, x):
        # im2col: rows are (b, h, w) positions, columns are (c, di, dj) taps
        self._shape = batch, channels, height, width = x.shape
        padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        windows = np.lib.stride_tricks.sliding_window_view(padded, (self.size, self.size), axis=(2, 3))
        self._cols = np.ascontiguousarray(windows.transpose(0, 2, 3, 1, 4, 5)).reshape(batch * height * width, -1)
        out = self._cols @ self.K.reshape(len(self.K), -1).T + self.b
        return out.reshape(batch, height, width, -1).transpose(0, 3, 1, 2)

    def backward(self, grad):
        batch, channels, height, width = self._shape
        g = grad.transpose(0, 2, 3, 1).reshape(batch * height * width, -1)
        self.grads = [(g.T @ self._cols).reshape(self.K.shape), g.sum(axis=0)]
        if not self.input_grad:
            return None
        dcols = (g @ self.K.reshape(len(self.K), -1)).reshape(batch, height, width, channels, self.size, self.size)
        dpad = np.zeros((batch, channels, height + 2, width + 2))
        for i in range(self.size):
            for j in range(self.size):
                dpad[:, :, i : i + height, j : j + width] += dcols[..., i, j].transpose(0, 3, 1, 2)
        return dpad[:, :, 1:-1, 1:-1]


class Flatten:
    params: list = []

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        self.grads = []
        return grad.reshape(self._shape)


def _scatter_sum(index, n_rows):
    """Sparse 0/1 matrix ``S`` with ``S @ v`` summing the rows of ``v`` by ``index``."""
    return csr_matrix((np.ones(len(index)), (index, np.arange(len(index)))), shape=(n_rows, len(index)))


def _run(layers, x):
    for layer in layers:
        x = layer.forward(x)
    return x


def _back(layers, grad):
    for layer in reversed(layers):
        grad = layer.backward(grad)
    return grad


class QNetwork:
    """``Q(x, mu, .)`` for all actions.

    ``grid_shape`` selects the convolutional towers; ``zero_mu_input``
    replaces the MF-state embedding by zeros, making the output independent
    of ``mu``. The output is ``scale * raw + shift`` with fixed
    (non-trained) ``shift`` and ``scale``, set by the regression routine to
    keep targets well conditioned.
    """

    def __init__(
        self,
        n_states: int,
        n_actions: int,
        hidden: Sequence[int] = (64, 64),
        grid_shape: Optional[tuple] = None,
        conv_channels: Sequence[int] = (8, 16),
        zero_mu_input: bool = False,
        seed: int = 0,
    ):
        self.n_states = int(n_states)
        self.n_actions = int(n_actions)
        self.hidden = tuple(int(h) for h in hidden)
        self.grid_shape = None if grid_shape is None else tuple(int(v) for v in grid_shape)
        self.conv_channels = tuple(int(c) for c in conv_channels)
        self.zero_mu_input = bool(zero_mu_input)
        self.seed = int(seed)
        self.shift = 0.0
        self.scale = 1.0
        if not self.hidden:
            raise ValueError("need at least one hidden layer")
        rng = np.random.default_rng(seed)
        self.state_tower = self._make_tower(rng)
        self.mu_tower = self._make_tower(rng)
        embed = self.n_states if self.grid_shape is None else self.conv_channels[-1] * self.n_states
        width = self.hidden[0]
        self.W_s = rng.normal(0.0, np.sqrt(1.0 / embed), size=(embed, width))
        self.W_m = rng.normal(0.0, np.sqrt(1.0 / embed), size=(embed, width))
        self.b_in = np.zeros(width)
        self.head = [ReLU()]
        for a, b in zip(self.hidden[:-1], self.hidden[1:]):
            self.head += [Dense(a, b, rng), ReLU()]
        self.head.append(Dense(self.hidden[-1], self.n_actions, rng, gain=1.0))

    def _make_tower(self, rng):
        if self.grid_shape is None:
            return []
        if self.grid_shape[0] * self.grid_shape[1] != self.n_states:
            raise ValueError("grid shape does not match the number of states")
        layers, c_in = [], 1
        for c_out in self.conv_channels:
            layers += [Conv2D(c_in, c_out, rng, input_grad=bool(layers)), ReLU()]
            c_in = c_out
        return layers + [Flatten()]

    # parameters -------------------------------------------------------

    def layers(self):
        return self.state_tower + self.mu_tower + self.head

    @property
    def params(self) -> list:
        out = []
        for layer in self.state_tower + self.mu_tower:
            out += layer.params
        out += [self.W_s, self.W_m, self.b_in]
        for layer in self.head:
            out += layer.params
        return out

    @property
    def grads(self) -> list:
        out = []
        for layer in self.state_tower + self.mu_tower:
            out += layer.grads
        out += self._in_grads
        for layer in self.head:
            out += layer.grads
        return out

    def get_flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def set_flat(self, flat: np.ndarray) -> None:
        offset = 0
        for p in self.params:
            p[...] = flat[offset : offset + p.size].reshape(p.shape)
            offset += p.size
        if offset != len(flat):
            raise ValueError("parameter vector has the wrong length")

    def flat_grad(self) -> np.ndarray:
        return np.concatenate([g.ravel() for g in self.grads])

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "QNetwork":
        clone = QNetwork(
            self.n_states, self.n_actions, self.hidden, self.grid_shape, self.conv_channels, self.zero_mu_input, self.seed
        )
        clone.set_flat(self.get_flat())
        clone.shift, clone.scale = self.shift, self.scale
        return clone

    # forward / backward --------------------------------------------------

    def _encode(self, rows: np.ndarray) -> np.ndarray:
        if self.grid_shape is None:
            return rows
        return rows.reshape(len(rows), 1, *self.grid_shape)

    def forward_indexed(self, state_idx, mu_table, mu_idx) -> np.ndarray:
        """Raw outputs for samples ``(state_idx[i], mu_table[mu_idx[i]])``; caches for backward."""
        state_idx = np.asarray(state_idx, dtype=int)
        mu_idx = np.asarray(mu_idx, dtype=int)
        mu_table = np.atleast_2d(np.asarray(mu_table, dtype=float))
        if mu_table.shape[1] != self.n_states:
            raise ValueError(f"mu has {mu_table.shape[1]} entries, expected {self.n_states}")
        if np.any(state_idx < 0) or np.any(state_idx >= self.n_states):
            raise ValueError("state index out of range")
        states, s_inv = np.unique(state_idx, return_inverse=True)
        mus, m_inv = np.unique(mu_idx, return_inverse=True)
        e_s = _run(self.state_tower, self._encode(np.eye(self.n_states)[states]))
        proj_s = e_s @ self.W_s
        if self.zero_mu_input:
            e_m = np.zeros((len(mus), self.W_m.shape[0]))
            proj_m = np.zeros((len(mus), self.W_m.shape[1]))
        else:
            e_m = _run(self.mu_tower, self._encode(mu_table[mus]))
            proj_m = e_m @ self.W_m
        self._cache = (e_s, s_inv, e_m, m_inv)
        z = proj_s[s_inv] + proj_m[m_inv] + self.b_in
        return _run(self.head, z)

    def backward(self, grad_out: np.ndarray) -> None:
        """Accumulate parameter gradients for d(loss)/d(raw output) = ``grad_out``."""
        e_s, s_inv, e_m, m_inv = self._cache
        dz = _back(self.head, grad_out)
        ds = _scatter_sum(s_inv, len(e_s)) @ dz
        dm = _scatter_sum(m_inv, len(e_m)) @ dz
        self._in_grads = [e_s.T @ ds, e_m.T @ dm, dz.sum(axis=0)]
        _back(self.state_tower, ds @ self.W_s.T)
        if self.zero_mu_input:
            for layer in self.mu_tower:
                layer.grads = [np.zeros_like(p) for p in layer.params]
        else:
            _back(self.mu_tower, dm @ self.W_m.T)

    def __call__(self, states, mus) -> np.ndarray:
        """Q-values ``(B, A)`` for states ``(B,)`` and MF states ``(B, X)`` (or one shared ``(X,)``)."""
        states = np.atleast_1d(np.asarray(states, dtype=int))
        mus = np.asarray(mus, dtype=float)
        if mus.ndim == 1:
            raw = self.forward_indexed(states, mus[None, :], np.zeros(len(states), dtype=int))
        else:
            table, inverse = np.unique(mus, axis=0, return_inverse=True)
            raw = self.forward_indexed(states, table, inverse.reshape(-1))
        return self.scale * raw + self.shift

    def all_states(self, mu: np.ndarray) -> np.ndarray:
        """Q-table ``(X, A)`` for every state against a single ``mu``."""
        return self(np.arange(self.n_states), mu)

    # serialization -------------------------------------------------------

    def config(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "hidden": list(self.hidden),
            "grid_shape": None if self.grid_shape is None else list(self.grid_shape),
            "conv_channels": list(self.conv_channels),
            "zero_mu_input": self.zero_mu_input,
            "seed": self.seed,
        }

    def to_bytes(self) -> bytes:
        """Versioned binary: magic, header length, JSON header, little-endian float64 tensors."""
        tensors, offset = [], 0
        for i, p in enumerate(self.params):
            tensors.append({"index": i, "shape": list(p.shape), "offset": offset})
            offset += p.size
        header = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "config": self.config(),
            "output": {"shift": self.shift, "scale": self.scale},
            "layout": "row-major float64 little-endian",
            "tensors": tensors,
        }
        blob = json.dumps(header, sort_keys=True).encode()
        body = np.ascontiguousarray(self.get_flat(), dtype="<f8").tobytes()
        return _MAGIC + struct.pack("<I", len(blob)) + blob + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "QNetwork":
        if data[:4] != _MAGIC:
            raise ValueError("not a Q-network file")
        (size,) = struct.unpack("<I", data[4:8])
        header = json.loads(data[8 : 8 + size])
        if header.get("format") != FORMAT_NAME or header.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported network format {header.get('format')} v{header.get('version')}")
        cfg = dict(header["config"])
        cfg["grid_shape"] = None if cfg["grid_shape"] is None else tuple(cfg["grid_shape"])
        net = cls(**cfg)
        net.set_flat(np.frombuffer(data[8 + size :], dtype="<f8").astype(float))
        net.shift = float(header["output"]["shift"])
        net.scale = float(header["output"]["scale"])
        return net


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
