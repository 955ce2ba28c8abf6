"""Small fully connected network with manual backprop and momentum SGD.

Layer ``l`` computes ``z = a @ W[l] + b[l]`` with ``W[l]`` of shape
``(fan_in, fan_out)``. Hidden layers use ReLU, the output layer is linear.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

HIDDEN = (100, 100, 100)


class CheckpointFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.001
    momentum: float = 0.95
    batch_size: int = 32

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


class MLP:
    def __init__(self, layer_sizes: Sequence[int], rng: Optional[np.random.Generator] = None,
                 zero: bool = False):
        sizes = tuple(int(n) for n in layer_sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {layer_sizes}")
        self.layer_sizes = sizes
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            if zero:
                w = np.zeros((fan_in, fan_out))
            else:
                s = np.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-s, s, size=(fan_in, fan_out))
            self.weights.append(w)
            self.biases.append(np.zeros(fan_out))
        self.vel_w = [np.zeros_like(w) for w in self.weights]
        self.vel_b = [np.zeros_like(b) for b in self.biases]

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "MLP":
        clone = MLP(self.layer_sizes, zero=True)
        clone.copy_from(self)
        for dst, src in zip(clone.vel_w + clone.vel_b, self.vel_w + self.vel_b):
            dst[...] = src
        return clone

    def copy_from(self, other: "MLP") -> None:
        """Overwrite parameters with ``other``'s (hard target-network sync)."""
        if other.layer_sizes != self.layer_sizes:
            raise ValueError("layer sizes differ")
        for dst, src in zip(self.parameters(), other.parameters()):
            dst[...] = src

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n_in or x.ndim > 2:
            raise ValueError(f"expected input of size {self.n_in}, got shape {x.shape}")
        return x

    def forward(self, x) -> np.ndarray:
        x = self._check_input(x)
        a = x
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w + b
            if l < last:
                a = np.maximum(a, 0.0)
        return a

    def _activations(self, x: np.ndarray) -> list[np.ndarray]:
        acts = [x]
        last = len(self.weights) - 1
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = acts[-1] @ w + b
            acts.append(np.maximum(z, 0.0) if l < last else z)
        return acts

    def gradients(self, inputs, targets, indices):
        """MSE on the selected output of each row and its parameter gradients."""
        x = self._check_input(inputs)
        if x.ndim == 1:
            x = x[None, :]
        targets = np.asarray(targets, dtype=float).reshape(-1)
        indices = np.asarray(indices, dtype=int).reshape(-1)
        n = x.shape[0]
        if n == 0 or len(targets) != n or len(indices) != n:
            raise ValueError("inputs, targets and indices must share a nonempty batch size")
        if indices.min() < 0 or indices.max() >= self.n_out:
            raise ValueError(f"output index outside [0, {self.n_out})")

        acts = self._activations(x)
        rows = np.arange(n)
        err = acts[-1][rows, indices] - targets
        loss = float(np.mean(err ** 2))

        delta = np.zeros_like(acts[-1])
        delta[rows, indices] = 2.0 * err / n
        grads_w = [None] * len(self.weights)
        grads_b = [None] * len(self.weights)
        for l in range(len(self.weights) - 1, -1, -1):
            grads_w[l] = acts[l].T @ delta
            grads_b[l] = delta.sum(axis=0)
            if l:
                delta = (delta @ self.weights[l].T) * (acts[l] > 0)
        return loss, grads_w, grads_b


def forward(net: MLP, x) -> np.ndarray:
    return net.forward(x)


def sgd_step(net: MLP, batch_inputs, batch_targets, selected_output_indices,
             cfg: TrainConfig) -> float:
    """One momentum step: ``buf = m*buf + grad; param -= lr*buf``. Returns the loss."""
    loss, gw, gb = net.gradients(batch_inputs, batch_targets, selected_output_indices)
    for params, vels, grads in ((net.weights, net.vel_w, gw), (net.biases, net.vel_b, gb)):
        for p, v, g in zip(params, vels, grads):
            v *= cfg.momentum
            v += g
            p -= cfg.learning_rate * v
    return loss


def _loss_from_layer(net: MLP, layer: int, z: np.ndarray, target: float, index: int
                     ) -> tuple[np.ndarray, list[np.ndarray]]:
    """Loss for a batch of pre-activations ``z`` of ``layer`` pushed through the rest,
    plus the ReLU on/off pattern of every hidden layer it passed."""
    last = len(net.weights) - 1
    a = z
    patterns = []
    for l in range(layer, last + 1):
        if l > layer:
            a = a @ net.weights[l] + net.biases[l]
        if l < last:
            patterns.append(a > 0)
            a = np.maximum(a, 0.0)
    return (a[:, index] - target) ** 2, patterns


def _central_difference(net, layer, z, shift, target, index, h):
    base = _loss_from_layer(net, layer, z[None, :], target, index)[1]
    up, pat_up = _loss_from_layer(net, layer, z + shift, target, index)
    down, pat_down = _loss_from_layer(net, layer, z - shift, target, index)
    smooth = np.ones(len(shift), dtype=bool)
    for p0, pu, pd in zip(base, pat_up, pat_down):
        smooth &= (pu == p0).all(axis=1) & (pd == p0).all(axis=1)
    return (up - down) / (2 * h), smooth


def gradient_check(net: MLP, x, target: float, index: int, h: float = 1e-5,
                   floor: float = 1e-6) -> float:
    """Max relative error between backprop and central differences over all parameters.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``; the floor keeps
    vanishing gradients from turning roundoff into large ratios. Probes
    whose +-h perturbation flips a ReLU are skipped: the loss is not
    differentiable across the kink and the difference quotient is meaningless.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    _, gw, gb = net.gradients(x[None, :], [target], [index])
    acts = net._activations(x[None, :])
    worst = 0.0
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        a_in = acts[l][0]
        z = a_in @ w + b
        n_in, n_out = w.shape
        # weight W[i, j] only shifts z[j], by h * a_in[i]
        shift = np.zeros((n_in * n_out, n_out))
        shift[np.arange(n_in * n_out), np.tile(np.arange(n_out), n_in)] = np.repeat(a_in, n_out) * h
        num_w, ok_w = _central_difference(net, l, z, shift, target, index, h)
        num_b, ok_b = _central_difference(net, l, z, np.eye(n_out) * h, target, index, h)
        for analytic, numeric, ok in ((gw[l].reshape(-1), num_w, ok_w), (gb[l], num_b, ok_b)):
            denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
            rel = np.abs(analytic - numeric) / denom
            if ok.any():
                worst = max(worst, float(np.max(rel[ok])))
    return worst


def save_checkpoint(net: MLP) -> bytes:
    lines = ["MLP v1 " + " ".join(str(n) for n in net.layer_sizes)]
    for w, b in zip(net.weights, net.biases):
        lines.append(" ".join(repr(float(v)) for v in w.reshape(-1)))
        lines.append(" ".join(repr(float(v)) for v in b))
    return ("\n".join(lines) + "\n").encode("ascii")


_TOKEN = re.compile(rb"\S+")


def load_checkpoint(data: bytes) -> MLP:
    tokens = [(m.group(), m.start()) for m in _TOKEN.finditer(data)]
    if len(tokens) < 4 or tokens[0][0] != b"MLP" or tokens[1][0] != b"v1":
        raise CheckpointFormatError("missing 'MLP v1' header", 0)
    header_end = data.find(b"\n")
    if header_end < 0:
        raise CheckpointFormatError("header line is not terminated", len(data))
    sizes = []
    pos = 2
    while pos < len(tokens) and tokens[pos][1] < header_end:
        tok, off = tokens[pos]
        if not tok.isdigit() or int(tok) < 1:
            raise CheckpointFormatError(f"bad layer size {tok!r}", off)
        sizes.append(int(tok))
        pos += 1
    if len(sizes) < 2:
        raise CheckpointFormatError("need at least two layer sizes", header_end)

    net = MLP(sizes, zero=True)
    for p in net.parameters():
        flat = p.reshape(-1)
        for k in range(flat.size):
            if pos >= len(tokens):
                raise CheckpointFormatError("truncated parameter stream", len(data))
            tok, off = tokens[pos]
            try:
                flat[k] = float(tok)
            except ValueError:
                raise CheckpointFormatError(f"bad number {tok!r}", off) from None
            if not np.isfinite(flat[k]):
                raise CheckpointFormatError(f"non-finite parameter {tok!r}", off)
            pos += 1
    if pos != len(tokens):
        raise CheckpointFormatError("trailing data after parameters", tokens[pos][1])
    return net
