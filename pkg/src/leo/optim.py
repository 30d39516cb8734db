"""Named parameter storage, Adam, and global-norm gradient clipping.

Parameters are grouped ("encoder", "selector", "classifier") so the two
training steps can update disjoint subsets. Adam keeps per-parameter moment
buffers and step counts, which keeps bias correction right for parameters
that only some steps touch.
"""
from __future__ import annotations

import math

import numpy as np

from .autodiff import GraphError, Tensor


class ParameterStore:
    """Insertion-ordered name -> Tensor map with a group label per tensor."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._groups: dict[str, str] = {}

    def add(self, name: str, data: np.ndarray, group: str) -> Tensor:
        if name in self._params:
            raise GraphError(f"duplicate parameter name '{name}'")
        t = Tensor(np.asarray(data, dtype=np.float64), requires_grad=True, name=name)
        self._params[name] = t
        self._groups[name] = group
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def group_of(self, name: str) -> str:
        return self._groups[name]

    def items(self):
        return self._params.items()

    def in_groups(self, groups) -> list[tuple[str, Tensor]]:
        wanted = set(groups)
        return [(n, t) for n, t in self._params.items() if self._groups[n] in wanted]

    def zero_grads(self, groups=None) -> None:
        selected = self._params.items() if groups is None else self.in_groups(groups)
        for _, t in selected:
            t.grad = None

    def ensure_grads(self, groups) -> None:
        """Give zero gradients to selected parameters the loss never reached."""
        for _, t in self.in_groups(groups):
            if t.grad is None:
                t.grad = np.zeros_like(t.data)

    def snapshot(self, groups=None) -> dict[str, np.ndarray]:
        selected = self._params.items() if groups is None else self.in_groups(groups)
        return {n: t.data.copy() for n, t in selected}

    def load_values(self, values: dict[str, np.ndarray]) -> None:
        for name, data in values.items():
            p = self._params[name]
            if p.data.shape != np.asarray(data).shape:
                raise GraphError(f"shape mismatch loading parameter '{name}'")
            p.data = np.asarray(data, dtype=np.float64).copy()


def init_mlp_params(store: ParameterStore, prefix: str, group: str,
                    input_dim: int, hidden_sizes, out_dim: int,
                    rng: np.random.Generator):
    """Register an MLP's weights: He-normal matrices, zero biases.

    Returns ([(W, b), ...] hidden pairs, (W, b) output head).
    """
    if input_dim < 1 or out_dim < 1 or any(h < 1 for h in hidden_sizes):
        raise GraphError("layer widths must be positive")
    layers = []
    fan_in = input_dim
    for i, width in enumerate(hidden_sizes):
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, width))
        layers.append((store.add(f"{prefix}/w{i}", w, group),
                       store.add(f"{prefix}/b{i}", np.zeros(width), group)))
        fan_in = width
    head_w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, out_dim))
    head = (store.add(f"{prefix}/head_w", head_w, group),
            store.add(f"{prefix}/head_b", np.zeros(out_dim), group))
    return layers, head


class Adam:
    """Bias-corrected Adam. Moments and step counts are per parameter name."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._t: dict[str, int] = {}

    def step(self, store: ParameterStore, groups) -> None:
        """Apply one update to every parameter in `groups`. Each selected
        parameter must have a populated gradient."""
        selected = store.in_groups(groups)
        for name, p in selected:
            if p.grad is None:
                raise GraphError(f"parameter '{name}' selected for update but has no gradient")
        self.step_count += 1
        for name, p in selected:
            g = p.grad
            m = self._m.get(name)
            if m is None:
                m = np.zeros_like(p.data)
                self._m[name] = m
                self._v[name] = np.zeros_like(p.data)
                self._t[name] = 0
            v = self._v[name]
            t = self._t[name] + 1
            self._t[name] = t
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            m_hat = m / (1.0 - self.beta1 ** t)
            v_hat = v / (1.0 - self.beta2 ** t)
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def clip_gradients(grads: list[np.ndarray], max_norm: float) -> float:
    """Scale gradients in place so their global L2 norm is at most max_norm.
    Returns the pre-clip norm."""
    if max_norm <= 0:
        raise GraphError("max_norm must be positive")
    total = 0.0
    for g in grads:
        total += float(np.sum(g * g))
    norm = math.sqrt(total)
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads:
            g *= factor
    return norm


def clip_store_gradients(store: ParameterStore, groups, max_norm: float) -> float:
    return clip_gradients([t.grad for _, t in store.in_groups(groups)], max_norm)
