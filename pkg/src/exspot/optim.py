"""Adam optimizer over named parameter tensors."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .errors import ShapeError


class Adam:
    """Adam with bias correction; moment accumulators are float64.

    A parameter whose gradient is absent for a step is treated as having a
    zero gradient: with zero moments it is left unchanged.
    """

    def __init__(
        self,
        params: dict[str, Tensor],
        lr: float = 1e-5,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = dict(params)
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.step_count = 0
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1**self.step_count
        c2 = 1.0 - b2**self.step_count
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                g = 0.0
            elif g.shape != p.data.shape:
                raise ShapeError(f"grad shape {g.shape} vs param {p.data.shape} ({name})")
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Moment accumulators under stable names, for checkpointing."""
        out = {}
        for name in self.params:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step_count: int) -> None:
        for name, p in self.params.items():
            for prefix, store in (("m", self.m), ("v", self.v)):
                arr = np.asarray(arrays[f"{prefix}.{name}"], dtype=np.float64)
                if arr.shape != p.data.shape:
                    raise ShapeError(
                        f"adam state {prefix}.{name} shape {arr.shape} vs {p.data.shape}"
                    )
                store[name] = arr.copy()
        self.step_count = int(step_count)
