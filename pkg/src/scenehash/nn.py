"""Parameter containers and initializers for numcore-backed layers."""

from __future__ import annotations

import numpy as np

from . import numcore as nc


class Linear:
    """y = x W^T + b with W of shape (out_dim, in_dim)."""

    def __init__(self, w: nc.Tensor, b: nc.Tensor):
        self.w = w
        self.b = b

    @classmethod
    def init(cls, in_dim: int, out_dim: int, rng: np.random.Generator) -> "Linear":
        bound = np.sqrt(6.0 / (in_dim + out_dim))
        w = nc.Tensor(rng.uniform(-bound, bound, (out_dim, in_dim)), requires_grad=True)
        b = nc.Tensor(np.zeros(out_dim), requires_grad=True)
        return cls(w, b)

    @property
    def out_dim(self) -> int:
        return self.w.shape[0]

    def __call__(self, x: nc.Tensor) -> nc.Tensor:
        if x.data.ndim == 3:
            l, n, d = x.data.shape
            flat = nc.reshape(x, (l * n, d))
            y = nc.add_bias(nc.matmul(flat, nc.transpose(self.w, (1, 0))), self.b)
            return nc.reshape(y, (l, n, self.out_dim))
        return nc.add_bias(nc.matmul(x, nc.transpose(self.w, (1, 0))), self.b)


class ParamStore:
    """Flat name -> Tensor registry that maps onto the checkpoint format."""

    def __init__(self):
        self.params: dict[str, nc.Tensor] = {}

    def register(self, name: str, tensor: nc.Tensor) -> nc.Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        self.params[name] = tensor
        return tensor

    def linear(self, name: str, in_dim: int, out_dim: int, rng: np.random.Generator) -> Linear:
        layer = Linear.init(in_dim, out_dim, rng)
        self.register(f"{name}.w", layer.w)
        self.register(f"{name}.b", layer.b)
        return layer

    def vector(self, name: str, dim: int, rng: np.random.Generator, scale: float = 0.1) -> nc.Tensor:
        return self.register(name, nc.Tensor(rng.standard_normal(dim) * scale, requires_grad=True))

    def ones(self, name: str, dim: int) -> nc.Tensor:
        return self.register(name, nc.Tensor(np.ones(dim), requires_grad=True))

    def zeros(self, name: str, dim: int) -> nc.Tensor:
        return self.register(name, nc.Tensor(np.zeros(dim), requires_grad=True))

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: v.data.copy() for k, v in self.params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ValueError(f"parameter mismatch: missing={sorted(missing)}, unexpected={sorted(extra)}")
        for k, v in state.items():
            cur = self.params[k]
            if cur.data.shape != v.shape:
                raise ValueError(f"shape mismatch for {k}: {cur.data.shape} vs {v.shape}")
            cur.data = np.asarray(v, dtype=np.float64).copy()

    def zero_grads(self) -> None:
        for t in self.params.values():
            t.grad = None
