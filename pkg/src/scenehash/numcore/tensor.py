"""Dense float64 tensors with reverse-mode gradient accumulation.

Tensors are immutable after forward construction; a backward pass is the
single writer of ``grad`` buffers. Independent graphs may therefore be
evaluated on separate threads without locking.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    pass


class Tensor:
    """A node in a dynamically built compute graph.

    Leaf tensors hold data (optionally with ``requires_grad``); op tensors
    additionally record their parents and a vector-Jacobian product used
    during reverse accumulation.
    """

    __slots__ = ("data", "requires_grad", "grad", "parents", "vjp", "op")

    def __init__(self, data, requires_grad=False, parents=(), vjp=None, op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"non-finite values in tensor (op={op!r})")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.parents = parents
        self.vjp = vjp
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self, seed=None):
        """Reverse-accumulate gradients from this tensor into the graph."""
        ComputeGraph(self).backward(seed)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x):
    """A tensor that never receives gradient (detached input)."""
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=False)


class ComputeGraph:
    """Topological ordering of the op nodes reachable from an output tensor.

    Built once per backward pass; the traversal visits every node exactly
    once, so gradients of shared subexpressions accumulate additively.
    """

    def __init__(self, output: Tensor):
        self.output = output
        order = []
        seen = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.nodes = order  # parents before children

    def backward(self, seed=None):
        """Populate ``grad`` on every requires_grad tensor reachable from the output."""
        out = self.output
        if seed is None:
            seed_arr = np.ones_like(out.data)
        else:
            seed_arr = seed.data if isinstance(seed, Tensor) else np.asarray(seed, dtype=np.float64)
        if seed_arr.shape != out.data.shape:
            raise ShapeError(f"seed shape {seed_arr.shape} != output shape {out.data.shape}")

        grads = {id(out): seed_arr.astype(np.float64, copy=True)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
            if node.vjp is None:
                continue
            parent_grads = node.vjp(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not _needs_grad(p):
                    continue
                acc = grads.get(id(p))
                grads[id(p)] = pg if acc is None else acc + pg


def _needs_grad(t: Tensor) -> bool:
    return t.requires_grad or t.vjp is not None


def backward(graph, seed=None):
    """Run reverse accumulation over ``graph`` (a ComputeGraph or output Tensor)."""
    if isinstance(graph, Tensor):
        graph = ComputeGraph(graph)
    graph.backward(seed)
    return graph
