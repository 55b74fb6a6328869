"""Forward/backward execution sessions over rebuilt computational graphs.

A Session owns the per-run mutable state (cached activations, accumulated
gradients); the graph itself is immutable and shareable. backward() runs
reverse-mode accumulation over the reversed topological order and returns
the gradient with respect to every graph input; parameter gradients are
also accumulated and kept on the session.
"""
from __future__ import annotations

import numpy as np

from ..modelio import load_model
from ..rebuild import ComputationalGraph, InputNode, OperatorNode, ParameterNode
from .ops import ShapeMismatch, UnsupportedOp, backward_op, forward_op

__all__ = ["Session", "NoForwardPass", "mse_loss", "load_session",
           "ShapeMismatch", "UnsupportedOp"]


class NoForwardPass(RuntimeError):
    pass


class Session:
    def __init__(self, graph: ComputationalGraph, conv_method: str = "gather"):
        self.graph = graph
        self.conv_method = conv_method
        self._by_name = graph.by_name
        self._order = graph.topo_order()
        self.activations: dict[str, np.ndarray] | None = None
        self.gradients: dict[str, np.ndarray] | None = None

    def forward(self, inputs: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Run the graph on named inputs; returns the named output tensors."""
        acts: dict[str, np.ndarray] = {}
        for node in self.graph.inputs():
            if node.name not in inputs:
                raise ShapeMismatch(f"missing input {node.name!r}")
            x = np.asarray(inputs[node.name], dtype=np.float64)
            if tuple(x.shape) != tuple(node.shape):
                raise ShapeMismatch(
                    f"input {node.name!r} has shape {tuple(x.shape)}, wants {node.shape}")
            acts[node.name] = x
        for node in self.graph.parameters():
            acts[node.name] = np.asarray(node.values, dtype=np.float64)
        for name in self._order:
            op: OperatorNode = self._by_name[name]
            ins = [acts[i] for i in op.inputs]
            acts[name] = forward_op(op.op_type, op.attrs, ins, self.conv_method)
        self.activations = acts
        self.gradients = None
        return {name: acts[name] for name in self.graph.outputs}

    def backward(self, loss_grad: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
        """Reverse-mode pass; returns d(loss)/d(input) for every input node."""
        if self.activations is None:
            raise NoForwardPass("forward() must run before backward()")
        acts = self.activations
        grads: dict[str, np.ndarray] = {}
        for name, g in loss_grad.items():
            if name not in self.graph.outputs:
                raise ShapeMismatch(f"{name!r} is not a graph output")
            g = np.asarray(g, dtype=np.float64)
            if g.shape != acts[name].shape:
                raise ShapeMismatch(f"loss gradient for {name!r} has the wrong shape")
            grads[name] = g.copy()
        for name in reversed(self._order):
            if name not in grads:
                continue
            op: OperatorNode = self._by_name[name]
            ins = [acts[i] for i in op.inputs]
            in_grads = backward_op(op.op_type, op.attrs, ins, acts[name], grads[name])
            for src, g in zip(op.inputs, in_grads):
                if g is None:
                    continue
                if src in grads:
                    grads[src] = grads[src] + g
                else:
                    grads[src] = g
        self.gradients = grads
        zero = {
            n.name: np.zeros(n.shape, dtype=np.float64)
            for n in self.graph.inputs()
        }
        return {name: grads.get(name, zero[name]) for name in zero}


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient with respect to pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"mse shapes differ: {pred.shape} vs {target.shape}")
    n = pred.size
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / n


def load_session(script: str, weights_blob: bytes, conv_method: str = "gather") -> Session:
    """Load an MBUILD v1 script plus weights container into a runnable session."""
    return Session(load_model(script, weights_blob), conv_method=conv_method)
