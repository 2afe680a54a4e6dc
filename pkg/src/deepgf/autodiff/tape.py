"""Tape-based reverse-mode automatic differentiation.

Every operation appends a :class:`Node` to the :class:`Tape` that owns its
inputs. Nodes are created in topological order, so walking the tape backwards
visits each node after all of its consumers.
"""

import numpy as np

from ..errors import ContractError


class Node:
    __slots__ = ("tape", "id", "op", "parents", "value", "grad", "requires_grad", "vjp", "name")

    def __init__(self, tape, op, value, parents=(), vjp=None, requires_grad=False, name=None):
        self.tape = tape
        self.op = op
        self.value = value
        self.parents = tuple(parents)
        self.vjp = vjp
        self.requires_grad = requires_grad
        self.grad = None
        self.name = name
        self.id = len(tape.nodes)
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Node(id={self.id}, op={self.op!r}, shape={self.value.shape})"

    # operator sugar; implementations live in ops.py
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)


class Tape:
    """Owns the nodes of one computation graph.

    ``dtype`` fixes the working precision of every value recorded on the tape.
    Gradient checks require float64.
    """

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def variable(self, value, name=None):
        """A leaf that receives a gradient."""
        return Node(self, "leaf", np.array(value, dtype=self.dtype), requires_grad=True, name=name)

    def constant(self, value, name=None):
        return Node(self, "const", np.asarray(value, dtype=self.dtype), name=name)

    def lift(self, x):
        """Wrap raw arrays and scalars as constants; pass nodes through."""
        if isinstance(x, Node):
            if x.tape is not self:
                raise ContractError("cannot mix nodes from different tapes")
            return x
        return self.constant(x)

    def record(self, op, value, parents, vjp):
        requires_grad = any(p.requires_grad for p in parents)
        value = np.asarray(value, dtype=self.dtype)
        return Node(self, op, value, parents, vjp if requires_grad else None, requires_grad)

    def backward(self, root, upstream=None):
        """Propagate ``d root`` back to every node that requires a gradient.

        Gradient accumulators are reset first, so repeated calls on the same tape
        give identical results. ``upstream`` defaults to ones (for a scalar root,
        this is ``d root / d node``).
        """
        if root.tape is not self:
            raise ContractError("root node belongs to a different tape")
        for node in self.nodes:
            node.grad = None
        if upstream is None:
            upstream = np.ones_like(root.value)
        root.grad = np.array(upstream, dtype=self.dtype).reshape(root.value.shape)
        for node in reversed(self.nodes[: root.id + 1]):
            if node.grad is None or node.vjp is None:
                continue
            parent_grads = node.vjp(node.grad)
            for parent, g in zip(node.parents, parent_grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.array(g, dtype=self.dtype)
                else:
                    parent.grad += g
        return root
