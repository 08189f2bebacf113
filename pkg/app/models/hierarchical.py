from typing import Iterator, List, Literal, Union

import numpy as np
from pydantic import BaseModel, Field, model_validator

from .function_registry import get_function


class Leaf(BaseModel):
    """Input coordinate x^(coordinate) of x flattened token by token."""
    kind: Literal["leaf"] = "leaf"
    coordinate: int = Field(..., ge=0)

    @property
    def level(self) -> int:
        return 0


class Node(BaseModel):
    """Registered smooth function applied to the values of its children."""
    kind: Literal["node"] = "node"
    function: str
    children: List[Union[Leaf, "Node"]] = Field(..., min_length=1)
    degree: int = Field(default=2, ge=1)

    @model_validator(mode="after")
    def check_arity(self):
        fn = get_function(self.function)
        if fn.arity != len(self.children):
            raise ValueError(f"{self.function} takes {fn.arity} arguments, got {len(self.children)} children")
        return self

    @property
    def level(self) -> int:
        return 1 + max(child.level for child in self.children)

    @property
    def arity(self) -> int:
        return len(self.children)


Node.model_rebuild()


class HierarchicalModelSpec(BaseModel):
    """
    Hierarchical composition model: a tree of registered functions over input coordinates on [-A, A]^(d*l).
    """
    root: Union[Leaf, Node] = Field(..., discriminator="kind")
    A: float = Field(default=1.0, gt=0)

    @property
    def level(self) -> int:
        return self.root.level

    def nodes(self) -> Iterator[Node]:
        """Function nodes in post-order (children before parents)."""
        def visit(node):
            if isinstance(node, Node):
                for child in node.children:
                    yield from visit(child)
                yield node
        yield from visit(self.root)

    def leaves(self) -> Iterator[Leaf]:
        def visit(node):
            if isinstance(node, Leaf):
                yield node
            else:
                for child in node.children:
                    yield from visit(child)
        yield from visit(self.root)

    def check_inputs(self, n_inputs: int) -> None:
        for leaf in self.leaves():
            if leaf.coordinate >= n_inputs:
                raise ValueError(f"Leaf coordinate {leaf.coordinate} outside 0..{n_inputs - 1}")


def flatten_inputs(inputs: np.ndarray) -> np.ndarray:
    """(n, d, l) batch to (n, d*l) with coordinate c = token c // d, row c % d."""
    inputs = np.asarray(inputs, dtype=np.float64)
    return np.swapaxes(inputs, 1, 2).reshape(inputs.shape[0], -1)


def unflatten_inputs(flat: np.ndarray, d: int, l: int) -> np.ndarray:
    flat = np.asarray(flat, dtype=np.float64)
    return np.swapaxes(flat.reshape(flat.shape[0], l, d), 1, 2)
