"""
Hierarchical approximator: spline fits per node composed into one network,
and the full classifier obtained by stacking the logit head on top
"""
import itertools
import logging
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from ..core.exceptions import ConstructionError
from ..models.construction import (
    HierarchicalCertificate, NodeCertificate, ProductTermSpec, SplineBasisSpec,
)
from ..models.experiment import GridSpec
from ..models.function_registry import get_function
from ..models.hierarchical import HierarchicalModelSpec, Leaf, Node, flatten_inputs
from ..models.network import LayerWeights, ModelConfig, NetworkParams, zero_head, zero_layer
from .construction_service import (
    build_ffn_gadget, build_logit_head, build_spline_product_encoder, identity_final,
    pad_final, validation_grid,
)
from .oracle_service import eval_hierarchical, eval_product_terms
from .transformer_service import apply_layer, encode_batch

logger = logging.getLogger(__name__)

FIT_OVERSAMPLING = 4
VALIDATION_POINTS_PER_DIM = 41


def _basis_for_budget(degree: int, arity: int, budget: int, bound: float) -> Tuple[SplineBasisSpec, List[Tuple[int, ...]]]:
    """Largest dyadic knot count whose tensor basis fits the term budget, else a total-degree polynomial basis."""
    if budget < 1:
        raise ConstructionError("At least one product term is required")
    K = 0
    candidate = 1
    while (degree + candidate) ** arity <= budget:
        K = candidate
        candidate *= 2
    if K >= 1:
        knots = [-bound + 2.0 * bound * r / K for r in range(1, K)]
        basis = SplineBasisSpec(degree=degree, knots=knots, A=bound)
        exponents = list(itertools.product(range(basis.size), repeat=arity))
        return basis, exponents
    basis = SplineBasisSpec(degree=degree, knots=[], A=bound)
    exponents = sorted(itertools.product(range(basis.size), repeat=arity), key=lambda e: (sum(e), e))
    return basis, exponents[:budget]


def fit_spline_terms(
    g: Callable[[np.ndarray], np.ndarray], arity: int, degree: int, budget: int, bound: float,
) -> Tuple[SplineBasisSpec, ProductTermSpec, float]:
    """
    Least-squares fit of g on [-bound, bound]^arity by products of truncated power functions.

    Returns the basis, the fitted terms and the sup error on a validation grid.
    """
    basis, exponents = _basis_for_budget(degree, arity, budget, bound)
    per_dim = FIT_OVERSAMPLING * basis.size
    fit_points = GridSpec.cube(arity, per_dim, bound).points()
    unit = ProductTermSpec(alphas=[1.0] * len(exponents), exponents=[list(e) for e in exponents])

    def design(points: np.ndarray) -> np.ndarray:
        return np.stack([
            eval_product_terms(points, basis, ProductTermSpec(alphas=[1.0], exponents=[row]))
            for row in unit.exponents
        ], axis=1)

    coefficients, *_ = np.linalg.lstsq(design(fit_points), g(fit_points), rcond=None)
    terms = ProductTermSpec(alphas=[float(a) for a in coefficients], exponents=unit.exponents)

    check_points = GridSpec.cube(arity, VALIDATION_POINTS_PER_DIM, bound).points()
    fit_error = float(np.max(np.abs(eval_product_terms(check_points, basis, terms) - g(check_points))))
    return basis, terms, fit_error


def _wrapped_root(spec: HierarchicalModelSpec) -> Node:
    if isinstance(spec.root, Leaf):
        return Node(function="identity", children=[spec.root], degree=1)
    return spec.root


def _node_bounds(node, A: float, bounds: Dict[int, float]) -> float:
    """Bound on |value| of a subtree on [-A, A]^(d*l): |g(0)| + L(b) sqrt(a) b recursively."""
    if isinstance(node, Leaf):
        return A
    child_bound = max(_node_bounds(child, A, bounds) for child in node.children)
    fn = get_function(node.function)
    at_zero = abs(float(fn(np.zeros((1, fn.arity)))[0]))
    value = at_zero + fn.lipschitz(child_bound) * np.sqrt(fn.arity) * child_bound
    bounds[id(node)] = value
    return value


def hierarchical_bound(spec: HierarchicalModelSpec) -> float:
    """
    Bound A-bar with |h(x)| <= A-bar for every intermediate value on the input domain
    """
    return max(spec.A, _node_bounds(spec.root, spec.A, {}))


def fit_tree(spec: HierarchicalModelSpec, h: int) -> Dict[int, Tuple[SplineBasisSpec, ProductTermSpec, float, float]]:
    """
    Spline fit of every node on the box [-(b+1), b+1]^arity around its children's bound b.

    Keyed by id() of the nodes of ``spec``; values are (basis, terms, fit_error, box).
    """
    bounds: Dict[int, float] = {}
    _node_bounds(spec.root, spec.A, bounds)
    fits = {}
    for node in spec.nodes():
        child_bound = max(
            [spec.A] + [bounds[id(child)] for child in node.children if not isinstance(child, Leaf)]
        )
        box = child_bound + 1.0
        basis, terms, fit_error = fit_spline_terms(get_function(node.function), node.arity, node.degree, h - 1, box)
        fits[id(node)] = (basis, terms, fit_error, box)
    return fits


def fitted_composition(spec: HierarchicalModelSpec, h: int) -> Callable[[np.ndarray], np.ndarray]:
    """
    Composition of the fitted splines themselves on flattened inputs (n, d*l): the value the
    approximator network computes up to floating-point error
    """
    tree = HierarchicalModelSpec(root=_wrapped_root(spec), A=spec.A)
    fits = fit_tree(tree, h)

    def evaluate(node, x_flat: np.ndarray) -> np.ndarray:
        if isinstance(node, Leaf):
            return x_flat[:, node.coordinate]
        basis, terms, _, _ = fits[id(node)]
        values = np.stack([evaluate(child, x_flat) for child in node.children], axis=1)
        return eval_product_terms(values, basis, terms)

    return lambda x_flat: evaluate(tree.root, np.atleast_2d(np.asarray(x_flat, dtype=np.float64)))


def required_layers(spec: HierarchicalModelSpec, degree: Optional[int] = None) -> int:
    """Layer pairs needed by the approximator: degree*arity + 1 per node plus the copy layer."""
    root = _wrapped_root(spec)
    nodes = list(HierarchicalModelSpec(root=root, A=spec.A).nodes())
    return sum((degree or node.degree) * node.arity + 1 for node in nodes) + 1


def build_hierarchical_approximator(
    spec: HierarchicalModelSpec, h: int, cfg: ModelConfig,
) -> Tuple[NetworkParams, HierarchicalCertificate]:
    """
    Compose one spline-product encoder per node (children first), each storing
    its value in the next reserved component of token 0, then copy the root
    value to the readout component. Heads 1..h-1 carry the product terms.
    """
    root = _wrapped_root(spec)
    tree = HierarchicalModelSpec(root=root, A=spec.A)
    try:
        tree.check_inputs(cfg.n_inputs)
    except ValueError as e:
        raise ConstructionError(str(e))
    nodes = list(tree.nodes())
    if h > cfg.h:
        raise ConstructionError(f"Term budget h={h} exceeds the head count {cfg.h}")
    if cfg.stored_index(len(nodes) - 1) >= cfg.I:
        raise ConstructionError(
            f"{len(nodes)} stored values need I >= {cfg.stored_index(len(nodes) - 1) + 1}, got {cfg.I}"
        )
    needed = required_layers(tree)
    if needed > cfg.N:
        raise ConstructionError(f"The approximator needs N >= {needed} layer pairs, got {cfg.N}")

    inputs = validation_grid(cfg, spec.A)
    states = encode_batch(inputs, cfg)
    flat = flatten_inputs(inputs)

    bounds: Dict[int, float] = {}
    _node_bounds(root, spec.A, bounds)
    fits = fit_tree(tree, h)
    slots = {id(node): t for t, node in enumerate(nodes)}

    layers: List[LayerWeights] = []
    B_schedule: List[float] = []
    node_certificates: List[NodeCertificate] = []
    component_map: Dict[str, int] = {}
    admissible = 1.0

    for t, node in enumerate(nodes):
        fn = get_function(node.function)
        sources = [
            cfg.coordinate_source(child.coordinate) if isinstance(child, Leaf)
            else (0, cfg.stored_index(slots[id(child)]))
            for child in node.children
        ]
        basis, terms, fit_error, box = fits[id(node)]

        target = cfg.stored_index(t)
        encoder, encoder_certificate = build_spline_product_encoder(
            cfg, basis, terms, target, sources=sources, validation_states=states,
        )
        for layer in encoder:
            states = apply_layer(states, layer)
        layers.extend(encoder)
        B_schedule.extend(encoder_certificate.B_schedule)
        admissible = min(admissible, encoder_certificate.admissible_eps)

        path = f"node_{t}:{node.function}"
        component_map[path] = target
        subtree = HierarchicalModelSpec(root=node, A=spec.A)
        network_error = float(np.max(np.abs(states[:, 0, target] - eval_hierarchical(subtree, flat))))
        node_certificates.append(NodeCertificate(
            path=path, function=node.function, component=target, degree=node.degree,
            basis_size=basis.size, n_terms=terms.n_terms, fit_error=fit_error,
            network_error=network_error, lipschitz=fn.lipschitz(box), bound=bounds[id(node)],
        ))
        logger.info(f"Node {path}: {terms.n_terms} terms, fit error {fit_error:.3g}, network error {network_error:.3g}")

    copy = LayerWeights(
        heads=[zero_head(cfg) for _ in range(cfg.h)],
        ffn=build_ffn_gadget(cfg, cfg.readout_index, cfg.stored_index(len(nodes) - 1), 1.0, variant="identity"),
    )
    layers.append(copy)
    B_schedule.append(0.0)
    states = apply_layer(states, copy)
    component_map["readout"] = cfg.readout_index
    layers.extend(zero_layer(cfg) for _ in range(cfg.N - len(layers)))

    measured = float(np.max(np.abs(states[:, 0, cfg.readout_index] - eval_hierarchical(spec, flat))))
    certificate = HierarchicalCertificate(
        admissible_eps=admissible, measured_sup_error=measured, bound=hierarchical_bound(spec),
        component_map=component_map, B_schedule=B_schedule, nodes=node_certificates, n_layers=needed,
    )
    return NetworkParams(layers=layers, final=identity_final(cfg.J)), certificate


def assemble_classifier_network(
    spec: HierarchicalModelSpec, cfg: ModelConfig, Kgrid: int, h: Optional[int] = None,
) -> Tuple[NetworkParams, HierarchicalCertificate]:
    """
    Approximator of m followed by the logit head: the output approximates log(m / (1 - m))
    """
    params, certificate = build_hierarchical_approximator(spec, h or cfg.h, cfg)
    final = pad_final(build_logit_head(Kgrid), cfg.J)
    return NetworkParams(layers=params.layers, final=final), certificate
