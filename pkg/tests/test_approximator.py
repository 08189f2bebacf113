import ast
from pathlib import Path

import numpy as np
import pytest

from app.core.exceptions import ConstructionError
from app.models.function_registry import get_function
from app.models.hierarchical import HierarchicalModelSpec, Leaf, Node, flatten_inputs
from app.models.network import ModelConfig
from app.services.approximator_service import (
    assemble_classifier_network, build_hierarchical_approximator, fit_spline_terms, fitted_composition,
    hierarchical_bound, required_layers,
)
from app.services.construction_service import validation_grid
from app.services.oracle_service import eval_hierarchical
from app.services.transformer_service import network_forward_batch, run_layers

sine_spec = HierarchicalModelSpec(root=Node(function="sine", children=[Leaf(coordinate=0)]))
sigmoid_spec = HierarchicalModelSpec(root=Node(function="sigmoid", children=[Leaf(coordinate=0)]))
nested_spec = HierarchicalModelSpec(
    root=Node(function="square", children=[Node(function="sine", children=[Leaf(coordinate=0)])])
)


def approximator_config(h: int, N: int = 4, J: int = 2) -> ModelConfig:
    return ModelConfig(d=1, l=1, h=h, I=8, d_ff=2 * (h - 1), N=N, J=J, beta=3.0)


def test_product_fits_exactly():
    """Test that a product of two coordinates lies in the tensor basis"""
    basis, terms, error = fit_spline_terms(lambda v: v[:, 0] * v[:, 1], arity=2, degree=2, budget=9, bound=1.0)
    assert basis.K == 1
    assert terms.n_terms == 9
    assert error <= 1e-10


def test_small_budget_falls_back_to_polynomials():
    """Test the total-degree polynomial basis when no knot grid fits the budget"""
    basis, terms, _ = fit_spline_terms(lambda v: v[:, 0] + v[:, 1], arity=2, degree=2, budget=7, bound=1.0)
    assert basis.knots == []
    assert terms.n_terms == 7
    assert terms.exponents[0] == [0, 0]


@pytest.mark.parametrize("spec", [sine_spec, sigmoid_spec])
def test_error_shrinks_with_budget(spec):
    """Test that the measured sup error does not grow with the term budget"""
    errors = []
    for h in (8, 16, 32):
        _, certificate = build_hierarchical_approximator(spec, h, approximator_config(h))
        errors.append(certificate.measured_sup_error)
    assert errors[1] <= errors[0] + 1e-9
    assert errors[2] <= errors[1] + 1e-9
    assert errors[2] <= 2e-2


def test_network_realizes_fitted_composition():
    """Test that the network computes the composition of its fitted splines"""
    cfg = approximator_config(8, N=7)
    params, certificate = build_hierarchical_approximator(nested_spec, cfg.h, cfg)
    inputs = validation_grid(cfg, nested_spec.A)
    readout = run_layers(inputs, params.layers, cfg)[:, 0, cfg.readout_index]
    composed = fitted_composition(nested_spec, cfg.h)(flatten_inputs(inputs))
    assert np.max(np.abs(readout - composed)) <= 1e-6
    assert np.max(np.abs(network_forward_batch(inputs, params, cfg) - readout)) <= 1e-12

    inner, outer = certificate.nodes
    assert inner.function == "sine" and outer.function == "square"
    assert certificate.measured_sup_error <= outer.lipschitz * inner.network_error + outer.fit_error + 1e-9
    assert certificate.n_layers == required_layers(nested_spec) == 7


def test_approximator_preconditions():
    """Test the head, layer and storage requirements of the approximator"""
    with pytest.raises(ConstructionError):
        build_hierarchical_approximator(sine_spec, 16, approximator_config(8))
    with pytest.raises(ConstructionError):
        build_hierarchical_approximator(nested_spec, 8, approximator_config(8, N=6))
    narrow = ModelConfig(d=1, l=1, h=8, I=6, d_ff=14, N=7, J=2, beta=3.0)
    with pytest.raises(ConstructionError):
        build_hierarchical_approximator(sine_spec, 8, narrow)
    wide_input = HierarchicalModelSpec(root=Node(function="sine", children=[Leaf(coordinate=3)]))
    with pytest.raises(ConstructionError):
        build_hierarchical_approximator(wide_input, 8, approximator_config(8))


def test_bounds_and_layer_counts():
    """Test the value bound and the layer count of simple trees"""
    assert hierarchical_bound(sine_spec) == 1.0
    assert hierarchical_bound(HierarchicalModelSpec(root=Leaf(coordinate=0), A=2.0)) == 2.0
    assert required_layers(nested_spec) == 7
    assert required_layers(HierarchicalModelSpec(root=Leaf(coordinate=0))) == 3
    assert nested_spec.level == 2


def test_classifier_network_outputs_logit():
    """Test that the assembled network returns the logit of m at grid points"""
    spec = HierarchicalModelSpec(root=Node(function="affine_half", children=[Leaf(coordinate=0)]))
    cfg = approximator_config(8, J=27)
    params, certificate = assemble_classifier_network(spec, cfg, Kgrid=6)
    assert certificate.measured_sup_error <= 1e-9
    x = np.array([-1.0 / 3.0, 0.0, 2.0 / 3.0]).reshape(3, 1, 1)
    expected = np.log(np.array([0.5, 1.0, 5.0]))
    assert np.allclose(network_forward_batch(x, params, cfg), expected, atol=1e-8)
    assert np.allclose(eval_hierarchical(spec, np.array([[0.0]])), 0.5)


def test_model_layer_does_not_import_services():
    """Test that the pydantic models, the function registry included, never import the service layer"""
    import app.models

    assert get_function("sine").arity == 1
    for path in Path(app.models.__file__).parent.glob("*.py"):
        for node in ast.walk(ast.parse(path.read_text())):
            if isinstance(node, ast.ImportFrom):
                assert "services" not in (node.module or "").split("."), path.name
