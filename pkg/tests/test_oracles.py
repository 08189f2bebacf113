import numpy as np
import pytest

from app.core.exceptions import OracleError
from app.models.construction import ProductTermSpec, SplineBasisSpec
from app.models.experiment import UniformSampler
from app.models.hierarchical import HierarchicalModelSpec, Leaf, Node, flatten_inputs, unflatten_inputs
from app.models.network import NetworkParams
from app.services.oracle_service import (
    bayes_risk_mc, decision_function, eval_hierarchical, eval_product_terms, excess_misclassification,
    finite_diff_grad, minimal_logistic_risk, surrogate_diagnostics, surrogate_excess, truncated_power_basis,
)

sample_basis = SplineBasisSpec(degree=2, knots=[-0.5, 0.25], A=1.0)
half_spec = HierarchicalModelSpec(root=Node(function="constant_half", children=[Leaf(coordinate=0)]))
sigmoid_spec = HierarchicalModelSpec(root=Node(function="sigmoid", children=[Leaf(coordinate=0)]))
sampler = UniformSampler(d=1, l=1)


def bayes_logit(inputs: np.ndarray) -> np.ndarray:
    """Logit of the sigmoid target: 4 x."""
    return 4.0 * inputs[:, 0, 0]


def test_truncated_power_basis():
    """Test monomials up to the degree and truncated powers beyond"""
    assert truncated_power_basis(0.5, sample_basis, 0) == 1.0
    assert truncated_power_basis(0.5, sample_basis, 2) == 0.25
    assert truncated_power_basis(0.0, sample_basis, 3) == 0.25
    assert truncated_power_basis(-0.75, sample_basis, 3) == 0.0
    assert truncated_power_basis(0.75, sample_basis, 4) == 0.25
    assert sample_basis.size == 5
    with pytest.raises(OracleError):
        truncated_power_basis(0.0, sample_basis, 5)


def test_product_terms():
    """Test a two-variable sum of basis products"""
    terms = ProductTermSpec(alphas=[2.0, -1.0], exponents=[[1, 3], [0, 2]])
    x = np.array([[0.5, 0.0], [-1.0, 1.0]])
    expected = np.array([2.0 * 0.5 * 0.25 - 0.0, 2.0 * -1.0 * 2.25 - 1.0])
    assert np.allclose(eval_product_terms(x, sample_basis, terms), expected)


def test_eval_hierarchical():
    """Test recursive evaluation on single points and batches"""
    spec = HierarchicalModelSpec(root=Node(function="product", children=[Leaf(coordinate=0), Leaf(coordinate=1)]))
    assert eval_hierarchical(spec, np.array([0.5, -2.0])) == -1.0
    batch = eval_hierarchical(spec, np.array([[0.5, -2.0], [1.0, 3.0]]))
    assert np.array_equal(batch, [-1.0, 3.0])
    with pytest.raises(OracleError):
        eval_hierarchical(spec, np.array([0.5]))


def test_flatten_is_token_major():
    """Test that coordinate c is token c // d, row c % d"""
    inputs = np.arange(6, dtype=np.float64).reshape(1, 2, 3)
    flat = flatten_inputs(inputs)
    assert np.array_equal(flat[0], [0.0, 3.0, 1.0, 4.0, 2.0, 5.0])
    assert np.array_equal(unflatten_inputs(flat, 2, 3), inputs)


def test_finite_differences_of_quadratic():
    """Test central differences on a quadratic form"""
    q = np.array([[2.0, 0.5], [0.5, 1.0]])
    point = np.array([0.3, -0.7])
    numeric = finite_diff_grad(lambda p: float(p @ q @ p), point)
    assert np.allclose(numeric, 2.0 * q @ point, atol=1e-8)
    with pytest.raises(OracleError):
        finite_diff_grad(lambda p: 0.0, point, step=0.0)


def test_constant_half_risks():
    """Test the Bayes and logistic risks of m = 1/2"""
    assert bayes_risk_mc(half_spec, sampler, 500, seed=1) == (0.5, 0.0)
    risk, std_err = minimal_logistic_risk(half_spec, sampler, 500, seed=1)
    assert risk == pytest.approx(np.log(2.0))
    assert std_err == pytest.approx(0.0, abs=1e-15)


def test_bayes_classifier_has_no_excess():
    """Test that the logit of m has zero excess risks"""
    excess, std_err = excess_misclassification(bayes_logit, sigmoid_spec, sampler, 5000, seed=2)
    assert excess == 0.0
    assert std_err == 0.0
    surrogate, _ = surrogate_excess(bayes_logit, sigmoid_spec, sampler, 5000, seed=2)
    assert surrogate == pytest.approx(0.0, abs=1e-10)


def test_standard_error_scaling():
    """Test that quadrupling the sample count halves the standard error"""
    flipped = lambda inputs: -inputs[:, 0, 0]  # noqa: E731
    _, small = excess_misclassification(flipped, sigmoid_spec, sampler, 4000, seed=3)
    _, large = excess_misclassification(flipped, sigmoid_spec, sampler, 16000, seed=3)
    assert small / large == pytest.approx(2.0, rel=0.3)


def test_surrogate_bounds_on_flipped_classifier():
    """Test every surrogate bound on a classifier with the wrong sign everywhere"""
    flipped = lambda inputs: -4.0 * inputs[:, 0, 0]  # noqa: E731
    excess, excess_se = excess_misclassification(flipped, sigmoid_spec, sampler, 20000, seed=4)
    surrogate, surrogate_se = surrogate_excess(flipped, sigmoid_spec, sampler, 20000, seed=4)
    risk_star, _ = minimal_logistic_risk(sigmoid_spec, sampler, 20000, seed=4)
    diagnostics = surrogate_diagnostics(excess, surrogate, risk_star, tolerance=3.0 * (excess_se + surrogate_se))
    assert excess > 0.5
    assert diagnostics["holds_a"]
    assert diagnostics["holds_b"]
    assert diagnostics["holds_calibration"]


def test_surrogate_diagnostics_values():
    """Test the three bound forms on fixed numbers"""
    diagnostics = surrogate_diagnostics(0.1, 0.08, 0.3)
    assert diagnostics["bound_a"] == pytest.approx(0.2)
    assert diagnostics["bound_b"] == pytest.approx(1.36)
    assert diagnostics["bound_calibration"] == pytest.approx(0.4)
    assert diagnostics["holds_a"] and diagnostics["holds_b"] and diagnostics["holds_calibration"]
    assert surrogate_diagnostics(0.2, -0.01, 0.0)["bound_a"] == 0.0


def test_decision_function_needs_config(small_config):
    """Test that a bare network cannot be evaluated without its configuration"""
    with pytest.raises(OracleError):
        decision_function(NetworkParams.zeros(small_config))
    with pytest.raises(OracleError):
        decision_function(42)
