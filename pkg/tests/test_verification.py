import numpy as np
import pytest

from app.core.exceptions import PreconditionError
from app.core.rng import RandomStreams, StreamRole
from app.models.experiment import UniformSampler
from app.services.construction_service import build_selection_head, selection_threshold
from app.services.transformer_service import encode_batch
from app.services.verification_service import (
    SELECTION_CONFIG, SUITES, VERIFY_SEED, check_selection_head, check_selection_robustness, perturb_inputs,
    verify_constructions,
)


def noisy_key_head(delta: float):
    """Selection head whose key reads the first stored component, certified for input noise delta"""
    cfg = SELECTION_CONFIG
    s0, beta = 1, 0.5
    return build_selection_head(
        cfg, s0=s0, s1=0, s2=cfg.stored_index(0), j=2, s3=cfg.accumulator_index(s0), beta=beta,
        B=selection_threshold(cfg, beta, input_bound=1.0, delta=delta), delta=delta,
    )


def stored_states(n: int, seed: int) -> np.ndarray:
    """Encoded inputs whose non-encoding components hold uniform[-1, 1] values"""
    cfg = SELECTION_CONFIG
    rng = RandomStreams(seed).generator(StreamRole.VALIDATION)
    z0 = encode_batch(UniformSampler(d=cfg.d, l=cfg.l).sample(n, rng), cfg).copy()
    z0[..., cfg.encoding_width:] = rng.uniform(-1.0, 1.0, size=z0[..., cfg.encoding_width:].shape)
    return z0


def test_empty_selection_passes():
    """Test that selecting no suite gives an empty, passing report"""
    report = verify_constructions([])
    assert report.checks == []
    assert report.passed


@pytest.mark.parametrize("suite", list(SUITES))
def test_suite_passes(suite):
    """Test that every built-in suite passes at the default seed"""
    report = verify_constructions([suite], seed=VERIFY_SEED)
    assert report.checks
    assert all(check.suite == suite for check in report.checks)
    assert report.passed, [check.model_dump() for check in report.failures()]


def test_suites_cover_noise_and_mask():
    """Test that the selection suite sweeps input noise and the encoders are checked against the init mask"""
    report = verify_constructions(["selection_head", "spline", "hierarchical"], seed=VERIFY_SEED)
    names = {(check.suite, check.name): check for check in report.checks}
    robustness = names[("selection_head", "argmax_under_admissible_noise")]
    assert robustness.details["delta_bound"] == 2.0
    assert robustness.details["inputs"] >= 100
    assert names[("spline", "fits_init_pattern")].passed
    assert names[("hierarchical", "fits_init_pattern")].passed


def test_unknown_suite_is_rejected():
    """Test that an unknown suite name raises before anything runs"""
    with pytest.raises(PreconditionError):
        verify_constructions(["selection_head", "attention_sink"])


def test_corrupted_head_fails_certificate():
    """Test that a head pushed past its admissible noise is reported as failing"""
    cfg = SELECTION_CONFIG
    s0, s1, j, beta = 1, 0, 2, 0.5
    head, certificate = build_selection_head(
        cfg, s0=s0, s1=s1, s2=1, j=j, s3=cfg.accumulator_index(s0), beta=beta,
        B=selection_threshold(cfg, beta, input_bound=1.0),
    )
    inputs = UniformSampler(d=cfg.d, l=cfg.l).sample(50, RandomStreams(3).generator(StreamRole.VALIDATION))
    assert check_selection_head(head, head, certificate, cfg, inputs, s0, j).passed

    w_query = head.w_query.copy()
    w_query[0, s1] += 10.0 * certificate.admissible_eps
    corrupted = head.model_copy(update={"w_query": w_query})
    result = check_selection_head(corrupted, head, certificate, cfg, inputs, s0, j)
    assert not result.passed
    assert result.details["within_certificate"] is False
    assert result.details["max_weight_deviation"] == pytest.approx(10.0 * certificate.admissible_eps)


def test_input_noise_spares_the_encoding():
    """Test that input noise leaves the x, ones and position rows exact and stays within delta"""
    cfg = SELECTION_CONFIG
    z0 = stored_states(40, seed=8)
    noisy = perturb_inputs(z0, 0.3, cfg, RandomStreams(9).generator(StreamRole.PERTURBATION))
    width = cfg.encoding_width
    assert np.array_equal(noisy[..., :width], z0[..., :width])
    shift = noisy[..., width:] - z0[..., width:]
    assert np.max(np.abs(shift)) <= 0.3
    assert np.count_nonzero(shift) == shift.size


def test_selection_head_survives_weight_and_input_noise():
    """Test the argmax pattern on 120 inputs for eps and delta in {0, 1/2, 1} of their certified bounds"""
    cfg = SELECTION_CONFIG
    head, certificate = noisy_key_head(delta=2.0)
    assert certificate.delta_bound == 2.0
    assert certificate.threshold == pytest.approx(4.0 * selection_threshold(cfg, 0.5, input_bound=1.0))

    z0 = stored_states(120, seed=5)
    result = check_selection_robustness(
        head, certificate, cfg, z0, 1, 2, RandomStreams(6).generator(StreamRole.PERTURBATION),
    )
    assert result.passed, result.details
    assert result.details["inputs"] == 120
    assert result.details["failures"] == []


def test_robustness_rejects_states_beyond_the_input_bound():
    """Test that states larger than the certified input bound are refused"""
    head, certificate = noisy_key_head(delta=1.0)
    z0 = stored_states(10, seed=4)
    z0[0, 0, SELECTION_CONFIG.stored_index(0)] = 1.5
    with pytest.raises(PreconditionError):
        check_selection_robustness(
            head, certificate, SELECTION_CONFIG, z0, 1, 2, RandomStreams(6).generator(StreamRole.PERTURBATION),
        )
