import numpy as np
import pytest

from koopman_bilin.bilinearize import (
    bilinearize, feedback_transform, parameter_independence, simulate_bilinear,
)
from koopman_bilin.errors import CertificateNotIsomorphic, ConditionFailed
from koopman_bilin.flow import sample_box
from koopman_bilin.linearize import evaluate_conjugacy
from koopman_bilin.polyfield import Box, ControlAffineSystem, PolyMap, example_system, materialize

SCHEDULE = [(0.0, [0.4]), (1.0, [-0.3])]


@pytest.fixture(scope="module")
def model():
    return bilinearize(example_system(1.0), k=5)


def test_example_model_matrices(model):
    np.testing.assert_array_equal(model.A, -np.eye(2))
    np.testing.assert_array_equal(model.B[0], [[0.0, 0.0], [0.0, 1.0]])
    assert model.certificate.isomorphic
    assert model.residual < 1e-12


def test_example_map_is_exact(model):
    psi = model.psi.psi_poly
    want = PolyMap.from_terms(2, [(0, (1, 0), 1.0), (1, (0, 1), 1.0), (1, (2, 0), 1.0)])
    assert (psi - want).is_zero(1e-12)


def test_generator_matches_jacobian_of_frozen_field(model):
    sys = example_system(1.0)
    for u in (-0.7, 0.0, 0.45):
        from koopman_bilin.polyfield import linear_part
        np.testing.assert_allclose(model.generator([u]), linear_part(materialize(sys, [u])))


def test_paired_simulation(model):
    sim = simulate_bilinear(model, example_system(1.0), [0.5, 0.2], SCHEDULE, 3.0)
    assert sim.max_error < 1e-6
    assert sim.times[0] == 0 and sim.times[-1] == 3.0


def test_paired_simulation_csv(model, tmp_path):
    sim = simulate_bilinear(model, example_system(1.0), [0.3, -0.1], SCHEDULE, 2.0, n_grid=21)
    path = tmp_path / "err.csv"
    sim.write_csv(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,err" and len(lines) == 22


def test_eigenfunctions_independent_of_input(model):
    X = sample_box(Box.symmetric(2, 0.8), 30)
    for u in (-0.5, 0.3):
        assert np.max(parameter_independence(model, example_system(1.0), [u], X)) < 1e-12


def test_model_consistency_identity(model):
    # D psi . (F + u G) = (A + u B) psi on samples
    sys = example_system(1.0)
    X = sample_box(Box.symmetric(2, 0.8), 25)
    from koopman_bilin.polyfield import evaluate, jacobian_at
    P = evaluate(model.psi.psi_poly, X)
    J = jacobian_at(model.psi.psi_poly, X)
    for u in (-0.4, 0.6):
        lhs = np.einsum("nij,nj->ni", J, evaluate(materialize(sys, [u]), X))
        rhs = P @ model.generator([u]).T
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_mismatched_example_rejected():
    with pytest.raises(CertificateNotIsomorphic) as info:
        bilinearize(example_system(2.0))
    assert info.value.detail["witness"] == "[g0,g1]"
    assert info.value.exit_status == 2


def test_forced_model_on_mismatched_example_is_inaccurate():
    sys = example_system(2.0)
    model = bilinearize(sys, ignore_certificate=True)
    assert model.residual > 0.1
    sim = simulate_bilinear(model, sys, [0.5, 0.2], SCHEDULE, 3.0)
    assert sim.max_error > 1e-3


def test_no_inputs_degenerates_to_linearization():
    sys = example_system(2.0)
    bare = ControlAffineSystem(sys.drift, (), sys.domain)
    model = bilinearize(bare)
    assert model.B == ()
    X = sample_box(Box.symmetric(2, 0.5), 10)
    np.testing.assert_allclose(evaluate_conjugacy(model.psi, bare.drift, X, T=0.0),
                               evaluate_conjugacy(model.psi, bare.drift, X), atol=1e-10)
    sim = simulate_bilinear(model, bare, [0.4, -0.3], [(0.0, [])], 2.0)
    assert sim.max_error < 1e-8


def test_unstable_drift_rejected():
    f = PolyMap.linear(np.diag([-1.0, 0.5]))
    with pytest.raises(ConditionFailed):
        bilinearize(ControlAffineSystem(f, (PolyMap.linear(np.eye(2)),)))


def test_resonant_drift_rejected():
    f = PolyMap.from_terms(2, [(0, (1, 0), -1.0), (1, (0, 1), -2.0), (1, (2, 0), 1.0)])
    with pytest.raises(ConditionFailed):
        bilinearize(ControlAffineSystem(f, (PolyMap.linear(np.diag([0.0, 1.0])),)))


def test_schedule_must_start_at_zero(model):
    with pytest.raises(ValueError):
        simulate_bilinear(model, example_system(1.0), [0.1, 0.1], [(0.5, [0.1])], 1.0)


def test_feedback_transform_not_supported():
    with pytest.raises(NotImplementedError):
        feedback_transform()


def test_serialisation(model):
    d = model.to_dict()
    assert d["certificate"]["verdict"] == "isomorphic"
    assert d["B"] == [[[0.0, 0.0], [0.0, 1.0]]]
