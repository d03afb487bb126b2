import numpy as np
import pytest

from crossreg.exceptions import NumericalFailure, ParameterError, ShapeError
from crossreg.solver import (
    TRACE_COLUMNS,
    SolverConfig,
    inverse_consistency_loss,
    register,
    write_trace_csv,
)
from crossreg.volume import Volume
from crossreg.warp import DisplacementField, identity_grid


def smooth_image(dims, shift=(0.0, 0.0, 0.0)):
    """Analytic smooth test image sampled at ``p - shift``."""
    p = identity_grid(dims) - np.asarray(shift)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    c = (np.asarray(dims) - 1) / 2.0
    blob = np.exp(-(((x - c[0]) / 7) ** 2 + ((y - c[1]) / 6) ** 2 + ((z - c[2]) / 5) ** 2))
    waves = 0.15 * np.sin(0.45 * x + 0.3) * np.cos(0.35 * y) * np.sin(0.4 * z + 1.0)
    return Volume(0.3 + 0.4 * blob + waves)


def trace_is_monotone_per_level(trace):
    for a, b in zip(trace, trace[1:]):
        if a.level == b.level and b.total > a.total:
            return False
    return True


@pytest.fixture(scope="module")
def self_registration():
    img = smooth_image((32, 32, 32))
    return register(img, img, SolverConfig(iters_per_level=30))


def test_self_registration_stays_near_zero(self_registration):
    res = self_registration
    assert np.mean(res.phi_fwd.magnitude()) < 0.1
    assert np.mean(res.phi_bwd.magnitude()) < 0.1
    assert res.loss_trace[-1].total <= res.loss_trace[0].total
    assert res.loss_trace[-1].smooth <= 1e-3
    assert res.jacobian_positive_fraction == 1.0


def test_trace_records_are_monotone_within_levels(self_registration):
    assert trace_is_monotone_per_level(self_registration.loss_trace)
    assert {r.level for r in self_registration.loss_trace} == {0, 1, 2}


def test_translation_is_recovered():
    c = (2.0, 0.0, 0.0)
    fixed = smooth_image((32, 32, 32))
    moving = smooth_image((32, 32, 32), shift=c)
    res = register(fixed, moving, SolverConfig(iters_per_level=60))
    epe = np.linalg.norm(res.phi_fwd.vectors - np.asarray(c), axis=-1).mean()
    assert epe < 0.5
    assert trace_is_monotone_per_level(res.loss_trace)


def test_vanishing_step_leaves_fields_at_zero():
    img = smooth_image((16, 16, 16))
    moving = smooth_image((16, 16, 16), shift=(1, 0, 0))
    res = register(img, moving, SolverConfig(n_levels=1, iters_per_level=1, step_size=1e-12))
    assert np.max(np.abs(res.phi_fwd.vectors)) <= 1e-12
    assert np.max(np.abs(res.phi_bwd.vectors)) <= 1e-12


def test_register_dims_mismatch():
    with pytest.raises(ShapeError):
        register(Volume(np.zeros((8, 8, 8))), Volume(np.zeros((8, 8, 9))))


def test_register_numerical_failure_carries_trace(monkeypatch):
    import crossreg.solver as solver

    calls = {"n": 0}
    original = solver._energy

    def poisoned(*args, **kwargs):
        calls["n"] += 1
        out = original(*args, **kwargs)
        if calls["n"] > 3:
            return (np.nan,) + tuple(out[1:])
        return out

    monkeypatch.setattr(solver, "_energy", poisoned)
    img = smooth_image((16, 16, 16))
    with pytest.raises(NumericalFailure) as info:
        register(img, smooth_image((16, 16, 16), shift=(1, 0, 0)), SolverConfig(n_levels=1))
    assert len(info.value.trace) >= 1
    assert info.value.phi_fwd is not None


def test_solver_config_validation():
    with pytest.raises(ParameterError):
        SolverConfig(n_levels=0)
    with pytest.raises(ParameterError):
        SolverConfig(iters_per_level=0)
    with pytest.raises(ParameterError):
        SolverConfig(step_size=0)
    with pytest.raises(ParameterError):
        SolverConfig(step_shrink=1.0)


def test_inverse_consistency_examples():
    dims = (8, 8, 8)
    zero = DisplacementField.zeros(dims)
    assert inverse_consistency_loss(zero, zero) == 0.0
    c = np.array([1.0, -0.5, 0.25])
    fwd = DisplacementField.constant(dims, c)
    assert inverse_consistency_loss(fwd, DisplacementField.constant(dims, -c)) == pytest.approx(0.0, abs=1e-24)
    assert inverse_consistency_loss(fwd, zero) == pytest.approx(np.dot(c, c))
    with pytest.raises(ShapeError):
        inverse_consistency_loss(zero, DisplacementField.zeros((8, 8, 7)))


def test_trace_csv_layout(tmp_path, self_registration):
    path = tmp_path / "trace.csv"
    write_trace_csv(self_registration.loss_trace, path)
    lines = path.read_bytes().split(b"\n")
    assert lines[0].decode() == ",".join(TRACE_COLUMNS)
    assert b"\r" not in path.read_bytes()
    assert len([ln for ln in lines if ln]) == len(self_registration.loss_trace) + 1
