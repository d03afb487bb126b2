import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossreg.diagnostics import gradient_instance, gradient_relative_error
from crossreg.energy import (
    EnergyConfig,
    lcc_similarity_loss,
    smoothness_loss,
    total_loss,
    total_loss_gradient,
)
from crossreg.exceptions import ParameterError, ShapeError
from crossreg.volume import Volume
from crossreg.warp import DisplacementField, identity_grid


def brute_lcc(a, b, r):
    """Windowed squared Pearson correlation by explicit loops."""
    total = 0.0
    for idx in np.ndindex(a.shape):
        sl = tuple(slice(max(0, i - r), i + r + 1) for i in idx)
        x, y = a[sl].ravel(), b[sl].ravel()
        x, y = x - x.mean(), y - y.mean()
        vx, vy = np.dot(x, x), np.dot(y, y)
        if vx > 1e-12 * x.size and vy > 1e-12 * y.size:
            total += np.dot(x, y) ** 2 / (vx * vy)
    return -total / a.size


def test_lcc_matches_brute_force(rng):
    a, b = rng.random((7, 6, 5)), rng.random((7, 6, 5))
    assert lcc_similarity_loss(Volume(a), Volume(b), 2) == pytest.approx(brute_lcc(a, b, 2), abs=1e-12)
    assert lcc_similarity_loss(Volume(a), Volume(b), 1) == pytest.approx(brute_lcc(a, b, 1), abs=1e-12)


def test_lcc_self_similarity_is_minus_one(rng):
    a = Volume(rng.random((8, 8, 8)))
    assert lcc_similarity_loss(a, a) == pytest.approx(-1.0, abs=1e-12)


def test_lcc_affine_invariance(rng):
    a = rng.random((8, 8, 8))
    base = lcc_similarity_loss(Volume(a), Volume(a))
    assert abs(lcc_similarity_loss(Volume(a), Volume(2 * a + 3)) - base) < 1e-9
    b = rng.random((8, 8, 8))
    ref = lcc_similarity_loss(Volume(a), Volume(b))
    assert abs(lcc_similarity_loss(Volume(0.5 * a - 1), Volume(4 * b + 2)) - ref) < 1e-9


def test_lcc_independent_noise_is_small():
    rng = np.random.default_rng(7)
    a, b = Volume(rng.random((16, 16, 16))), Volume(rng.random((16, 16, 16)))
    value = lcc_similarity_loss(a, b)
    assert -0.2 < value <= 0


def test_lcc_flat_windows_contribute_zero():
    a = Volume(np.ones((6, 6, 6)))
    assert lcc_similarity_loss(a, a) == 0.0


def test_lcc_errors():
    with pytest.raises(ShapeError):
        lcc_similarity_loss(Volume(np.zeros((3, 3, 3))), Volume(np.zeros((4, 3, 3))))
    with pytest.raises(ParameterError):
        lcc_similarity_loss(Volume(np.zeros((3, 3, 3))), Volume(np.zeros((3, 3, 3))), radius=0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_lcc_range(seed):
    rng = np.random.default_rng(seed)
    value = lcc_similarity_loss(Volume(rng.random((5, 5, 5))), Volume(rng.random((5, 5, 5))))
    assert -1.0 - 1e-12 <= value <= 0.0


def test_smoothness_examples():
    assert smoothness_loss(DisplacementField.zeros((8, 8, 8))) == 0.0
    assert smoothness_loss(DisplacementField.constant((8, 8, 8), (1, 2, 3))) == 0.0
    u = np.zeros((8, 8, 8, 3))
    u[..., 0] = identity_grid((8, 8, 8))[..., 0]
    # oracle: sum over directions of the mean squared forward difference
    expected = 0.0
    for axis in range(3):
        d = np.diff(u, axis=axis)
        expected += np.mean(d ** 2)
    assert smoothness_loss(DisplacementField(u)) == pytest.approx(expected)
    assert expected == pytest.approx(1 / 3)


def test_smoothness_rejects_flat_axis():
    with pytest.raises(ShapeError):
        smoothness_loss(DisplacementField.zeros((1, 4, 4)))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_smoothness_nonnegative_and_zero_only_for_constants(seed):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(4, 4, 4, 3))
    assert smoothness_loss(DisplacementField(u)) > 0
    assert smoothness_loss(DisplacementField.constant((4, 4, 4), u[0, 0, 0])) == 0


def test_total_loss_identical_images(rng):
    img = Volume(rng.random((8, 8, 8)))
    zero = DisplacementField.zeros(img.dims)
    total, terms = total_loss(img, img, zero, zero, EnergyConfig())
    assert total == pytest.approx(1.2 * -2 + 0.6 * -2, abs=1e-12)
    assert terms["smooth"] == 0 and terms["smooth_down"] == 0


def test_total_loss_weight_masking(rng):
    f, m = Volume(rng.random((8, 8, 8))), Volume(rng.random((8, 8, 8)))
    u = DisplacementField(rng.normal(0, 0.5, (8, 8, 8, 3)))
    v = DisplacementField(rng.normal(0, 0.5, (8, 8, 8, 3)))
    total, terms = total_loss(f, m, u, v, EnergyConfig(1, 0, 0, 0))
    assert total == pytest.approx(terms["sim"])


def test_default_weights_are_the_published_magnitudes():
    cfg = EnergyConfig()
    assert (cfg.w_sim, cfg.w_sim_down, cfg.w_smooth, cfg.w_smooth_down) == (1.2, 0.6, 0.5, 0.25)


def test_energy_config_validation():
    with pytest.raises(ParameterError):
        EnergyConfig(w_sim=0, w_smooth=0)
    with pytest.raises(ParameterError):
        EnergyConfig(lcc_radius=0)
    with pytest.raises(ParameterError):
        EnergyConfig(down_factor=0)


def test_total_loss_shape_errors():
    a = Volume(np.zeros((4, 4, 4)))
    with pytest.raises(ShapeError):
        total_loss(a, a, DisplacementField.zeros((4, 4, 5)), DisplacementField.zeros((4, 4, 4)))


def test_total_loss_swap_symmetry(rng):
    f, m = Volume(rng.random((8, 8, 8))), Volume(rng.random((8, 8, 8)))
    u = DisplacementField(rng.normal(0, 0.7, (8, 8, 8, 3)))
    v = DisplacementField(rng.normal(0, 0.7, (8, 8, 8, 3)))
    assert total_loss(f, m, u, v)[0] == pytest.approx(total_loss(m, f, v, u)[0], abs=1e-12)


def test_gradient_zero_for_constant_images():
    img = Volume(np.full((6, 6, 6), 0.3))
    zero = DisplacementField.zeros(img.dims)
    gf, gb = total_loss_gradient(img, img, zero, zero)
    assert not gf.vectors.any() and not gb.vectors.any()


def test_smoothness_only_gradient_of_constant_field():
    img = Volume(np.random.default_rng(0).random((6, 6, 6)))
    c = DisplacementField.constant(img.dims, (0.3, -0.2, 0.1))
    gf, gb = total_loss_gradient(img, img, c, c, EnergyConfig(0, 0, 0.5, 0.25))
    assert np.allclose(gf.vectors, 0, atol=1e-15) and np.allclose(gb.vectors, 0, atol=1e-15)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradient_matches_central_differences(seed):
    cfg = EnergyConfig(lcc_radius=2)
    assert gradient_relative_error(*gradient_instance(seed), cfg=cfg, step=1e-3) < 1e-4


@pytest.mark.parametrize("seed", [0, 3])
def test_gradient_default_radius_with_fine_step(seed):
    # radius 1 is the default; its truncation error needs the smaller step
    assert gradient_relative_error(*gradient_instance(seed), step=1e-4) < 1e-4


def test_gradient_check_detects_a_perturbed_gradient(monkeypatch):
    import crossreg.energy as energy

    original = energy._smooth

    def flipped(u, grad=False):
        if not grad:
            return original(u)
        value, g = original(u, grad=True)
        return value, -g

    monkeypatch.setattr(energy, "_smooth", flipped)
    assert gradient_relative_error(*gradient_instance(0)) > 1e-2
