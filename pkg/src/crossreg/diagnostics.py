"""Self-checks: finite-difference gradient test, loss identities, warp oracles.

The checks are plain functions returning ``(passed, detail)`` so they can be
run from the command line or from tests.
"""

from __future__ import annotations

import numpy as np

from .energy import EnergyConfig, _energy
from .metrics import SoftPrediction, dice_coefficient, jaccard, tversky_index
from .volume import LabelMask, Volume
from .warp import DisplacementField, jacobian_determinant, warp_image, warp_label

__all__ = [
    "gradient_instance",
    "gradient_relative_error",
    "GRADIENT_CHECK_CONFIG",
    "check_gradient",
    "check_loss_identities",
    "check_warp_oracles",
    "SELFTEST_CHECKS",
    "run_selftest",
]


def gradient_instance(seed, n=6):
    """Random images and fields for a gradient check on an ``n**3`` grid.

    The fields are constant on 2x2x2 blocks (plus a small jitter) with
    magnitudes chosen away from integer and half-integer values, so no
    sample point of the full or the downsampled level sits on a grid plane
    where the trilinear interpolant has a kink.
    """
    rng = np.random.default_rng(seed)
    fixed = rng.random((n, n, n))
    moving = rng.random((n, n, n))

    def field():
        shape = (n // 2,) * 3 + (3,)
        base = rng.uniform(0.45, 0.75, shape) * rng.choice([-1.0, 1.0], shape)
        base = np.where(rng.random(shape) < 0.5, base, np.sign(base) * (np.abs(base) + 0.8))
        u = base.repeat(2, 0).repeat(2, 1).repeat(2, 2)
        return u + rng.uniform(-0.05, 0.05, u.shape)

    return fixed, moving, field(), field()


def gradient_relative_error(fixed, moving, u_fwd, u_bwd, cfg=None, step=1e-3):
    """Largest componentwise relative gap between analytic and central-difference gradients.

    Each component's error is ``|g - fd| / max(|g|, |fd|)``; components where
    both are below ``1e-12`` count as exact.
    """
    cfg = cfg or EnergyConfig()
    u_fwd, u_bwd = u_fwd.copy(), u_bwd.copy()
    _, _, g_fwd, g_bwd = _energy(fixed, moving, u_fwd, u_bwd, cfg, grad=True)
    worst = 0.0
    for u, g in ((u_fwd, g_fwd), (u_bwd, g_bwd)):
        for idx in np.ndindex(u.shape):
            old = u[idx]
            u[idx] = old + step
            plus = _energy(fixed, moving, u_fwd, u_bwd, cfg)[0]
            u[idx] = old - step
            minus = _energy(fixed, moving, u_fwd, u_bwd, cfg)[0]
            u[idx] = old
            fd = (plus - minus) / (2.0 * step)
            scale = max(abs(fd), abs(g[idx]))
            if scale > 1e-12:
                worst = max(worst, abs(fd - g[idx]) / scale)
    return worst


#: Window radius for the step-1e-3 check.  The gradient code is the same for
#: every radius, but with 3**3 windows (clipped to 2**3 in corners) the
#: truncation error of a 1e-3 central difference exceeds 1e-4 of the smallest
#: gradient components; radius 1 is checked with a 1e-4 step instead.
GRADIENT_CHECK_CONFIG = EnergyConfig(lcc_radius=2)


def check_gradient(seeds=(0, 1), tol=1e-4):
    """Finite-difference check at step 1e-3 (radius 2) and at step 1e-4 (radius 1)."""
    coarse = max(gradient_relative_error(*gradient_instance(s), cfg=GRADIENT_CHECK_CONFIG, step=1e-3)
                 for s in seeds)
    fine = max(gradient_relative_error(*gradient_instance(s), cfg=EnergyConfig(lcc_radius=1), step=1e-4)
               for s in seeds)
    ok = coarse < tol and fine < tol
    return bool(ok), (f"max relative error {coarse:.3g} (radius 2, step 1e-3) and {fine:.3g} "
                      f"(radius 1, step 1e-4) over {len(seeds)} instances (tol {tol:g})")


def check_loss_identities(n_pairs=100, seed=0, tol=1e-12):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_pairs):
        p = rng.random((5, 5, 5))
        g = (rng.random((5, 5, 5)) < 0.4).astype(np.uint8)
        pred, gt = SoftPrediction(p), LabelMask(g)
        soft_dice = 2 * np.sum(p * g) / (p.sum() + g.sum())
        soft_jac = np.sum(p * g) / (p.sum() + g.sum() - np.sum(p * g))
        worst = max(worst, abs(tversky_index(pred, gt, 0.5, 0.5) - soft_dice))
        worst = max(worst, abs(tversky_index(pred, gt, 1.0, 1.0) - soft_jac))
        a = LabelMask((rng.random((5, 5, 5)) < 0.5).astype(np.uint8))
        j = jaccard(a, gt)
        worst = max(worst, abs(dice_coefficient(a, gt) - 2 * j / (1 + j)))
    return bool(worst < tol), f"max deviation {worst:.3g} over {n_pairs} pairs"


def check_warp_oracles():
    rng = np.random.default_rng(0)
    img = Volume(rng.random((8, 8, 8)))
    zero = DisplacementField.zeros(img.dims)
    if not np.array_equal(warp_image(img, zero).data, img.data):
        return False, "zero-field warp is not the identity"
    shifted = np.zeros_like(img.data)
    shifted[2:, 1:, :] = img.data[:-2, :-1, :]
    out = warp_image(Volume(shifted), DisplacementField.constant(img.dims, (2, 1, 0)))
    if not np.array_equal(out.data[:-2, :-1, :], img.data[:-2, :-1, :]):
        return False, "integer translation not recovered"
    mask = LabelMask((img.data > 0.5).astype(np.uint8))
    if not np.array_equal(warp_label(mask, zero).data, mask.data):
        return False, "zero-field label warp is not the identity"
    grid = np.stack(np.meshgrid(*[np.arange(8.0)] * 3, indexing="ij"), axis=-1)
    det = jacobian_determinant(DisplacementField(0.1 * grid)).data[1:-1, 1:-1, 1:-1]
    if np.max(np.abs(det - 1.331)) > 1e-9:
        return False, f"jacobian of 0.1*p deviates from 1.331 by {np.max(np.abs(det - 1.331)):.3g}"
    return True, "identity, translation and jacobian oracles hold"


SELFTEST_CHECKS = (
    ("gradient check", check_gradient),
    ("loss identities", check_loss_identities),
    ("warp oracles", check_warp_oracles),
)


def run_selftest(emit=print):
    """Run every check, emit one line each, return the names of failures."""
    failed = []
    for name, check in SELFTEST_CHECKS:
        try:
            ok, detail = check()
        except Exception as exc:  # a crashing check is a failing check
            ok, detail = False, f"raised {type(exc).__name__}: {exc}"
        emit(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
        if not ok:
            failed.append(name)
    return failed
