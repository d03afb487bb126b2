"""Command-line entry point: phantom | register | propagate | evaluate | selftest.

Exit codes: 0 success, 1 selftest failure, 2 input or config error,
3 numerical failure (artifacts written so far are kept).
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

import numpy as np

from . import io
from .config import load_config
from .exceptions import CrossRegError, NumericalFailure, ParameterError, ShapeError
from .metrics import dice_coefficient, jaccard, localization_hit, median_score, mutual_information
from .phantom import generate_pair, intensity_baseline_segment
from .solver import register, write_trace_csv
from .volume import LabelMask, Volume, minmax_normalize, resample_to_spacing, window_level
from .warp import jacobian_determinant, warp_label

logger = logging.getLogger("crossreg")

EXIT_OK, EXIT_SELFTEST, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2, 3

PHANTOM_FILES = {
    "mod_a": "mod_a.nii",
    "mod_b": "mod_b.nii",
    "label_a": "label_a.nii",
    "label_b_oracle": "label_b_oracle.nii",
    "organ_b": "organ_b.nii",
    "phi_true": "phi_true.dfield",
}
REGISTER_FILES = {
    "phi_fwd": "phi_fwd.dfield",
    "phi_bwd": "phi_bwd.dfield",
    "trace": "loss_trace.csv",
    "jacobian": "jacobian.nii",
    "summary": "register_summary.txt",
}
PSEUDO_LABEL = "pseudo_label.nii"
GRID_LABEL = "moving_label_grid.nii"
REPORT = "report.csv"


def _out(cfg, name):
    return os.path.join(cfg.out_dir, name)


def _write_summary(path, values):
    with open(path, "w") as fh:
        for key, value in values.items():
            fh.write(f"{key} = {value}\n")


def _phantom_files_present(cfg):
    return all(os.path.exists(_out(cfg, f)) for f in PHANTOM_FILES.values())


def cmd_phantom(cfg):
    """Generate the phantom pair and write the six outputs plus a manifest."""
    spec = cfg.phantom
    if spec is None:
        raise ParameterError("the phantom command needs a 'phantom' section in the config")
    spec.validate()
    io.ensure_dir(cfg.out_dir)
    pair = generate_pair(spec)
    for key, name in PHANTOM_FILES.items():
        obj = getattr(pair, key)
        if key == "phi_true":
            io.write_field(obj, _out(cfg, name))
        else:
            io.write_nifti(obj, _out(cfg, name))
    with open(_out(cfg, "manifest.csv"), "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["name", "path", "seed"])
        for key, name in PHANTOM_FILES.items():
            writer.writerow([key, name, spec.seed])
    print(f"phantom written to {cfg.out_dir} (seed {spec.seed})")
    return EXIT_OK


def _ensure_phantom(cfg):
    if not _phantom_files_present(cfg):
        logger.info("phantom files missing in %s; generating them", cfg.out_dir)
        cmd_phantom(cfg)


def _fit_to_dims(vol, dims):
    """Zero-pad or crop ``vol`` at the high end of each axis to ``dims``."""
    if vol.dims == tuple(dims):
        return vol
    out = np.zeros(dims, dtype=vol.data.dtype)
    n = [min(a, b) for a, b in zip(vol.dims, dims)]
    out[: n[0], : n[1], : n[2]] = vol.data[: n[0], : n[1], : n[2]]
    return type(vol)(out, vol.spacing, vol.origin)


def _preprocess(cfg, fixed, moving):
    pre = cfg.preprocess
    ct = cfg.inputs.ct if cfg.inputs is not None else "fixed"
    if pre.window and ct == "fixed":
        fixed = window_level(fixed, pre.level, pre.width)
    if pre.window and ct == "moving":
        moving = window_level(moving, pre.level, pre.width)
    target = tuple(pre.target_spacing) if pre.target_spacing else fixed.spacing
    fixed = resample_to_spacing(fixed, target)
    moving = _fit_to_dims(resample_to_spacing(moving, target), fixed.dims)
    if pre.normalize:
        fixed, moving = minmax_normalize(fixed), minmax_normalize(moving)
    return fixed, moving, target


def _register_inputs(cfg):
    if cfg.is_phantom:
        _ensure_phantom(cfg)
        fixed = io.read_nifti(_out(cfg, PHANTOM_FILES["mod_b"]))
        moving = io.read_nifti(_out(cfg, PHANTOM_FILES["mod_a"]))
        label = _out(cfg, PHANTOM_FILES["label_a"])
        truth = _out(cfg, PHANTOM_FILES["phi_true"])
        return fixed, moving, label, truth
    paths = cfg.inputs
    fixed = io.read_nifti(paths.fixed)
    moving = io.read_nifti(paths.moving)
    return fixed, moving, paths.moving_label, paths.true_field


def cmd_register(cfg):
    """Preprocess, register, and write fields, trace, Jacobian map and summary."""
    fixed, moving, label_path, truth_path = _register_inputs(cfg)
    fixed, moving, spacing = _preprocess(cfg, fixed, moving)
    io.ensure_dir(cfg.out_dir)
    if label_path and not cfg.is_phantom:
        label = io.read_nifti(label_path, as_label=True)
        grid = resample_to_spacing(Volume(label.data.astype(np.float64), label.spacing, label.origin), spacing)
        grid = _fit_to_dims(grid, fixed.dims)
        io.write_nifti(LabelMask((grid.data >= 0.5).astype(np.uint8), grid.spacing, grid.origin),
                       _out(cfg, GRID_LABEL))

    try:
        result = register(fixed, moving, cfg.solver)
    except NumericalFailure as exc:
        logger.error("numerical failure: %s", exc)
        write_trace_csv(exc.trace, _out(cfg, REGISTER_FILES["trace"]))
        if exc.phi_fwd is not None:
            io.write_field(exc.phi_fwd, _out(cfg, REGISTER_FILES["phi_fwd"]))
            io.write_field(exc.phi_bwd, _out(cfg, REGISTER_FILES["phi_bwd"]))
        _write_summary(_out(cfg, REGISTER_FILES["summary"]), {"status": "numerical_failure", "message": exc})
        print(f"numerical failure: {exc}")
        return EXIT_NUMERICAL

    io.write_field(result.phi_fwd, _out(cfg, REGISTER_FILES["phi_fwd"]))
    io.write_field(result.phi_bwd, _out(cfg, REGISTER_FILES["phi_bwd"]))
    write_trace_csv(result.loss_trace, _out(cfg, REGISTER_FILES["trace"]))
    jac = jacobian_determinant(result.phi_fwd)
    io.write_nifti(Volume(jac.data, fixed.spacing, fixed.origin), _out(cfg, REGISTER_FILES["jacobian"]))

    summary = {
        "status": "converged" if result.converged else "iteration_budget_exhausted",
        "accepted_steps": result.loss_trace[-1].iteration,
        "final_total": repr(result.loss_trace[-1].total),
        "mean_displacement": f"{np.mean(result.phi_fwd.magnitude()):.6f}",
        "jacobian_positive_fraction": f"{result.jacobian_positive_fraction:.6f}",
    }
    if truth_path and os.path.exists(truth_path):
        truth = io.read_field(truth_path)
        if truth.dims == result.phi_fwd.dims:
            epe = np.linalg.norm(result.phi_fwd.vectors - truth.vectors, axis=-1).mean()
            summary["endpoint_error"] = f"{epe:.6f}"
        else:
            logger.warning("true field dims %s differ from the registration grid %s; EPE skipped",
                           truth.dims, result.phi_fwd.dims)
    _write_summary(_out(cfg, REGISTER_FILES["summary"]), summary)
    for key, value in summary.items():
        print(f"{key}: {value}")
    return EXIT_OK


def cmd_propagate(cfg):
    """Warp the moving-frame label through the forward field."""
    field_path = cfg.propagate.field or _out(cfg, REGISTER_FILES["phi_fwd"])
    if cfg.propagate.label:
        label_path = cfg.propagate.label
    elif cfg.is_phantom:
        _ensure_phantom(cfg)
        label_path = _out(cfg, PHANTOM_FILES["label_a"])
    elif os.path.exists(_out(cfg, GRID_LABEL)):
        label_path = _out(cfg, GRID_LABEL)
    else:
        label_path = cfg.inputs.moving_label
    if not label_path:
        raise ParameterError("no moving label configured (inputs.moving_label or propagate.label)")
    field = io.read_field(field_path)
    try:
        label = io.read_nifti(label_path, as_label=True)
    except ParameterError as exc:
        raise ParameterError(f"label is not binary: {exc}") from None
    if label.dims != field.dims:
        raise ShapeError(f"label dims {label.dims} differ from field dims {field.dims}")
    pseudo = warp_label(label, field)
    io.ensure_dir(cfg.out_dir)
    io.write_nifti(pseudo, _out(cfg, PSEUDO_LABEL))
    print(f"pseudo-label written: {pseudo.count} foreground voxels")
    return EXIT_OK


def _evaluate_paths(cfg):
    ev = cfg.evaluate
    if cfg.is_phantom:
        _ensure_phantom(cfg)
        defaults = (PHANTOM_FILES["label_b_oracle"], PHANTOM_FILES["mod_b"], PHANTOM_FILES["organ_b"])
        oracle, intensity, roi = (_out(cfg, name) for name in defaults)
    else:
        oracle, intensity, roi = cfg.inputs.fixed_label, cfg.inputs.fixed, ""
    return (
        ev.prediction or _out(cfg, PSEUDO_LABEL),
        ev.oracle or oracle,
        ev.intensity or intensity,
        ev.roi or roi,
    )


def _case_row(experiment, name, pred, oracle, mi):
    d, j = dice_coefficient(pred, oracle), jaccard(pred, oracle)
    hit = localization_hit(pred, oracle)
    return io.ReportRow(experiment, name, 1, d, d, d, j, j, j, int(hit), mi)


def _median_row(name, rows):
    dice = [r.dice_median for r in rows]
    jac = [r.jaccard_median for r in rows]
    return io.ReportRow("median", name, len(rows), median_score(dice), min(dice), max(dice),
                        median_score(jac), min(jac), max(jac),
                        sum(r.localization_hits for r in rows), median_score(r.mi_bits for r in rows))


def cmd_evaluate(cfg):
    """Score predictions against the oracle and write the report and slices."""
    pred_path, oracle_path, intensity_path, roi_path = _evaluate_paths(cfg)
    if not oracle_path:
        raise ParameterError("no oracle label configured (inputs.fixed_label or evaluate.oracle)")
    oracle = io.read_nifti(oracle_path, as_label=True)
    predictions = {"pseudo_label": io.read_nifti(pred_path, as_label=True)}
    intensity = io.read_nifti(intensity_path) if intensity_path else None
    roi = io.read_nifti(roi_path, as_label=True) if roi_path else None
    for item in [*predictions.values(), intensity, roi]:
        if item is not None and item.dims != oracle.dims:
            raise ShapeError(f"grid {item.dims} does not match the oracle grid {oracle.dims}")
    if intensity is not None and roi is not None:
        predictions["intensity_baseline"] = intensity_baseline_segment(intensity, roi)

    mi = float("nan")
    if intensity is not None:
        mi = mutual_information(minmax_normalize(intensity), oracle, cfg.evaluate.n_bins, roi)
    experiment = cfg.evaluate.experiment
    rows = [_case_row(experiment, name, pred, oracle, mi) for name, pred in predictions.items()]
    rows += [_median_row(r.combination, [r]) for r in list(rows)]
    io.ensure_dir(cfg.out_dir)
    io.write_report(rows, _out(cfg, REPORT))

    if cfg.evaluate.slices and intensity is not None and oracle.count:
        z = int(np.floor(np.argwhere(oracle.as_bool()).mean(axis=0)[2] + 0.5))
        base = minmax_normalize(intensity)
        for name, pred in predictions.items():
            io.write_slice_image(base, 2, z, (oracle, pred), _out(cfg, f"slice_{name}.ppm"))

    for r in rows[: len(predictions)]:
        print(f"{r.combination}: dice {r.dice_median:.4f} jaccard {r.jaccard_median:.4f} "
              f"localized {bool(r.localization_hits)}")
    if intensity is not None:
        print(f"mutual information (intensity; oracle): {mi:.4f} bits")
    return EXIT_OK


def cmd_selftest(cfg=None):
    from .diagnostics import run_selftest

    failed = run_selftest()
    if failed:
        print("FAILED: " + ", ".join(failed))
        return EXIT_SELFTEST
    print("all selftest checks passed")
    return EXIT_OK


COMMANDS = {
    "phantom": cmd_phantom,
    "register": cmd_register,
    "propagate": cmd_propagate,
    "evaluate": cmd_evaluate,
    "selftest": cmd_selftest,
}


def build_parser():
    parser = argparse.ArgumentParser(prog="crossreg", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="key=value config file (required except for selftest)")
    parser.add_argument("--out", help="output directory, overrides output.dir")
    parser.add_argument("--seed", type=int, help="seed override for the phantom and solver")
    parser.add_argument("--verbose", action="store_true", help="log progress at INFO level")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "selftest":
        return cmd_selftest()
    if not args.config:
        print("error: --config is required for this command", file=sys.stderr)
        return EXIT_INPUT
    try:
        cfg = load_config(args.config, seed=args.seed, out_dir=args.out)
        return COMMANDS[args.command](cfg)
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CrossRegError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
