import filecmp

import numpy as np
import pytest

from crossreg import cli, io
from crossreg.config import load_config, parse_config
from crossreg.exceptions import ParameterError
from crossreg.volume import LabelMask, Volume
from crossreg.warp import DisplacementField

SMALL_PHANTOM = """\
# small phantom for fast runs
phantom.dims = 32,32,32
phantom.organ_center = 16,16,16
phantom.organ_semi_axes = 11,9,8
phantom.lesion_center = 16,16,16
phantom.lesion_radius = 5
phantom.deform_amplitude = 2.0
solver.iters_per_level = 40
"""


def write_config(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


@pytest.fixture(scope="module")
def pipeline_dir(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pipeline")
    cfg = write_config(tmp, SMALL_PHANTOM + f"output.dir = {tmp / 'out'}\n")
    codes = [cli.main([cmd, "--config", cfg]) for cmd in ("phantom", "register", "propagate", "evaluate")]
    return tmp, cfg, codes


def test_parse_config_sections():
    sections = parse_config("solver.n_levels = 2\n# c\n\nenergy.w_sim = 1.0 # x\n")
    assert sections == {"solver": {"n_levels": "2"}, "energy": {"w_sim": "1.0"}}
    with pytest.raises(ParameterError):
        parse_config("nosection = 1\n")
    with pytest.raises(ParameterError):
        parse_config("bogus.key = 1\n")
    with pytest.raises(ParameterError):
        parse_config("solver.n_levels = 1\nsolver.n_levels = 2\n")


def test_load_config_types_and_overrides(tmp_path):
    path = write_config(tmp_path, SMALL_PHANTOM + "energy.lcc_radius = 3\npreprocess.normalize = false\n")
    cfg = load_config(path, seed=9, out_dir="elsewhere")
    assert cfg.phantom.dims == (32, 32, 32) and cfg.phantom.seed == 9 and cfg.solver.seed == 9
    assert cfg.solver.energy.lcc_radius == 3 and cfg.solver.iters_per_level == 40
    assert cfg.preprocess.normalize is False and cfg.preprocess.window is False
    assert cfg.out_dir == "elsewhere"


def test_config_needs_exactly_one_input_kind(tmp_path):
    both = write_config(tmp_path, SMALL_PHANTOM + "inputs.fixed = a.nii\ninputs.moving = b.nii\n")
    with pytest.raises(ParameterError):
        load_config(both)
    neither = write_config(tmp_path, "solver.n_levels = 2\n", "n.cfg")
    with pytest.raises(ParameterError):
        load_config(neither)
    unknown = write_config(tmp_path, SMALL_PHANTOM + "solver.bogus = 1\n", "u.cfg")
    with pytest.raises(ParameterError):
        load_config(unknown)


def test_full_phantom_pipeline(pipeline_dir):
    tmp, _, codes = pipeline_dir
    assert codes == [0, 0, 0, 0]
    out = tmp / "out"
    expected = list(cli.PHANTOM_FILES.values()) + list(cli.REGISTER_FILES.values()) + [
        "manifest.csv", cli.PSEUDO_LABEL, cli.REPORT, "slice_pseudo_label.ppm"]
    for name in expected:
        assert (out / name).exists(), name
    rows = io.read_report(out / cli.REPORT)
    pseudo = [r for r in rows if r.combination == "pseudo_label" and r.experiment == "median"][0]
    assert pseudo.dice_median >= 0.8 and pseudo.localization_hits == 1
    summary = (out / "register_summary.txt").read_text()
    assert "endpoint_error" in summary
    epe = float(summary.split("endpoint_error = ")[1].split()[0])
    assert epe < 0.5


def test_phantom_is_deterministic(pipeline_dir, tmp_path):
    _, cfg, _ = pipeline_dir
    assert cli.main(["phantom", "--config", cfg, "--out", str(tmp_path / "again")]) == 0
    first = pipeline_dir[0] / "out"
    for name in list(cli.PHANTOM_FILES.values()) + ["manifest.csv"]:
        assert filecmp.cmp(first / name, tmp_path / "again" / name, shallow=False), name


def test_phantom_spec_violation_exits_2(tmp_path, capsys):
    text = SMALL_PHANTOM.replace("phantom.lesion_radius = 5", "phantom.lesion_radius = 9")
    cfg = write_config(tmp_path, text)
    assert cli.main(["phantom", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "lesion containment" in capsys.readouterr().err


def file_inputs(tmp_path, fixed, moving, label=None):
    io.write_nifti(fixed, tmp_path / "fixed.nii")
    io.write_nifti(moving, tmp_path / "moving.nii")
    text = f"inputs.fixed = {tmp_path / 'fixed.nii'}\ninputs.moving = {tmp_path / 'moving.nii'}\n"
    text += "inputs.ct = none\nsolver.iters_per_level = 20\n"
    if label is not None:
        io.write_nifti(label, tmp_path / "label.nii")
        text += f"inputs.moving_label = {tmp_path / 'label.nii'}\n"
    text += f"output.dir = {tmp_path / 'out'}\n"
    return write_config(tmp_path, text)


def smooth_volume(n=16):
    g = np.stack(np.meshgrid(*[np.arange(n)] * 3, indexing="ij"), axis=-1)
    blob = np.exp(-np.sum(((g - n / 2) / 4.0) ** 2, axis=-1))
    return Volume(0.2 + 0.5 * blob + 0.1 * np.sin(0.7 * g[..., 0]) * np.cos(0.5 * g[..., 1]))


def test_self_registration_command(tmp_path, capsys):
    img = smooth_volume()
    cfg = file_inputs(tmp_path, img, img)
    assert cli.main(["register", "--config", cfg]) == 0
    out = capsys.readouterr().out
    mean_u = float(out.split("mean_displacement: ")[1].split()[0])
    assert mean_u < 0.1


def test_missing_input_exits_2(tmp_path):
    cfg = write_config(tmp_path, f"inputs.fixed = {tmp_path / 'nope.nii'}\ninputs.moving = {tmp_path / 'nope.nii'}\n")
    assert cli.main(["register", "--config", cfg]) == 2
    assert cli.main(["register"]) == 2


def test_propagate_zero_field_and_non_binary_label(tmp_path, capsys):
    img = smooth_volume(8)
    label = LabelMask((img.data > 0.5).astype(np.uint8))
    cfg = file_inputs(tmp_path, img, img, label)
    io.ensure_dir(tmp_path / "out")
    io.write_field(DisplacementField.zeros(img.dims), tmp_path / "out" / "phi_fwd.dfield")
    assert cli.main(["propagate", "--config", cfg]) == 0
    assert np.array_equal(io.read_nifti(tmp_path / "out" / cli.PSEUDO_LABEL, as_label=True).data, label.data)
    io.write_nifti(Volume(label.data * 2.0), tmp_path / "label.nii")
    assert cli.main(["propagate", "--config", cfg]) == 2
    assert "binary" in capsys.readouterr().err


def test_propagate_with_true_field_matches_oracle(pipeline_dir, tmp_path):
    tmp, cfg, _ = pipeline_dir
    out = tmp / "out"
    extra = write_config(tmp_path, open(cfg).read() + f"propagate.field = {out / 'phi_true.dfield'}\n")
    assert cli.main(["propagate", "--config", extra, "--out", str(tmp_path / "p")]) == 0
    # phantom inputs are regenerated in the new out dir from the same seed
    pseudo = io.read_nifti(tmp_path / "p" / cli.PSEUDO_LABEL, as_label=True)
    oracle = io.read_nifti(out / "label_b_oracle.nii", as_label=True)
    assert np.array_equal(pseudo.data, oracle.data)


def test_evaluate_edge_cases(tmp_path):
    data = np.zeros((8, 8, 8), dtype=np.uint8)
    data[2:5, 2:5, 2:5] = 1
    oracle = LabelMask(data)
    io.write_nifti(oracle, tmp_path / "oracle.nii")
    io.write_nifti(oracle, tmp_path / "pred.nii")
    io.write_nifti(LabelMask(np.zeros((8, 8, 8))), tmp_path / "empty.nii")
    io.write_nifti(LabelMask(np.zeros((8, 8, 9))), tmp_path / "bad.nii")
    io.write_nifti(Volume(np.random.default_rng(0).random((8, 8, 8))), tmp_path / "img.nii")
    base = (f"inputs.fixed = {tmp_path / 'img.nii'}\ninputs.moving = {tmp_path / 'img.nii'}\n"
            f"evaluate.oracle = {tmp_path / 'oracle.nii'}\noutput.dir = {tmp_path / 'out'}\n")
    same = write_config(tmp_path, base + f"evaluate.prediction = {tmp_path / 'pred.nii'}\n", "a.cfg")
    assert cli.main(["evaluate", "--config", same]) == 0
    row = io.read_report(tmp_path / "out" / cli.REPORT)[0]
    assert row.dice_median == 1.0 and row.jaccard_median == 1.0 and row.localization_hits == 1
    empty = write_config(tmp_path, base + f"evaluate.prediction = {tmp_path / 'empty.nii'}\n", "b.cfg")
    assert cli.main(["evaluate", "--config", empty]) == 0
    row = io.read_report(tmp_path / "out" / cli.REPORT)[0]
    assert row.dice_median == 0.0 and row.localization_hits == 0
    bad = write_config(tmp_path, base + f"evaluate.prediction = {tmp_path / 'bad.nii'}\n", "c.cfg")
    assert cli.main(["evaluate", "--config", bad]) == 2


def test_numerical_failure_exits_3(tmp_path, monkeypatch):
    from crossreg.exceptions import NumericalFailure

    img = smooth_volume(8)
    cfg = file_inputs(tmp_path, img, img)

    def explode(*args, **kwargs):
        raise NumericalFailure("boom", [], DisplacementField.zeros((8, 8, 8)), DisplacementField.zeros((8, 8, 8)))

    monkeypatch.setattr(cli, "register", explode)
    assert cli.main(["register", "--config", cfg]) == 3
    assert (tmp_path / "out" / "phi_fwd.dfield").exists()
    assert (tmp_path / "out" / "loss_trace.csv").exists()


def test_selftest_passes_and_is_repeatable(capsys):
    assert cli.main(["selftest"]) == 0
    first = capsys.readouterr().out
    assert cli.main(["selftest"]) == 0
    assert capsys.readouterr().out == first


def test_selftest_names_the_gradient_check_on_sign_error(monkeypatch, capsys):
    import crossreg.energy as energy

    original = energy._smooth

    def flipped(u, grad=False):
        if not grad:
            return original(u)
        value, g = original(u, grad=True)
        return value, -g

    monkeypatch.setattr(energy, "_smooth", flipped)
    assert cli.main(["selftest"]) == 1
    out = capsys.readouterr().out
    assert "FAIL gradient check" in out and "FAILED: gradient check" in out
