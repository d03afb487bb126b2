"""Line-oriented ``section.key = value`` pipeline configuration.

Example::

    # phantom run
    output.dir = runs/demo
    phantom.seed = 3
    phantom.deform_amplitude = 2.0
    solver.iters_per_level = 60
    energy.lcc_radius = 2

Blank lines and ``#`` comments are ignored.  Tuples are written as
comma-separated numbers and booleans as ``true``/``false``.  Known sections:
``output``, ``inputs``, ``phantom``, ``preprocess``, ``solver``, ``energy``,
``tversky``, ``propagate``, ``evaluate``.  A config describes either file
inputs (``inputs.fixed`` and ``inputs.moving``) or a phantom, never both.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from .energy import EnergyConfig
from .exceptions import ParameterError
from .metrics import TverskyParams
from .phantom import PhantomSpec
from .solver import SolverConfig

__all__ = ["parse_config", "load_config", "PipelineConfig", "InputPaths", "PreprocessConfig"]

_SECTIONS = ("output", "inputs", "phantom", "preprocess", "solver", "energy", "tversky",
             "propagate", "evaluate")


def parse_config(text, source="<config>"):
    """Parse config text into ``{section: {key: raw string}}``."""
    sections = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ParameterError(f"{source}:{line_no}: expected 'section.key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if "." not in key:
            raise ParameterError(f"{source}:{line_no}: key {key!r} has no section prefix")
        section, name = key.split(".", 1)
        if section not in _SECTIONS:
            raise ParameterError(f"{source}:{line_no}: unknown section {section!r}")
        if name in sections.get(section, {}):
            raise ParameterError(f"{source}:{line_no}: duplicate key {key!r}")
        sections.setdefault(section, {})[name] = value
    return sections


def _convert(text, default, key):
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"not a boolean: {text!r}")
            return lowered in ("true", "1", "yes")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            kind = type(default[0]) if default else float
            return tuple(kind(v) for v in text.split(","))
    except ValueError as exc:
        raise ParameterError(f"{key}: {exc}") from None
    return text


def _build(cls, values, section, **extra):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = dict(extra)
    for name, text in values.items():
        if name not in known or name in extra:
            raise ParameterError(f"unknown key {section}.{name}")
        f = known[name]
        default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        kwargs[name] = _convert(text, default, f"{section}.{name}")
    return cls(**kwargs)


@dataclass(frozen=True)
class InputPaths:
    fixed: str = ""
    moving: str = ""
    moving_label: str = ""
    fixed_label: str = ""
    true_field: str = ""
    ct: str = "fixed"


@dataclass(frozen=True)
class PreprocessConfig:
    window: bool = True
    level: float = 50.0
    width: float = 350.0
    target_spacing: tuple = ()
    normalize: bool = True


@dataclass(frozen=True)
class PropagateConfig:
    field: str = ""
    label: str = ""


@dataclass(frozen=True)
class EvaluateConfig:
    prediction: str = ""
    oracle: str = ""
    intensity: str = ""
    roi: str = ""
    experiment: str = "case"
    n_bins: int = 32
    slices: bool = True


@dataclass(frozen=True)
class PipelineConfig:
    out_dir: str = "crossreg_out"
    inputs: InputPaths | None = None
    phantom: PhantomSpec | None = None
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    tversky: TverskyParams = field(default_factory=TverskyParams)
    propagate: PropagateConfig = field(default_factory=PropagateConfig)
    evaluate: EvaluateConfig = field(default_factory=EvaluateConfig)

    @property
    def is_phantom(self):
        return self.phantom is not None

    @classmethod
    def from_sections(cls, sections, seed=None, out_dir=None):
        has_inputs = bool(sections.get("inputs"))
        has_phantom = "phantom" in sections
        if has_inputs == has_phantom:
            raise ParameterError("config needs exactly one of an 'inputs' section or a 'phantom' section")
        phantom_values = dict(sections.get("phantom", {}))
        solver_values = dict(sections.get("solver", {}))
        if seed is not None:
            solver_values["seed"] = str(seed)
            if has_phantom:
                phantom_values["seed"] = str(seed)
        inputs = phantom = None
        if has_inputs:
            inputs = _build(InputPaths, sections["inputs"], "inputs")
            if not inputs.fixed or not inputs.moving:
                raise ParameterError("inputs.fixed and inputs.moving are both required")
            if inputs.ct not in ("fixed", "moving", "none"):
                raise ParameterError(f"inputs.ct must be fixed, moving or none, got {inputs.ct!r}")
        else:
            phantom = PhantomSpec.from_dict(
                {k: _convert(v, getattr(PhantomSpec, k, None), f"phantom.{k}")
                 if hasattr(PhantomSpec, k) else v for k, v in phantom_values.items()})
        pre_values = dict(sections.get("preprocess", {}))
        if has_phantom:
            # phantom intensities are already on [0, 1]; CT windowing does not apply
            pre_values.setdefault("window", "false")
        energy = _build(EnergyConfig, sections.get("energy", {}), "energy")
        solver = _build(SolverConfig, solver_values, "solver", energy=energy)
        return cls(
            out_dir=out_dir or sections.get("output", {}).get("dir", "crossreg_out"),
            inputs=inputs,
            phantom=phantom,
            preprocess=_build(PreprocessConfig, pre_values, "preprocess"),
            solver=solver,
            tversky=_build(TverskyParams, sections.get("tversky", {}), "tversky"),
            propagate=_build(PropagateConfig, sections.get("propagate", {}), "propagate"),
            evaluate=_build(EvaluateConfig, sections.get("evaluate", {}), "evaluate"),
        )


def load_config(path, seed=None, out_dir=None):
    with open(path) as fh:
        text = fh.read()
    sections = parse_config(text, source=str(path))
    unknown_output = set(sections.get("output", {})) - {"dir"}
    if unknown_output:
        raise ParameterError(f"unknown output keys: {sorted(unknown_output)}")
    return PipelineConfig.from_sections(sections, seed=seed, out_dir=out_dir)
