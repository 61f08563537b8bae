"""Run configuration: YAML documents validated in full before any computation.

A configuration is a nested mapping.  Unknown keys are errors, and
validation collects every problem it finds instead of stopping at the first
one.  Example::

    command: picard
    kernel: {family: constant}
    grid: {x_min: 1.0e-4, x_max: 30.0, cells_per_decade: 24}
    output: runs/picard
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import ConfigurationError
from .kernels import KernelSpec, check_admissibility, check_sigma_rule, make_kernel, singularity_exponent

COMMANDS = ("evolve", "steady", "cascade", "picard", "diagnose", "verify-characteristics")
PROFILE_COMMANDS = ("steady", "cascade", "picard")

# allowed keys per block; ``None`` marks a scalar top-level key
SCHEMA: dict[str, Optional[set]] = {
    "command": None,
    "output": None,
    "seed": None,
    "workers": None,
    "kernel": {"family", "a_exp", "b_exp", "gamma", "lam"},
    "grid": {"x_min", "x_max", "n_cells", "cells_per_decade"},
    "truncation": {"epsilon", "a", "R", "A", "sigma", "band"},
    "cascade": {"epsilon", "a", "R", "A", "sigma", "band", "tol", "cells_per_decade", "x_max_factor"},
    "integrator": {"mode", "t_end", "checkpoints", "dt_max", "safety", "tol", "max_steps"},
    "picard": {"damping", "tol", "ghost_decades", "max_sweeps"},
    "diagnostics": {"profile", "flux", "smallz_window", "plateau_window", "weak", "strong",
                    "collapse_window", "tail_window"},
    "characteristics": {"epsilon", "samples", "tau_max"},
    "acceptance": {"plateau_band", "smallz_tol", "tail_r2", "weak_residual", "collapse",
                   "max_mass", "semigroup", "merge", "change_of_variables"},
}


class ConfigErrors(ConfigurationError):
    """Every violation found in one configuration document."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.errors))


@dataclass
class RunConfig:
    command: str
    kernel: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    truncation: dict = field(default_factory=dict)
    cascade: dict = field(default_factory=dict)
    integrator: dict = field(default_factory=dict)
    picard: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    characteristics: dict = field(default_factory=dict)
    acceptance: dict = field(default_factory=dict)
    output: Optional[str] = None
    seed: int = 0
    workers: int = 1
    source: Optional[str] = None

    def kernel_spec(self) -> KernelSpec:
        return build_kernel(self.kernel)

    def echo(self) -> dict:
        """Plain-data copy of the configuration (for the manifest)."""
        out = {"command": self.command, "seed": self.seed, "workers": self.workers, "output": self.output}
        for name in SCHEMA:
            block = getattr(self, name, None)
            if isinstance(block, dict) and block:
                out[name] = dict(sorted(block.items()))
        return out


def build_kernel(block: dict) -> KernelSpec:
    """Kernel from a config block.

    ``family: custom`` means the envelope kernel
    ``x^(gamma+lam) y^-lam + y^(gamma+lam) x^-lam`` with the given exponents.
    """
    fam = block.get("family")
    if fam == "custom":
        g, lam = float(block["gamma"]), float(block["lam"])
        return KernelSpec("custom", g, lam, 1.0, 1.0,
                          shape=lambda s, g=g, lam=lam: s ** (g + lam) * (1 - s) ** -lam
                          + (1 - s) ** (g + lam) * s ** -lam)
    return make_kernel(fam, block.get("a_exp"), block.get("b_exp"))


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _positive(errs, where, block, key, required=False, integer=False):
    if key not in block:
        if required:
            errs.append(f"{where}.{key} is required")
        return
    v = block[key]
    if not _is_num(v) or v <= 0 or (integer and int(v) != v):
        kind = "a positive integer" if integer else "a positive number"
        errs.append(f"{where}.{key} must be {kind} (got {v!r})")


def _check_kernel(errs, block, command) -> Optional[KernelSpec]:
    fam = block.get("family")
    if fam is None:
        errs.append("kernel.family is required")
        return None
    if fam not in ("constant", "product", "brownian", "free_molecular", "custom"):
        errs.append(f"kernel.family {fam!r} is unknown")
        return None
    need = {"product": ("a_exp", "b_exp"), "custom": ("gamma", "lam")}.get(fam, ())
    bad = False
    for k in need:
        if k not in block:
            errs.append(f"kernel.{k} is required for family {fam!r}")
            bad = True
        elif not _is_num(block[k]):
            errs.append(f"kernel.{k} must be a number (got {block[k]!r})")
            bad = True
    extra = set(block) - {"family"} - set(need)
    for k in sorted(extra):
        errs.append(f"kernel.{k} is not used by family {fam!r}")
    if bad:
        return None
    if fam == "custom":
        gamma = float(block["gamma"])
    elif fam == "product":
        gamma = float(block["a_exp"]) + float(block["b_exp"])
    else:
        gamma = None
    if gamma is not None and gamma >= 1:
        errs.append(f"kernel: gelling regime: gamma = {gamma:g} >= 1")
        return None
    try:
        spec = build_kernel(block)
    except ConfigurationError as exc:
        errs.append(f"kernel: {exc}")
        return None
    adm = check_admissibility(spec)
    if adm.gelling:
        errs.append(f"kernel: {adm.reason}")
    elif not adm.flux_admissible and command in PROFILE_COMMANDS:
        errs.append(f"kernel: {adm.reason}; no constant-flux profile exists, so {command!r} is refused")
    return spec


def _check_trunc(errs, where, block, spec):
    for key in ("epsilon", "a", "R"):
        _positive(errs, where, block, key, required=True)
    for key in ("A", "band"):
        _positive(errs, where, block, key)
    if "sigma" in block and not (_is_num(block["sigma"]) and block["sigma"] >= 0):
        errs.append(f"{where}.sigma must be a non-negative number")
    if all(_is_num(block.get(k)) and block.get(k) > 0 for k in ("epsilon", "a", "R")):
        if not 2 * block["epsilon"] < block["R"]:
            errs.append(f"{where}: need 2 epsilon < R")
        if not block["a"] > 1:
            errs.append(f"{where}.a must exceed 1")
    if spec is not None and _is_num(block.get("sigma")):
        try:
            check_sigma_rule(singularity_exponent(spec.gamma, spec.lam), spec.gamma, block["sigma"])
        except ConfigurationError as exc:
            errs.append(f"{where}: {exc}")


def _check_cascade(errs, block, spec):
    arrays = {}
    for key in ("epsilon", "a", "R"):
        v = block.get(key)
        if v is None:
            errs.append(f"cascade.{key} is required (a list, one value per stage)")
        elif not isinstance(v, list) or not v or not all(_is_num(u) and u > 0 for u in v):
            errs.append(f"cascade.{key} must be a non-empty list of positive numbers")
        else:
            arrays[key] = v
    if len(arrays) == 3:
        n = {len(v) for v in arrays.values()}
        if len(n) > 1:
            errs.append("cascade arrays epsilon, a and R must have equal length")
        else:
            eps, a, R = arrays["epsilon"], arrays["a"], arrays["R"]
            for k in range(1, len(eps)):
                if eps[k] > eps[k - 1]:
                    errs.append(f"cascade stage {k}: epsilon increases")
                if a[k] < a[k - 1]:
                    errs.append(f"cascade stage {k}: a decreases")
                if R[k] < R[k - 1]:
                    errs.append(f"cascade stage {k}: R decreases")
            for k in range(len(eps)):
                stage = {"epsilon": eps[k], "a": a[k], "R": R[k]}
                stage.update({x: block[x] for x in ("A", "sigma", "band") if x in block})
                _check_trunc(errs, f"cascade stage {k}", stage, spec)
            tol = block.get("tol", 1e-8)
            if isinstance(tol, list):
                if len(tol) != len(eps) or not all(_is_num(t) and t > 0 for t in tol):
                    errs.append("cascade.tol must be a positive number or one positive number per stage")
            elif not (_is_num(tol) and tol > 0):
                errs.append("cascade.tol must be positive")
    _positive(errs, "cascade", block, "cells_per_decade")
    if "x_max_factor" in block and not (_is_num(block["x_max_factor"]) and block["x_max_factor"] >= 2):
        errs.append("cascade.x_max_factor must be at least 2")


def _check_grid(errs, block, required):
    if not block:
        if required:
            errs.append("grid block is required")
        return
    _positive(errs, "grid", block, "x_min", required=True)
    _positive(errs, "grid", block, "x_max", required=True)
    _positive(errs, "grid", block, "n_cells", integer=True)
    _positive(errs, "grid", block, "cells_per_decade")
    if "n_cells" in block and "cells_per_decade" in block:
        errs.append("grid: give either n_cells or cells_per_decade, not both")
    if _is_num(block.get("x_min")) and _is_num(block.get("x_max")) and not block["x_max"] > block["x_min"]:
        errs.append("grid: x_max must exceed x_min")


def integ_mode(blocks: dict) -> str:
    return blocks.get("integrator", {}).get("mode", "physical")


def validate(raw: Any, source: Optional[str] = None, command: Optional[str] = None) -> RunConfig:
    """Check a parsed document; raises :class:`ConfigErrors` listing every violation."""
    errs = []
    if not isinstance(raw, dict):
        raise ConfigErrors(["configuration must be a mapping"])
    for key in sorted(set(raw) - set(SCHEMA)):
        errs.append(f"unknown key {key!r}")
    blocks = {}
    for name, allowed in SCHEMA.items():
        if allowed is None or name not in raw:
            continue
        block = raw[name]
        if block is None:
            block = {}
        if not isinstance(block, dict):
            errs.append(f"{name} must be a mapping")
            continue
        for key in sorted(set(block) - allowed):
            errs.append(f"unknown key {name}.{key}")
        blocks[name] = {k: v for k, v in block.items() if k in allowed}

    cmd = raw.get("command", command)
    if command is not None and raw.get("command") not in (None, command):
        errs.append(f"command {raw.get('command')!r} in the file conflicts with {command!r} on the command line")
    if cmd not in COMMANDS:
        errs.append(f"command must be one of {', '.join(COMMANDS)} (got {cmd!r})")

    seed = raw.get("seed", 0)
    if not (isinstance(seed, int) and not isinstance(seed, bool) and seed >= 0):
        errs.append(f"seed must be a non-negative integer (got {seed!r})")
    workers = raw.get("workers", 1)
    if not (isinstance(workers, int) and not isinstance(workers, bool) and workers >= 1):
        errs.append(f"workers must be a positive integer (got {workers!r})")
    out = raw.get("output")
    if out is not None and not isinstance(out, str):
        errs.append("output must be a path string")

    spec = None
    if cmd != "verify-characteristics" or "kernel" in blocks:
        if "kernel" not in blocks:
            errs.append("kernel block is required")
        else:
            spec = _check_kernel(errs, blocks["kernel"], cmd)

    trunc = blocks.get("truncation", {})
    if cmd == "steady" or (cmd == "evolve" and blocks.get("integrator", {}).get("mode") == "selfsimilar_truncated"):
        if not trunc:
            errs.append("truncation block is required")
        else:
            _check_trunc(errs, "truncation", trunc, spec)
    elif cmd == "evolve":
        # physical mode uses the source scale only
        _positive(errs, "truncation", trunc, "epsilon")
    elif trunc:
        _check_trunc(errs, "truncation", trunc, spec)
    if cmd == "cascade":
        _check_cascade(errs, blocks.get("cascade", {}), spec)
    physical = cmd == "evolve" and integ_mode(blocks) == "physical"
    _check_grid(errs, blocks.get("grid", {}), required=cmd == "picard" or physical)

    integ = blocks.get("integrator", {})
    if cmd == "evolve":
        mode = integ.get("mode", "physical")
        if mode not in ("physical", "selfsimilar_truncated"):
            errs.append(f"integrator.mode must be 'physical' or 'selfsimilar_truncated' (got {mode!r})")
        _positive(errs, "integrator", integ, "t_end", required=True)
        if mode == "physical":
            if "epsilon" not in trunc:
                errs.append("truncation.epsilon is required for the physical-mode source")
    cps = integ.get("checkpoints")
    if cps is not None and not (
            (isinstance(cps, int) and not isinstance(cps, bool) and cps >= 1)
            or (isinstance(cps, list) and all(_is_num(c) and c > 0 for c in cps))):
        errs.append("integrator.checkpoints must be a positive integer or a list of positive times")
    for key in ("dt_max", "tol"):
        _positive(errs, "integrator", integ, key)
    _positive(errs, "integrator", integ, "max_steps", integer=True)
    if "safety" in integ and not (_is_num(integ["safety"]) and 0 < integ["safety"] <= 1):
        errs.append("integrator.safety must lie in (0, 1]")

    pic = blocks.get("picard", {})
    if "damping" in pic and not (_is_num(pic["damping"]) and 0 < pic["damping"] <= 1):
        errs.append("picard.damping must lie in (0, 1]")
    _positive(errs, "picard", pic, "tol")
    _positive(errs, "picard", pic, "ghost_decades")
    _positive(errs, "picard", pic, "max_sweeps", integer=True)

    diag = blocks.get("diagnostics", {})
    if cmd == "diagnose" and "profile" not in diag:
        errs.append("diagnostics.profile (path to a profile CSV) is required")
    for key in ("smallz_window", "plateau_window", "collapse_window", "tail_window"):
        v = diag.get(key)
        if v is not None and not (isinstance(v, list) and len(v) == 2 and all(_is_num(u) and u > 0 for u in v)
                                  and v[0] < v[1]):
            errs.append(f"diagnostics.{key} must be [lo, hi] with 0 < lo < hi")

    ch = blocks.get("characteristics", {})
    if cmd == "verify-characteristics":
        _positive(errs, "characteristics", ch, "epsilon", required=True)
    _positive(errs, "characteristics", ch, "samples", integer=True)
    _positive(errs, "characteristics", ch, "tau_max")

    for key, v in blocks.get("acceptance", {}).items():
        if not (_is_num(v) and v > 0):
            errs.append(f"acceptance.{key} must be a positive number")

    if errs:
        raise ConfigErrors(errs)
    return RunConfig(command=cmd, output=out, seed=seed, workers=workers, source=source,
                     **{k: v for k, v in blocks.items()})


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e3`` and ``1.0e-4`` as floats.

    Plain YAML 1.1 insists on a dot and a signed exponent, so without this
    ``1.0e3`` would arrive as a string.
    """


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^(?:[-+]?(?:[0-9][0-9_]*)\.[0-9_]*(?:[eE][-+]?[0-9]+)?
    |[-+]?(?:[0-9][0-9_]*)(?:[eE][-+]?[0-9]+)
    |\.[0-9_]+(?:[eE][-+]?[0-9]+)?
    |[-+]?\.(?:inf|Inf|INF)
    |\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."))


def load_config(path, command: Optional[str] = None) -> RunConfig:
    """Read and validate a YAML configuration file."""
    p = Path(path)
    if not p.is_file():
        raise ConfigErrors([f"configuration file {str(p)!r} does not exist"])
    try:
        raw = yaml.load(p.read_text(), Loader=_Loader)
    except yaml.YAMLError as exc:
        raise ConfigErrors([f"{p}: not valid YAML ({exc})"]) from exc
    return validate(raw, source=str(p), command=command)
