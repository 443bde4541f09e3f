"""JSON run configuration with explicit defaults."""

from __future__ import annotations

import copy
import json
import math
from dataclasses import fields
from pathlib import Path
from typing import Any

from .errors import ValidationError
from .model import ScalingParams
from .sim_study import SimStudyLimit, SimStudyModel, SimStudyParams

_MODEL_KEYS = [f.name for f in fields(SimStudyParams) if f.name != "dp"]
_FIRST = SimStudyParams(dp=1.0)
_SECOND = SimStudyParams.second_run(1)

DEFAULTS: dict[str, Any] = {
    "scaling": {"n": 100, "T": 2.0, "M": 5.0, "eta_exponent": 0.9},
    "model": {"run": 1, **{k: getattr(_FIRST, k) for k in _MODEL_KEYS}},
    "kernels": [],
    "limit": {"dxi": 1 / 128, "h": 0.01},
    "harness": {
        "paths": 100,
        "seed": 0,
        "probes": [1.0],
        "ns": [16, 32, 64],
        "threads": 1,
        "n_boot": 200,
        "diagnostics": False,
    },
    "output": {"out_dir": "out", "record_every": 1, "density_times": [0.0, 0.5, 1.0, 1.5, 2.0]},
}

_TYPES = {
    "scaling": {"n": int, "T": float, "M": float, "eta_exponent": float},
    "limit": {"dxi": float, "h": float},
    "harness": {"paths": int, "seed": int, "probes": list, "ns": list, "threads": int, "n_boot": int, "diagnostics": bool},
    "output": {"out_dir": str, "record_every": int, "density_times": list},
}


def _check_type(path: str, value: Any, typ: type) -> Any:
    if typ is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ValidationError(f"{path}: expected a finite number, got {value!r}")
        return float(value)
    if typ is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ValidationError(f"{path}: expected an integer, got {value!r}")
        return value
    if typ is bool:
        if not isinstance(value, bool):
            raise ValidationError(f"{path}: expected true or false, got {value!r}")
        return value
    if not isinstance(value, typ):
        raise ValidationError(f"{path}: expected {typ.__name__}, got {value!r}")
    return value


def resolve(doc: dict | None = None) -> dict:
    """Merge ``doc`` into the defaults and validate every key.

    ``model.run = 2`` switches the defaults of keys not given explicitly to
    the second-run values. The result is a complete document; resolving it
    again returns it unchanged.
    """
    doc = {} if doc is None else doc
    if not isinstance(doc, dict):
        raise ValidationError("config must be a JSON object")
    for sec in doc:
        if sec not in DEFAULTS:
            raise ValidationError(f"unknown section {sec!r}")
    out = copy.deepcopy(DEFAULTS)
    for sec in ("scaling", "limit", "harness", "output"):
        given = doc.get(sec, {})
        if not isinstance(given, dict):
            raise ValidationError(f"{sec}: expected an object")
        for k, v in given.items():
            if k not in DEFAULTS[sec]:
                raise ValidationError(f"unknown key {sec}.{k}")
            out[sec][k] = _check_type(f"{sec}.{k}", v, _TYPES[sec][k])

    model = doc.get("model", {})
    if not isinstance(model, dict):
        raise ValidationError("model: expected an object")
    for k in model:
        if k != "run" and k not in _MODEL_KEYS:
            raise ValidationError(f"unknown key model.{k}")
    run = model.get("run", 1)
    if run not in (1, 2):
        raise ValidationError(f"model.run: expected 1 or 2, got {run!r}")
    base = _FIRST if run == 1 else _SECOND
    out["model"] = {"run": run}
    for k in _MODEL_KEYS:
        default = getattr(base, k)
        v = model.get(k, default)
        typ = type(default)
        out["model"][k] = _check_type(f"model.{k}", v, typ if typ in (bool, str) else float)

    kernels = doc.get("kernels", [])
    if not isinstance(kernels, list) or not all(isinstance(b, dict) for b in kernels):
        raise ValidationError("kernels: expected a list of objects")
    out["kernels"] = copy.deepcopy(kernels)

    for sec, key in (("harness", "probes"), ("harness", "ns"), ("output", "density_times")):
        for i, v in enumerate(out[sec][key]):
            _check_type(f"{sec}.{key}[{i}]", v, int if key == "ns" else float)
    # construct once so parameter invariants are reported with their section
    build_params(out)
    build_model(out)
    for i, block in enumerate(out["kernels"]):
        from .jump_kernels import kernel_from_config

        try:
            kernel_from_config(block)
        except ValidationError as exc:
            raise ValidationError(f"kernels[{i}]: {exc}") from None
    return out


def build_params(cfg: dict, n: int | None = None) -> ScalingParams:
    s = cfg["scaling"]
    try:
        return ScalingParams.power_law(s["n"] if n is None else n, T=s["T"], M=s["M"], eta_exponent=s["eta_exponent"])
    except ValidationError as exc:
        raise ValidationError(f"scaling: {exc}") from None


def model_params(cfg: dict, n: int | None = None) -> SimStudyParams:
    p = build_params(cfg, n)
    kw = {k: v for k, v in cfg["model"].items() if k != "run"}
    try:
        return SimStudyParams(dp=p.dp, **kw)
    except ValidationError as exc:
        raise ValidationError(f"model: {exc}") from None


def build_model(cfg: dict, n: int | None = None, T: float | None = None) -> SimStudyModel:
    p = build_params(cfg, n)
    if T is not None:
        p = ScalingParams.power_law(p.n, T=T, M=p.M, eta_exponent=cfg["scaling"]["eta_exponent"])
    return SimStudyModel(model_params(cfg, n), p)


def build_limit(cfg: dict, T: float | None = None) -> SimStudyLimit:
    s, lim = cfg["scaling"], cfg["limit"]
    try:
        return SimStudyLimit(model_params(cfg), dxi=lim["dxi"], h=lim["h"], T=s["T"] if T is None else T, M=s["M"])
    except ValidationError as exc:
        raise ValidationError(f"limit: {exc}") from None


def load(path: str | Path | None = None, overrides: dict | None = None) -> dict:
    """Read a JSON file (or start from defaults), apply section overrides and resolve."""
    doc: dict = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from None
    for dotted, v in (overrides or {}).items():
        sec, key = dotted.split(".", 1)
        doc.setdefault(sec, {})[key] = v
    return resolve(doc)


def dumps(cfg: dict) -> str:
    return json.dumps(cfg, indent=2, sort_keys=True) + "\n"
