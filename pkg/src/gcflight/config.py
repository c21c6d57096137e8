"""JSON scenario and horizon-problem configuration.

Documents carry a ``version`` field; unknown keys are rejected so that a
misspelled coefficient or parameter name fails loudly instead of silently
falling back to a default.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import fields
from importlib import resources
from pathlib import Path

import numpy as np

from .core import (Ball, Box, DomainError, FeasibleSet, InfeasibleSetError, Intersection,
                   quat_from_euler)
from .fixedwing import AeroCoeffTable, FwParams, WingLossFault, trim_level_flight
from .horizon import HeightGrid, HorizonGrid, HorizonProblem
from .quad import MotorFault, QuadParams
from .sim import ControllerSpec, ReferenceSpec, ScenarioConfig
from .state import RigidBodyState

CONFIG_VERSION = 1


class ConfigError(ValueError):
    """A configuration document is malformed."""


def _check_keys(d: dict, allowed, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown key(s) in {where}: {sorted(unknown)}")


def _vec(v, n=3, where="vector"):
    arr = np.asarray(v, dtype=float)
    if arr.shape != (n,) or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{where} must be {n} finite numbers")
    return arr


def _inertia(J):
    arr = np.asarray(J, dtype=float)
    if arr.shape == (3,):
        return np.diag(arr)
    if arr.shape == (3, 3):
        return arr
    raise ConfigError("J must be 3 diagonal entries or a 3x3 matrix")


def config_hash(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


def read_document(path) -> tuple[dict, bytes]:
    raw = Path(path).read_bytes()
    try:
        doc = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    if doc.get("version") != CONFIG_VERSION:
        raise ConfigError(f"{path}: unsupported config version {doc.get('version')!r}")
    return doc, raw


def bundled_config(name: str) -> Path:
    """Path of a config shipped with the package (``name`` without ``.json``)."""
    p = resources.files("gcflight") / "data" / f"{name}.json"
    if not p.is_file():
        raise ConfigError(f"no bundled config named {name!r}")
    return Path(str(p))


# ---------------------------------------------------------------------------
# Scenarios
# ---------------------------------------------------------------------------

_SCENARIO_KEYS = ("version", "name", "vehicle", "params", "initial", "reference", "controller",
                  "fault", "wind", "disturbance", "duration", "dt", "seed", "perturbation",
                  "ground_offset")


def _quad_params(d: dict) -> QuadParams:
    allowed = [f.name for f in fields(QuadParams)]
    _check_keys(d, allowed, "params")
    kw = dict(d)
    if "J" in kw:
        kw["J"] = _inertia(kw["J"])
    for k in ("G", "g"):
        if k in kw:
            kw[k] = _vec(kw[k], where=f"params.{k}")
    return QuadParams(**kw)


def _fw_params(d: dict) -> FwParams:
    allowed = [f.name for f in fields(FwParams) if f.name != "table"] + ["coefficients"]
    _check_keys(d, allowed, "params")
    kw = dict(d)
    coeffs = kw.pop("coefficients", None)
    if coeffs is not None:
        try:
            kw["table"] = AeroCoeffTable.from_dict(coeffs)
        except DomainError as exc:
            raise ConfigError(str(exc)) from exc
    if "J" in kw:
        kw["J"] = _inertia(kw["J"])
    for k in ("G", "g"):
        if k in kw:
            kw[k] = _vec(kw[k], where=f"params.{k}")
    return FwParams(**kw)


def _initial(d: dict, vehicle: str, fw: FwParams) -> RigidBodyState:
    _check_keys(d, ("p", "v", "q", "euler", "omega", "trim_airspeed"), "initial")
    p = _vec(d.get("p", (0.0, 0.0, 0.0)), where="initial.p")
    if "trim_airspeed" in d:
        if vehicle != "fixed-wing":
            raise ConfigError("trim_airspeed applies to fixed-wing scenarios only")
        return trim_level_flight(fw, float(d["trim_airspeed"])).state(p)
    if "q" in d and "euler" in d:
        raise ConfigError("give either initial.q or initial.euler, not both")
    if "euler" in d:
        q = quat_from_euler(*_vec(d["euler"], where="initial.euler"))
    else:
        q = _vec(d.get("q", (1.0, 0.0, 0.0, 0.0)), 4, "initial.q")
        q = q / np.linalg.norm(q)
    return RigidBodyState(p=p, v=_vec(d.get("v", (0.0, 0.0, 0.0)), where="initial.v"), q=q,
                          omega=_vec(d.get("omega", (0.0, 0.0, 0.0)), where="initial.omega"))


def _fault(d, vehicle: str):
    if d is None:
        return None
    _check_keys(d, ("kind", "motor", "onset"), "fault")
    kind = d.get("kind")
    onset = float(d.get("onset", 0.0))
    if kind == "motor":
        return MotorFault(motor=int(d.get("motor", 1)), onset=onset)
    if kind == "wing-loss":
        if "motor" in d:
            raise ConfigError("wing-loss faults take no motor index")
        return WingLossFault(onset=onset)
    raise ConfigError(f"fault.kind must be 'motor' or 'wing-loss', got {kind!r}")


def parse_fault_override(text: str):
    """``none``, ``motor:<index>@<onset>`` or ``wing-loss@<onset>``."""
    text = text.strip()
    if text == "none":
        return None
    kind, _, onset = text.partition("@")
    try:
        onset = float(onset) if onset else 0.0
        if kind == "motor" or kind.startswith("motor:"):
            _, _, idx = kind.partition(":")
            return {"kind": "motor", "motor": int(idx or 1), "onset": onset}
    except ValueError as exc:
        raise ConfigError(f"bad fault override {text!r}") from exc
    if kind == "wing-loss":
        return {"kind": "wing-loss", "onset": onset}
    raise ConfigError(f"bad fault override {text!r}")


def scenario_from_dict(doc: dict) -> ScenarioConfig:
    _check_keys(doc, _SCENARIO_KEYS, "scenario")
    try:
        vehicle = doc.get("vehicle", "quad")
        params = doc.get("params", {})
        quad = _quad_params(params) if vehicle == "quad" else QuadParams()
        fw = _fw_params(params) if vehicle == "fixed-wing" else FwParams()
        initial = _initial(doc.get("initial", {}), vehicle, fw)
        ref = doc.get("reference", {})
        _check_keys(ref, [f.name for f in fields(ReferenceSpec)], "reference")
        ref = ReferenceSpec(kind=ref.get("kind", "hover"),
                            p0=tuple(_vec(ref.get("p0", initial.p), where="reference.p0")),
                            velocity=tuple(_vec(ref.get("velocity", (0, 0, 0)), where="reference.velocity")),
                            times=tuple(ref.get("times", ())),
                            positions=tuple(tuple(r) for r in ref.get("positions", ())))
        ctl = doc.get("controller", {})
        _check_keys(ctl, [f.name for f in fields(ControllerSpec)], "controller")
        ctl = dict(ctl)
        if "weights" in ctl:
            ctl["weights"] = tuple(float(w) for w in ctl["weights"])
            if len(ctl["weights"]) != 3:
                raise ConfigError("controller.weights must be [w_g, w_t, w_e]")
        if ctl.get("gains") is not None:
            ctl["gains"] = tuple(float(g) for g in ctl["gains"])
        controller = ControllerSpec(**ctl)
        dist = doc.get("disturbance")
        return ScenarioConfig(
            vehicle=vehicle, quad=quad, fw=fw, initial=initial, reference=ref,
            controller=controller, fault=_fault(doc.get("fault"), vehicle),
            wind=tuple(_vec(doc.get("wind", (0, 0, 0)), where="wind")),
            disturbance=None if dist is None else tuple(_vec(dist, where="disturbance")),
            duration=float(doc.get("duration", 5.0)), dt=float(doc.get("dt", 0.002)),
            seed=int(doc.get("seed", 0)), perturbation=float(doc.get("perturbation", 0.0)),
            ground_offset=float(doc.get("ground_offset", 0.0)), name=str(doc.get("name", "scenario")))
    except ConfigError:
        raise
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_scenario(path, fault_override: str | None = None) -> tuple[ScenarioConfig, bytes]:
    doc, raw = read_document(path)
    if fault_override is not None:
        doc = dict(doc)
        doc["fault"] = parse_fault_override(fault_override)
    return scenario_from_dict(doc), raw


# ---------------------------------------------------------------------------
# Feasible sets and horizon problems
# ---------------------------------------------------------------------------

def parse_set(spec) -> FeasibleSet:
    """``ball:r``, ``box:lx,ly,lz..hx,hy,hz``, ``&``-joined intersections, or
    the JSON object forms ``{"ball": r}``, ``{"box": {"lo", "hi"}}``,
    ``{"intersection": [...]}``."""
    try:
        if isinstance(spec, str):
            parts = [s.strip() for s in spec.split("&")]
            if len(parts) > 1:
                return Intersection(tuple(parse_set(p) for p in parts))
            kind, _, body = spec.partition(":")
            if kind == "ball":
                return Ball(float(body))
            if kind == "box":
                lo, sep, hi = body.partition("..")
                if not sep:
                    raise ConfigError("box needs lo..hi")
                return Box(_vec([float(v) for v in lo.split(",")], where="box lo"),
                           _vec([float(v) for v in hi.split(",")], where="box hi"))
            raise ConfigError(f"unknown set kind {kind!r}")
        if isinstance(spec, dict) and len(spec) == 1:
            (kind, body), = spec.items()
            if kind == "ball":
                return Ball(float(body))
            if kind == "box":
                _check_keys(body, ("lo", "hi"), "box")
                return Box(_vec(body["lo"], where="box.lo"), _vec(body["hi"], where="box.hi"))
            if kind == "intersection":
                return Intersection(tuple(parse_set(s) for s in body))
        raise ConfigError(f"cannot parse feasible set {spec!r}")
    except (ConfigError, InfeasibleSetError):
        raise
    except DomainError as exc:
        # a well-formed description of an empty set (lo > hi, radius <= 0)
        raise InfeasibleSetError(f"empty feasible set {spec!r}: {exc}") from exc
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"bad feasible set {spec!r}: {exc}") from exc


_HORIZON_KEYS = ("version", "name", "m", "g", "a_d", "set", "weights", "grid", "d", "max_iter")


def horizon_from_dict(doc: dict, viewpoint: str) -> tuple[HorizonProblem, int]:
    _check_keys(doc, _HORIZON_KEYS, "horizon config")
    try:
        grid_d = doc.get("grid", {})
        _check_keys(grid_d, ("N", "T", "t0", "H", "h0"), "grid")
        N = int(grid_d.get("N", 20))
        if viewpoint == "impulse":
            grid = HorizonGrid(T=float(grid_d.get("T", 2.0)), N=N, t0=float(grid_d.get("t0", 0.0)))
        elif viewpoint == "energy":
            grid = HeightGrid(H=float(grid_d.get("H", 2.0)), N=N, h0=float(grid_d.get("h0", 0.0)))
        else:
            raise ConfigError(f"viewpoint must be impulse or energy, got {viewpoint!r}")
        w = tuple(float(v) for v in doc.get("weights", (1e4, 1e2, 1.0)))
        if len(w) != 3:
            raise ConfigError("weights must be [w_g, w_t, w_e]")
        prob = HorizonProblem(grid=grid, m=float(doc.get("m", 1.0)),
                              a_d=np.asarray(doc.get("a_d", (0.0, 0.0, 0.0)), float),
                              F=parse_set(doc.get("set", "ball:15")),
                              g=_vec(doc.get("g", (0.0, 0.0, 9.8)), where="g"),
                              w_g=w[0], w_t=w[1], w_e=w[2],
                              d=None if doc.get("d") is None else np.asarray(doc["d"], float))
        return prob, int(doc.get("max_iter", 5000))
    except (ConfigError, InfeasibleSetError):
        raise
    except (DomainError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
