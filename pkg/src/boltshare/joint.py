"""Joint constants and closed-form bolt-station stiffness formulas.

Everything in here works in N and mm. Moduli are supplied in GPa (as they
appear in material tables) and converted once, at construction of the
derived quantities.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import jsonschema

GPA = 1.0e3  # N/mm^2 per GPa
NM = 1.0e3  # N*mm per N*m

CLEARANCE_BOUNDS = (0.0, 2.0)
TORQUE_BOUNDS = (0.5, 15.0)

KNEE_C_POLICIES = ("offset_from_b", "absolute")


@dataclass(frozen=True)
class JointGeometry:
    l_p: float
    d: float
    phi: float
    t: float
    w: float
    n_bolts: int = 3

    def __post_init__(self):
        for name in ("l_p", "d", "phi", "t", "w"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"{name} must be a positive length, got {value!r}")
        if self.phi <= self.d:
            raise ValueError("head diameter phi must exceed bolt diameter d")
        if self.w <= self.d:
            raise ValueError("plate width w must exceed bolt diameter d")
        if int(self.n_bolts) != self.n_bolts or self.n_bolts < 2:
            raise ValueError("n_bolts must be an integer >= 2")


@dataclass(frozen=True)
class LaminateProps:
    """Homogenized laminate moduli in GPa."""

    E_px: float
    E_py: float
    G_p: float

    def __post_init__(self):
        for name in ("E_px", "E_py", "G_p"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0.0):
                raise ValueError(f"{name} must be positive, got {value!r}")


@dataclass(frozen=True)
class BoltProps:
    """Bolt moduli in GPa and Poisson ratio."""

    E_b: float
    G_b: float
    mu_b: float

    def __post_init__(self):
        if not (self.E_b > 0.0 and self.G_b > 0.0):
            raise ValueError("bolt moduli must be positive")
        if not (0.0 < self.mu_b < 0.5):
            raise ValueError("mu_b must lie in (0, 0.5)")


@dataclass(frozen=True)
class FrictionConstants:
    v: float = 0.3
    k: float = 0.2
    beta: float = 0.15

    def __post_init__(self):
        if not (self.v > 0.0 and self.k > 0.0):
            raise ValueError("friction coefficient v and torque constant k must be positive")
        if not (0.0 <= self.beta < 1.0):
            raise ValueError("beta must lie in [0, 1)")


@dataclass(frozen=True)
class DerivedSections:
    A_p: float
    A_b: float
    A_0: float
    I_b: float
    I_p: float

    @classmethod
    def from_geometry(cls, geom: JointGeometry) -> DerivedSections:
        d, phi = geom.d, geom.phi
        return cls(
            A_p=geom.w * geom.t,
            A_b=math.pi * d**2 / 4.0,
            A_0=math.pi * (phi**2 - d**2) / 4.0,
            I_b=math.pi * d**4 / 64.0,
            I_p=geom.w * geom.t**3 / 12.0,
        )


@dataclass(frozen=True)
class JointConfig:
    """One joint family: geometry, materials, friction and the knee-c policy."""

    geometry: JointGeometry
    laminate: LaminateProps
    bolt: BoltProps
    friction: FrictionConstants = field(default_factory=FrictionConstants)
    knee_c_policy: str = "offset_from_b"

    def __post_init__(self):
        if self.knee_c_policy not in KNEE_C_POLICIES:
            raise ValueError(f"knee_c_policy must be one of {KNEE_C_POLICIES}")

    @property
    def n_bolts(self) -> int:
        return self.geometry.n_bolts

    @property
    def sections(self) -> DerivedSections:
        return DerivedSections.from_geometry(self.geometry)

    def to_dict(self) -> dict:
        g, lam, b, f = self.geometry, self.laminate, self.bolt, self.friction
        return {
            "l_p_mm": g.l_p, "d_mm": g.d, "phi_mm": g.phi, "t_mm": g.t, "w_mm": g.w,
            "n_bolts": g.n_bolts,
            "E_px_GPa": lam.E_px, "E_py_GPa": lam.E_py, "G_p_GPa": lam.G_p,
            "E_b_GPa": b.E_b, "G_b_GPa": b.G_b, "mu_b": b.mu_b,
            "v": f.v, "k": f.k, "beta": f.beta,
            "knee_c_policy": self.knee_c_policy,
        }

    @classmethod
    def from_dict(cls, data: dict) -> JointConfig:
        jsonschema.validate(data, CONFIG_SCHEMA)
        return cls(
            geometry=JointGeometry(
                l_p=data["l_p_mm"], d=data["d_mm"], phi=data["phi_mm"],
                t=data["t_mm"], w=data["w_mm"], n_bolts=data.get("n_bolts", 3),
            ),
            laminate=LaminateProps(data["E_px_GPa"], data["E_py_GPa"], data["G_p_GPa"]),
            bolt=BoltProps(data["E_b_GPa"], data["G_b_GPa"], data["mu_b"]),
            friction=FrictionConstants(data["v"], data["k"], data["beta"]),
            knee_c_policy=data.get("knee_c_policy", "offset_from_b"),
        )


_positive = {"type": "number", "exclusiveMinimum": 0}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "JointConfig",
    "type": "object",
    "properties": {
        "l_p_mm": _positive, "d_mm": _positive, "phi_mm": _positive,
        "t_mm": _positive, "w_mm": _positive,
        "n_bolts": {"type": "integer", "minimum": 2},
        "E_px_GPa": _positive, "E_py_GPa": _positive, "G_p_GPa": _positive,
        "E_b_GPa": _positive, "G_b_GPa": _positive,
        "mu_b": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 0.5},
        "v": _positive, "k": _positive,
        "beta": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "knee_c_policy": {"enum": list(KNEE_C_POLICIES)},
    },
    "required": [
        "l_p_mm", "d_mm", "phi_mm", "t_mm", "w_mm",
        "E_px_GPa", "E_py_GPa", "G_p_GPa", "E_b_GPa", "G_b_GPa", "mu_b",
        "v", "k", "beta",
    ],
    "additionalProperties": False,
}


def reference_joint(knee_c_policy: str = "offset_from_b") -> JointConfig:
    """The three-bolt CFRP single-lap joint used throughout the validation cases."""
    return JointConfig(
        geometry=JointGeometry(l_p=60.0, d=8.0, phi=14.0, t=3.0, w=20.0, n_bolts=3),
        laminate=LaminateProps(E_px=71.60, E_py=71.60, G_p=4.57),
        bolt=BoltProps(E_b=109.78, G_b=41.27, mu_b=0.33),
        friction=FrictionConstants(v=0.3, k=0.2, beta=0.15),
        knee_c_policy=knee_c_policy,
    )


def load_config(path: str | Path) -> JointConfig:
    with open(path) as fh:
        data = json.load(fh)
    return JointConfig.from_dict(data)


@dataclass(frozen=True)
class BoltParams:
    """Design point: one clearance [mm] and one tightening torque [N*m] per bolt."""

    clearances: tuple[float, ...]
    torques: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "clearances", tuple(float(c) for c in self.clearances))
        object.__setattr__(self, "torques", tuple(float(x) for x in self.torques))
        if len(self.clearances) != len(self.torques):
            raise ValueError("need one torque per clearance")
        lo, hi = CLEARANCE_BOUNDS
        if any(not (lo <= c <= hi) for c in self.clearances):
            raise ValueError(f"clearances must lie in [{lo}, {hi}] mm: {self.clearances}")
        lo, hi = TORQUE_BOUNDS
        if any(not (lo <= x <= hi) for x in self.torques):
            raise ValueError(f"torques must lie in [{lo}, {hi}] N*m: {self.torques}")

    @property
    def n_bolts(self) -> int:
        return len(self.clearances)

    @classmethod
    def from_vector(cls, x: Sequence[float]) -> BoltParams:
        n = len(x) // 2
        if 2 * n != len(x):
            raise ValueError("design vector must hold n clearances followed by n torques")
        return cls(tuple(x[:n]), tuple(x[n:]))

    def as_vector(self) -> list[float]:
        return list(self.clearances) + list(self.torques)

    def reversed(self) -> BoltParams:
        return BoltParams(self.clearances[::-1], self.torques[::-1])


@dataclass(frozen=True)
class StiffnessSet:
    """Four-phase element description for one bolt station (N, mm)."""

    K_plate: float
    K1: float
    K2: float
    K3: float
    K4: float
    R: float
    f_static: float
    a: float
    b: float
    c: float

    @property
    def knees(self) -> tuple[float, float, float]:
        return (self.a, self.b, self.c)

    def phase_stiffness(self, phase: int) -> float:
        return (self.K1, self.K2, self.K3, self.K4)[phase - 1]


def plate_stiffness(geom: JointGeometry, lam: LaminateProps) -> float:
    """Tensile stiffness of one plate segment of length one pitch [N/mm]."""
    A_p = DerivedSections.from_geometry(geom).A_p
    return lam.E_px * GPA * A_p / geom.l_p


def interface_ratio(geom: JointGeometry, lam: LaminateProps, bolt: BoltProps) -> float:
    """Ratio R of the bolt-head interface force to the plate-plate interface force."""
    s = DerivedSections.from_geometry(geom)
    t, d = geom.t, geom.d
    shape = 64.0 * t**2 / (3.0 * d**2 * (1.0 + bolt.mu_b)) + 2.4
    return shape * (s.A_0 * lam.G_p) / (s.A_b * bolt.G_b) + 1.0


def static_friction(T: float, fric: FrictionConstants, d: float) -> float:
    """Maximum static friction force [N] of one interface for torque T [N*m], d [mm]."""
    return fric.v * T * NM / (fric.k * d)


def bolt_stiffnesses(
    geom: JointGeometry, lam: LaminateProps, bolt: BoltProps, fric: FrictionConstants
) -> tuple[float, float, float, float]:
    """Tangent stiffness of the bolt element in each of the four phases [N/mm].

    Phase 3 is the global-sliding plateau; its compliance is unbounded, so the
    returned tangent is exactly 0.
    """
    s = DerivedSections.from_geometry(geom)
    t, l_p, phi = geom.t, geom.l_p, geom.phi
    E_px, E_py, G_p = lam.E_px * GPA, lam.E_py * GPA, lam.G_p * GPA
    E_b, G_b = bolt.E_b * GPA, bolt.G_b * GPA
    R = interface_ratio(geom, lam, bolt)

    shear = 12.0 * t / (5.0 * s.A_b * G_b)
    bending = 8.0 * t**3 / (3.0 * E_b * s.I_b)
    plate_bending = (4.0 * l_p - 3.0 * phi) * t**2 / (32.0 * E_px * s.I_p)

    c1 = (shear + bending + (3.0 - R) * t / (4.0 * s.A_0 * G_p)) / (1.0 + R) + plate_bending
    c2 = shear + bending + 3.0 * t / (4.0 * s.A_0 * G_p) + plate_bending
    c4 = 4.0 * t / (3.0 * G_p * s.A_p) + (
        4.0 / (t * E_b) + 2.0 / (t * math.sqrt(E_px * E_py))
    ) * (1.0 + 3.0 * fric.beta)

    K1, K2, K4 = 1.0 / c1, 1.0 / c2, 1.0 / c4
    for name, value in (("K1", K1), ("K2", K2), ("K4", K4)):
        if not (math.isfinite(value) and value > 0.0):
            raise ValueError(f"{name} is not a finite positive stiffness: {value!r}")
    return K1, K2, 0.0, K4


def knee_points(
    clearance: float,
    f_static: float,
    K1: float,
    K2: float,
    R: float,
    policy: str = "offset_from_b",
) -> tuple[float, float, float]:
    """Element relative displacements (a, b, c) [mm] at the three phase switches.

    ``offset_from_b`` starts phase 4 once sliding has closed the clearance,
    c = b + clearance. ``absolute`` reads the clearance as the total element
    displacement, clamped so that c >= b.
    """
    if K1 <= 0.0 or K2 <= 0.0:
        raise ValueError("K1 and K2 must be positive")
    a = f_static * (1.0 / R + 1.0) / K1
    b = a + f_static * (1.0 - 1.0 / R) / K2
    if policy == "offset_from_b":
        c = b + clearance
    elif policy == "absolute":
        c = max(b, clearance)
    else:
        raise ValueError(f"unknown knee_c_policy {policy!r}")
    return a, b, c


def stiffness_set(cfg: JointConfig, clearance: float, torque: float) -> StiffnessSet:
    geom = cfg.geometry
    K1, K2, K3, K4 = bolt_stiffnesses(geom, cfg.laminate, cfg.bolt, cfg.friction)
    R = interface_ratio(geom, cfg.laminate, cfg.bolt)
    f = static_friction(torque, cfg.friction, geom.d)
    a, b, c = knee_points(clearance, f, K1, K2, R, cfg.knee_c_policy)
    return StiffnessSet(
        K_plate=plate_stiffness(geom, cfg.laminate),
        K1=K1, K2=K2, K3=K3, K4=K4, R=R, f_static=f, a=a, b=b, c=c,
    )
