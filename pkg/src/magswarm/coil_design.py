"""Sequential magnetorquer parameter selection and the acceleration-maximising coil design search."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from .magnetics import MU0

BATTERY_VOLTAGES = (3.7, 7.4, 11.1, 14.8)


def track_disturbance(tilt_deg=0.01, g=9.8):
    """Acceleration [N/kg] from a linear track tilted by ``tilt_deg`` (two-sided, hence the 2)."""
    return 2 * g * np.sin(np.radians(tilt_deg))


@dataclass
class WireMaterial:
    name: str
    k_ohm_per_kg: float
    k_ohm_per_m: float
    max_current: float
    wire_diameter: float

    def __post_init__(self):
        for key in ("k_ohm_per_kg", "k_ohm_per_m", "max_current", "wire_diameter"):
            if not getattr(self, key) > 0:
                raise ValueError(f"wire {self.name!r}: {key} must be positive")


@dataclass
class DesignResult:
    Omega_coil: float
    N_t: float
    mu_max: float
    layers: float
    t_coil: float
    m_coil: float
    D_coil: float
    V_cir: float
    wire: str = ""
    feasible: bool = True
    binding: list = field(default_factory=list)
    margins: dict = field(default_factory=dict)

    @property
    def objective(self):
        return self.mu_max**2 / self.m_coil


def dependent_parameters(wire: WireMaterial, D_coil, H_coil, V_cir, m_coil_max):
    """Resistance, turns, peak dipole and winding size following from the decision variables.

    The resistance is the smaller of the current-limited V/c and the mass-limited
    m k_ohm/kg; ``binding`` names the branch that set it.  ``layers`` is
    N_t / (H / D_wire) and ``t_coil`` the radial build layers * D_wire in metres.
    """
    if D_coil <= 0 or H_coil <= 0 or V_cir <= 0 or m_coil_max <= 0:
        raise ValueError("coil diameter, height, voltage and mass cap must be positive")
    by_current = V_cir / wire.max_current
    by_mass = m_coil_max * wire.k_ohm_per_kg
    Omega = min(by_current, by_mass)
    binding = ["current"] if by_current <= by_mass else ["mass"]
    N_t = Omega / wire.k_ohm_per_m / (np.pi * D_coil)
    mu = np.pi * (D_coil / 2) ** 2 * N_t * wire.max_current
    layers = N_t / (H_coil / wire.wire_diameter)
    return DesignResult(
        Omega_coil=Omega,
        N_t=N_t,
        mu_max=mu,
        layers=layers,
        t_coil=layers * wire.wire_diameter,
        m_coil=Omega / wire.k_ohm_per_kg,
        D_coil=D_coil,
        V_cir=V_cir,
        wire=wire.name,
        binding=binding,
    )


def coaxial_force(mu, d, half=True):
    """Far-field coaxial force between two equal dipoles; ``half`` applies the AC averaging factor."""
    F = 3 * MU0 / (2 * np.pi) * mu**2 / d**4
    return 0.5 * F if half else F


@dataclass
class DesignConstraints:
    m_coil_max: float = 0.42
    a_d: float = track_disturbance()
    H_coil: float = 0.04
    d0_over_D: float = 2.5
    thickness_ratio: float = 1 / 6
    voltages: tuple = BATTERY_VOLTAGES
    D_range: tuple = (0.05, 0.30)
    D_step: float = 1e-3
    half_factor: bool = True

    def __post_init__(self):
        if self.a_d > 4e-3:
            raise ValueError(f"a_d={self.a_d:.3g} N/kg exceeds the 4e-3 track-distortion estimate")
        if not (self.m_coil_max > 0 and self.H_coil > 0 and self.d0_over_D > 0 and self.D_step > 0):
            raise ValueError("design constraints must be positive")


class InfeasibleDesign(RuntimeError):
    def __init__(self, message, margins):
        super().__init__(message)
        self.margins = margins


def constraint_margins(design: DesignResult, wire: WireMaterial, con: DesignConstraints):
    """Signed slack of every constraint (>= 0 means satisfied), normalised by the limit."""
    d0 = con.d0_over_D * design.D_coil
    force = coaxial_force(design.mu_max, d0, con.half_factor)
    return {
        "mass": (con.m_coil_max - design.m_coil) / con.m_coil_max,
        "force": (force - con.a_d) / con.a_d,
        "thickness": (con.thickness_ratio * design.D_coil - design.t_coil) / (con.thickness_ratio * design.D_coil),
        # the min() may pick the mass branch, which then overdrives the wire
        "wire_current": (wire.max_current - design.V_cir / design.Omega_coil) / wire.max_current,
    }


def load_wires(path):
    with open(path) as fh:
        rows = yaml.safe_load(fh)["wires"]
    return [WireMaterial(r["name"], r["k_ohm_per_kg"], r["k_ohm_per_m"], r["max_current_A"], r["wire_diameter_m"])
            for r in rows]


def _grid(con: DesignConstraints):
    lo, hi = con.D_range
    k = int(np.floor((hi - lo) / con.D_step + 1e-9))
    return lo + con.D_step * np.arange(k + 1)


def optimize_design(wires, constraints: DesignConstraints = None):
    """Exhaustive search of (wire, D_coil, V_cir) maximising mu^2 / m_coil.

    Ties go to the smallest D_coil, then the smallest V_cir.  Raises
    :class:`InfeasibleDesign` carrying the least-violated margins when nothing fits.
    """
    con = constraints or DesignConstraints()
    wires = [wires] if isinstance(wires, WireMaterial) else list(wires)
    best, best_key, closest = None, None, None
    for wire in wires:
        for D in _grid(con):
            for V in sorted(con.voltages):
                des = dependent_parameters(wire, D, con.H_coil, V, con.m_coil_max)
                margins = constraint_margins(des, wire, con)
                worst = min(margins.values())
                if worst < -1e-12:
                    if closest is None or worst > min(closest.values()):
                        closest = margins
                    continue
                key = (-des.objective, D, V)
                if best is None or key < best_key:
                    des.margins = margins
                    des.binding = des.binding + [k for k, v in margins.items() if v < 1e-9 and k != "wire_current"]
                    best, best_key = des, key
    if best is None:
        desc = ", ".join(f"{k} {v:+.3g}" for k, v in closest.items())
        raise InfeasibleDesign(f"no feasible coil design; closest candidate margins: {desc}", closest)
    return best


def check_design(design: DesignResult, wire: WireMaterial, constraints: DesignConstraints, tol=1e-9):
    """Recompute a design from scratch and confirm every constraint."""
    ref = dependent_parameters(wire, design.D_coil, constraints.H_coil, design.V_cir, constraints.m_coil_max)
    for key in ("Omega_coil", "N_t", "mu_max", "t_coil", "m_coil"):
        if not np.isclose(getattr(ref, key), getattr(design, key), rtol=1e-12):
            return False
    return min(constraint_margins(ref, wire, constraints).values()) >= -tol
