"""
Material Module
Temperature-dependent generalized Maxwell law for beam cross-sections:
WLF shifting, section stiffness tensors, trapezoidal history vectors and
stress resultants
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from modules.errors import InvalidArgumentError, TemperatureRangeError

logger = logging.getLogger(__name__)

MPA = 1.0e6


@dataclass(frozen=True)
class WLFParams:
    """Williams-Landel-Ferry constants; T_G is also the reference temperature"""

    C1: float
    C2: float
    T_G: float

    def __post_init__(self):
        if self.C2 <= 0.0:
            raise InvalidArgumentError(f"WLF C2 must be positive, got {self.C2}")


@dataclass(frozen=True)
class MaxwellBranch:
    E: float
    tau_G: float

    def __post_init__(self):
        if self.E < 0.0:
            raise InvalidArgumentError(f"branch modulus must be >= 0, got {self.E}")
        if self.tau_G <= 0.0:
            raise InvalidArgumentError(f"relaxation time must be > 0, got {self.tau_G}")


@dataclass
class MaxwellMaterial:
    """Equilibrium spring plus Maxwell branches (moduli in Pa)"""

    name: str
    E_inf: float
    branches: List[MaxwellBranch]
    wlf: WLFParams
    nu: float = 0.33

    @property
    def E_0(self) -> float:
        return self.E_inf + sum(b.E for b in self.branches)

    def shear_modulus(self, E: float) -> float:
        return E / (2.0 * (1.0 + self.nu))

    def relaxation_times(self, T: float) -> np.ndarray:
        return np.array([relaxation_time(b, self.wlf, T) for b in self.branches])

    def elastic_only(self) -> "MaxwellMaterial":
        """Same material reduced to its equilibrium spring"""
        return MaxwellMaterial(f"{self.name}-elastic", self.E_inf, [], self.wlf, self.nu)


@dataclass(frozen=True)
class SectionProperties:
    area: float
    I1: float
    I2: float
    Jt: float
    kappa: float = 1.0

    def __post_init__(self):
        for key in ("area", "I1", "I2", "Jt", "kappa"):
            if getattr(self, key) <= 0.0:
                raise InvalidArgumentError(f"section property {key} must be positive")

    @classmethod
    def circular(cls, diameter: float, kappa: float = 1.0) -> "SectionProperties":
        if diameter <= 0.0:
            raise InvalidArgumentError(f"diameter must be positive, got {diameter}")
        return cls(area=np.pi * diameter ** 2 / 4.0,
                   I1=np.pi * diameter ** 4 / 64.0,
                   I2=np.pi * diameter ** 4 / 64.0,
                   Jt=np.pi * diameter ** 4 / 32.0,
                   kappa=kappa)


@dataclass
class StiffnessTensors:
    """Diagonals of the equilibrium and branch section tensors.

    C_N = diag(G k A, G k A, E A) and C_M = diag(E I1, E I2, G Jt), local
    axis 3 along the tangent. Branch arrays have shape (m, 3).
    """

    C_N_inf: np.ndarray
    C_M_inf: np.ndarray
    C_N_branches: np.ndarray
    C_M_branches: np.ndarray

    @property
    def m(self) -> int:
        return len(self.C_N_branches)

    @property
    def C_N0(self) -> np.ndarray:
        return self.C_N_inf + self.C_N_branches.sum(axis=0)

    @property
    def C_M0(self) -> np.ndarray:
        return self.C_M_inf + self.C_M_branches.sum(axis=0)

    def scaled(self, factor: float) -> "StiffnessTensors":
        return StiffnessTensors(factor * self.C_N_inf, factor * self.C_M_inf,
                                factor * self.C_N_branches, factor * self.C_M_branches)


def _section_diagonals(E: float, G: float, section: SectionProperties) -> Tuple[np.ndarray, np.ndarray]:
    C_N = np.array([G * section.kappa * section.area, G * section.kappa * section.area, E * section.area])
    C_M = np.array([E * section.I1, E * section.I2, G * section.Jt])
    return C_N, C_M


def build_section_tensors(material: MaxwellMaterial, section: SectionProperties) -> StiffnessTensors:
    C_N_inf, C_M_inf = _section_diagonals(material.E_inf, material.shear_modulus(material.E_inf), section)
    m = len(material.branches)
    C_N_br = np.zeros((m, 3))
    C_M_br = np.zeros((m, 3))
    for a, branch in enumerate(material.branches):
        C_N_br[a], C_M_br[a] = _section_diagonals(branch.E, material.shear_modulus(branch.E), section)
    return StiffnessTensors(C_N_inf, C_M_inf, C_N_br, C_M_br)


def shift_factor(wlf: WLFParams, T: float) -> float:
    """log10 shift a_T = -C1 (T - T_G) / (C2 + T - T_G)"""
    dT = T - wlf.T_G
    denom = wlf.C2 + dT
    if denom <= 0.0:
        raise TemperatureRangeError(
            f"temperature {T} degC outside WLF range (C2 + T - T_G = {denom:.4g} <= 0)")
    return -wlf.C1 * dT / denom


def relaxation_time(branch: MaxwellBranch, wlf: WLFParams, T: float) -> float:
    with np.errstate(over="ignore"):
        return float(branch.tau_G * np.power(10.0, shift_factor(wlf, T)))


def _step_ratio(taus: np.ndarray, h: float) -> np.ndarray:
    if h <= 0.0:
        raise InvalidArgumentError(f"time step must be positive, got {h}")
    taus = np.asarray(taus, dtype=float)
    if np.any(taus <= 0.0):
        raise InvalidArgumentError("relaxation times must be positive")
    # r = h / tau; tau = inf gives the frozen (glassy) limit r = 0
    return h / taus


def effective_stiffness(tensors: StiffnessTensors, taus: Sequence[float], h: float) -> Tuple[np.ndarray, np.ndarray]:
    """Algorithmic tangents C_bar = C_0 - sum C_a h / (2 tau_a + h)"""
    r = _step_ratio(taus, h)
    relaxed = r / (2.0 + r)
    return tensors.C_N0 - relaxed @ tensors.C_N_branches, tensors.C_M0 - relaxed @ tensors.C_M_branches


def history_vectors(strain: np.ndarray, viscous: np.ndarray, taus: Sequence[float], h: float) -> np.ndarray:
    """Psi_a = (h / tau_a) strain + ((2 tau_a - h) / tau_a) viscous_a.

    strain has shape (..., 3), viscous (..., m, 3); returns (..., m, 3).
    Used for both the axial/shear and the curvature blocks, and for their
    s-derivatives since tau_a is uniform along a patch.
    """
    r = _step_ratio(taus, h)[:, None]
    return r * np.asarray(strain)[..., None, :] + (2.0 - r) * np.asarray(viscous)


def update_viscous_strains(strain: np.ndarray, psi: np.ndarray, taus: Sequence[float], h: float) -> np.ndarray:
    """viscous_a = h / (2 tau + h) strain + tau / (2 tau + h) Psi_a"""
    r = _step_ratio(taus, h)[:, None]
    return (r / (2.0 + r)) * np.asarray(strain)[..., None, :] + psi / (2.0 + r)


def stress_resultants(gamma: np.ndarray, kappa: np.ndarray, gamma_a: np.ndarray, kappa_a: np.ndarray,
                      tensors: StiffnessTensors) -> Tuple[np.ndarray, np.ndarray]:
    """Direct Prony form N = C_inf Gamma + sum C_a (Gamma - Gamma_a), M likewise"""
    gamma = np.asarray(gamma)
    kappa = np.asarray(kappa)
    N = tensors.C_N_inf * gamma + np.sum(tensors.C_N_branches * (gamma[..., None, :] - gamma_a), axis=-2)
    M = tensors.C_M_inf * kappa + np.sum(tensors.C_M_branches * (kappa[..., None, :] - kappa_a), axis=-2)
    return N, M


def stress_resultants_frozen(gamma: np.ndarray, kappa: np.ndarray, psi_gamma: np.ndarray, psi_kappa: np.ndarray,
                             tensors: StiffnessTensors, taus: Sequence[float], h: float) -> Tuple[np.ndarray, np.ndarray]:
    """Equivalent form N = C_bar_N Gamma - sum C_Na tau / (2 tau + h) Psi_a"""
    C_N, C_M = effective_stiffness(tensors, taus, h)
    beta = 1.0 / (2.0 + _step_ratio(taus, h))[:, None]
    N = C_N * gamma - np.sum(tensors.C_N_branches * beta * psi_gamma, axis=-2)
    M = C_M * kappa - np.sum(tensors.C_M_branches * beta * psi_kappa, axis=-2)
    return N, M


def frozen_history_terms(psi: np.ndarray, branches: np.ndarray, taus: Sequence[float], h: float) -> np.ndarray:
    """sum_a C_a tau_a / (2 tau_a + h) Psi_a, shape (..., 3)"""
    if len(branches) == 0:
        return np.zeros(np.shape(psi)[:-2] + (3,))
    beta = 1.0 / (2.0 + _step_ratio(taus, h))[:, None]
    return np.sum(branches * beta * psi, axis=-2)


@dataclass
class ViscousHistory:
    """Branch strains and frozen step vectors at the collocation points of a patch.

    Arrays have shape (n, m, 3). The *_s arrays hold arc-length derivatives.
    psi_* are only rewritten by `freeze` at step boundaries.
    """

    gamma: np.ndarray
    kappa: np.ndarray
    gamma_s: np.ndarray
    kappa_s: np.ndarray
    psi_gamma: np.ndarray = field(default=None)
    psi_kappa: np.ndarray = field(default=None)
    psi_gamma_s: np.ndarray = field(default=None)
    psi_kappa_s: np.ndarray = field(default=None)

    def __post_init__(self):
        for name in ("psi_gamma", "psi_kappa", "psi_gamma_s", "psi_kappa_s"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros_like(self.gamma))

    @classmethod
    def zeros(cls, n: int, m: int) -> "ViscousHistory":
        z = np.zeros((n, m, 3))
        return cls(z.copy(), z.copy(), z.copy(), z.copy())

    def copy(self) -> "ViscousHistory":
        return ViscousHistory(*(np.array(getattr(self, k)) for k in (
            "gamma", "kappa", "gamma_s", "kappa_s", "psi_gamma", "psi_kappa", "psi_gamma_s", "psi_kappa_s")))

    def freeze(self, gamma: np.ndarray, kappa: np.ndarray, gamma_s: np.ndarray, kappa_s: np.ndarray,
               taus: Sequence[float], h: float):
        """Compute Psi from the converged strains of t^n with tau^n"""
        self.psi_gamma = history_vectors(gamma, self.gamma, taus, h)
        self.psi_kappa = history_vectors(kappa, self.kappa, taus, h)
        self.psi_gamma_s = history_vectors(gamma_s, self.gamma_s, taus, h)
        self.psi_kappa_s = history_vectors(kappa_s, self.kappa_s, taus, h)

    def update(self, gamma: np.ndarray, kappa: np.ndarray, gamma_s: np.ndarray, kappa_s: np.ndarray,
               taus: Sequence[float], h: float):
        """Viscous strains of t^{n+1} from the current total strains and frozen Psi"""
        self.gamma = update_viscous_strains(gamma, self.psi_gamma, taus, h)
        self.kappa = update_viscous_strains(kappa, self.psi_kappa, taus, h)
        self.gamma_s = update_viscous_strains(gamma_s, self.psi_gamma_s, taus, h)
        self.kappa_s = update_viscous_strains(kappa_s, self.psi_kappa_s, taus, h)


# Van Manen PLA: 15 Maxwell elements (MPa, s at T_G)
PLA_BRANCHES = [
    (20.12, 1e-10), (50.31, 1e-9), (81.37, 1e-8), (97.02, 1e-7), (173.70, 1e-6),
    (225.60, 1e-5), (292.64, 1e-4), (474.56, 1e-3), (449.43, 1e-2), (237.98, 1e-1),
    (114.16, 1e0), (51.82, 1e1), (29.98, 1e2), (14.40, 1e3), (0.72, 1e5),
]
PLA_E_INF = 80.59

WLF_TABLE: Dict[str, WLFParams] = {
    "row1": WLFParams(14.59, 48.43, 70.0),
    "row2": WLFParams(17.44, 51.60, 66.9),
}


def builtin_material(name: str, wlf: Optional[WLFParams] = None, nu: float = 0.33) -> MaxwellMaterial:
    """Named material from the built-in table"""
    if name != "PLA-vanManen":
        raise InvalidArgumentError(f"unknown material '{name}' (available: PLA-vanManen)")
    branches = [MaxwellBranch(E * MPA, tau) for E, tau in PLA_BRANCHES]
    return MaxwellMaterial(name, PLA_E_INF * MPA, branches, wlf or WLF_TABLE["row1"], nu)


def material_from_table(name: str, E_inf_mpa: float, table: Sequence[Sequence[float]],
                        wlf: WLFParams, nu: float) -> MaxwellMaterial:
    branches = [MaxwellBranch(float(E) * MPA, float(tau)) for E, tau in table]
    logger.info(f"Material {name}: E_inf={E_inf_mpa} MPa, {len(branches)} Maxwell branches")
    return MaxwellMaterial(name, float(E_inf_mpa) * MPA, branches, wlf, nu)
