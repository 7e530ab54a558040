"""Averaged model of the fuel-cell / boost-converter plant.

States: x1 = v_fc (stack voltage), x2 = i_L (inductor current),
x3 = v_o (output voltage).  The control input u = 1 - D is the
complementary duty cycle of the boost switch, valid on (0, 1).

The stack voltage and current are tied by a two-term power-function
polarization curve i_fc = ((E_oc - v_fc)/theta_s1)^(1/theta_s2), which is
strictly decreasing in v_fc; its negative is strongly monotonic, which is
the property the controller design leans on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Floor for the power-law argument so the log form stays finite at v_fc -> E_oc.
LN_CLAMP = 1e-12


class PolarizationDomainError(ValueError):
    """Stack voltage outside the polarization curve domain [0, E_oc]."""


@dataclass(frozen=True)
class FcCurveParams:
    """Polarization curve i_fc = ((e_oc - v_fc)/theta_s1)^(1/theta_s2)."""

    e_oc: float       # open-circuit voltage [V]
    theta_s1: float   # curve scale [V * A^-theta_s2]
    theta_s2: float   # curve exponent [-]

    def __post_init__(self):
        if not (self.e_oc > 0 and self.theta_s1 > 0 and self.theta_s2 > 0):
            raise ValueError("curve parameters must be strictly positive")


@dataclass(frozen=True)
class PlantParams:
    """Physical constants of the converter plus the true parameter vector."""

    c_fc: float            # fuel-cell coupling capacitance [F]
    l: float               # boost inductance [H]
    c: float               # output capacitance [F]
    theta_r1: float        # series (parasitic) resistance in the inductor branch [ohm]
    theta_r2: float        # load conductance 1/R_L [S]
    curve: FcCurveParams
    f_sw: float = 100e3    # switching frequency [Hz]; metadata only, the model is averaged

    def __post_init__(self):
        for name in ("c_fc", "l", "c", "theta_r1", "theta_r2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")


@dataclass(frozen=True)
class PlantState:
    """State triple (v_fc, i_L, v_o).  v_fc and v_o are nonnegative."""

    x1: float   # stack voltage [V]
    x2: float   # inductor current [A]
    x3: float   # output voltage [V]

    def __post_init__(self):
        if not (math.isfinite(self.x1) and math.isfinite(self.x2) and math.isfinite(self.x3)):
            raise ValueError("state components must be finite")
        if self.x1 < 0 or self.x3 < 0:
            raise ValueError("stack and output voltages must be nonnegative")


@dataclass(frozen=True)
class ControlInput:
    """Complementary duty cycle u = 1 - D, restricted to (0, 1)."""

    u: float

    def __post_init__(self):
        if not 0.0 < self.u < 1.0:
            raise ValueError("control input must lie in (0, 1)")

    @property
    def duty_cycle(self) -> float:
        return 1.0 - self.u


def polarization_current(curve: FcCurveParams, v_fc: float) -> float:
    """Stack current [A] drawn at stack voltage v_fc.

    Evaluated as exp(ln(w)/theta_s2) with w = (e_oc - v_fc)/theta_s1 floored
    at LN_CLAMP; returns exactly 0.0 at v_fc = e_oc.
    """
    if v_fc < 0.0 or v_fc > curve.e_oc:
        raise PolarizationDomainError(
            f"v_fc={v_fc!r} outside [0, {curve.e_oc}]")
    w = (curve.e_oc - v_fc) / curve.theta_s1
    if w <= 0.0:
        return 0.0
    if w < LN_CLAMP:
        w = LN_CLAMP
    return math.exp(math.log(w) / curve.theta_s2)


def polarization_slope(curve: FcCurveParams, v_fc: float) -> float:
    """Slope of -i_fc with respect to v_fc; strictly positive on [0, e_oc)."""
    if v_fc < 0.0 or v_fc >= curve.e_oc:
        raise PolarizationDomainError(
            f"v_fc={v_fc!r} outside [0, {curve.e_oc})")
    w = (curve.e_oc - v_fc) / curve.theta_s1
    if w < LN_CLAMP:
        w = LN_CLAMP
    return math.exp((1.0 / curve.theta_s2 - 1.0) * math.log(w)) / (
        curve.theta_s1 * curve.theta_s2)


def monotonicity_constant(curve: FcCurveParams, v_lo: float, v_hi: float,
                          grid_points: int = 0) -> float:
    """Strong-monotonicity constant of -i_fc over [v_lo, v_hi].

    The slope is monotone in v_fc for this curve family (increasing for
    theta_s2 > 1, decreasing for theta_s2 < 1), so the minimum sits at an
    endpoint.  grid_points > 0 adds a guard scan over the interval.
    """
    if not (0.0 <= v_lo < v_hi < curve.e_oc):
        raise PolarizationDomainError(
            f"invalid interval [{v_lo}, {v_hi}] within [0, {curve.e_oc})")
    alpha = min(polarization_slope(curve, v_lo), polarization_slope(curve, v_hi))
    if grid_points > 0:
        for v in np.linspace(v_lo, v_hi, grid_points):
            alpha = min(alpha, polarization_slope(curve, float(v)))
    return alpha


def plant_derivative(params: PlantParams, state: PlantState,
                     u: float) -> tuple[float, float, float]:
    """Component-form state derivative (dx1, dx2, dx3) of the averaged model."""
    i_fc = polarization_current(params.curve, state.x1)
    dx1 = (i_fc - state.x2) / params.c_fc
    dx2 = (-params.theta_r1 * state.x2 + state.x1 - u * state.x3) / params.l
    dx3 = (-params.theta_r2 * state.x3 + u * state.x2) / params.c
    return dx1, dx2, dx3


# Matrix form Q dx/dt = [J0 + J1 u - R] x + v1 * i_fc(x1).  J0 couples the
# stack capacitor to the inductor, J1 routes the inductor to the output
# through the switch, R collects the dissipation terms.

def storage_matrix(params: PlantParams) -> np.ndarray:
    return np.diag([params.c_fc, params.l, params.c])


def interconnection_fixed() -> np.ndarray:
    return np.array([[0.0, -1.0, 0.0],
                     [1.0, 0.0, 0.0],
                     [0.0, 0.0, 0.0]])


def interconnection_input() -> np.ndarray:
    return np.array([[0.0, 0.0, 0.0],
                     [0.0, 0.0, -1.0],
                     [0.0, 1.0, 0.0]])


def damping_matrix(params: PlantParams) -> np.ndarray:
    return np.diag([0.0, params.theta_r1, params.theta_r2])


def input_channel(state: PlantState) -> np.ndarray:
    """Input vector g(x) = J1 x = (0, -x3, x2); its first entry is structurally zero."""
    return np.array([0.0, -state.x3, state.x2])


def plant_derivative_matrix_form(params: PlantParams, state: PlantState,
                                 u: float) -> np.ndarray:
    """Same derivative through the matrix realization; cross-check path."""
    x = np.array([state.x1, state.x2, state.x3])
    a = interconnection_fixed() + u * interconnection_input() - damping_matrix(params)
    rhs = a @ x
    rhs[0] += polarization_current(params.curve, state.x1)
    return rhs / np.array([params.c_fc, params.l, params.c])
