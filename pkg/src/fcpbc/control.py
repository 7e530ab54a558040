"""PI controllers acting on the passive output of the converter.

The regulated signal is y_N = x2_ref*x3 - x3_ref*x2, which vanishes at the
target equilibrium.  The full-information variant takes its current
reference from the true-parameter equilibrium; the adaptive variant
re-solves the equilibrium every step from the latest parameter estimates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .equilibrium import (EquilibriumPoint, NoRootError, ParameterVector,
                          SetpointSpec, solve_root)
from .model import PlantState

U_MIN_DEFAULT = 0.05
U_MAX_DEFAULT = 0.95


@dataclass(frozen=True)
class ControllerGains:
    k_p: float   # proportional gain on y_N [1/(V*A)]
    k_i: float   # integral gain [1/(V*A*s)]

    def __post_init__(self):
        if not (self.k_p > 0 and self.k_i > 0):
            raise ValueError("controller gains must be strictly positive")


@dataclass(frozen=True)
class ControllerState:
    """Integrator state x_c; at equilibrium x_c = -u*/k_i."""

    x_c: float


def passive_output(x: PlantState, x2_ref: float, x3_ref: float) -> float:
    """y_N = x2_ref*x3 - x3_ref*x2; zero when (x2, x3) hits the reference."""
    return x2_ref * x.x3 - x3_ref * x.x2


def pi_pbc_step(gains: ControllerGains, cs: ControllerState, y_n: float,
                dt: float, u_limits: tuple[float, float] | None = (U_MIN_DEFAULT, U_MAX_DEFAULT),
                antiwindup: bool = True) -> tuple[float, float, ControllerState]:
    """One control step: u = -k_p*y_N - k_i*x_c, then integrate x_c.

    Returns (u_applied, u_unsaturated, next_state).  The control is computed
    from the pre-update integrator (explicit Euler ordering).  With
    antiwindup, the integrator freezes while the output is saturated and
    y_N would push it further into the rail.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    u_unsat = -gains.k_p * y_n - gains.k_i * cs.x_c
    u = u_unsat
    frozen = False
    if u_limits is not None:
        lo, hi = u_limits
        if u > hi:
            u = hi
            frozen = antiwindup and y_n < 0.0
        elif u < lo:
            u = lo
            frozen = antiwindup and y_n > 0.0
    x_c = cs.x_c if frozen else cs.x_c + dt * y_n
    return u, u_unsat, ControllerState(x_c)


class FullInfoController:
    """PI on y_N with the current reference fixed by a known equilibrium."""

    def __init__(self, gains: ControllerGains, eq: EquilibriumPoint,
                 u_limits: tuple[float, float] | None = (U_MIN_DEFAULT, U_MAX_DEFAULT),
                 antiwindup: bool = True):
        self.gains = gains
        self.eq = eq
        self.u_limits = u_limits
        self.antiwindup = antiwindup

    def step(self, x: PlantState, cs: ControllerState,
             dt: float) -> tuple[float, float, ControllerState]:
        y_n = passive_output(x, self.eq.x_star.x2, self.eq.x_star.x3)
        return pi_pbc_step(self.gains, cs, y_n, dt, self.u_limits, self.antiwindup)


def full_info_controller(gains: ControllerGains, eq: EquilibriumPoint,
                         **kwargs) -> FullInfoController:
    return FullInfoController(gains, eq, **kwargs)


@dataclass
class ReferenceUpdate:
    x2_star_hat: float
    x1_star_hat: float
    iterations: int
    solver_failed: bool
    infeasible: bool


class AdaptiveController:
    """PI on y_N with the current reference re-solved from estimates.

    Keeps the previous root as a warm start; when the solver fails or the
    implied input leaves (0, 1), the last valid reference is held and the
    step is flagged, so the loop never aborts.
    """

    def __init__(self, gains: ControllerGains,
                 u_limits: tuple[float, float] | None = (U_MIN_DEFAULT, U_MAX_DEFAULT),
                 antiwindup: bool = True):
        self.gains = gains
        self.u_limits = u_limits
        self.antiwindup = antiwindup
        self._warm: float | None = None
        self._x2_hat: float | None = None
        self._x1_hat: float | None = None

    def update_reference(self, theta: ParameterVector,
                         x3_star: float) -> ReferenceUpdate:
        try:
            x2, p, dp, iters, method, multiple = solve_root(
                theta.theta_r1, theta.theta_r2, theta.theta_s1,
                theta.theta_s2, theta.e_oc, x3_star, self._warm)
        except NoRootError:
            if self._x2_hat is None:
                raise
            return ReferenceUpdate(self._x2_hat, self._x1_hat, 0, True, False)
        pw = math.exp(theta.theta_s2 * math.log(x2)) if x2 > 0.0 else 0.0
        x1 = theta.e_oc - theta.theta_s1 * pw
        u = x3_star * ((theta.theta_r2 - theta.theta_r1) * x2 + x1) / (
            x2 * x2 + x3_star * x3_star)
        if not (0.0 < u < 1.0) or x1 < 0.0:
            if self._x2_hat is None:
                self._warm = x2
                self._x2_hat, self._x1_hat = x2, x1
                return ReferenceUpdate(x2, x1, iters, False, True)
            return ReferenceUpdate(self._x2_hat, self._x1_hat, iters, False, True)
        self._warm = x2
        self._x2_hat, self._x1_hat = x2, x1
        return ReferenceUpdate(x2, x1, iters, False, False)

    def step(self, x: PlantState, theta: ParameterVector, x3_star: float,
             cs: ControllerState, dt: float,
             update_reference: bool = True
             ) -> tuple[float, float, ControllerState, ReferenceUpdate]:
        if update_reference or self._x2_hat is None:
            ref = self.update_reference(theta, x3_star)
        else:
            ref = ReferenceUpdate(self._x2_hat, self._x1_hat, 0, False, False)
        y_n = passive_output(x, ref.x2_star_hat, x3_star)
        u, u_unsat, cs_next = pi_pbc_step(
            self.gains, cs, y_n, dt, self.u_limits, self.antiwindup)
        return u, u_unsat, cs_next, ref


def adaptive_controller(gains: ControllerGains, **kwargs) -> AdaptiveController:
    return AdaptiveController(gains, **kwargs)


def integrator_at_equilibrium(gains: ControllerGains, u_star: float) -> float:
    """Integrator value holding the loop at rest: x_c = -u*/k_i."""
    return -u_star / gains.k_i


def setpoint(x3_star: float) -> SetpointSpec:
    return SetpointSpec(x3_star)
