"""Assignable equilibria of the converter for a chosen output-voltage setpoint.

For a setpoint x3* the equilibrium inductor current solves the scalar
equation p(x2) = theta_r1*x2^2 + theta_r2*x3*^2 - x2*(e_oc - theta_s1*x2^theta_s2) = 0.
p is strictly convex on x2 > 0 with p(0) > 0, so it has at most two positive
roots; the smaller one (negative p-slope branch) is the low-current,
high-efficiency operating point and is the one returned.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .model import LN_CLAMP, PlantParams, PlantState


class NoRootError(RuntimeError):
    """The equilibrium polynomial has no positive root at the requested setpoint."""


@dataclass(frozen=True)
class ParameterVector:
    """Parameters the equilibrium equations depend on (true or estimated)."""

    theta_r1: float   # series resistance [ohm]
    theta_r2: float   # load conductance [S]
    theta_s1: float   # curve scale
    theta_s2: float   # curve exponent
    e_oc: float       # open-circuit voltage [V]

    def __post_init__(self):
        if self.e_oc <= 0 or self.theta_s2 <= 0:
            raise ValueError("e_oc and theta_s2 must be strictly positive")
        if self.theta_r1 < 0 or self.theta_r2 < 0 or self.theta_s1 < 0:
            raise ValueError("resistive parameters must be nonnegative")

    @classmethod
    def from_plant(cls, params: PlantParams) -> "ParameterVector":
        return cls(params.theta_r1, params.theta_r2, params.curve.theta_s1,
                   params.curve.theta_s2, params.curve.e_oc)


@dataclass(frozen=True)
class SetpointSpec:
    """Requested output voltage x3* [V]."""

    x3_star: float

    def __post_init__(self):
        if not self.x3_star > 0:
            raise ValueError("setpoint must be strictly positive")


@dataclass(frozen=True)
class EquilibriumPoint:
    x_star: PlantState
    u_star: float
    theta_used: ParameterVector
    residual: float        # p at the returned root
    iterations: int
    feasible: bool         # u_star inside (0, 1)
    multiple_roots: bool   # a second (high-current) root exists; smallest kept
    degenerate: bool       # |dp/dx2| at the root below the degeneracy margin
    method: str            # "newton" or "bisection"


def equilibrium_polynomial(theta: ParameterVector, x2: float, x3_star: float) -> float:
    """p(x2) whose roots are the assignable equilibrium currents."""
    pw = math.exp(theta.theta_s2 * math.log(x2)) if x2 > 0.0 else 0.0
    return (theta.theta_r1 * x2 * x2 + theta.theta_r2 * x3_star * x3_star
            - x2 * (theta.e_oc - theta.theta_s1 * pw))


def equilibrium_polynomial_slope(theta: ParameterVector, x2: float) -> float:
    """dp/dx2; increasing in x2 (p is strictly convex), negative at the small root."""
    pw = math.exp(theta.theta_s2 * math.log(x2)) if x2 > 0.0 else 0.0
    return (2.0 * theta.theta_r1 * x2
            + (theta.theta_s2 + 1.0) * theta.theta_s1 * pw - theta.e_oc)


def assignability_condition(theta: ParameterVector, x2_star: float) -> float:
    """Well-posedness margin 2*r1*x2* + (s2+1)*s1*x2*^s2 - e_oc.

    This is dp/dx2 at the root; a value near zero means the equilibrium
    current is ill-conditioned against parameter perturbations.
    """
    return equilibrium_polynomial_slope(theta, x2_star)


def solve_root(theta_r1: float, theta_r2: float, theta_s1: float,
               theta_s2: float, e_oc: float, x3_star: float,
               guess: float | None = None, tol_scale: float = 1e-9,
               max_iter: int = 50) -> tuple[float, float, float, int, str, bool]:
    """Smallest positive root of p; scalar core shared by the hot loops.

    Returns (x2, p(x2), dp(x2), iterations, method, multiple_roots).
    Raises NoRootError when min p > tolerance.
    """
    x3sq = x3_star * x3_star
    tol = tol_scale * max(1.0, theta_r2 * x3sq)

    def p_dp(x2: float) -> tuple[float, float]:
        pw = math.exp(theta_s2 * math.log(x2)) if x2 > 0.0 else 0.0
        p = theta_r1 * x2 * x2 + theta_r2 * x3sq - x2 * (e_oc - theta_s1 * pw)
        dp = 2.0 * theta_r1 * x2 + (theta_s2 + 1.0) * theta_s1 * pw - e_oc
        return p, dp

    def polish(x2: float, p: float, dp: float, iters: int):
        for _ in range(2):
            if dp == 0.0:
                break
            x2n = x2 - p / dp
            if x2n <= 0.0:
                break
            pn, dpn = p_dp(x2n)
            iters += 1
            if abs(pn) < abs(p):
                x2, p, dp = x2n, pn, dpn
            else:
                break
        return x2, p, dp, iters

    iters = 0
    # Warm path: plain Newton from the guess; accept only on the dp < 0 branch,
    # which is the smallest-root branch of the convex p.
    if guess is not None and guess > 0.0:
        x2 = guess
        for _ in range(max_iter):
            p, dp = p_dp(x2)
            iters += 1
            if abs(p) <= tol:
                if dp < 0.0:
                    x2, p, dp, iters = polish(x2, p, dp, iters)
                    multiple = theta_r1 > 0.0 or theta_s1 > 0.0
                    return x2, p, dp, iters, "newton", multiple
                break  # converged on the high-current branch: redo bracketed
            if dp == 0.0:
                break
            x2n = x2 - p / dp
            if x2n <= 0.0:
                x2n = 0.5 * x2
            x2 = x2n

    # Full path.  p' is increasing from -e_oc, so the minimizer of p is the
    # unique positive zero of p'; bracket it by doubling, then bisect.
    if theta_r1 == 0.0 and theta_s1 == 0.0:
        # p is affine: p = theta_r2*x3sq - x2*e_oc.
        x2 = theta_r2 * x3sq / e_oc
        p, dp = p_dp(x2)
        return x2, p, dp, iters + 1, "newton", False

    hi = 1.0
    for _ in range(200):
        _, dp = p_dp(hi)
        iters += 1
        if dp > 0.0:
            break
        hi *= 2.0
    else:
        raise NoRootError("could not bracket the minimizer of p")
    lo = 0.0
    for _ in range(90):
        mid = 0.5 * (lo + hi)
        _, dpm = p_dp(mid)
        iters += 1
        if dpm < 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, hi):
            break
    x2_min = 0.5 * (lo + hi)
    p_min, dp_min = p_dp(x2_min)
    iters += 1
    if p_min > tol:
        raise NoRootError(
            f"p has no positive root for x3*={x3_star} (min p = {p_min:.6g} "
            f"at x2 = {x2_min:.6g}); the setpoint demands more power than "
            "the stack can transfer")
    if abs(p_min) <= tol:
        # Tangent (double) root: the two branches coincide.
        return x2_min, p_min, dp_min, iters, "bisection", False

    # Exactly one root in (0, x2_min): safeguarded Newton on the bracket.
    blo, bhi = 0.0, x2_min  # p(blo) > 0, p(bhi) < 0
    x2 = theta_r2 * x3sq / e_oc  # lossless power-balance estimate
    if not blo < x2 < bhi:
        x2 = 0.5 * (blo + bhi)
    method = "newton"
    for _ in range(max_iter + 90):
        p, dp = p_dp(x2)
        iters += 1
        if abs(p) <= tol:
            x2, p, dp, iters = polish(x2, p, dp, iters)
            return x2, p, dp, iters, method, True
        if p > 0.0:
            blo = x2
        else:
            bhi = x2
        x2n = x2 - p / dp if dp != 0.0 else blo - 1.0
        if not blo < x2n < bhi:
            x2n = 0.5 * (blo + bhi)
            method = "bisection"
        x2 = x2n
    raise NoRootError("root refinement did not converge")


def solve_equilibrium(theta: ParameterVector, spec: SetpointSpec,
                      guess: float | None = None, *, tol_scale: float = 1e-9,
                      max_iter: int = 50,
                      degeneracy_margin: float | None = None) -> EquilibriumPoint:
    """Equilibrium (x*, u*) for the setpoint, solving p(x2) = 0 by Newton.

    The returned point is flagged infeasible when u* falls outside (0, 1);
    it is never clamped, since the boost topology cannot realize it.
    """
    x3s = spec.x3_star
    x2, p, dp, iters, method, multiple = solve_root(
        theta.theta_r1, theta.theta_r2, theta.theta_s1, theta.theta_s2,
        theta.e_oc, x3s, guess, tol_scale, max_iter)

    pw = math.exp(theta.theta_s2 * math.log(x2)) if x2 > 0.0 else 0.0
    x1 = theta.e_oc - theta.theta_s1 * pw
    if x1 < 0.0:
        raise NoRootError(
            f"root x2={x2:.6g} implies negative stack voltage; no operating "
            "point on the polarization curve")
    u = x3s * ((theta.theta_r2 - theta.theta_r1) * x2 + x1) / (x2 * x2 + x3s * x3s)

    margin = degeneracy_margin if degeneracy_margin is not None else 1e-6 * theta.e_oc
    return EquilibriumPoint(
        x_star=PlantState(x1, x2, x3s),
        u_star=u,
        theta_used=theta,
        residual=p,
        iterations=iters,
        feasible=0.0 < u < 1.0,
        multiple_roots=multiple,
        degenerate=abs(dp) < margin,
        method=method,
    )
