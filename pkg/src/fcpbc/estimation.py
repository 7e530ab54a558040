"""Online hybrid parameter estimator.

The curve exponent theta_s2 comes from gradient descent on a linear
regression built by passing the logs of (e_oc - x1) and i_fc through the
washout filter lam*s/(s + lam); the filter kills the constant log-offset so
that Y = phi * theta_s2 holds after the transient.  theta_s1 then follows
algebraically from the measured point.  The resistive parameters use an
immersion-and-invariance construction whose error obeys
d/dt e = -k * x^2 * e along any plant trajectory.

State containers are immutable and threaded through the step functions;
the scalar *_core functions are the single source of truth shared with the
simulation hot loops.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

EPS_LOG = 1e-9            # clamp for the log channels; clamped samples are invalid
THETA_S2_MIN = 0.05       # projection interval keeping the curve and the
THETA_S2_MAX = 5.0        # equilibrium polynomial well posed


@dataclass(frozen=True)
class EstimatorGains:
    gamma: float   # gradient gain
    k1: float      # I&I gain, series-resistance channel
    k2: float      # I&I gain, load-conductance channel
    lam: float     # washout filter constant [1/s]

    def __post_init__(self):
        if not (self.gamma > 0 and self.k1 > 0 and self.k2 > 0 and self.lam > 0):
            raise ValueError("estimator gains must be strictly positive")


@dataclass(frozen=True)
class FilterState:
    """Internal states of the two washout channels."""

    z_y: float     # channel ln(e_oc - x1)
    z_phi: float   # channel ln(i_fc)
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValueError("filter constant must be strictly positive")


class RegressionSample(NamedTuple):
    y: float       # filtered log-voltage signal
    phi: float     # filtered log-current regressor
    valid: bool    # False while a log clamp is active


@dataclass(frozen=True)
class EstimatorState:
    gains: EstimatorGains
    filt: FilterState
    theta_s2_hat: float
    theta_s1_hat: float
    xi1: float            # I&I auxiliary, series-resistance channel
    xi2: float            # I&I auxiliary, load-conductance channel
    last_x2: float
    last_x3: float
    projections: int = 0      # times the theta_s2 projection clipped
    invalid_samples: int = 0  # times the gradient update was suspended


@dataclass(frozen=True)
class ParameterEstimate:
    theta_r1_hat: float
    theta_r2_hat: float
    theta_s1_hat: float
    theta_s2_hat: float

    @property
    def resistive_negative(self) -> bool:
        """Transient excursions of the unconstrained I&I estimates."""
        return self.theta_r1_hat < 0 or self.theta_r2_hat < 0


def filter_step(z: float, f_in: float, lam: float,
                dt: float) -> tuple[float, float]:
    """One Euler step of the washout lam*s/(s+lam) on a single channel.

    output = lam*(f_in - z);  z <- z + dt*lam*(f_in - z).
    Returns (output, z_next).
    """
    out = lam * (f_in - z)
    return out, z + dt * out


def gradient_core(theta_s2: float, theta_s1: float, y: float, phi: float,
                  x1: float, i_fc: float, e_oc: float, gamma: float,
                  dt: float) -> tuple[float, float, bool]:
    """Gradient update of theta_s2 plus the algebraic theta_s1 map.

    Returns (theta_s2_new, theta_s1_new, projected).
    """
    ths2 = theta_s2 + dt * gamma * phi * (y - phi * theta_s2)
    projected = False
    if ths2 < THETA_S2_MIN:
        ths2 = THETA_S2_MIN
        projected = True
    elif ths2 > THETA_S2_MAX:
        ths2 = THETA_S2_MAX
        projected = True
    if i_fc > EPS_LOG and e_oc - x1 > 0.0:
        ths1 = (e_oc - x1) * math.exp(-ths2 * math.log(i_fc))
    else:
        ths1 = theta_s1  # no curve information in the sample; hold
    return ths2, ths1, projected


def iandi_core(xi1: float, xi2: float, x1: float, x2: float, x3: float,
               u: float, k1: float, k2: float, l: float, c: float,
               dt: float) -> tuple[float, float]:
    """Euler step of the I&I auxiliary states."""
    xi1n = xi1 - dt * k1 * x2 * (-x1 - 0.5 * k1 * l * x2 ** 3 + xi1 * x2 + x3 * u)
    xi2n = xi2 - dt * k2 * x3 * (-x2 * u - 0.5 * k2 * c * x3 ** 3 + xi2 * x3)
    return xi1n, xi2n


def theta_r_from_state(xi1: float, xi2: float, x2: float, x3: float,
                       k1: float, k2: float, l: float,
                       c: float) -> tuple[float, float]:
    """I&I output maps theta_r1 = xi1 - (k1/2)*L*x2^2, theta_r2 = xi2 - (k2/2)*C*x3^2."""
    return xi1 - 0.5 * k1 * l * x2 * x2, xi2 - 0.5 * k2 * c * x3 * x3


def initial_state(gains: EstimatorGains, l: float, c: float, *, x1: float,
                  x2: float, x3: float, i_fc: float, e_oc: float,
                  theta_s2_0: float = 1.0, theta_r1_0: float = 0.010,
                  theta_r2_0: float = 0.050) -> EstimatorState:
    """Estimator state at the first sample.

    The filter states are seeded with the first channel inputs so the
    constant log-offset is absorbed from the start; the I&I auxiliaries are
    set so the resistive estimates begin at the given priors.
    """
    z_y = math.log(max(e_oc - x1, EPS_LOG))
    z_phi = math.log(max(i_fc, EPS_LOG))
    if i_fc > EPS_LOG and e_oc - x1 > 0.0:
        ths1 = (e_oc - x1) * math.exp(-theta_s2_0 * math.log(i_fc))
    else:
        ths1 = 1.0
    return EstimatorState(
        gains=gains,
        filt=FilterState(z_y, z_phi, gains.lam),
        theta_s2_hat=theta_s2_0,
        theta_s1_hat=ths1,
        xi1=theta_r1_0 + 0.5 * gains.k1 * l * x2 * x2,
        xi2=theta_r2_0 + 0.5 * gains.k2 * c * x3 * x3,
        last_x2=x2,
        last_x3=x3,
    )


def regression_sample(es: EstimatorState, x1: float, i_fc: float, e_oc: float,
                      dt: float) -> tuple[RegressionSample, EstimatorState]:
    """Push the log channels through the washout filter.

    Clamped channels (stack at open circuit or vanishing current) yield an
    invalid sample; the caller suspends the gradient update for it.
    """
    wv = e_oc - x1
    valid = wv > EPS_LOG and i_fc > EPS_LOG
    y, z_y = filter_step(es.filt.z_y, math.log(max(wv, EPS_LOG)),
                         es.filt.lam, dt)
    phi, z_phi = filter_step(es.filt.z_phi, math.log(max(i_fc, EPS_LOG)),
                             es.filt.lam, dt)
    es = replace(es, filt=FilterState(z_y, z_phi, es.filt.lam))
    return RegressionSample(y, phi, valid), es


def gradient_step(es: EstimatorState, rs: RegressionSample, x1: float,
                  i_fc: float, e_oc: float, dt: float) -> EstimatorState:
    """Update theta_s2 (projected) and theta_s1; skipped on invalid samples."""
    if not rs.valid:
        return replace(es, invalid_samples=es.invalid_samples + 1)
    ths2, ths1, projected = gradient_core(
        es.theta_s2_hat, es.theta_s1_hat, rs.y, rs.phi, x1, i_fc, e_oc,
        es.gains.gamma, dt)
    return replace(es, theta_s2_hat=ths2, theta_s1_hat=ths1,
                   projections=es.projections + (1 if projected else 0))


def iandi_step(es: EstimatorState, x1: float, x2: float, x3: float, u: float,
               l: float, c: float, dt: float) -> EstimatorState:
    """Advance the I&I auxiliaries with the applied input u and measured state."""
    xi1, xi2 = iandi_core(es.xi1, es.xi2, x1, x2, x3, u,
                          es.gains.k1, es.gains.k2, l, c, dt)
    return replace(es, xi1=xi1, xi2=xi2, last_x2=x2, last_x3=x3)


def estimate(es: EstimatorState, l: float, c: float) -> ParameterEstimate:
    """Assemble the four current estimates from the state and latest measurements."""
    r1, r2 = theta_r_from_state(es.xi1, es.xi2, es.last_x2, es.last_x3,
                                es.gains.k1, es.gains.k2, l, c)
    return ParameterEstimate(r1, r2, es.theta_s1_hat, es.theta_s2_hat)


def replay_estimates(t, x1, x2, x3, i_fc, u, *, gains: EstimatorGains,
                     l: float, c: float, e_oc: float, theta_s2_0: float = 1.0,
                     theta_r1_0: float = 0.010,
                     theta_r2_0: float = 0.050) -> dict[str, np.ndarray]:
    """Run the estimator offline over a recorded trace.

    Mirrors the online ordering exactly: the filters are seeded from row 0,
    the gradient uses the current row, and the I&I update at row k uses the
    input applied over the previous interval (row k-1), so a replay of a
    simulated trace reproduces the online estimates bit for bit.
    """
    t = np.asarray(t, dtype=float)
    n = t.size
    if n < 2:
        raise ValueError("replay needs at least two samples")
    dts = np.diff(t)
    dt = float(dts[0])
    if not np.allclose(dts, dt, rtol=1e-9, atol=1e-12):
        raise ValueError("replay requires a uniform time grid")

    out = {k: np.empty(n) for k in
           ("theta_r1_hat", "theta_r2_hat", "theta_s1_hat", "theta_s2_hat",
            "Y", "phi")}
    flags = np.zeros(n, dtype=np.int32)

    es = initial_state(gains, l, c, x1=float(x1[0]), x2=float(x2[0]),
                       x3=float(x3[0]), i_fc=float(i_fc[0]), e_oc=e_oc,
                       theta_s2_0=theta_s2_0, theta_r1_0=theta_r1_0,
                       theta_r2_0=theta_r2_0)
    for k in range(n):
        rs, es = regression_sample(es, float(x1[k]), float(i_fc[k]), e_oc, dt)
        es = gradient_step(es, rs, float(x1[k]), float(i_fc[k]), e_oc, dt)
        if k > 0:
            es = iandi_step(es, float(x1[k]), float(x2[k]), float(x3[k]),
                            float(u[k - 1]), l, c, dt)
        else:
            es = replace(es, last_x2=float(x2[k]), last_x3=float(x3[k]))
        p = estimate(es, l, c)
        out["theta_r1_hat"][k] = p.theta_r1_hat
        out["theta_r2_hat"][k] = p.theta_r2_hat
        out["theta_s1_hat"][k] = p.theta_s1_hat
        out["theta_s2_hat"][k] = p.theta_s2_hat
        out["Y"][k] = rs.y
        out["phi"][k] = rs.phi
        if not rs.valid:
            flags[k] |= 2
    out["flags"] = flags
    out["t"] = t.copy()
    return out
