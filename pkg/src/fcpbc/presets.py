"""Nominal rig parameters, tuning gains and the two pulse scenarios.

Every preset constant lives here, in the units it was documented in; the
builder functions convert to SI.  The simulated plant uses the identified
effective series resistance (which lumps the inductor, switch and diode
conduction losses) rather than the bare inductor parasitic, so the closed
loop behaves like the hardware it models.
"""

from __future__ import annotations

from .control import ControllerGains
from .estimation import EstimatorGains
from .model import FcCurveParams, PlantParams
from .sim import EstimatorInit, ScenarioSpec, SimConfig

# Converter passives and stack constants (documented units).
C_OUT_UF = 136.0          # output capacitance [uF]
C_FC_MF = 5.19            # stack coupling capacitance [mF]
L_UH = 38.6               # boost inductance [uH]
THETA_R1_NOMINAL_MOHM = 8.30     # bare inductor parasitic resistance [mOhm]
THETA_R1_EFFECTIVE_MOHM = 542.31  # identified total series resistance [mOhm]
THETA_R2_NOMINAL_MS = (47.1, 94.2)  # nameplate load bank settings [mS]
F_SW_KHZ = 100.0          # switching frequency [kHz]; metadata, model is averaged
E_OC_V = 38.84            # measured open-circuit stack voltage [V]

# Polarization-curve constants identified on the rig (averages of the
# online estimates during the reference-pulse run).
THETA_S1 = 0.984
THETA_S2 = 0.865

# Tuning gains.
GAIN_K1 = 2.00
GAIN_K2 = 2.00
GAIN_KP = 19.0e-6
GAIN_KI = 0.28
GAIN_LAMBDA = 4.50
GAIN_GAMMA = 3.00

# Scenario constants.
PULSE_FREQ_HZ = 1.0
VREF_HIGH_V = 48.0
VREF_LOW_V = 38.0
VREF_PULSE_LOAD_MS = 90.15
LOAD_PULSE_HIGH_MS = 90.87
LOAD_PULSE_LOW_MS = 46.54
LOAD_PULSE_VREF_V = 48.0

# Steady states observed on the rig, as (v_fc [V], i_L [A], v_o [V]) with
# the series resistance / load conductance identified at that point.
STEADY_48V = ((33.32, 7.11, 48.0), (0.54231, 0.09085))
STEADY_38V = ((35.75, 4.05, 38.0), (0.97828, 0.08950))
STEADY_LOAD_HIGH = ((33.12, 7.15, 48.0), (0.53618, 0.09087))
STEADY_LOAD_LOW = ((36.29, 3.31, 48.0), (1.22, 0.04654))

# Explicit Euler needs a step a few microseconds long: the averaged plant
# has a resonant pair near 1.6 kHz whose stability limit for forward Euler
# sits around 8 us at nominal damping (see README).
DT_DEFAULT = 2.5e-6

SCENARIO_NAMES = ("vref-pulse", "load-pulse")


def stack_curve() -> FcCurveParams:
    return FcCurveParams(e_oc=E_OC_V, theta_s1=THETA_S1, theta_s2=THETA_S2)


def plant(load_s: float, *, effective_resistance: bool = True) -> PlantParams:
    """Plant parameters at a given load conductance [S]."""
    theta_r1 = (THETA_R1_EFFECTIVE_MOHM if effective_resistance
                else THETA_R1_NOMINAL_MOHM) * 1e-3
    return PlantParams(
        c_fc=C_FC_MF * 1e-3,
        l=L_UH * 1e-6,
        c=C_OUT_UF * 1e-6,
        theta_r1=theta_r1,
        theta_r2=load_s,
        curve=stack_curve(),
        f_sw=F_SW_KHZ * 1e3,
    )


def controller_gains() -> ControllerGains:
    return ControllerGains(k_p=GAIN_KP, k_i=GAIN_KI)


def estimator_gains() -> EstimatorGains:
    return EstimatorGains(gamma=GAIN_GAMMA, k1=GAIN_K1, k2=GAIN_K2,
                          lam=GAIN_LAMBDA)


def _pulse(period_s: float, duration: float, hi: float,
           lo: float) -> tuple[tuple[float, float], ...]:
    """Square schedule hi/lo switching every half period, from t = 0."""
    sched = []
    t, half, level = 0.0, 0.5 * period_s, hi
    while t < duration:
        sched.append((t, level))
        level = lo if level == hi else hi
        t += half
    return tuple(sched)


def scenario(name: str, duration: float = 5.0) -> ScenarioSpec:
    """The two pulse experiments: edges at multiples of 0.5 s (1 Hz)."""
    period = 1.0 / PULSE_FREQ_HZ
    if name == "vref-pulse":
        return ScenarioSpec(
            reference_schedule=_pulse(period, duration, VREF_HIGH_V, VREF_LOW_V),
            load_schedule=((0.0, VREF_PULSE_LOAD_MS * 1e-3),),
        )
    if name == "load-pulse":
        return ScenarioSpec(
            reference_schedule=((0.0, LOAD_PULSE_VREF_V),),
            load_schedule=_pulse(period, duration, LOAD_PULSE_HIGH_MS * 1e-3,
                                 LOAD_PULSE_LOW_MS * 1e-3),
        )
    raise ValueError(f"unknown scenario {name!r}; choose from {SCENARIO_NAMES}")


def preset_config(scenario_name: str, *, controller_mode: str = "adaptive",
                  dt: float = DT_DEFAULT, duration: float = 5.0,
                  integrator: str = "euler",
                  effective_resistance: bool = True,
                  **overrides) -> tuple[SimConfig, ScenarioSpec]:
    """SimConfig + ScenarioSpec for a named preset, starting at equilibrium."""
    spec = scenario(scenario_name, duration)
    cfg = SimConfig(
        plant=plant(spec.load_at(0.0), effective_resistance=effective_resistance),
        gains=controller_gains(),
        est_gains=estimator_gains(),
        dt=dt,
        duration=duration,
        integrator=integrator,
        controller_mode=controller_mode,
        estimator_init=EstimatorInit(),
        **overrides,
    )
    return cfg, spec
