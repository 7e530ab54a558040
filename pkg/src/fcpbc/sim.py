"""Fixed-step closed-loop simulation with scenario scripting and trace capture.

The product integration path is explicit Euler advancing plant, controller
and (in adaptive mode) estimator in lock step; per step the order is:
read scenario values, estimator update from measurements, equilibrium
update, control law, plant integration.  A classical RK4 integrator over
the same continuous-time closed loop is available as a verification
oracle ("rk4-reference").

Note on step size: with the nominal converter passives the averaged plant
carries a lightly damped resonance near 1.6 kHz, so explicit Euler needs
dt of a few microseconds; at dt = 100 us it diverges (see README).
"""

from __future__ import annotations

import math
import os
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .control import ControllerGains
from .equilibrium import NoRootError, solve_root
from .estimation import EPS_LOG, EstimatorGains, gradient_core, iandi_core
from .model import LN_CLAMP, PlantParams, PlantState

FLAG_EQ_HELD = 1          # equilibrium solver failed; reference held
FLAG_SAMPLE_INVALID = 2   # log clamp active; gradient update suspended
FLAG_SATURATED = 4        # control output clipped
FLAG_PROJECTED = 8        # theta_s2 projection clipped
FLAG_EQ_INFEASIBLE = 16   # implied u* outside (0, 1); reference held

_EDGE_EPS = 1e-12  # scenario edges land on the step grid; guard float drift

COLUMNS = ("t", "x1", "x2", "x3", "i_fc", "u_unsat", "u", "x_c", "x3_star",
           "x2_star_hat", "x1_star_hat", "theta_r1_hat", "theta_r2_hat",
           "theta_s1_hat", "theta_s2_hat", "Y", "phi", "solver_iterations",
           "flags")

_INT_COLUMNS = ("solver_iterations", "flags")


class NumericalBlowupError(RuntimeError):
    """A state left the integrable domain; carries the partial trace."""

    def __init__(self, step: int, reason: str, trace: "SimTrace"):
        super().__init__(f"simulation aborted at step {step}: {reason}")
        self.step = step
        self.reason = reason
        self.trace = trace


@dataclass(frozen=True)
class ScenarioSpec:
    """Piecewise-constant schedules for the voltage reference and the load.

    Each schedule is a sorted sequence of (time [s], value) pairs starting
    at t = 0; a value applies from its time onward.
    """

    reference_schedule: tuple[tuple[float, float], ...]
    load_schedule: tuple[tuple[float, float], ...]

    def __post_init__(self):
        for name, sched in (("reference", self.reference_schedule),
                            ("load", self.load_schedule)):
            if not sched:
                raise ValueError(f"{name} schedule is empty")
            if sched[0][0] != 0.0:
                raise ValueError(f"{name} schedule must start at t = 0")
            times = [s[0] for s in sched]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise ValueError(f"{name} schedule times must be increasing")
            if any(s[1] <= 0 for s in sched):
                raise ValueError(f"{name} schedule values must be positive")

    def reference_at(self, t: float) -> float:
        return _schedule_value(self.reference_schedule, t)

    def load_at(self, t: float) -> float:
        return _schedule_value(self.load_schedule, t)

    def edge_times(self) -> list[float]:
        """All times (> 0) at which either schedule switches."""
        edges = {s[0] for s in self.reference_schedule[1:]}
        edges |= {s[0] for s in self.load_schedule[1:]}
        return sorted(edges)


def _schedule_value(sched, t: float) -> float:
    v = sched[0][1]
    for ti, vi in sched:
        if t >= ti - _EDGE_EPS:
            v = vi
        else:
            break
    return v


def constant_scenario(x3_star: float, load: float) -> ScenarioSpec:
    return ScenarioSpec(((0.0, x3_star),), ((0.0, load),))


@dataclass(frozen=True)
class EstimatorInit:
    theta_s2_0: float = 1.0
    theta_r1_0: float = 0.010   # [ohm]
    theta_r2_0: float = 0.050   # [S]


@dataclass(frozen=True)
class SimConfig:
    plant: PlantParams
    gains: ControllerGains
    est_gains: EstimatorGains
    dt: float = 2.5e-6
    duration: float = 1.0
    integrator: str = "euler"            # "euler" | "rk4-reference"
    controller_mode: str = "adaptive"    # "full_info" | "adaptive" | "open_loop"
    initial_state: PlantState | None = None   # None: true equilibrium at t = 0
    initial_xc: float | None = None           # None: -u*/k_i at t = 0
    u_limits: tuple[float, float] | None = (0.05, 0.95)  # None: unsaturated law
    antiwindup: bool = True
    open_loop_u: float | None = None     # None: true u* at t = 0
    equilibrium_every: int = 1           # adaptive reference recompute decimation
    noise_amplitude: float = 0.0         # relative measurement noise (std)
    noise_seed: int = 0
    estimator_init: EstimatorInit = field(default_factory=EstimatorInit)
    fault_sign_flip: bool = False        # test harness: negate y_N in the controller

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.duration > self.dt:
            raise ValueError("duration must exceed dt")
        if self.integrator not in ("euler", "rk4-reference"):
            raise ValueError(f"unknown integrator {self.integrator!r}")
        if self.controller_mode not in ("full_info", "adaptive", "open_loop"):
            raise ValueError(f"unknown controller mode {self.controller_mode!r}")
        if self.equilibrium_every < 1:
            raise ValueError("equilibrium_every must be >= 1")
        if self.u_limits is not None and not self.u_limits[0] < self.u_limits[1]:
            raise ValueError("u_limits must be an increasing pair")


@dataclass
class SimTrace:
    """Uniform-grid record of every simulated quantity (one row per step)."""

    t: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    i_fc: np.ndarray
    u_unsat: np.ndarray
    u: np.ndarray
    x_c: np.ndarray
    x3_star: np.ndarray
    x2_star_hat: np.ndarray
    x1_star_hat: np.ndarray
    theta_r1_hat: np.ndarray
    theta_r2_hat: np.ndarray
    theta_s1_hat: np.ndarray
    theta_s2_hat: np.ndarray
    Y: np.ndarray
    phi: np.ndarray
    solver_iterations: np.ndarray
    flags: np.ndarray
    dt: float = 0.0
    controller_mode: str = ""
    integrator: str = ""
    completed: bool = True
    abort_reason: str | None = None

    def __len__(self) -> int:
        return self.t.size

    def column(self, name: str) -> np.ndarray:
        return getattr(self, name)

    def to_csv(self, path) -> None:
        """CSV export: header, one row per step, 9 significant digits, LF."""
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(COLUMNS) + "\n")
            cols = [getattr(self, name) for name in COLUMNS]
            ints = [name in _INT_COLUMNS for name in COLUMNS]
            for k in range(self.t.size):
                fh.write(",".join(
                    str(int(col[k])) if isint else f"{col[k]:.9g}"
                    for col, isint in zip(cols, ints)) + "\n")

    @classmethod
    def from_csv(cls, path) -> "SimTrace":
        data = np.genfromtxt(path, delimiter=",", names=True)
        missing = [c for c in COLUMNS if c not in (data.dtype.names or ())]
        if missing:
            raise ValueError(f"trace file lacks columns: {missing}")
        kw = {}
        for name in COLUMNS:
            col = np.atleast_1d(data[name])
            kw[name] = col.astype(np.int32) if name in _INT_COLUMNS else col
        dt = float(kw["t"][1] - kw["t"][0]) if kw["t"].size > 1 else 0.0
        return cls(dt=dt, controller_mode="unknown", integrator="unknown", **kw)


def _alloc(n: int) -> dict[str, np.ndarray]:
    cols = {name: np.empty(n) for name in COLUMNS if name not in _INT_COLUMNS}
    cols["solver_iterations"] = np.zeros(n, dtype=np.int32)
    cols["flags"] = np.zeros(n, dtype=np.int32)
    return cols


def _finish(cols, cfg, n, completed=True, reason=None) -> SimTrace:
    if n < cols["t"].size:
        cols = {k: v[:n].copy() for k, v in cols.items()}
    return SimTrace(dt=cfg.dt, controller_mode=cfg.controller_mode,
                    integrator=cfg.integrator, completed=completed,
                    abort_reason=reason, **cols)


def _true_refs(cfg: SimConfig, x3s: float, tr2: float, warm: float | None):
    """Equilibrium current/stack-voltage references from the true parameters."""
    curve = cfg.plant.curve
    x2s, _, _, iters, _, _ = solve_root(
        cfg.plant.theta_r1, tr2, curve.theta_s1, curve.theta_s2, curve.e_oc,
        x3s, warm)
    x1s = curve.e_oc - curve.theta_s1 * math.exp(
        curve.theta_s2 * math.log(x2s)) if x2s > 0.0 else curve.e_oc
    return x2s, x1s, iters


def _resolve_start(cfg: SimConfig, scenario: ScenarioSpec):
    """Initial plant state, integrator value and open-loop input."""
    x3s = scenario.reference_at(0.0)
    tr1, tr2 = cfg.plant.theta_r1, scenario.load_at(0.0)
    need_eq = (cfg.initial_state is None or cfg.initial_xc is None
               or (cfg.controller_mode == "open_loop" and cfg.open_loop_u is None))
    u_star = None
    if need_eq:
        x2s, x1s, _ = _true_refs(cfg, x3s, tr2, None)
        u_star = x3s * ((tr2 - tr1) * x2s + x1s) / (x2s * x2s + x3s * x3s)
    if cfg.initial_state is not None:
        state = cfg.initial_state
    else:
        state = PlantState(x1s, x2s, x3s)
    if cfg.initial_xc is not None:
        xc = cfg.initial_xc
    elif cfg.controller_mode == "open_loop":
        xc = 0.0
    else:
        xc = -u_star / cfg.gains.k_i
    u_open = cfg.open_loop_u if cfg.open_loop_u is not None else u_star
    return state, xc, u_open


def run_simulation(cfg: SimConfig, scenario: ScenarioSpec) -> SimTrace:
    """Integrate the closed loop and return the complete trace.

    Raises NumericalBlowupError (with the partial trace attached) when a
    state leaves the integrable domain.  Equilibrium-solver trouble in
    adaptive mode is logged per step and the loop continues on the held
    reference.
    """
    if cfg.integrator == "euler":
        return _run_euler(cfg, scenario)
    return _run_rk4(cfg, scenario)


def _run_euler(cfg: SimConfig, scenario: ScenarioSpec) -> SimTrace:
    plant = cfg.plant
    curve = plant.curve
    dt = cfg.dt
    n_steps = int(math.floor(cfg.duration / dt + 1e-9))
    cols = _alloc(n_steps + 1)
    (c_t, c_x1, c_x2, c_x3, c_ifc, c_uu, c_u, c_xc, c_x3s, c_x2h, c_x1h,
     c_tr1, c_tr2, c_ts1, c_ts2, c_y, c_phi, c_it, c_fl) = (
        cols[name] for name in COLUMNS)

    # Unpack everything the hot loop touches.
    c_fc, l, c = plant.c_fc, plant.l, plant.c
    tr1_true = plant.theta_r1
    e_oc, s1, s2 = curve.e_oc, curve.theta_s1, curve.theta_s2
    inv_s1, inv_s2 = 1.0 / s1, 1.0 / s2
    k_p, k_i = cfg.gains.k_p, cfg.gains.k_i
    gamma, k1, k2, lam = (cfg.est_gains.gamma, cfg.est_gains.k1,
                          cfg.est_gains.k2, cfg.est_gains.lam)
    u_lo, u_hi = cfg.u_limits if cfg.u_limits is not None else (-math.inf, math.inf)
    antiwindup = cfg.antiwindup and cfg.u_limits is not None
    mode = cfg.controller_mode
    adaptive = mode == "adaptive"
    full_info = mode == "full_info"
    yn_sign = -1.0 if cfg.fault_sign_flip else 1.0
    eq_every = cfg.equilibrium_every
    exp, log, isnan = math.exp, math.log, math.isnan
    nan = math.nan

    state0, xc, u_open = _resolve_start(cfg, scenario)
    x1, x2, x3 = state0.x1, state0.x2, state0.x3

    noise = None
    amp = cfg.noise_amplitude
    if amp > 0.0:
        noise = random.Random(cfg.noise_seed)

    # Estimator scalars (adaptive mode) and reference cache.
    zy = zp = ths2 = ths1 = xi1 = xi2 = 0.0
    thr1 = thr2 = 0.0
    prev_u = 0.0
    x2h = x1h = nan
    warm = None
    fi_key = None  # (x3_star, load) the full-information refs were solved for

    ref_sched = scenario.reference_schedule
    load_sched = scenario.load_schedule
    ref_i = load_i = 0

    for k in range(n_steps + 1):
        t = k * dt
        while ref_i + 1 < len(ref_sched) and t >= ref_sched[ref_i + 1][0] - _EDGE_EPS:
            ref_i += 1
        while load_i + 1 < len(load_sched) and t >= load_sched[load_i + 1][0] - _EDGE_EPS:
            load_i += 1
        x3s = ref_sched[ref_i][1]
        tr2_true = load_sched[load_i][1]

        # Stack current from the true state (the plant side of the curve).
        w = (e_oc - x1) * inv_s1
        if w <= 0.0:
            ifc = 0.0
        else:
            ifc = exp(log(w if w > LN_CLAMP else LN_CLAMP) * inv_s2)

        if noise is None:
            x1m, x2m, x3m, ifcm = x1, x2, x3, ifc
        else:
            x1m = x1 * (1.0 + amp * noise.gauss(0.0, 1.0))
            x2m = x2 * (1.0 + amp * noise.gauss(0.0, 1.0))
            x3m = x3 * (1.0 + amp * noise.gauss(0.0, 1.0))
            ifcm = ifc * (1.0 + amp * noise.gauss(0.0, 1.0))

        flags = 0
        iters = 0
        y_f = phi_f = nan

        if adaptive:
            # Estimator update; mirrors estimation.replay_estimates bit for bit.
            wv = e_oc - x1m
            if k == 0:
                zy = log(wv if wv > EPS_LOG else EPS_LOG)
                zp = log(ifcm if ifcm > EPS_LOG else EPS_LOG)
                ths2 = cfg.estimator_init.theta_s2_0
                ths1 = 1.0
                xi1 = cfg.estimator_init.theta_r1_0 + 0.5 * k1 * l * x2m * x2m
                xi2 = cfg.estimator_init.theta_r2_0 + 0.5 * k2 * c * x3m * x3m
            valid = wv > EPS_LOG and ifcm > EPS_LOG
            y_f = lam * ((log(wv if wv > EPS_LOG else EPS_LOG)) - zy)
            zy += dt * y_f
            phi_f = lam * ((log(ifcm if ifcm > EPS_LOG else EPS_LOG)) - zp)
            zp += dt * phi_f
            if valid:
                ths2, ths1, projected = gradient_core(
                    ths2, ths1, y_f, phi_f, x1m, ifcm, e_oc, gamma, dt)
                if projected:
                    flags |= FLAG_PROJECTED
            else:
                flags |= FLAG_SAMPLE_INVALID
            if k > 0:
                xi1, xi2 = iandi_core(xi1, xi2, x1m, x2m, x3m, prev_u,
                                      k1, k2, l, c, dt)
            thr1 = xi1 - 0.5 * k1 * l * x2m * x2m
            thr2 = xi2 - 0.5 * k2 * c * x3m * x3m

            if k % eq_every == 0 or isnan(x2h):
                try:
                    root, _, _, iters, _, _ = solve_root(
                        thr1 if thr1 > 0.0 else 0.0,
                        thr2 if thr2 > 0.0 else 0.0,
                        ths1, ths2, e_oc, x3s, warm)
                    x1r = (e_oc - ths1 * exp(ths2 * log(root))
                           if root > 0.0 else e_oc)
                    ur = x3s * ((thr2 - thr1) * root + x1r) / (
                        root * root + x3s * x3s)
                    if (0.0 < ur < 1.0 and x1r >= 0.0) or isnan(x2h):
                        if not (0.0 < ur < 1.0 and x1r >= 0.0):
                            flags |= FLAG_EQ_INFEASIBLE
                        x2h, x1h, warm = root, x1r, root
                    else:
                        flags |= FLAG_EQ_INFEASIBLE
                except NoRootError:
                    flags |= FLAG_EQ_HELD
                    if isnan(x2h):
                        raise
            y_n = yn_sign * (x2h * x3m - x3s * x2m)
            u_unsat = -k_p * y_n - k_i * xc
        elif full_info:
            if fi_key != (x3s, tr2_true):
                x2h, x1h, iters = _true_refs(cfg, x3s, tr2_true, warm)
                warm = x2h
                fi_key = (x3s, tr2_true)
            y_n = yn_sign * (x2h * x3m - x3s * x2m)
            u_unsat = -k_p * y_n - k_i * xc
        else:  # open_loop
            y_n = 0.0
            u_unsat = u_open

        if mode == "open_loop":
            u = u_open
            xc_next = xc
        else:
            u = u_unsat
            frozen = False
            if u > u_hi:
                u = u_hi
                flags |= FLAG_SATURATED
                frozen = antiwindup and y_n < 0.0
            elif u < u_lo:
                u = u_lo
                flags |= FLAG_SATURATED
                frozen = antiwindup and y_n > 0.0
            xc_next = xc if frozen else xc + dt * y_n

        c_t[k] = t
        c_x1[k] = x1
        c_x2[k] = x2
        c_x3[k] = x3
        c_ifc[k] = ifc
        c_uu[k] = u_unsat
        c_u[k] = u
        c_xc[k] = xc
        c_x3s[k] = x3s
        c_x2h[k] = x2h
        c_x1h[k] = x1h
        if adaptive:
            c_tr1[k] = thr1
            c_tr2[k] = thr2
            c_ts1[k] = ths1
            c_ts2[k] = ths2
        elif full_info:
            c_tr1[k] = tr1_true
            c_tr2[k] = tr2_true
            c_ts1[k] = s1
            c_ts2[k] = s2
        else:
            c_tr1[k] = c_tr2[k] = c_ts1[k] = c_ts2[k] = nan
        c_y[k] = y_f
        c_phi[k] = phi_f
        c_it[k] = iters
        c_fl[k] = flags

        if k == n_steps:
            break

        # Plant Euler step with the true parameters (all from step-k values).
        d1 = (ifc - x2) / c_fc
        d2 = (-tr1_true * x2 + x1 - u * x3) / l
        d3 = (-tr2_true * x3 + u * x2) / c
        x1 += dt * d1
        x2 += dt * d2
        x3 += dt * d3
        xc = xc_next
        prev_u = u

        if not (math.isfinite(x1) and math.isfinite(x2) and math.isfinite(x3)):
            raise NumericalBlowupError(
                k + 1, "non-finite state", _finish(cols, cfg, k + 1, False,
                                                   "non-finite state"))
        if x1 < 0.0 or x1 > e_oc:
            raise NumericalBlowupError(
                k + 1, "stack voltage left the polarization domain",
                _finish(cols, cfg, k + 1, False,
                        "stack voltage left the polarization domain"))

    return _finish(cols, cfg, n_steps + 1)


def _run_rk4(cfg: SimConfig, scenario: ScenarioSpec) -> SimTrace:
    """RK4 over the continuous-time closed loop; verification oracle only."""
    plant = cfg.plant
    curve = plant.curve
    dt = cfg.dt
    n_steps = int(math.floor(cfg.duration / dt + 1e-9))
    cols = _alloc(n_steps + 1)

    c_fc, l, c = plant.c_fc, plant.l, plant.c
    tr1_true = plant.theta_r1
    e_oc, s1, s2 = curve.e_oc, curve.theta_s1, curve.theta_s2
    inv_s1, inv_s2 = 1.0 / s1, 1.0 / s2
    k_p, k_i = cfg.gains.k_p, cfg.gains.k_i
    gamma, k1g, k2g, lam = (cfg.est_gains.gamma, cfg.est_gains.k1,
                            cfg.est_gains.k2, cfg.est_gains.lam)
    u_lo, u_hi = cfg.u_limits if cfg.u_limits is not None else (-math.inf, math.inf)
    antiwindup = cfg.antiwindup and cfg.u_limits is not None
    mode = cfg.controller_mode
    adaptive = mode == "adaptive"
    yn_sign = -1.0 if cfg.fault_sign_flip else 1.0
    exp, log = math.exp, math.log
    nan = math.nan
    from .estimation import THETA_S2_MAX, THETA_S2_MIN

    if cfg.noise_amplitude > 0.0:
        raise ValueError("the rk4-reference oracle is noise-free")

    state0, xc0, u_open = _resolve_start(cfg, scenario)

    ref_cache: dict[tuple[float, float], tuple[float, float]] = {}
    warm_cell = [None]   # adaptive solver warm start
    hold_cell = [nan, nan, 1.0]  # held x2*, x1*, theta_s1 fallback

    def ifc_of(x1: float) -> float:
        w = (e_oc - x1) * inv_s1
        if w <= 0.0:
            return 0.0
        return exp(log(w if w > LN_CLAMP else LN_CLAMP) * inv_s2)

    def full_info_refs(x3s: float, tr2: float) -> tuple[float, float]:
        key = (x3s, tr2)
        refs = ref_cache.get(key)
        if refs is None:
            x2s, x1s, _ = _true_refs(cfg, x3s, tr2, warm_cell[0])
            warm_cell[0] = x2s
            refs = (x2s, x1s)
            ref_cache[key] = refs
        return refs

    def deriv(t: float, s: tuple):
        """Returns (9 state derivatives, aux record tuple)."""
        x1, x2, x3, xc, zy, zp, ths2, xi1, xi2 = s
        x3s = scenario.reference_at(t)
        tr2_true = scenario.load_at(t)
        ifc = ifc_of(x1)
        flags = 0
        iters = 0
        if adaptive:
            wv = e_oc - x1
            valid = wv > EPS_LOG and ifc > EPS_LOG
            y_f = lam * (log(wv if wv > EPS_LOG else EPS_LOG) - zy)
            phi_f = lam * (log(ifc if ifc > EPS_LOG else EPS_LOG) - zp)
            dths2 = gamma * phi_f * (y_f - phi_f * ths2) if valid else 0.0
            if (ths2 <= THETA_S2_MIN and dths2 < 0.0) or \
               (ths2 >= THETA_S2_MAX and dths2 > 0.0):
                dths2 = 0.0
            if valid:
                ths1 = wv * exp(-ths2 * log(ifc))
                hold_cell[2] = ths1
            else:
                ths1 = hold_cell[2]
            thr1 = xi1 - 0.5 * k1g * l * x2 * x2
            thr2 = xi2 - 0.5 * k2g * c * x3 * x3
            try:
                root, _, _, iters, _, _ = solve_root(
                    thr1 if thr1 > 0.0 else 0.0, thr2 if thr2 > 0.0 else 0.0,
                    ths1, ths2, e_oc, x3s, warm_cell[0])
                x1r = (e_oc - ths1 * exp(ths2 * log(root))
                       if root > 0.0 else e_oc)
                ur = x3s * ((thr2 - thr1) * root + x1r) / (root * root + x3s * x3s)
                if (0.0 < ur < 1.0 and x1r >= 0.0) or math.isnan(hold_cell[0]):
                    if not (0.0 < ur < 1.0 and x1r >= 0.0):
                        flags |= FLAG_EQ_INFEASIBLE
                    hold_cell[0], hold_cell[1] = root, x1r
                    warm_cell[0] = root
                else:
                    flags |= FLAG_EQ_INFEASIBLE
            except NoRootError:
                flags |= FLAG_EQ_HELD
                if math.isnan(hold_cell[0]):
                    raise
            x2h, x1h = hold_cell[0], hold_cell[1]
        elif mode == "full_info":
            x2h, x1h = full_info_refs(x3s, tr2_true)
            y_f = phi_f = nan
        else:
            x2h = x1h = nan
            y_f = phi_f = nan

        if mode == "open_loop":
            u = u_unsat = u_open
            dxc = 0.0
            y_n = 0.0
        else:
            y_n = yn_sign * (x2h * x3 - x3s * x2)
            u_unsat = -k_p * y_n - k_i * xc
            u = u_unsat
            frozen = False
            if u > u_hi:
                u = u_hi
                flags |= FLAG_SATURATED
                frozen = antiwindup and y_n < 0.0
            elif u < u_lo:
                u = u_lo
                flags |= FLAG_SATURATED
                frozen = antiwindup and y_n > 0.0
            dxc = 0.0 if frozen else y_n

        dx1 = (ifc - x2) / c_fc
        dx2 = (-tr1_true * x2 + x1 - u * x3) / l
        dx3 = (-tr2_true * x3 + u * x2) / c
        if adaptive:
            dzy = y_f
            dzp = phi_f
            dxi1 = -k1g * x2 * (-x1 - 0.5 * k1g * l * x2 ** 3 + xi1 * x2 + x3 * u)
            dxi2 = -k2g * x3 * (-x2 * u - 0.5 * k2g * c * x3 ** 3 + xi2 * x3)
            ds = (dx1, dx2, dx3, dxc, dzy, dzp, dths2, dxi1, dxi2)
            aux = (ifc, u_unsat, u, x3s, x2h, x1h, thr1, thr2, ths1, ths2,
                   y_f, phi_f, iters, flags)
        else:
            ds = (dx1, dx2, dx3, dxc, 0.0, 0.0, 0.0, 0.0, 0.0)
            if mode == "full_info":
                aux = (ifc, u_unsat, u, x3s, x2h, x1h, tr1_true, tr2_true,
                       s1, s2, nan, nan, iters, flags)
            else:
                aux = (ifc, u_unsat, u, x3s, nan, nan, nan, nan, nan, nan,
                       nan, nan, iters, flags)
        return ds, aux

    # Initial extended state.
    x1, x2, x3 = state0.x1, state0.x2, state0.x3
    if adaptive:
        ifc0 = ifc_of(x1)
        zy = log(max(e_oc - x1, EPS_LOG))
        zp = log(max(ifc0, EPS_LOG))
        ths2 = cfg.estimator_init.theta_s2_0
        xi1 = cfg.estimator_init.theta_r1_0 + 0.5 * k1g * l * x2 * x2
        xi2 = cfg.estimator_init.theta_r2_0 + 0.5 * k2g * c * x3 * x3
        hold_cell[2] = ((e_oc - x1) * exp(-ths2 * log(ifc0))
                        if ifc0 > EPS_LOG else 1.0)
        s = (x1, x2, x3, xc0, zy, zp, ths2, xi1, xi2)
    else:
        s = (x1, x2, x3, xc0, 0.0, 0.0, 0.0, 0.0, 0.0)

    sixth = dt / 6.0
    half = 0.5 * dt
    for k in range(n_steps + 1):
        t = k * dt
        d1, aux = deriv(t, s)
        (c_ifc, c_uu, c_u, c_x3s, c_x2h, c_x1h, c_tr1, c_tr2, c_ts1, c_ts2,
         c_y, c_phi, c_it, c_fl) = aux
        cols["t"][k] = t
        cols["x1"][k] = s[0]
        cols["x2"][k] = s[1]
        cols["x3"][k] = s[2]
        cols["x_c"][k] = s[3]
        cols["i_fc"][k] = c_ifc
        cols["u_unsat"][k] = c_uu
        cols["u"][k] = c_u
        cols["x3_star"][k] = c_x3s
        cols["x2_star_hat"][k] = c_x2h
        cols["x1_star_hat"][k] = c_x1h
        cols["theta_r1_hat"][k] = c_tr1
        cols["theta_r2_hat"][k] = c_tr2
        cols["theta_s1_hat"][k] = c_ts1
        cols["theta_s2_hat"][k] = c_ts2
        cols["Y"][k] = c_y
        cols["phi"][k] = c_phi
        cols["solver_iterations"][k] = c_it
        cols["flags"][k] = c_fl
        if k == n_steps:
            break

        s1v = tuple(si + half * di for si, di in zip(s, d1))
        d2, _ = deriv(t + half, s1v)
        s2v = tuple(si + half * di for si, di in zip(s, d2))
        d3, _ = deriv(t + half, s2v)
        s3v = tuple(si + dt * di for si, di in zip(s, d3))
        d4, _ = deriv(t + dt, s3v)
        s = tuple(si + sixth * (a + 2.0 * b + 2.0 * cc + d)
                  for si, a, b, cc, d in zip(s, d1, d2, d3, d4))
        if adaptive:
            ths2 = s[6]
            if ths2 < THETA_S2_MIN or ths2 > THETA_S2_MAX:
                s = s[:6] + (min(max(ths2, THETA_S2_MIN), THETA_S2_MAX),) + s[7:]

        if not all(math.isfinite(v) for v in s[:3]):
            raise NumericalBlowupError(
                k + 1, "non-finite state", _finish(cols, cfg, k + 1, False,
                                                   "non-finite state"))
        if s[0] < 0.0 or s[0] > e_oc:
            raise NumericalBlowupError(
                k + 1, "stack voltage left the polarization domain",
                _finish(cols, cfg, k + 1, False,
                        "stack voltage left the polarization domain"))

    return _finish(cols, cfg, n_steps + 1)


@dataclass
class BatchResult:
    ok: bool
    trace: SimTrace | None
    error: str | None = None


def _batch_worker(entry: tuple[SimConfig, ScenarioSpec]) -> BatchResult:
    cfg, scenario = entry
    try:
        return BatchResult(True, run_simulation(cfg, scenario))
    except NumericalBlowupError as exc:
        return BatchResult(False, exc.trace, str(exc))
    except Exception as exc:  # per-entry capture; the batch never aborts
        return BatchResult(False, None, f"{type(exc).__name__}: {exc}")


def batch_workers(requested: int | None = None) -> int:
    """Worker count for run_batch, capped by the FCPBC_THREADS variable."""
    cap = os.environ.get("FCPBC_THREADS")
    n = requested if requested is not None else (os.cpu_count() or 1)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, n)


def run_batch(entries, max_workers: int | None = None) -> list[BatchResult]:
    """Run simulations independently; results keep the input order.

    Identical configs produce bitwise-identical traces regardless of the
    worker count.  Errors are captured per entry.
    """
    entries = list(entries)
    workers = batch_workers(max_workers)
    if workers == 1 or len(entries) <= 1:
        return [_batch_worker(e) for e in entries]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_batch_worker, entries))
