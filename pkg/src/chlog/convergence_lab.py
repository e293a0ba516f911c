"""Temporal convergence and two-trajectory stability experiments.

The exact PDE solution is replaced by the scheme run with a much smaller
step ``tau_ref``; errors are L2 distances at a common final time.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .grid import Field, Grid, backward, forward, l2_norm, transform
from .potential import ABORT, GuardPolicy, GuardViolation, ModelParams
from .stepper import (
    SchemeConfig,
    SimState,
    build_propagators,
    builtin_initial_data,
    prepare_initial,
    run,
    _explicit_term,
)

NOISE_FLOOR = 1e-14
STEP_COUNT_RTOL = 1e-9
REF_REFINEMENT = 16


class StudyError(RuntimeError):
    """A convergence study could not be completed or fitted."""


def steps_for(t_final: float, tau: float) -> int:
    """Number of steps of size tau reaching t_final; must be an integer."""
    m = round(t_final / tau)
    if m < 1 or abs(m * tau - t_final) > STEP_COUNT_RTOL * t_final:
        raise ValueError(f"t_final={t_final} is not an integer multiple of tau={tau}")
    return m


def advance_to(u0: Field, config: SchemeConfig, t_final: float) -> Field:
    """Final field at ``t_final``; guard aborts propagate as GuardViolation."""
    res = run(u0, config, steps_for(t_final, config.tau), record=False)
    if res.aborted:
        raise res.error
    return res.state.u


def reference_solution(u0: Field, params: ModelParams, grid: Grid, t_final: float,
                       tau_ref: float, scheme: str = "semi_implicit",
                       guard: GuardPolicy = ABORT) -> Field:
    if u0.grid != grid:
        raise ValueError("u0 is not on the given grid")
    return advance_to(u0, SchemeConfig(scheme, tau_ref, params, guard), t_final)


@dataclass(frozen=True)
class OrderFit:
    p: float
    intercept: float
    fit_residual: float


@dataclass
class ConvergenceStudy:
    """One temporal convergence experiment.

    ``init`` is a (kind, kwargs) pair for :func:`builtin_initial_data`.
    """

    params: ModelParams
    init: tuple
    seed: int
    n: int
    t_final: float
    taus: Sequence[float]
    tau_ref: float
    scheme: str = "semi_implicit"
    errors: list = field(default_factory=list)
    fit: OrderFit | None = None

    def __post_init__(self):
        taus = [float(t) for t in self.taus]
        if len(taus) < 1 or any(b >= a for a, b in zip(taus, taus[1:])):
            raise ValueError("taus must be a non-empty strictly decreasing list")
        if self.tau_ref > min(taus) / REF_REFINEMENT * (1 + 1e-12):
            raise ValueError(
                f"tau_ref={self.tau_ref} must be <= min(taus)/{REF_REFINEMENT} = "
                f"{min(taus) / REF_REFINEMENT}"
            )
        for t in taus + [self.tau_ref]:
            steps_for(self.t_final, t)
        self.taus = taus

    def initial_field(self) -> Field:
        from .grid import make_grid
        kind, kw = self.init
        return builtin_initial_data(kind, make_grid(self.n), seed=self.seed, **kw)


def _final_field(args):
    u0, config, t_final = args
    return advance_to(u0, config, t_final)


def error_curve(study: ConvergenceStudy, workers: int = 1) -> list[tuple[float, float]]:
    """(tau, ||u^m(tau) - reference||_2) for each tau of the study.

    Runs are independent; with ``workers > 1`` they execute in a process
    pool and are collected in tau order.
    """
    u0 = study.initial_field()
    cfgs = [SchemeConfig(study.scheme, t, study.params) for t in [study.tau_ref] + study.taus]
    jobs = [(u0, c, study.t_final) for c in cfgs]
    try:
        if workers > 1:
            with ProcessPoolExecutor(workers) as pool:
                finals = list(pool.map(_final_field, jobs))
        else:
            finals = [_final_field(j) for j in jobs]
    except GuardViolation as exc:
        raise StudyError(f"a run of the study hit the guard: {exc}") from exc
    ref = finals[0]
    study.errors = [(t, l2_norm(u - ref)) for t, u in zip(study.taus, finals[1:])]
    return study.errors


def observed_order(curve: Sequence[tuple[float, float]]) -> OrderFit:
    """Least-squares slope of log(error) against log(tau), over all points."""
    if len(curve) < 3:
        raise StudyError(f"need at least 3 points to fit an order, got {len(curve)}")
    taus = np.array([c[0] for c in curve], dtype=float)
    errs = np.array([c[1] for c in curve], dtype=float)
    if np.any(errs <= NOISE_FLOOR):
        raise StudyError("degenerate error curve: errors at or below the noise floor")
    x, y = np.log(taus), np.log(errs)
    p, b = np.polyfit(x, y, 1)
    resid = y - (p * x + b)
    return OrderFit(float(p), float(b), float(np.sqrt(np.mean(resid**2))))


def run_study(study: ConvergenceStudy, workers: int = 1) -> ConvergenceStudy:
    error_curve(study, workers)
    study.fit = observed_order(study.errors)
    return study


def curve_rows(study: ConvergenceStudy) -> list[dict]:
    return [
        {"tau": t, "error": e, "log_tau": math.log(t), "log_error": math.log(e) if e > 0 else -math.inf}
        for t, e in study.errors
    ]


# -- two-trajectory (near solution) experiment -------------------------------

def bandlimited_noise(grid: Grid, kmax: int, seed: int, l2: float) -> Field:
    """Mean-zero band-limited field with prescribed L2 norm."""
    base = builtin_initial_data("random_bandlimited", grid, seed=seed, kmax=kmax, amp=0.5)
    v = base.values - base.mean()
    return Field(grid, v * (l2 / math.sqrt(grid.quad_weight * np.sum(v**2))))


@dataclass
class GapReport:
    times: np.ndarray
    gap_sq: np.ndarray
    forcing_sq: np.ndarray
    envelope_base: np.ndarray
    C1: float
    dominated: bool
    loglinear_rms: float
    slope: float

    @property
    def gap(self) -> np.ndarray:
        return np.sqrt(self.gap_sq)


def fit_gronwall(times, gap_sq, envelope_base, nu: float) -> tuple[float, np.ndarray]:
    """Smallest C1 >= 0 with gap^2(n) <= exp(t_n C1/nu) * base(n) for n >= 1.

    ``base(n) = gap^2(0) + (2 tau/nu) sum_{j<n} ||G^j||^2``.  Returns C1 and
    the envelope.  Points with zero gap impose no constraint; a positive gap
    over a zero base cannot be dominated (C1 = inf).
    """
    times = np.asarray(times, float)
    C1 = 0.0
    for t, g, b in zip(times[1:], gap_sq[1:], envelope_base[1:]):
        if g <= 0:
            continue
        if b <= 0:
            return math.inf, np.full_like(times, math.inf)
        C1 = max(C1, nu * math.log(g / b) / t)
    return C1, np.exp(times * C1 / nu) * envelope_base


def loglinear_fit(times, gap_sq) -> tuple[float, float]:
    """(slope, RMS residual) of ln(gap^2) against time, over positive gaps."""
    times = np.asarray(times, float)
    gap_sq = np.asarray(gap_sq, float)
    keep = gap_sq > 0
    if keep.sum() < 2:
        return 0.0, 0.0
    x, y = times[keep], np.log(gap_sq[keep])
    slope, b = np.polyfit(x, y, 1)
    return float(slope), float(np.sqrt(np.mean((y - slope * x - b) ** 2)))


def near_solution_gap(
    v0: Field,
    w0: Field,
    config: SchemeConfig,
    n_steps: int,
    forcing: Callable[[int], Field] | None = None,
) -> GapReport:
    """Run v (unforced) and w (forced by Lap G^n each step) side by side.

    Trajectory w obeys
    (w1 - w0)/tau = -nu Lap^2 w1 - theta_c Lap w1 + Lap f_tilde(w0) + Lap G^n,
    i.e. G^n enters exactly like the explicit nonlinearity.  Returns the
    squared gap ||v^n - w^n||^2 with its fitted Gronwall envelope.
    """
    if config.scheme == "galerkin":
        raise ValueError("near_solution_gap supports the semi_implicit and variant schemes")
    if v0.grid != w0.grid:
        raise ValueError("trajectories must share a grid")
    if abs(v0.mean() - w0.mean()) > 1e-12:
        raise ValueError(
            f"initial data must have the same mean (differ by {abs(v0.mean() - w0.mean()):.3e})"
        )
    grid = v0.grid
    v0 = prepare_initial(v0, config)
    w0 = prepare_initial(w0, config)
    props = build_propagators(grid, config)
    tau, nu = config.tau, config.params.nu
    v = SimState.initial(v0, tau)
    w = SimState.initial(w0, tau)
    gap_sq = [l2_norm(v0 - w0) ** 2]
    forcing_sq = []
    for n in range(n_steps):
        gv, _ = _explicit_term(v.u.values, config, n)
        gw, _ = _explicit_term(w.u.values, config, n)
        if forcing is not None:
            G = forcing(n)
            if abs(G.mean()) > 1e-12 * max(1.0, l2_norm(G)):
                raise ValueError("forcing must be mean-zero")
            gw = gw + G.values
            forcing_sq.append(l2_norm(G) ** 2)
        else:
            forcing_sq.append(0.0)
        for name, st, g in (("v", v, gv), ("w", w, gw)):
            new = props.t0 * st.spectrum.coeffs + props.t1 * forward(grid, g)
            u1 = Field(grid, backward(grid, new))
            nxt = SimState(st.step + 1, tau, u1, transform(u1))
            if name == "v":
                v = nxt
            else:
                w = nxt
        gap_sq.append(l2_norm(v.u - w.u) ** 2)
    gap_sq = np.array(gap_sq)
    forcing_sq = np.array(forcing_sq)
    times = tau * np.arange(n_steps + 1)
    base = gap_sq[0] + (2 * tau / nu) * np.concatenate([[0.0], np.cumsum(forcing_sq)])
    C1, env = fit_gronwall(times, gap_sq, base, nu)
    slope, rms = loglinear_fit(times, gap_sq)
    return GapReport(
        times=times,
        gap_sq=gap_sq,
        forcing_sq=forcing_sq,
        envelope_base=base,
        C1=C1,
        dominated=bool(np.all(gap_sq <= env * (1 + 1e-12) + 1e-300)),
        loglinear_rms=rms,
        slope=slope,
    )
