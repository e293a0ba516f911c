"""Semi-implicit time stepping for the logarithmic Cahn-Hilliard equation.

Scheme ``semi_implicit``::

    (u1 - u0)/tau = -nu Lap^2 u1 - theta_c Lap u1 + Lap f_tilde(u0)

solved mode by mode as ``u1^ = t0 u0^ + t1 f_tilde(u0)^`` with

    t0 = 1 / (1 + tau nu |k|^4 - tau theta_c |k|^2)
    t1 = -tau |k|^2 / (1 + tau nu |k|^4 - tau theta_c |k|^2)

Scheme ``variant`` keeps only the bilaplacian implicit and feeds
f(u0) = f_tilde(u0) - theta_c u0 explicitly, so its denominator is
1 + tau nu |k|^4 and every tau > 0 is solvable.  Scheme ``galerkin``
is ``semi_implicit`` with f_tilde(u0) projected onto max(|k1|,|k2|) <= N.

The nonlinearity is evaluated pointwise on the grid without dealiasing.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from . import diagnostics as dg
from .grid import (
    Field,
    Grid,
    Spectrum,
    backward,
    forward,
    galerkin_mask,
    galerkin_project,
    inverse_transform,
    linf_norm,
    spectral_sum,
    transform,
)
from .potential import ABORT, GuardPolicy, GuardViolation, ModelParams, guard

log = logging.getLogger(__name__)

SCHEMES = ("semi_implicit", "variant", "galerkin")
BANDLIMIT_RTOL = 1e-12


class InadmissibleStepError(ValueError):
    """tau leaves a non-positive implicit denominator (or breaks the bound)."""


@dataclass(frozen=True)
class SchemeConfig:
    scheme: str
    tau: float
    params: ModelParams
    guard: GuardPolicy = ABORT
    cutoff: int | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise InadmissibleStepError(f"tau must be finite and > 0, got {self.tau}")
        if self.scheme == "galerkin":
            if self.cutoff is None or self.cutoff < 1:
                raise ValueError("galerkin scheme needs an integer cutoff N >= 1")
        elif self.cutoff is not None:
            raise ValueError(f"cutoff only applies to the galerkin scheme, not {self.scheme}")
        bound = solvability_bound(self.params, self.scheme)
        if self.tau > bound:
            raise InadmissibleStepError(
                f"tau={self.tau} exceeds the solvability bound 2 nu/theta_c^2 = {bound}"
            )


def solvability_bound(params: ModelParams, scheme: str) -> float:
    if scheme == "variant":
        return math.inf
    return 2.0 * params.nu / params.theta_c**2


def _denominator(grid: Grid, tau: float, params: ModelParams, scheme: str) -> np.ndarray:
    d = 1.0 + tau * params.nu * grid.ksq**2
    if scheme != "variant":
        d = d - tau * params.theta_c * grid.ksq
    return d


def _check_denominator(grid: Grid, d: np.ndarray, tau: float) -> None:
    if np.all(d > 0):
        return
    idx = tuple(np.argwhere(~(d > 0))[0])
    raise InadmissibleStepError(
        f"tau={tau}: implicit denominator {d[idx]:.3e} <= 0 at mode k={grid.wavenumber_at(idx)}"
    )


def max_admissible_tau(params: ModelParams, grid: Grid, scheme: str = "semi_implicit") -> float:
    """Largest tau accepted for ``scheme`` (inf for the variant).

    For the bounded schemes the returned value is also checked to give a
    strictly positive denominator at every mode of ``grid``.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}, got {scheme!r}")
    tau = solvability_bound(params, scheme)
    if math.isfinite(tau):
        _check_denominator(grid, _denominator(grid, tau, params, scheme), tau)
    return tau


@dataclass(frozen=True, eq=False)
class Propagators:
    scheme: str
    tau: float
    t0: np.ndarray
    t1: np.ndarray
    mask: np.ndarray | None = None


def build_propagators(grid: Grid, config: SchemeConfig) -> Propagators:
    p = config.params
    d = _denominator(grid, config.tau, p, config.scheme)
    _check_denominator(grid, d, config.tau)
    t0 = 1.0 / d
    t1 = -config.tau * grid.ksq / d
    mask = galerkin_mask(grid, config.cutoff) if config.scheme == "galerkin" else None
    for a in (t0, t1):
        a.setflags(write=False)
    return Propagators(config.scheme, config.tau, t0, t1, mask)


@dataclass(frozen=True, eq=False)
class SimState:
    """Iterate u^n with its cached spectrum (always ``transform(u)``)."""

    step: int
    tau: float
    u: Field
    spectrum: Spectrum
    saturations: int = 0

    @classmethod
    def initial(cls, u: Field, tau: float, step: int = 0) -> "SimState":
        return cls(step, float(tau), u, transform(u))

    @property
    def time(self) -> float:
        return self.step * self.tau

    @property
    def grid(self) -> Grid:
        return self.u.grid


def _explicit_term(u: np.ndarray, config: SchemeConfig, step: int) -> tuple[np.ndarray, int]:
    v, count = guard(u, config.guard, step=step)
    p = config.params
    g = p.theta * np.arctanh(v)
    if config.scheme == "variant":
        g = g - p.theta_c * v
    return g, count


def _advance(state: SimState, config: SchemeConfig, props: Propagators) -> SimState:
    grid = state.grid
    g, count = _explicit_term(state.u.values, config, state.step)
    gc = forward(grid, g)
    new = props.t0 * state.spectrum.coeffs + props.t1 * gc
    if props.mask is not None:
        new = np.where(props.mask, new, 0.0)
    u1 = Field(grid, backward(grid, new))
    # spectrum recomputed from samples so a state reloaded from its samples
    # continues bit-identically
    return SimState(state.step + 1, state.tau, u1, transform(u1), state.saturations + count)


def _check_props(state: SimState, config: SchemeConfig, props: Propagators) -> None:
    if props.scheme != config.scheme or props.tau != config.tau:
        raise ValueError("propagators were built for a different scheme or tau")
    if props.t0.shape != state.grid.shape:
        raise ValueError("propagators were built for a different grid")


def step(state: SimState, config: SchemeConfig, props: Propagators) -> SimState:
    """One step u^n -> u^{n+1}; raises GuardViolation if u^n hits the guard."""
    if config.scheme == "galerkin":
        return step_galerkin(state, config, props)
    _check_props(state, config, props)
    return _advance(state, config, props)


def is_bandlimited(spec: Spectrum, cutoff: int) -> bool:
    mask = galerkin_mask(spec.grid, cutoff)
    c = np.abs(spec.coeffs)
    outside = c[~mask].max(initial=0.0)
    return outside <= BANDLIMIT_RTOL * max(c.max(), 1e-300)


def step_galerkin(state: SimState, config: SchemeConfig, props: Propagators) -> SimState:
    if config.scheme != "galerkin":
        raise ValueError(f"step_galerkin needs the galerkin scheme, got {config.scheme!r}")
    _check_props(state, config, props)
    if not is_bandlimited(state.spectrum, config.cutoff):
        raise ValueError(
            f"state at step {state.step} has modes beyond N={config.cutoff}; "
            "project the initial data with galerkin_project first"
        )
    return _advance(state, config, props)


def implicit_residual(u0: Field, u1: Field, config: SchemeConfig) -> tuple[float, float]:
    """L2 norm of the scheme's defining relation evaluated on (u0, u1).

    Returns (residual, scale) with scale = 1 + ||Lap^2 u1||_2.
    """
    grid = u0.grid
    p = config.params
    c0, c1 = transform(u0).coeffs, transform(u1).coeffs
    v, _ = guard(u0.values, config.guard)
    g = p.theta * np.arctanh(v)
    if config.scheme == "variant":
        g = g - p.theta_c * v
    gc = forward(grid, g)
    if config.scheme == "galerkin":
        gc = np.where(galerkin_mask(grid, config.cutoff), gc, 0.0)
    k2 = grid.ksq
    r = (c1 - c0) / config.tau + p.nu * k2**2 * c1 + k2 * gc
    if config.scheme != "variant":
        r = r - p.theta_c * k2 * c1
    res = math.sqrt(spectral_sum(grid, r))
    scale = 1.0 + math.sqrt(spectral_sum(grid, k2**2 * c1))
    return res, scale


@dataclass
class RunResult:
    state: SimState
    records: list = field(default_factory=list)
    aborted: bool = False
    error: Exception | None = None

    @property
    def steps_taken(self) -> int:
        return self.state.step


Hook = Callable[[SimState, "dg.DiagnosticsRecord"], None]


def prepare_initial(initial: Field, config: SchemeConfig, delta0: float = 1e-6) -> Field:
    """Check the separation hypothesis; project first for the galerkin scheme."""
    if config.scheme == "galerkin":
        initial = inverse_transform(galerkin_project(transform(initial), config.cutoff))
    if not 0.0 < delta0 < 1.0:
        raise ValueError(f"delta0 must lie in (0, 1), got {delta0}")
    sup = linf_norm(initial)
    if sup > 1.0 - delta0:
        raise ValueError(f"initial data violates ||u0||_inf <= 1 - delta0: {sup} > {1 - delta0}")
    if not abs(initial.mean()) < 1.0:
        raise ValueError(f"initial mean must satisfy |mean| < 1, got {initial.mean()}")
    return initial


def run(
    initial: Field | SimState,
    config: SchemeConfig,
    n_steps: int,
    hooks: Iterable[Hook] = (),
    cadence: int = 1,
    delta0: float = 1e-6,
    record: bool = True,
) -> RunResult:
    """Advance ``n_steps`` steps, recording diagnostics every ``cadence`` steps.

    ``initial`` may be a field (step 0) or a state to resume from.  Records
    are taken at the starting step, every ``cadence`` steps and at the last
    step; hooks are called with each (state, record).  A guard violation
    stops the run and returns the partial result with ``aborted`` set.
    """
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    if cadence < 1:
        raise ValueError(f"cadence must be >= 1, got {cadence}")
    if isinstance(initial, SimState):
        state = initial
        if state.tau != config.tau:
            raise ValueError(f"state tau {state.tau} does not match config tau {config.tau}")
    else:
        state = SimState.initial(prepare_initial(initial, config, delta0), config.tau)
    props = build_propagators(state.grid, config)
    hooks = list(hooks)
    result = RunResult(state)
    last_energy = None

    def take(st, prev):
        rec = dg.make_record(st, config.params, prev, config.scheme, config.guard,
                             prev_energy=last_energy if prev is not None else None)
        result.records.append(rec)
        for hook in hooks:
            hook(st, rec)
        return rec

    try:
        if record:
            last_energy = take(state, None).energy
        start = state.step
        for i in range(n_steps):
            prev = state
            state = step(state, config, props)
            result.state = state
            k = state.step - start
            if record and (k % cadence == 0 or i == n_steps - 1):
                rec = take(state, prev)
                last_energy = rec.energy
            else:
                last_energy = None
    except GuardViolation as exc:
        if exc.step is None:
            # raised while recording diagnostics of the current state
            exc.step = state.step
        log.warning("guard abort at step %s: %s", exc.step, exc)
        result.aborted = True
        result.error = exc
    return result


# -- initial data ------------------------------------------------------------

def _bandlimited_modes(kmax: int):
    """Half-plane representatives of the box max(|k1|,|k2|) <= kmax, k != 0."""
    out = []
    for a in range(-kmax, kmax + 1):
        for b in range(-kmax, kmax + 1):
            if a > 0 or (a == 0 and b > 0):
                out.append((a, b))
    return out


def builtin_initial_data(kind: str, grid: Grid, seed: int = 0, **kw) -> Field:
    """Deterministic initial fields.

    Kinds and their separation margins delta0 (1 - sup|u0| over the grid):

    ``constant``: c (|c| < 1); delta0 = 1 - |c|.
    ``single_mode``: c + eps cos(k . x); delta0 = 1 - |c| - |eps|.
    ``random_bandlimited``: mean-zero trigonometric polynomial with modes in
        max(|k1|,|k2|) <= kmax, Gaussian amplitudes damped by 1/(1+|k|^2),
        rescaled so that the grid maximum of |u0| is ``amp``; delta0 = 1 - amp.
    ``two_bump``: base + amp * (two periodic Gaussian bumps at x1 = +-pi/2);
        delta0 = 1 - max|u0|, checked to be positive.
    """
    x1, x2 = grid.coordinates()
    if kind == "constant":
        c = float(kw.get("c", 0.0))
        if not abs(c) < 1:
            raise ValueError(f"constant must satisfy |c| < 1, got {c}")
        values = np.full(grid.shape, c)
    elif kind == "single_mode":
        c = float(kw.get("c", 0.0))
        k = kw.get("k", (1, 0))
        eps = float(kw.get("eps", 0.1))
        if abs(c) + abs(eps) >= 1:
            raise ValueError(f"|c| + |eps| must be < 1, got {abs(c) + abs(eps)}")
        if max(abs(k[0]), abs(k[1])) >= grid.n // 2:
            raise ValueError(f"mode {tuple(k)} is not resolved on n={grid.n}")
        values = c + eps * np.cos(k[0] * x1 + k[1] * x2)
    elif kind == "random_bandlimited":
        kmax = int(kw.get("kmax", 4))
        amp = float(kw.get("amp", 0.4))
        if not 0 < amp < 1:
            raise ValueError(f"amp must lie in (0, 1), got {amp}")
        if kmax < 1 or 2 * kmax >= grid.n:
            raise ValueError(f"kmax={kmax} needs 1 <= kmax < n/2 = {grid.n // 2}")
        rng = np.random.default_rng(seed)
        values = np.zeros(grid.shape)
        for a, b in _bandlimited_modes(kmax):
            re, im = rng.standard_normal(2) / (1.0 + a * a + b * b)
            phase = a * x1 + b * x2
            values += re * np.cos(phase) - im * np.sin(phase)
        values *= amp / np.max(np.abs(values))
    elif kind == "two_bump":
        base = float(kw.get("base", -0.4))
        amp = float(kw.get("amp", 0.8))
        width = float(kw.get("width", 0.5))
        bump = np.zeros(grid.shape)
        for cx in (-np.pi / 2, np.pi / 2):
            bump += np.exp((np.cos(x1 - cx) + np.cos(x2) - 2.0) / width**2)
        values = base + amp * bump
        if np.max(np.abs(values)) >= 1:
            raise ValueError("two_bump parameters reach |u| >= 1")
    else:
        raise ValueError(f"unknown initial data kind {kind!r}")
    return Field(grid, values)
