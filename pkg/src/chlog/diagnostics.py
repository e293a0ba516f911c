"""Observables certified along a trajectory.

Energy, mass, separation margin, chemical potential K = -nu Lap u - theta_c u
+ f_tilde(u), the field g = f_tilde(u), Sobolev norms, and the residual of the
exact one-step discrete energy identity.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .grid import (
    Field,
    Spectrum,
    TORUS_AREA,
    backward,
    forward,
    fractional_symbol,
    spectral_sum,
    transform,
)
from .potential import ABORT, GuardPolicy, ModelParams, free_energy_density, guard

MASS_MATCH_ATOL = 1e-12
ENERGY_UPTICK_RTOL = 1e-12

CSV_COLUMNS = (
    "step", "time", "energy", "mass", "margin", "grad_K_l2", "g_mean",
    "g_fluct", "h1", "h3", "h5", "identity_residual",
)


class TrajectoryMismatchError(ValueError):
    """Two fields that should be consecutive iterates have different means."""


@dataclass(frozen=True)
class DiagnosticsRecord:
    step: int
    time: float
    energy: float
    mass: float
    margin: float
    grad_K_l2: float
    g_mean: float
    g_fluct: float
    h1: float
    h3: float
    h5: float
    identity_residual: float
    inc_neg_grad: float = 0.0
    inc_grad: float = 0.0

    def csv_row(self) -> dict:
        d = asdict(self)
        return {k: d[k] for k in CSV_COLUMNS}


@dataclass(frozen=True)
class ChemicalPotential:
    K: Field
    grad_l2: float
    mean: float


@dataclass(frozen=True)
class GStatistics:
    g_mean: float
    g_fluct_l2: float
    mean_bound_stat: float


@dataclass(frozen=True)
class SeparationReport:
    min_margin: float
    argmin_step: int
    monotone_energy: bool
    max_energy_uptick: float


def _spec(u: Field, spec: Spectrum | None) -> np.ndarray:
    return transform(u).coeffs if spec is None else spec.coeffs


def energy(u: Field, params: ModelParams, policy: GuardPolicy = ABORT,
           spec: Spectrum | None = None) -> float:
    """E(u) = 1/2 nu ||grad u||^2 + integral F(u), the latter by quadrature."""
    c = _spec(u, spec)
    grad_sq = spectral_sum(u.grid, c, u.grid.ksq)
    bulk = u.grid.quad_weight * float(np.sum(free_energy_density(u.values, params, policy)))
    return 0.5 * params.nu * grad_sq + bulk


def _K_coeffs(u: Field, params: ModelParams, policy: GuardPolicy, c: np.ndarray):
    g = params.theta * np.arctanh(guard(u.values, policy)[0])
    gc = forward(u.grid, g)
    return (params.nu * u.grid.ksq - params.theta_c) * c + gc, g


def chemical_potential(u: Field, params: ModelParams, policy: GuardPolicy = ABORT,
                       spec: Spectrum | None = None) -> ChemicalPotential:
    Kc, _ = _K_coeffs(u, params, policy, _spec(u, spec))
    K = Field(u.grid, backward(u.grid, Kc))
    grad = math.sqrt(spectral_sum(u.grid, Kc, u.grid.ksq))
    return ChemicalPotential(K=K, grad_l2=grad, mean=float(Kc[0, 0].real))


def g_statistics(u: Field, params: ModelParams, policy: GuardPolicy = ABORT) -> GStatistics:
    """Mean and fluctuation of g = f_tilde(u).

    ``mean_bound_stat`` is |mean g| * (1 - |mean u|)^(1/2); it stays bounded
    when the mean of g obeys the (1 - |mean u|)^(-1/2) growth law.
    """
    ubar = u.mean()
    if not abs(ubar) < 1.0:
        raise ValueError(f"|mean(u)| must be < 1, got {ubar}")
    g = params.theta * np.arctanh(guard(u.values, policy)[0])
    gbar = float(np.mean(g))
    fluct = math.sqrt(u.grid.quad_weight * float(np.sum((g - gbar) ** 2)))
    return GStatistics(gbar, fluct, abs(gbar) * math.sqrt(1.0 - abs(ubar)))


def _increment_terms(c0: np.ndarray, c1: np.ndarray, grid) -> tuple[float, float, float]:
    """(|| |grad|^-1 d ||^2, ||grad d||^2, ||d||^2) for d = u1 - u0, spectrally."""
    d = c1 - c0
    neg = spectral_sum(grid, d, fractional_symbol(grid, -2.0))
    grad = spectral_sum(grid, d, grid.ksq)
    l2 = spectral_sum(grid, d)
    return neg, grad, l2


def _identity_residual(u_n: Field, u_np1: Field, c0, c1, tau: float,
                       params: ModelParams, scheme: str, policy: GuardPolicy,
                       e0: float | None = None, e1: float | None = None):
    if abs(u_np1.mean() - u_n.mean()) > MASS_MATCH_ATOL:
        raise TrajectoryMismatchError(
            f"means differ by {abs(u_np1.mean() - u_n.mean()):.3e}; "
            "fields are not consecutive iterates of one trajectory"
        )
    grid = u_n.grid
    neg, grad, l2 = _increment_terms(c0, c1, grid)
    if e0 is None:
        e0 = energy(u_n, params, policy, Spectrum(grid, c0))
    if e1 is None:
        e1 = energy(u_np1, params, policy, Spectrum(grid, c1))
    a, _ = guard(u_n.values, policy)
    b, _ = guard(u_np1.values, policy)
    fa = -params.theta_c * a + params.theta * np.arctanh(a)
    H1 = free_energy_density(b, params, policy) - free_energy_density(a, params, policy) - fa * (b - a)
    rhs = grid.quad_weight * float(np.sum(H1))
    if scheme in ("semi_implicit", "galerkin"):
        # theta_c Lap is implicit here, which contributes theta_c ||d||^2
        rhs += params.theta_c * l2
    elif scheme != "variant":
        raise ValueError(f"unknown scheme {scheme!r}")
    lhs = neg / tau + 0.5 * params.nu * grad + e1 - e0
    return abs(lhs - rhs), math.sqrt(neg), math.sqrt(grad)


def energy_identity_residual(u_n: Field, u_np1: Field, tau: float, params: ModelParams,
                             scheme: str = "semi_implicit",
                             policy: GuardPolicy = ABORT) -> float:
    """|LHS - RHS| of the one-step energy identity.

    LHS = (1/tau) || |grad|^-1 d ||^2 + nu/2 ||grad d||^2 + E(u1) - E(u0)
    RHS = integral H1,  H1 = F(u1) - F(u0) - f(u0) d,     d = u1 - u0,
    plus theta_c ||d||^2 for the schemes that treat theta_c Lap u implicitly.
    H1 is integrated from its definition, so for a genuine step the
    residual is pure roundoff.
    """
    c0 = transform(u_n).coeffs
    c1 = transform(u_np1).coeffs
    return _identity_residual(u_n, u_np1, c0, c1, tau, params, scheme, policy)[0]


def make_record(state, params: ModelParams, prev=None, scheme: str = "semi_implicit",
                policy: GuardPolicy = ABORT, prev_energy: float | None = None) -> DiagnosticsRecord:
    """Diagnostics for ``state``; ``prev`` (the previous iterate) enables the
    identity residual and increment norms, which are 0 otherwise."""
    u, c = state.u, state.spectrum.coeffs
    grid = u.grid
    E = energy(u, params, policy, state.spectrum)
    Kc, g = _K_coeffs(u, params, policy, c)
    gbar = float(np.mean(g))
    weight = 1.0 + grid.ksq
    pw = np.abs(c) ** 2 * TORUS_AREA
    res = neg = gr = 0.0
    if prev is not None:
        res, neg, gr = _identity_residual(
            prev.u, u, prev.spectrum.coeffs, c, state.tau, params, scheme, policy,
            e0=prev_energy, e1=E,
        )
    return DiagnosticsRecord(
        step=state.step,
        time=state.time,
        energy=E,
        mass=u.mean(),
        margin=1.0 - float(np.max(np.abs(u.values))),
        grad_K_l2=math.sqrt(spectral_sum(grid, Kc, grid.ksq)),
        g_mean=gbar,
        g_fluct=math.sqrt(grid.quad_weight * float(np.sum((g - gbar) ** 2))),
        h1=math.sqrt(float(np.sum(weight * pw))),
        h3=math.sqrt(float(np.sum(weight**3 * pw))),
        h5=math.sqrt(float(np.sum(weight**5 * pw))),
        identity_residual=res,
        inc_neg_grad=neg,
        inc_grad=gr,
    )


def separation_report(records: Sequence[DiagnosticsRecord]) -> SeparationReport:
    if not records:
        raise ValueError("separation_report needs at least one record")
    margins = np.array([r.margin for r in records])
    i = int(np.argmin(margins))
    energies = np.array([r.energy for r in records])
    upticks = np.diff(energies)
    tol = ENERGY_UPTICK_RTOL * (1.0 + abs(energies[0]))
    max_up = float(upticks.max()) if upticks.size else 0.0
    return SeparationReport(
        min_margin=float(margins[i]),
        argmin_step=records[i].step,
        monotone_energy=bool(np.all(upticks <= tol)),
        max_energy_uptick=max_up,
    )


def dissipation_budget(records: Sequence[DiagnosticsRecord], tau: float, nu: float):
    """(dissipated, energy drop) over a run recorded at every step.

    dissipated = sum_j [ 1/(2 tau) || |grad|^-1 d_j ||^2 + nu/4 ||grad d_j||^2 ],
    which an energy-stable step bounds by E(u^0) - E(u^n).
    """
    steps = [r.step for r in records]
    if any(b - a != 1 for a, b in zip(steps, steps[1:])):
        raise ValueError("dissipation_budget needs records at every step")
    dissipated = sum(r.inc_neg_grad**2 / (2 * tau) + 0.25 * nu * r.inc_grad**2 for r in records[1:])
    return dissipated, records[0].energy - records[-1].energy


def grad_K_spread(records: Sequence[DiagnosticsRecord]) -> float:
    """max ||grad K|| over the run divided by its max over the second half."""
    vals = np.array([r.grad_K_l2 for r in records])
    tail = vals[len(vals) // 2:]
    top = float(tail.max())
    if top == 0.0:
        return 1.0 if vals.max() == 0.0 else math.inf
    return float(vals.max()) / top
