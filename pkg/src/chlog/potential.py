"""Logarithmic (Flory-Huggins) free energy and its derived scalar maps.

    F(u)  = theta/2 [(1+u) ln(1+u) + (1-u) ln(1-u)] - theta_c/2 u^2
    f(u)  = F'(u) = -theta_c u + f_tilde(u)
    f_tilde(u) = theta/2 ln((1+u)/(1-u)) = theta * artanh(u)
    F''(u) = theta / (1 - u^2) - theta_c

All maps are vectorised over numpy arrays.  The singular endpoints u = +-1
are handled by a :class:`GuardPolicy`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .grid import Field


class GuardViolation(ValueError):
    """A sample reached the singular endpoints |u| >= 1 - eps_guard."""

    def __init__(self, message, index=None, value=None, step=None):
        super().__init__(message)
        self.index = index
        self.value = value
        self.step = step


@dataclass(frozen=True)
class ModelParams:
    nu: float
    theta: float
    theta_c: float

    def __post_init__(self):
        for name in ("nu", "theta", "theta_c"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be finite and > 0, got {v}")
            object.__setattr__(self, name, float(v))
        if not self.theta < self.theta_c:
            raise ValueError(
                f"theta must be < theta_c (got theta={self.theta}, theta_c={self.theta_c})"
            )

    @property
    def spinodal(self) -> float:
        """u_s = sqrt(1 - theta/theta_c); F'' < 0 exactly on (-u_s, u_s)."""
        return math.sqrt(1.0 - self.theta / self.theta_c)

    @cached_property
    def binodal(self) -> float:
        return binodal(self)


@dataclass(frozen=True)
class GuardPolicy:
    """How to treat samples near |u| = 1.

    ``abort`` raises :class:`GuardViolation`; ``saturate`` clamps to
    +-(1 - eps_guard) and counts the clamped samples.
    """

    mode: str = "abort"
    eps_guard: float = 1e-13

    def __post_init__(self):
        if self.mode not in ("abort", "saturate"):
            raise ValueError(f"guard mode must be 'abort' or 'saturate', got {self.mode!r}")
        if not 0.0 < self.eps_guard < 1e-6:
            raise ValueError(f"eps_guard must lie in (0, 1e-6), got {self.eps_guard}")


ABORT = GuardPolicy()


def guard(u, policy: GuardPolicy = ABORT, step: int | None = None) -> tuple[np.ndarray, int]:
    """Apply ``policy`` to ``u``; returns (admissible array, saturation count)."""
    u = np.asarray(u, dtype=np.float64)
    limit = 1.0 - policy.eps_guard
    bad = ~(np.abs(u) < limit)  # also catches nan
    if not bad.any():
        return u, 0
    if policy.mode == "abort":
        idx = tuple(int(i) for i in np.argwhere(bad)[0]) if u.ndim else ()
        val = float(u[idx]) if u.ndim else float(u)
        where = f" at step {step}" if step is not None else ""
        raise GuardViolation(
            f"|u| >= 1 - {policy.eps_guard:g}{where}: sample {idx} = {val!r}",
            index=idx, value=val, step=step,
        )
    if np.isnan(u).any():
        raise GuardViolation("nan sample cannot be saturated", step=step)
    return np.clip(u, -limit, limit), int(np.count_nonzero(bad))


def free_energy_density(u, params: ModelParams, policy: GuardPolicy = ABORT):
    u, _ = guard(u, policy)
    entropy = (1.0 + u) * np.log1p(u) + (1.0 - u) * np.log1p(-u)
    return 0.5 * params.theta * entropy - 0.5 * params.theta_c * u * u


def f_tilde(u, params: ModelParams, policy: GuardPolicy = ABORT):
    u, _ = guard(u, policy)
    return params.theta * np.arctanh(u)


def f(u, params: ModelParams, policy: GuardPolicy = ABORT):
    u, _ = guard(u, policy)
    return -params.theta_c * u + params.theta * np.arctanh(u)


def f_second(u, params: ModelParams, policy: GuardPolicy = ABORT):
    u, _ = guard(u, policy)
    return params.theta / (1.0 - u * u) - params.theta_c


def quartic_density(u, params: ModelParams):
    """Quartic truncation theta/12 u^4 + (theta - theta_c)/2 u^2 of F."""
    u = np.asarray(u, dtype=np.float64)
    return 0.5 * params.theta * u**4 / 6.0 + 0.5 * (params.theta - params.theta_c) * u**2


def binodal(params: ModelParams, max_iter: int = 200) -> float:
    """Positive root u_+ of f, by bisection on [u_s + 1e-12, 1 - 1e-12].

    f < 0 on (0, u_+) and f > 0 on (u_+, 1).  For deep quenches
    (theta/theta_c below about 0.07) the root lies above 1 - 1e-12 and the
    upper end moves to the largest double below 1; if f is still negative
    there the root is not representable and that double is returned.
    Iterates until the bracket stops shrinking in floating point.
    """
    lo = params.spinodal + 1e-12
    hi = 1.0 - 1e-12

    def fs(x):
        return -params.theta_c * x + params.theta * math.atanh(x)

    if fs(hi) < 0:
        hi = math.nextafter(1.0, 0.0)
        if fs(hi) <= 0:
            return hi
    flo = fs(lo)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        fm = fs(mid)
        if fm == 0.0:
            return mid
        if (fm < 0) == (flo < 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return lo if abs(fs(lo)) <= abs(fs(hi)) else hi


_POINTWISE = {
    "F": free_energy_density,
    "f": f,
    "f_tilde": f_tilde,
    "f_second": f_second,
}


def apply_pointwise(
    fld: Field, fn: str, params: ModelParams, policy: GuardPolicy = ABORT
) -> tuple[Field, int]:
    """Evaluate one of F, f, f_tilde, f_second sample-wise.

    Returns the mapped field and the number of saturated samples (always 0
    under the abort policy, which raises instead).
    """
    try:
        func = _POINTWISE[fn]
    except KeyError:
        raise ValueError(f"fn must be one of {sorted(_POINTWISE)}, got {fn!r}") from None
    u, count = guard(fld.values, policy)
    return Field(fld.grid, func(u, params, policy)), count
