"""Plain ``key=value`` run configuration.

Example::

    # shallow quench, random start
    grid_n = 64
    nu = 1
    theta = 1
    theta_c = 2
    scheme = semi_implicit      # or variant, galerkin:N
    tau = auto                  # 0.5 * max admissible tau
    t_final = 1.0               # exactly one of t_final / n_steps
    init = random:4:0.4         # constant:c | mode:c:k1:k2:eps | random:kmax:amp | two_bump[:base:amp:width]
    seed = 7
"""
from __future__ import annotations

import math
from dataclasses import dataclass

from .grid import Field, make_grid
from .potential import GuardPolicy, ModelParams
from .stepper import InadmissibleStepError, SchemeConfig, builtin_initial_data, max_admissible_tau

KEYS = (
    "grid_n", "nu", "theta", "theta_c", "scheme", "tau", "n_steps", "t_final",
    "init", "seed", "guard", "cadence", "out_dir",
)
REQUIRED = ("grid_n", "nu", "theta", "theta_c", "scheme", "tau", "init")
AUTO_TAU_FRACTION = 0.5


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    grid_n: int
    params: ModelParams
    scheme: str
    cutoff: int | None
    tau: float
    n_steps: int | None
    t_final: float | None
    init: tuple
    seed: int
    guard: GuardPolicy
    cadence: int
    out_dir: str
    pairs: tuple = ()

    def scheme_config(self) -> SchemeConfig:
        return SchemeConfig(self.scheme, self.tau, self.params, self.guard, self.cutoff)

    def total_steps(self) -> int:
        if self.n_steps is not None:
            return self.n_steps
        m = round(self.t_final / self.tau)
        return m

    def initial_field(self) -> Field:
        kind, kw = self.init
        return builtin_initial_data(kind, make_grid(self.grid_n), seed=self.seed, **kw)

    def with_override(self, key: str, value: str) -> "RunConfig":
        pairs = dict(self.pairs)
        pairs[key] = value
        return config_from_pairs(pairs)


def parse_pairs(text: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in pairs:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        pairs[key] = value
    return pairs


def _num(pairs, key, kind=float):
    try:
        v = kind(pairs[key])
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {pairs[key]!r} as {kind.__name__}") from None
    if kind is float and not math.isfinite(v):
        raise ConfigError(f"{key} must be finite, got {v}")
    return v


def parse_init(text: str) -> tuple[str, dict]:
    parts = text.split(":")
    kind, args = parts[0], parts[1:]
    try:
        if kind == "constant" and len(args) == 1:
            return "constant", {"c": float(args[0])}
        if kind == "mode" and len(args) == 4:
            c, k1, k2, eps = args
            return "single_mode", {"c": float(c), "k": (int(k1), int(k2)), "eps": float(eps)}
        if kind == "random" and len(args) == 2:
            return "random_bandlimited", {"kmax": int(args[0]), "amp": float(args[1])}
        if kind == "two_bump" and len(args) in (0, 3):
            if not args:
                return "two_bump", {}
            base, amp, width = map(float, args)
            return "two_bump", {"base": base, "amp": amp, "width": width}
    except ValueError:
        pass
    raise ConfigError(
        f"init: cannot parse {text!r} (expected constant:c, mode:c:k1:k2:eps, "
        "random:kmax:amp or two_bump[:base:amp:width])"
    )


def parse_scheme(text: str) -> tuple[str, int | None]:
    if text in ("semi_implicit", "variant"):
        return text, None
    if text.startswith("galerkin:"):
        try:
            return "galerkin", int(text.split(":", 1)[1])
        except ValueError:
            pass
    raise ConfigError(f"scheme: expected semi_implicit, variant or galerkin:N, got {text!r}")


def parse_guard(text: str) -> GuardPolicy:
    mode, _, eps = text.partition(":")
    try:
        return GuardPolicy(mode, float(eps)) if eps else GuardPolicy(mode)
    except ValueError as exc:
        raise ConfigError(f"guard: {exc}") from None


def config_from_pairs(pairs: dict[str, str]) -> RunConfig:
    unknown = sorted(set(pairs) - set(KEYS))
    if unknown:
        raise ConfigError(f"unknown key(s): {', '.join(map(repr, unknown))}")
    missing = [k for k in REQUIRED if k not in pairs]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")
    if ("n_steps" in pairs) == ("t_final" in pairs):
        raise ConfigError("exactly one of n_steps or t_final must be given")

    grid_n = _num(pairs, "grid_n", int)
    try:
        grid = make_grid(grid_n)
    except ValueError as exc:
        raise ConfigError(f"grid_n: {exc}") from None
    nu, theta, theta_c = (_num(pairs, k) for k in ("nu", "theta", "theta_c"))
    for k, v in (("nu", nu), ("theta", theta), ("theta_c", theta_c)):
        if v <= 0:
            raise ConfigError(f"{k} must be > 0, got {v}")
    if not theta < theta_c:
        raise ConfigError(f"theta must be < theta_c (theta={theta}, theta_c={theta_c})")
    params = ModelParams(nu, theta, theta_c)
    scheme, cutoff = parse_scheme(pairs["scheme"])
    if cutoff is not None and not 0 < cutoff <= grid_n // 2:
        raise ConfigError(f"scheme: galerkin cutoff must lie in [1, {grid_n // 2}], got {cutoff}")

    if pairs["tau"] == "auto":
        tmax = max_admissible_tau(params, grid, scheme)
        if not math.isfinite(tmax):
            raise ConfigError("tau=auto needs a bounded admissible step; give tau explicitly")
        tau = AUTO_TAU_FRACTION * tmax
    else:
        tau = _num(pairs, "tau")

    n_steps = t_final = None
    if "n_steps" in pairs:
        n_steps = _num(pairs, "n_steps", int)
        if n_steps < 0:
            raise ConfigError(f"n_steps must be >= 0, got {n_steps}")
    else:
        t_final = _num(pairs, "t_final")
        if t_final <= 0:
            raise ConfigError(f"t_final must be > 0, got {t_final}")
        m = round(t_final / tau)
        if abs(m * tau - t_final) > 1e-9 * t_final:
            raise ConfigError(f"t_final={t_final} is not an integer multiple of tau={tau}")

    guard = parse_guard(pairs.get("guard", "abort"))
    cadence = _num(pairs, "cadence", int) if "cadence" in pairs else 1
    if cadence < 1:
        raise ConfigError(f"cadence must be >= 1, got {cadence}")
    seed = _num(pairs, "seed", int) if "seed" in pairs else 0

    cfg = RunConfig(
        grid_n=grid_n, params=params, scheme=scheme, cutoff=cutoff, tau=tau,
        n_steps=n_steps, t_final=t_final, init=parse_init(pairs["init"]), seed=seed,
        guard=guard, cadence=cadence, out_dir=pairs.get("out_dir", "out"),
        pairs=tuple(sorted(pairs.items())),
    )
    try:
        cfg.scheme_config()
    except InadmissibleStepError as exc:
        raise ConfigError(f"tau: {exc}") from None
    try:
        cfg.initial_field()
    except ValueError as exc:
        raise ConfigError(f"init: {exc}") from None
    return cfg


def parse_config(text: str) -> RunConfig:
    return config_from_pairs(parse_pairs(text))


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
