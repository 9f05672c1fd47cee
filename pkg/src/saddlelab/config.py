"""Plain-text scenario configs.

Format: one ``key = value`` per line, ``#`` starts a comment, list values are
comma separated, ``none`` clears an optional field. The first non-blank line
must be ``schema = 1``::

    schema = 1
    scenario = knapp-sweep
    R = 16, 32, 64, 128, 256
    p = 4
"""
from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from pathlib import Path

SCHEMA_VERSION = 1

SCENARIOS = {
    "eval": "eval",
    "norms": "norm-sweep",
    "broad": "broad-stats",
    "classify": "classify",
    "knapp": "knapp-sweep",
    "geolemma": "geolemma-fuzz",
    "packets": "packet-audit",
    "partition": "partition-audit",
    "scan": "growth-scan",
}


class ConfigError(ValueError):
    """Bad config; the message starts with ``source:line:`` when known."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Everything a scenario run depends on.

    ``K``, ``D`` and the norm exponents are lists so that sweeps can range
    over them; single-valued scenarios use the first entry.
    """

    scenario: str = "norm-sweep"
    gamma: tuple = (1.0,)
    R: tuple = (16.0, 32.0, 64.0)
    K: tuple = (16.0,)
    epsilon: float = 0.2
    alpha: float | None = None
    mu: float = 1.0
    p: tuple = (3.25,)
    q: tuple = (3.25,)
    N: int | None = None
    M: int | None = None
    seed: int = 0
    out: str = "saddlelab-out"
    n_f: int = 4
    D: tuple = (2, 4)
    delta: float | None = None
    trials: int = 200
    method: str = "dense"

    def __post_init__(self):
        problems = validate(self)
        if problems:
            raise ConfigError("; ".join(f"{k}: {m}" for k, m in problems))

    @property
    def delta_value(self) -> float:
        return self.epsilon**2 if self.delta is None else self.delta

    def alpha_for(self, K: float) -> float:
        return K ** (-self.epsilon) if self.alpha is None else self.alpha


_LISTS = {"gamma": float, "R": float, "K": float, "p": float, "q": float, "D": int}
_SCALARS = {"scenario": str, "epsilon": float, "alpha": float, "mu": float, "N": int, "M": int,
            "seed": int, "out": str, "n_f": int, "delta": float, "trials": int, "method": str}
_OPTIONAL = {"alpha", "N", "M", "delta"}


def validate(cfg: ScenarioConfig) -> list:
    """Return ``[(key, message)]`` for every violated precondition."""
    bad = []
    if cfg.scenario not in SCENARIOS.values():
        bad.append(("scenario", f"unknown scenario {cfg.scenario!r}"))
    for key in ("gamma", "R", "K", "p", "q", "D"):
        if len(getattr(cfg, key)) == 0:
            bad.append((key, "list must not be empty"))
    if any(not math.isfinite(g) or abs(g) > 1 for g in cfg.gamma):
        bad.append(("gamma", "need |gamma| <= 1"))
    if any(r < 1 for r in cfg.R):
        bad.append(("R", "need R >= 1"))
    if any(k < 1 for k in cfg.K):
        bad.append(("K", "need K >= 1"))
    if not 0 < cfg.epsilon < 1:
        bad.append(("epsilon", "need 0 < epsilon < 1"))
    if cfg.alpha is not None and not 0 < cfg.alpha <= 1:
        bad.append(("alpha", "need 0 < alpha <= 1"))
    if cfg.mu < 1:
        bad.append(("mu", "need mu >= 1"))
    if any(p < 1 for p in cfg.p):
        bad.append(("p", "need p >= 1"))
    if any(q <= 1 for q in cfg.q):
        bad.append(("q", "need q > 1"))
    if any(d < 1 for d in cfg.D):
        bad.append(("D", "need D >= 1"))
    if cfg.N is not None and cfg.N < 1:
        bad.append(("N", "need N >= 1"))
    if cfg.M is not None and (cfg.M < 2 or cfg.M & (cfg.M - 1)):
        bad.append(("M", "need a power of two >= 2"))
    if cfg.seed < 0:
        bad.append(("seed", "need seed >= 0"))
    if cfg.n_f < 1:
        bad.append(("n_f", "need n_f >= 1"))
    if cfg.trials < 1:
        bad.append(("trials", "need trials >= 1"))
    if cfg.delta is not None and not 0 < cfg.delta < 0.5:
        bad.append(("delta", "need 0 < delta < 1/2"))
    if cfg.method not in ("dense", "fft"):
        bad.append(("method", "expected dense or fft"))
    return bad


def _convert(key, raw):
    raw = raw.strip()
    if key in _LISTS:
        parts = [s.strip() for s in raw.split(",")] if raw else []
        if any(not s for s in parts):
            raise ValueError("empty list entry")
        return tuple(_LISTS[key](s) for s in parts)
    if key in _OPTIONAL and raw.lower() == "none":
        return None
    typ = _SCALARS[key]
    if typ is int:
        return int(raw)
    if typ is float:
        return float(raw)
    if not raw:
        raise ValueError("empty value")
    return raw


def coerce(key: str, raw: str):
    """Convert one textual value; raises ``KeyError`` or ``ValueError``."""
    if key not in _LISTS and key not in _SCALARS:
        raise KeyError(key)
    return _convert(key, raw)


def parse_config(text: str, source: str = "<config>", base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Parse config text, reporting the offending line on any error."""
    values, lines = {}, {}
    seen_schema = False
    for lineno, line in enumerate(text.splitlines(), 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {body!r}")
        key, raw = (s.strip() for s in body.split("=", 1))
        if not seen_schema:
            if key != "schema":
                raise ConfigError(f"{source}:{lineno}: first entry must be 'schema = {SCHEMA_VERSION}'")
            if raw != str(SCHEMA_VERSION):
                raise ConfigError(f"{source}:{lineno}: unsupported schema version {raw!r}")
            seen_schema = True
            continue
        if key in values:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {lines[key]})")
        try:
            values[key] = coerce(key, raw)
        except KeyError:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}") from None
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
        lines[key] = lineno
    if not seen_schema:
        raise ConfigError(f"{source}: missing 'schema = {SCHEMA_VERSION}' line")
    base = base or ScenarioConfig()
    merged = {f.name: getattr(base, f.name) for f in fields(base)}
    merged.update(values)
    probe = object.__new__(ScenarioConfig)
    for k, v in merged.items():
        object.__setattr__(probe, k, v)
    problems = validate(probe)
    if problems:
        key, msg = problems[0]
        where = f"{source}:{lines[key]}" if key in lines else source
        raise ConfigError(f"{where}: {key}: {msg}")
    return ScenarioConfig(**merged)


def load_config(path, base: ScenarioConfig | None = None) -> ScenarioConfig:
    return parse_config(Path(path).read_text(), str(path), base)


def dump_config(cfg: ScenarioConfig) -> str:
    """Inverse of :func:`parse_config`."""
    out = [f"schema = {SCHEMA_VERSION}"]
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if v is None:
            s = "none"
        elif isinstance(v, tuple):
            s = ", ".join(repr(x) for x in v)
        elif isinstance(v, float):
            s = repr(v)
        else:
            s = str(v)
        out.append(f"{f.name} = {s}")
    return "\n".join(out) + "\n"


def with_overrides(cfg: ScenarioConfig, **kw) -> ScenarioConfig:
    """Copy with non-``None`` overrides applied and revalidated."""
    kw = {k: v for k, v in kw.items() if v is not None}
    return replace(cfg, **kw) if kw else cfg
