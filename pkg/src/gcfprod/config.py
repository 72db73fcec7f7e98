"""Flat ``key = value`` configuration files with dotted section names.

Example::

    # desk-scale study
    dgp.n_firms = 1000
    dgp.structural.alpha = 0.3
    dgp.shock_d1.variance = 25
    study.n_replications = 50
    study.degrees = 2, 4

Keys under ``dgp.`` mirror the fields of :class:`~gcfprod.dgp.DGPConfig`
(nested dataclasses use one more dot); keys under ``study.`` mirror
:class:`StudyConfig` apart from ``dgp``.  Unknown keys raise ConfigError.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path

from .dgp import DGPConfig, LawOfMotionParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StudyConfig:
    dgp: DGPConfig = field(default_factory=lambda: DGPConfig(n_firms=1000))
    n_replications: int = 50
    degrees: tuple[int, ...] = (2, 4)
    baseline: bool = True
    jobs: int = 1
    output_dir: str = "mc_out"
    master_seed: int = 20240601
    weighting: str = "oracle"
    orthogonality_directions: int = 20
    true_avg_log_markup: float = 0.25    # bias reference; 0.25 for the default demand process

    def __post_init__(self):
        if self.n_replications < 1:
            raise ConfigError("study.n_replications must be >= 1")
        if self.jobs < 1:
            raise ConfigError("study.jobs must be >= 1")
        if self.weighting not in ("oracle", "two_step", "identity"):
            raise ConfigError(f"unknown study.weighting {self.weighting!r}")
        if any(d < 0 for d in self.degrees):
            raise ConfigError("study.degrees must be nonnegative")

    @property
    def estimators(self) -> list[str]:
        names = [f"gcf-d{d}" for d in self.degrees]
        return names + (["baseline"] if self.baseline else [])


def _parse_scalar(text: str, kind):
    text = text.strip()
    if kind is bool:
        low = text.lower()
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"not a boolean: {text!r}")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


_STUDY_TYPES = {"n_replications": int, "jobs": int, "master_seed": int, "baseline": bool,
                "output_dir": str, "weighting": str, "orthogonality_directions": int,
                "true_avg_log_markup": float}
_LOM_FIELDS = [f.name for f in fields(LawOfMotionParams)]


def parse_lines(lines) -> dict[str, str]:
    out = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        out[key] = value
    return out


def _apply_dgp(base: DGPConfig, entries: dict[str, str]) -> DGPConfig:
    groups: dict[str, dict] = {}
    top = {}
    for key, value in entries.items():
        parts = key.split(".")
        if len(parts) == 1:
            top[parts[0]] = value
        elif len(parts) == 2:
            groups.setdefault(parts[0], {})[parts[1]] = value
        else:
            raise ConfigError(f"dgp.{key}: too many levels")
    names = {f.name: f for f in fields(DGPConfig)}
    updates = {}
    for name, value in top.items():
        if name not in names or name == "law_of_motion" or is_dataclass(getattr(base, name)):
            raise ConfigError(f"unknown key dgp.{name}")
        updates[name] = _parse_scalar(value, int if name in
                                      ("n_firms", "n_periods", "burn_in", "seed") else float)
    for group, kv in groups.items():
        if group == "law_of_motion":
            unknown = set(kv) - set(_LOM_FIELDS)
            if unknown or set(kv) != set(_LOM_FIELDS):
                raise ConfigError("dgp.law_of_motion needs exactly the keys "
                                  + ", ".join(_LOM_FIELDS))
            updates[group] = LawOfMotionParams(**{k: float(v) for k, v in kv.items()})
            continue
        if group not in names or not is_dataclass(getattr(base, group)):
            raise ConfigError(f"unknown section dgp.{group}")
        current = getattr(base, group)
        allowed = {f.name for f in fields(current)}
        for k in kv:
            if k not in allowed:
                raise ConfigError(f"unknown key dgp.{group}.{k}")
        try:
            updates[group] = replace(current, **{k: float(v) for k, v in kv.items()})
        except ValueError as exc:
            raise ConfigError(f"dgp.{group}: {exc}") from exc
    try:
        return replace(base, **updates)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def study_from_entries(entries: dict[str, str], base: StudyConfig | None = None) -> StudyConfig:
    base = base or StudyConfig()
    dgp_entries = {}
    study = {}
    for key, value in entries.items():
        section, _, rest = key.partition(".")
        if section == "dgp" and rest:
            dgp_entries[rest] = value
        elif section == "study" and rest:
            if rest == "degrees":
                study[rest] = tuple(int(s) for s in value.split(",") if s.strip())
            elif rest in _STUDY_TYPES:
                study[rest] = _parse_scalar(value, _STUDY_TYPES[rest])
            else:
                raise ConfigError(f"unknown key {key}")
        else:
            raise ConfigError(f"unknown key {key}")
    try:
        dgp = _apply_dgp(base.dgp, dgp_entries)
        return replace(base, dgp=dgp, **study)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path) -> StudyConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} not found")
    return study_from_entries(parse_lines(path.read_text().splitlines()))


def dump_config(config: StudyConfig) -> str:
    """Inverse of :func:`load_config` (law_of_motion only when set)."""
    lines = []
    d = dataclasses.asdict(config.dgp)
    for key, value in d.items():
        if isinstance(value, dict):
            for k, v in value.items():
                lines.append(f"dgp.{key}.{k} = {v!r}")
        elif value is not None:
            lines.append(f"dgp.{key} = {value!r}")
    for f in fields(StudyConfig):
        if f.name == "dgp":
            continue
        value = getattr(config, f.name)
        if f.name == "degrees":
            value = ", ".join(str(x) for x in value)
        lines.append(f"study.{f.name} = {value}")
    return "\n".join(lines) + "\n"
