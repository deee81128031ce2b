"""Flat key-value experiment configs.

File format: UTF-8 text, one ``section.key = value`` per line, ``#`` starts
a comment.  Serialization is canonical (sorted keys, every known key
emitted), so serialize -> parse -> serialize is the identity.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

from .algorithms import SCHEDULE_NAMES
from .losses import canonical_family

ALGORITHMS = ("ocgd", "congd", "dinoco", "dsgd")
DRIFTS = ("none", "linear", "sinusoidal")
MIXING_SCHEMES = ("metropolis", "uniform")
ETA_SCHEMES = ("sqrt_k", "sqrt_nk", "explicit")


class ConfigError(ValueError):
    pass


def parse_flat(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("line %d: expected 'key = value', got %r" % (ln, raw))
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError("line %d: empty key" % ln)
        out[key] = value.strip()
    return out


def serialize_flat(mapping: dict[str, str]) -> str:
    lines = ["%s = %s" % (k, mapping[k]) for k in sorted(mapping)]
    return "\n".join(lines) + "\n"


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (tuple, list)):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_bool(s: str) -> bool:
    if s.lower() in ("true", "1", "yes"):
        return True
    if s.lower() in ("false", "0", "no"):
        return False
    raise ConfigError("expected boolean, got %r" % (s,))


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce a run: config + master seed suffice."""

    algorithm: str = "ocgd"
    topology_kind: str = "ring"
    n_agents: int = 4
    mixing_scheme: str = "metropolis"

    family: str = "quadratic"
    drift: str = "none"
    heterogeneity: float = 0.5
    loss_seed: int | None = None
    mu: float = 1.0
    knee: float = 1e-3
    slope: float = 4.0
    amp: float = 1.0
    freq: float = 3.0
    drift_step: float = 0.1
    drift_amplitude: float = 0.4
    drift_period: float = 32.0

    domain_lower: float = -1.0
    domain_upper: float = 1.0
    dim: int = 1

    horizon: int = 1000
    seeds: tuple[int, ...] = (0,)
    init: str = "origin"

    schedule_name: str | None = None
    alpha: float | None = None

    eta: float | None = None
    eta_scheme: str = "sqrt_k"
    oracle_grid_points: int | None = None
    oracle_scale: float = 1.0

    comparator_grid: int = 0  # 0 = resolution picked from the horizon
    report_dynamic: bool = True
    report_centers: bool = False

    dataset_components: int = 10
    dataset_spread: float = 0.5

    _KEYS = {
        "algorithm": "algorithm",
        "topology.kind": "topology_kind",
        "topology.n_agents": "n_agents",
        "topology.scheme": "mixing_scheme",
        "loss.family": "family",
        "loss.drift": "drift",
        "loss.heterogeneity": "heterogeneity",
        "loss.seed": "loss_seed",
        "loss.mu": "mu",
        "loss.knee": "knee",
        "loss.slope": "slope",
        "loss.amp": "amp",
        "loss.freq": "freq",
        "loss.drift_step": "drift_step",
        "loss.drift_amplitude": "drift_amplitude",
        "loss.drift_period": "drift_period",
        "domain.lower": "domain_lower",
        "domain.upper": "domain_upper",
        "domain.dim": "dim",
        "run.horizon": "horizon",
        "run.seeds": "seeds",
        "run.init": "init",
        "schedule.name": "schedule_name",
        "schedule.alpha": "alpha",
        "oracle.eta": "eta",
        "oracle.eta_scheme": "eta_scheme",
        "oracle.grid_points": "oracle_grid_points",
        "oracle.scale": "oracle_scale",
        "report.comparator_grid": "comparator_grid",
        "report.dynamic": "report_dynamic",
        "report.centers": "report_centers",
        "dataset.components": "dataset_components",
        "dataset.spread": "dataset_spread",
    }

    def to_mapping(self) -> dict[str, str]:
        return {key: _fmt(getattr(self, attr)) for key, attr in self._KEYS.items()}

    def serialize(self) -> str:
        return serialize_flat(self.to_mapping())

    @classmethod
    def from_mapping(cls, mapping: dict[str, str]) -> "ExperimentConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in mapping.items():
            if key not in cls._KEYS:
                raise ConfigError("unknown config key %r" % (key,))
            attr = cls._KEYS[key]
            if raw == "":
                kwargs[attr] = None
                continue
            ftype = types[attr]
            if attr == "seeds":
                kwargs[attr] = tuple(int(v) for v in raw.split(",") if v.strip() != "")
            elif ftype.startswith("bool"):
                kwargs[attr] = _parse_bool(raw)
            elif ftype.startswith("int"):
                kwargs[attr] = int(raw)
            elif ftype.startswith("float"):
                kwargs[attr] = float(raw)
            else:
                kwargs[attr] = raw
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        return cls.from_mapping(parse_flat(text))

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.parse(fh.read())

    def to_file(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.serialize())

    def with_(self, **changes) -> "ExperimentConfig":
        cfg = replace(self, **changes)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.algorithm not in ALGORITHMS:
            raise ConfigError("algorithm must be one of %s" % (ALGORITHMS,))
        fam = canonical_family(self.family)
        object.__setattr__(self, "family", fam)
        if self.drift not in DRIFTS:
            raise ConfigError("drift must be one of %s" % (DRIFTS,))
        if self.mixing_scheme not in MIXING_SCHEMES:
            raise ConfigError("mixing scheme must be one of %s" % (MIXING_SCHEMES,))
        if self.n_agents < 1 or self.horizon < 1:
            raise ConfigError("need n_agents >= 1 and horizon >= 1")
        if not self.seeds:
            raise ConfigError("need at least one seed")
        if self.init not in ("origin", "minimizer"):
            raise ConfigError("init must be origin or minimizer")
        if not self.domain_lower < self.domain_upper:
            raise ConfigError("need domain.lower < domain.upper")
        if self.eta_scheme not in ETA_SCHEMES:
            raise ConfigError("eta scheme must be one of %s" % (ETA_SCHEMES,))
        # algorithm/loss compatibility
        if self.algorithm == "congd" and fam == "sine-quadratic":
            raise ConfigError(
                "the normalized-gradient rule needs a convex or pseudo-convex "
                "family; got sine-quadratic")
        if self.algorithm == "dinoco" and self.dim != 1:
            raise ConfigError("the perturbed-leader rule supports n = 1 only")
        if self.algorithm == "dsgd" and fam != "quadratic":
            raise ConfigError("the sampled-loss preset needs the quadratic family")
        if self.algorithm in ("ocgd", "congd", "dsgd"):
            if self.schedule_name is None and self.alpha is None:
                raise ConfigError("gradient-based runs need schedule.name or "
                                  "schedule.alpha")
            if self.schedule_name is not None:
                if self.schedule_name not in SCHEDULE_NAMES:
                    raise ConfigError("unknown schedule %r" % (self.schedule_name,))
                if self.algorithm == "congd" and not self.schedule_name.startswith("congd"):
                    raise ConfigError("normalized-gradient runs take congd schedules")
                if self.algorithm in ("ocgd", "dsgd") and \
                        not self.schedule_name.startswith("ocgd"):
                    raise ConfigError("consensus-gradient runs take ocgd schedules")
                if self.schedule_name == "ocgd_strongly_convex" and fam != "quadratic":
                    raise ConfigError("the 1/(mu k) schedule needs the quadratic "
                                      "(strongly convex) family")
        if self.alpha is not None and not self.alpha > 0:
            raise ConfigError("schedule.alpha must be positive")
        if self.eta is not None and not self.eta > 0:
            raise ConfigError("oracle.eta must be positive")
