"""Line-oriented ``key = value`` experiment configuration.

Format::

    # comment
    [experiment]
    name = gebm_finite_m
    seed = 3

    [data]
    rho_list = 1.5, 2, 3

Every key lives in a section; the resolved configuration is addressed by
``section.key``. Unknown keys, duplicates, type errors and missing required
values all raise :class:`ConfigError` with the offending line.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass, field
from pathlib import Path

from .rmt import RHO_SCOPE_MSG

EXPERIMENTS = ("gebm_population", "gebm_finite_m", "gebm_metrics_sweep", "rmt_compare",
               "cleaning_compare", "regularization_scan", "bm_inverse_ising", "gcv_check")
# experiments that rely on rho > 1 (asymptotics, shrinkage, GCV)
RHO_ABOVE_ONE = ("rmt_compare", "cleaning_compare", "regularization_scan", "gcv_check")
CLEANING_METHODS = ("raw", "polyfit", "rie", "oracle")


class ConfigError(ValueError):
    pass


def _floats(text: str) -> tuple:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if not parts:
        raise ValueError("empty list")
    return tuple(float(p) for p in parts)


def _words(text: str) -> tuple:
    parts = tuple(p.strip() for p in text.split(",") if p.strip())
    if not parts:
        raise ValueError("empty list")
    return parts


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _choice(*options):
    def parse(text: str) -> str:
        v = text.strip()
        if v not in options:
            raise ValueError(f"expected one of {', '.join(options)}")
        return v
    parse.__name__ = "one of " + "|".join(options)
    return parse


def _init(text: str) -> str:
    v = text.strip()
    if v in ("identity", "zero"):
        return v
    if float(v) < 0:
        raise ValueError("constant init must be non-negative")
    return v


_REQUIRED = object()

# section.key -> (parser, default)
SCHEMA = {
    "experiment.name": (_choice(*EXPERIMENTS), _REQUIRED),
    "experiment.seed": (int, 0),
    "experiment.replicates": (int, 1),
    "experiment.out_dir": (str, "results"),
    "data.spectrum": (str, "fig1b"),
    "data.spectrum_mode": (_choice("quantile", "random"), "quantile"),
    "data.n": (int, 100),
    "data.n_list": (_floats, ()),
    "data.rho_list": (_floats, (1.5,)),
    "training.rate": (float, 1e-3),
    "training.steps": (int, 100_000),
    "training.record_every": (int, 100),
    "training.schedule": (_choice("linear", "log"), "linear"),
    "training.log_points": (int, 200),
    "training.init": (_init, "identity"),
    "training.method": (_choice("analytic", "numerical"), "analytic"),
    "regularization.kind": (_choice("none", "l2", "spectral_l1"), "none"),
    "regularization.lam": (float, 0.0),
    "regularization.lam_min": (float, 1e-3),
    "regularization.lam_max": (float, 10.0),
    "regularization.lam_count": (int, 41),
    "cleaning.methods": (_words, CLEANING_METHODS),
    "cleaning.nu": (float, 1.0),
    "cleaning.repeats": (int, 10),
    "cleaning.sub_count": (int, 8),
    "rmt.population_size": (int, 2000),
    "rmt.grid_points": (int, 2000),
    "rmt.eps": (float, 1e-6),
    "bm.side": (int, 8),
    "bm.beta": (float, 0.1),
    "bm.burn_in": (int, 1000),
    "bm.thin": (int, 10),
    "bm.chains": (int, 100),
    "bm.gradient": (_choice("mean_field", "mcmc"), "mean_field"),
    "bm.mcmc_chains": (int, 200),
    "bm.mcmc_sweeps": (int, 1),
    "bm.clean": (_choice("none", "polyfit"), "none"),
}


@dataclass
class ExperimentConfig:
    values: dict
    source: str = "<string>"
    defaulted: tuple = field(default_factory=tuple)

    def __getitem__(self, key: str):
        return self.values[key]

    @property
    def name(self) -> str:
        return self.values["experiment.name"]

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        vals = dict(self.values)
        for k, v in overrides.items():
            if v is not None:
                vals[k] = v
        return ExperimentConfig(vals, self.source, self.defaulted)

    def manifest_lines(self) -> list[str]:
        return [f"{k} = {format_value(self.values[k])}" for k in sorted(self.values)]


def format_value(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(format_value(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _suggest(key: str) -> str:
    close = difflib.get_close_matches(key, SCHEMA, n=1, cutoff=0.5)
    if not close:
        # try matching the bare key against every section
        bare = key.split(".")[-1]
        close = [k for k in SCHEMA if k.split(".")[-1] == bare]
    return f"; did you mean {close[0]!r}?" if close else ""


def parse_config(text: str, source: str = "<string>") -> ExperimentConfig:
    raw: dict[str, tuple[str, int]] = {}
    section = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if stripped.startswith("["):
            if not stripped.endswith("]") or len(stripped) < 3:
                raise ConfigError(f"{source}:{lineno}: malformed section header {stripped!r}")
            section = stripped[1:-1].strip()
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {stripped!r}")
        if section is None:
            raise ConfigError(f"{source}:{lineno}: key outside of any [section]")
        key, value = (s.strip() for s in stripped.split("=", 1))
        full = f"{section}.{key}"
        if full not in SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {full!r}{_suggest(full)}")
        if full in raw:
            raise ConfigError(f"{source}:{lineno}: duplicate key {full!r} "
                              f"(first set on line {raw[full][1]}, again on line {lineno})")
        raw[full] = (value, lineno)

    values, defaulted = {}, []
    for key, (parser, default) in SCHEMA.items():
        if key in raw:
            text_value, lineno = raw[key]
            try:
                values[key] = parser(text_value)
            except ValueError as exc:
                tname = getattr(parser, "__name__", "value")
                raise ConfigError(f"{source}:{lineno}: {key} = {text_value!r} is not a valid "
                                  f"{tname} ({exc})") from None
        elif default is _REQUIRED:
            raise ConfigError(f"{source}: missing required key {key!r}")
        else:
            values[key] = default
            defaulted.append(key)
    cfg = ExperimentConfig(values, source, tuple(defaulted))
    check_semantics(cfg)
    return cfg


def check_semantics(cfg: ExperimentConfig) -> None:
    v = cfg.values
    src = cfg.source
    for key in ("data.n", "training.steps", "training.record_every", "training.log_points",
                "experiment.replicates", "cleaning.repeats", "rmt.population_size",
                "rmt.grid_points", "bm.burn_in", "bm.thin", "bm.chains", "bm.mcmc_chains",
                "bm.mcmc_sweeps", "regularization.lam_count"):
        if v[key] < 1:
            raise ConfigError(f"{src}: {key} must be >= 1, got {v[key]}")
    if v["data.n"] < 2:
        raise ConfigError(f"{src}: data.n must be >= 2")
    if v["bm.side"] < 2:
        raise ConfigError(f"{src}: bm.side must be >= 2")
    for key in ("training.rate", "rmt.eps", "bm.beta", "regularization.lam_min",
                "regularization.lam_max"):
        if not v[key] > 0:
            raise ConfigError(f"{src}: {key} must be positive, got {v[key]}")
    if v["regularization.lam"] < 0:
        raise ConfigError(f"{src}: regularization.lam must be non-negative")
    if v["regularization.lam_min"] >= v["regularization.lam_max"]:
        raise ConfigError(f"{src}: regularization.lam_min must be below lam_max")
    if any(r <= 0 for r in v["data.rho_list"]):
        raise ConfigError(f"{src}: rho values must be positive")
    if cfg.name in RHO_ABOVE_ONE and any(r <= 1 for r in v["data.rho_list"]):
        bad = [r for r in v["data.rho_list"] if r <= 1]
        raise ConfigError(f"{src}: {cfg.name} with rho={format_value(tuple(bad))}: {RHO_SCOPE_MSG}")
    if any(n < 2 or n != int(n) for n in v["data.n_list"]):
        raise ConfigError(f"{src}: data.n_list entries must be integers >= 2")
    unknown = [m for m in v["cleaning.methods"] if m not in CLEANING_METHODS]
    if unknown:
        raise ConfigError(f"{src}: unknown cleaning method {unknown[0]!r} "
                          f"(choose from {', '.join(CLEANING_METHODS)})")
    if v["training.schedule"] == "log" and v["training.method"] == "numerical":
        raise ConfigError(f"{src}: training.schedule = log needs training.method = analytic")
    if v["training.method"] == "numerical" and v["training.init"] == "zero":
        raise ConfigError(f"{src}: numerical training needs a positive-definite init, not zero")
    spec = v["data.spectrum"]
    if spec not in ("fig1b", "rmt") and not spec.startswith("powerlaw:"):
        path = Path(spec)
        if not path.is_absolute() and src not in ("<string>",):
            path = Path(src).parent / path
        if not path.exists():
            raise ConfigError(f"{src}: spectrum file {spec!r} does not exist")
        v["data.spectrum"] = str(path)
    elif spec.startswith("powerlaw:"):
        try:
            nums = _floats(spec.split(":", 1)[1])
            if len(nums) != 5:
                raise ValueError("need r, beta, gamma, x1, x2")
            from .spectra import PowerLawSpectrumParams
            PowerLawSpectrumParams(*nums)
        except ValueError as exc:
            raise ConfigError(f"{src}: bad data.spectrum {spec!r} ({exc})") from None


def validate_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text, str(path))
