"""Line-based experiment configuration: `section.key = value` with `#` comments."""

import math
from dataclasses import dataclass, field

from .core import DasimError


class ParseError(DasimError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ValidationError(DasimError):
    def __init__(self, fieldname, message):
        self.field = fieldname
        super().__init__(f"{fieldname}: {message}")


KINDS = ("filter", "mcmc", "fig_mcmc1", "grid_posterior", "fourdvar", "w4dvar", "simulate", "smoother")
MODELS = ("linear_scalar", "linear2d", "sin", "logistic", "lorenz63", "lorenz96")
OBS_KINDS = ("identity", "first", "projection")
INITS = ("fixed", "normal", "uniform")

# key -> (type, default); None means "unset unless given"
SCHEMA = {
    "experiment.name": ("str", None),
    "experiment.kind": ("str", None),
    "experiment.seed": ("int", None),
    "experiment.steps": ("int", 100),
    "experiment.source": ("str", ""),
    "model.kind": ("str", None),
    "model.lambda": ("float", 0.5),
    "model.variant": ("int", 3),
    "model.lam1": ("float", 1.0),
    "model.lam2": ("float", 1.0),
    "model.lam": ("float", 1.0),
    "model.alpha": ("float", 2.5),
    "model.r": ("float", 4.0),
    "model.a": ("float", 10.0),
    "model.b": ("float", 8.0 / 3.0),
    "model.K": ("int", 40),
    "model.F": ("float", 8.0),
    "model.tau": ("float", 0.01),
    "model.substeps": ("int", 20),
    "obs.kind": ("str", "identity"),
    "obs.indices": ("intlist", [0]),
    "noise.sigma": ("float", 0.0),
    "noise.gamma": ("float", 1.0),
    "truth.init": ("str", "fixed"),
    "truth.v0": ("floatlist", [0.0]),
    "truth.var": ("float", 1.0),
    "truth.lo": ("float", 0.0),
    "truth.hi": ("float", 1.0),
    "prior.m0": ("floatlist", [0.0]),
    "prior.C0": ("float", 1.0),
    "filter.algorithm": ("strlist", ["kf"]),
    "filter.init": ("str", "fixed"),
    "filter.m0": ("floatlist", [0.0]),
    "filter.init_var": ("float", 1.0),
    "filter.lo": ("float", 0.0),
    "filter.hi": ("float", 1.0),
    "filter.C0": ("float", 1.0),
    "filter.N": ("int", 100),
    "filter.eta": ("float", 0.2),
    "filter.model_noise": ("bool", True),
    "filter.blowup_bound": ("float", 1e8),
    "mcmc.sampler": ("str", "rwm"),
    "mcmc.beta": ("float", 0.1),
    "mcmc.n_steps": ("int", 10000),
    "mcmc.burn_in": ("int", None),
    "mcmc.thin": ("int", 1),
    "mcmc.init": ("str", "truth"),
    "mcmc.proposal": ("str", "prior"),
    "grid.lo": ("float", 0.01),
    "grid.hi": ("float", 0.99),
    "grid.step": ("float", 0.0005),
    "var.starts": ("floatlist", []),
    "var.random_starts": ("int", 0),
    "var.start_spread": ("float", 1.0),
    "var.max_iterations": ("int", 10000),
    "var.restarts": ("int", 0),
    "simulate.perturb": ("float", 0.0),
    "check.metric": ("str", None),
    "check.min": ("float", None),
    "check.max": ("float", None),
}

SECTION_ORDER = ["experiment", "model", "obs", "noise", "truth", "prior", "filter", "mcmc", "grid", "var",
                 "simulate", "check"]

RELEVANT = {
    "filter": {"experiment", "model", "obs", "noise", "truth", "filter", "check"},
    "mcmc": {"experiment", "model", "obs", "noise", "truth", "prior", "mcmc", "check"},
    "fig_mcmc1": {"experiment", "model", "obs", "noise", "truth", "prior", "mcmc", "grid", "check"},
    "grid_posterior": {"experiment", "model", "obs", "noise", "truth", "prior", "grid", "check"},
    "fourdvar": {"experiment", "model", "obs", "noise", "truth", "prior", "var", "check"},
    "w4dvar": {"experiment", "model", "obs", "noise", "truth", "prior", "var", "check"},
    "simulate": {"experiment", "model", "noise", "truth", "simulate", "check"},
    "smoother": {"experiment", "model", "obs", "noise", "truth", "prior", "check"},
}

MODEL_KEYS = {
    "linear_scalar": {"lambda"},
    "linear2d": {"variant", "lam1", "lam2", "lam", "alpha"},
    "sin": {"alpha"},
    "logistic": {"r"},
    "lorenz63": {"a", "b", "r", "tau", "substeps"},
    "lorenz96": {"K", "F", "tau", "substeps"},
}


def _convert(typ, raw, key, line):
    raw = raw.strip()
    try:
        if typ == "str":
            if not raw:
                raise ValueError("empty value")
            return raw
        if typ == "int":
            val = float(raw)
            if val != int(val):
                raise ValueError("not an integer")
            return int(val)
        if typ == "float":
            val = float(raw)
            if math.isnan(val):
                raise ValueError("nan not allowed")
            return val
        if typ == "bool":
            low = raw.lower()
            if low in ("true", "yes", "1", "on"):
                return True
            if low in ("false", "no", "0", "off"):
                return False
            raise ValueError("not a boolean")
        parts = [t.strip() for t in raw.split(",") if t.strip()]
        if typ == "floatlist":
            return [float(t) for t in parts]
        if typ == "intlist":
            return [int(t) for t in parts]
        if typ == "strlist":
            if not parts:
                raise ValueError("empty list")
            return parts
    except ValueError as exc:
        raise ParseError(f"bad value for {key}: {raw!r} ({exc})", line) from None
    raise ParseError(f"unknown type for {key}", line)


@dataclass
class ExperimentConfig:
    values: dict
    explicit: set = field(default_factory=set)

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        v = self.values.get(key)
        return default if v is None else v

    @property
    def name(self):
        return self.values["experiment.name"]

    @property
    def kind(self):
        return self.values["experiment.kind"]

    @property
    def seed(self):
        return self.values["experiment.seed"]

    def __eq__(self, other):
        return isinstance(other, ExperimentConfig) and self.values == other.values


def parse_config(text, overrides=()):
    values = {}
    explicit = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ParseError(f"expected 'section.key = value', got {body!r}", lineno)
        key, raw = (t.strip() for t in body.split("=", 1))
        if key.count(".") != 1:
            raise ParseError(f"key {key!r} must have the form section.key", lineno)
        if key not in SCHEMA:
            raise ParseError(f"unknown key {key!r}", lineno)
        values[key] = _convert(SCHEMA[key][0], raw, key, lineno)
        explicit.add(key)
    for item in overrides:
        if "=" not in item:
            raise ParseError(f"override {item!r} must be section.key=value")
        key, raw = (t.strip() for t in item.split("=", 1))
        if key not in SCHEMA:
            raise ParseError(f"unknown key {key!r} in override")
        values[key] = _convert(SCHEMA[key][0], raw, key, None)
        explicit.add(key)
    for key, (_, default) in SCHEMA.items():
        values.setdefault(key, default if not isinstance(default, list) else list(default))
    cfg = ExperimentConfig(values, explicit)
    validate(cfg)
    return cfg


def validate(cfg):
    v = cfg.values
    for key in ("experiment.name", "experiment.kind", "experiment.seed", "model.kind"):
        if v[key] is None:
            raise ValidationError(key, "is required")
    if v["experiment.kind"] not in KINDS:
        raise ValidationError("experiment.kind", f"must be one of {', '.join(KINDS)}")
    if not 0 <= v["experiment.seed"] < 2**64:
        raise ValidationError("experiment.seed", "must be an unsigned 64-bit integer")
    if v["experiment.steps"] < 0:
        raise ValidationError("experiment.steps", "must be non-negative")
    if v["model.kind"] not in MODELS:
        raise ValidationError("model.kind", f"must be one of {', '.join(MODELS)}")
    if v["model.kind"] == "logistic" and not 0 <= v["model.r"] <= 4:
        raise ValidationError("model.r", "logistic map requires r in [0, 4]")
    if v["model.kind"] == "lorenz96" and v["model.K"] < 4:
        raise ValidationError("model.K", "must be at least 4")
    if v["model.tau"] <= 0 or v["model.substeps"] < 1:
        raise ValidationError("model.tau", "ODE models need tau > 0 and substeps >= 1")
    if v["obs.kind"] not in OBS_KINDS:
        raise ValidationError("obs.kind", f"must be one of {', '.join(OBS_KINDS)}")
    if v["noise.sigma"] < 0:
        raise ValidationError("noise.sigma", "must be non-negative")
    if v["noise.gamma"] <= 0:
        raise ValidationError("noise.gamma", "must be positive")
    for key in ("truth.init", "filter.init"):
        if v[key] not in INITS:
            raise ValidationError(key, f"must be one of {', '.join(INITS)}")
    if v["prior.C0"] <= 0 or v["filter.C0"] <= 0:
        raise ValidationError("prior.C0", "prior covariances must be positive")
    from .filters import ALGORITHMS
    for alg in v["filter.algorithm"]:
        if alg not in ALGORITHMS:
            raise ValidationError("filter.algorithm", f"unknown algorithm {alg!r}")
    if v["filter.N"] < 2:
        raise ValidationError("filter.N", "ensembles need at least two members")
    if v["filter.eta"] <= 0:
        raise ValidationError("filter.eta", "must be positive")
    from .mcmc import SAMPLERS
    if v["mcmc.sampler"] not in SAMPLERS:
        raise ValidationError("mcmc.sampler", f"must be one of {', '.join(SAMPLERS)}")
    if v["mcmc.sampler"] != "rwm" and not 0 < v["mcmc.beta"] <= 1:
        raise ValidationError("mcmc.beta", "pCN samplers need beta in (0, 1]")
    if v["mcmc.n_steps"] < 0 or v["mcmc.thin"] < 1:
        raise ValidationError("mcmc.n_steps", "invalid chain length or thinning")
    if v["mcmc.init"] not in ("truth", "prior"):
        raise ValidationError("mcmc.init", "must be truth or prior")
    if v["mcmc.proposal"] not in ("prior", "identity"):
        raise ValidationError("mcmc.proposal", "must be prior or identity")
    if not v["grid.lo"] < v["grid.hi"] or v["grid.step"] <= 0:
        raise ValidationError("grid.step", "grid needs lo < hi and a positive step")
    kind = v["experiment.kind"]
    stochastic_needed = kind in ("w4dvar", "smoother") or (
        kind in ("mcmc",) and v["mcmc.sampler"] != "rwm"
    )
    if stochastic_needed and v["noise.sigma"] == 0:
        raise ValidationError("noise.sigma", f"{kind} needs stochastic dynamics (sigma > 0)")
    if kind in ("fig_mcmc1", "grid_posterior", "fourdvar") or (kind == "mcmc" and v["mcmc.sampler"] == "rwm"):
        if v["noise.sigma"] != 0:
            raise ValidationError("noise.sigma", f"{kind} uses deterministic dynamics (sigma = 0)")
    if kind in ("fig_mcmc1", "grid_posterior") and v["model.kind"] in ("linear2d", "lorenz63", "lorenz96"):
        raise ValidationError("model.kind", "grid posteriors need a scalar model")
    if kind in ("fourdvar", "w4dvar") and not v["var.starts"] and v["var.random_starts"] < 1:
        raise ValidationError("var.starts", "give starts or a positive var.random_starts")
    if v["check.metric"] is not None and v["check.min"] is None and v["check.max"] is None:
        raise ValidationError("check.metric", "needs check.min or check.max")
    return cfg


def format_value(typ, val):
    if typ in ("floatlist", "intlist", "strlist"):
        return ", ".join(format_value(typ[:-4], x) for x in val)
    if typ == "float":
        return repr(float(val))
    if typ == "bool":
        return "true" if val else "false"
    return str(val)


def serialize(cfg, all_sections=False):
    """Normalized text form; parsing it reproduces the configuration exactly."""
    kind = cfg.kind
    sections = set(SECTION_ORDER) if all_sections else RELEVANT.get(kind, set(SECTION_ORDER))
    mkeys = MODEL_KEYS.get(cfg["model.kind"], set())
    lines = []
    for sec in SECTION_ORDER:
        if sec not in sections:
            continue
        block = []
        for key, (typ, _) in SCHEMA.items():
            s, k = key.split(".")
            if s != sec:
                continue
            if sec == "model" and k != "kind" and k not in mkeys:
                continue
            val = cfg.values[key]
            if val is None or val == "":
                continue
            block.append(f"{key} = {format_value(typ, val)}")
        if block:
            lines.append(f"# {sec}")
            lines.extend(block)
    return "\n".join(lines) + "\n"


def normalize(text):
    return serialize(parse_config(text))
