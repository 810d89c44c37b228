"""Run configuration: an INI file with sections, plus command-line overrides.

Relative paths in ``[inputs]`` and ``[run] out`` resolve against the
directory holding the config file.
"""

from __future__ import annotations

import configparser
import hashlib
import math
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .errors import ValidationError
from .etr import EtrMethod, TaxBasis, TaxVariable
from .ingest import DEFAULT_OFCS
from .regress import BasisKind
from .shift import RedistributionWeights
from .boot import ResampleUnit
from .impute.gbm import GbmParams

BASIS_FLAGS = {
    "linear": BasisKind.LINEAR,
    "quad": BasisKind.QUADRATIC,
    "log": BasisKind.LOG,
    "log+quad": BasisKind.LOG_PLUS_QUAD,
    "inv1": BasisKind.INV1,
    "inv2": BasisKind.INV2,
    "inv3": BasisKind.INV3,
    "coth": BasisKind.COTH,
    "bands": BasisKind.ETR_BANDS,
}


class ConfigError(ValidationError):
    pass


@dataclass(frozen=True)
class InputPaths:
    cbcr_all: Path
    cbcr_positive: Path
    meta: Path
    dyad_features: Path | None = None
    category_members: Path | None = None
    firm_counts: Path | None = None

    def all_paths(self) -> list[Path]:
        return [p for p in (getattr(self, f.name) for f in fields(self)) if p is not None]


@dataclass(frozen=True)
class RunConfig:
    inputs: InputPaths
    basis: BasisKind = BasisKind.LOG
    offset: float | None = None  # None = grid search for bases with an offset
    offset_search: bool = True
    fixed_effects: bool = False
    interaction: bool = False
    interaction_target: str | None = None
    reference_country: str = "USA"
    cluster: str = "partner"
    tax_variable: TaxVariable = TaxVariable.ETR
    etr_method: EtrMethod = EtrMethod.WEIGHTED_MEAN
    tax_basis: TaxBasis = TaxBasis.ACCRUED
    tau_ref: float = 0.25
    min_etr: float = 0.0
    max_etr: float = 0.5
    min_profit: float = 1000.0
    weights: RedistributionWeights = RedistributionWeights()
    firm_count_ratios: dict[str, float] = field(default_factory=dict)
    china_factor: float = 2.0
    apply_only_if_above_one: bool = True
    ofcs: tuple[str, ...] = tuple(sorted(DEFAULT_OFCS))
    min_ofcs: int = 8
    sample_share: float = 1.0
    bootstrap_b: int = 0
    bootstrap_level: float = 0.95
    bootstrap_unit: ResampleUnit = ResampleUnit.ROW
    gbm: GbmParams = GbmParams()
    seed: int = 0
    out: Path = Path("out")

    def __post_init__(self):
        if not 0 < self.tau_ref < 1:
            raise ConfigError(f"tau_ref must lie in (0, 1), got {self.tau_ref}")
        paths = [p.resolve() for p in self.inputs.all_paths()]
        if len(set(paths)) != len(paths):
            raise ConfigError("input paths must be distinct")
        if not 0 < self.sample_share <= 1:
            raise ConfigError("sample_share must lie in (0, 1]")
        if self.bootstrap_b < 0:
            raise ConfigError("bootstrap B must be nonnegative")
        if self.offset is not None and (self.offset < 0 or not math.isfinite(self.offset)):
            raise ConfigError("offset must be nonnegative")
        if self.cluster not in ("partner", "reporting"):
            raise ConfigError("cluster must be 'partner' or 'reporting'")

    def effective(self) -> dict[str, str]:
        """Flat, sorted key=value view used for hashing and the manifest."""
        out: dict[str, str] = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, InputPaths):
                for g in fields(v):
                    p = getattr(v, g.name)
                    out[f"inputs.{g.name}"] = "" if p is None else p.name
            elif isinstance(v, (RedistributionWeights, GbmParams)):
                for g in fields(v):
                    out[f"{f.name}.{g.name}"] = _text(getattr(v, g.name))
            elif f.name == "out":
                continue  # where results go does not change them
            else:
                out[f.name] = _text(v)
        return dict(sorted(out.items()))

    def digest(self) -> str:
        text = "\n".join(f"{k}={v}" for k, v in self.effective().items())
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _text(v) -> str:
    if v is None:
        return ""
    if hasattr(v, "value"):
        return str(v.value)
    if isinstance(v, dict):
        return ",".join(f"{k}:{v[k]!r}" for k in sorted(v))
    if isinstance(v, (tuple, list)):
        return ",".join(str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _bool(section, key, default):
    return section.getboolean(key, fallback=default)


def parse_weights(text: str) -> RedistributionWeights:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if len(parts) not in (3, 4):
        raise ConfigError(f"weights need L,W,REV[,ASSETS], got {text!r}")
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise ConfigError(f"weights must be numbers, got {text!r}") from None
    try:
        return RedistributionWeights(*vals)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _ratios(text: str) -> dict[str, float]:
    out = {}
    for item in filter(None, (p.strip() for p in text.split(","))):
        code, _, val = item.partition(":")
        try:
            out[code.strip()] = float(val)
        except ValueError:
            raise ConfigError(f"bad firm-count ratio {item!r}; expected CODE:RATIO") from None
    return out


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    base = path.parent

    def p(key, required=True):
        raw = cp.get("inputs", key, fallback="").strip()
        if not raw:
            if required:
                raise ConfigError(f"[inputs] {key} is required")
            return None
        q = Path(raw)
        return q if q.is_absolute() else base / q

    if not cp.has_section("inputs"):
        raise ConfigError(f"{path}: missing [inputs] section")
    inputs = InputPaths(p("cbcr_all"), p("cbcr_positive"), p("meta"), p("dyad_features", False),
                        p("category_members", False), p("firm_counts", False))
    for q in inputs.all_paths():
        if not q.is_file():
            raise ConfigError(f"input file not found: {q}")

    m = cp["model"] if cp.has_section("model") else cp["DEFAULT"]
    t = cp["tax"] if cp.has_section("tax") else cp["DEFAULT"]
    r = cp["redistribution"] if cp.has_section("redistribution") else cp["DEFAULT"]
    c = cp["corrections"] if cp.has_section("corrections") else cp["DEFAULT"]
    s = cp["sample"] if cp.has_section("sample") else cp["DEFAULT"]
    b = cp["bootstrap"] if cp.has_section("bootstrap") else cp["DEFAULT"]
    g = cp["gbm"] if cp.has_section("gbm") else cp["DEFAULT"]
    run = cp["run"] if cp.has_section("run") else cp["DEFAULT"]

    try:
        basis_flag = m.get("basis", "log").strip().lower()
        if basis_flag not in BASIS_FLAGS:
            raise ConfigError(f"unknown basis {basis_flag!r}")
        offset_raw = m.get("offset", "search").strip().lower()
        offset = None if offset_raw in ("search", "", "default") else float(offset_raw)
        ofcs_raw = s.get("ofcs", "").strip()
        out_raw = Path(run.get("out", "out"))
        max_depth_raw = g.get("max_depth", "").strip()
        gbm = GbmParams(
            learning_rate=g.getfloat("learning_rate", 0.2),
            l2_regularization=g.getfloat("l2_regularization", 125.0),
            min_samples_leaf=g.getint("min_samples_leaf", 20),
            max_bins=g.getint("max_bins", 255),
            max_iter=g.getint("max_iter", 100),
            max_depth=int(max_depth_raw) if max_depth_raw else None,
            seed=run.getint("seed", 0),
        )
        return RunConfig(
            inputs=inputs,
            basis=BASIS_FLAGS[basis_flag],
            offset=offset,
            offset_search=offset_raw == "search",
            fixed_effects=_bool(m, "fixed_effects", False),
            interaction=_bool(m, "interaction", False),
            interaction_target=m.get("interaction_target", "").strip() or None,
            reference_country=m.get("reference_country", "USA").strip(),
            cluster=m.get("cluster", "partner").strip(),
            tax_variable=TaxVariable(t.get("variable", "etr").strip().upper()),
            etr_method=EtrMethod(t.get("method", "WEIGHTED_MEAN").strip().upper()),
            tax_basis=TaxBasis(t.get("basis", "ACCRUED").strip().upper()),
            tau_ref=t.getfloat("tau_ref", 0.25),
            min_etr=t.getfloat("min_etr", 0.0),
            max_etr=t.getfloat("max_etr", 0.5),
            min_profit=t.getfloat("min_profit", 1000.0),
            weights=parse_weights(r.get("weights", "0.25,0.25,0.5")),
            firm_count_ratios=_ratios(c.get("firm_count_ratios", "")),
            china_factor=c.getfloat("china_factor", 2.0),
            apply_only_if_above_one=_bool(c, "apply_only_if_above_one", True),
            ofcs=tuple(x.strip() for x in ofcs_raw.split(",")) if ofcs_raw else tuple(sorted(DEFAULT_OFCS)),
            min_ofcs=s.getint("min_ofcs", 8),
            sample_share=s.getfloat("sample_share", 1.0),
            bootstrap_b=b.getint("B", 0),
            bootstrap_level=b.getfloat("level", 0.95),
            bootstrap_unit=ResampleUnit(b.get("unit", "ROW").strip().upper()),
            gbm=gbm,
            seed=run.getint("seed", 0),
            out=out_raw if out_raw.is_absolute() else base / out_raw,
        )
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def with_overrides(cfg: RunConfig, **changes) -> RunConfig:
    """Apply non-None overrides (flags win over the file)."""
    changes = {k: v for k, v in changes.items() if v is not None}
    if "seed" in changes:
        changes["gbm"] = replace(changes.get("gbm", cfg.gbm), seed=changes["seed"])
    try:
        return replace(cfg, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
