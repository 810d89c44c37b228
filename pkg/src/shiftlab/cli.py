"""``shiftlab`` command line: etr | fit | shift | misalign | impute | bootstrap | report | all.

Exit status is 0 on success, 1 when inputs or configuration fail
validation and 2 when a numerical step fails; in both error cases a JSON
object describing the error goes to stderr.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path
from typing import Callable

import numpy as np
import scipy

from . import __version__, pipeline, regress
from .config import BASIS_FLAGS, ConfigError, RunConfig, load_config, parse_weights, with_overrides
from .errors import NumericalError, ShiftlabError, ValidationError
from .etr import TaxVariable

log = logging.getLogger("shiftlab")

COMMANDS = ("etr", "fit", "shift", "misalign", "impute", "bootstrap", "report", "all")
COMPARISON_BASES = (regress.BasisKind.LINEAR, regress.BasisKind.QUADRATIC, regress.BasisKind.LOG)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, type=Path, help="run configuration (INI)")
    common.add_argument("--basis", choices=sorted(BASIS_FLAGS), help="tax-response basis")
    off = common.add_mutually_exclusive_group()
    off.add_argument("--offset", type=float, metavar="T", help="fixed offset t")
    off.add_argument("--offset-search", action="store_true", help="choose t by BIC grid search")
    common.add_argument("--tax", choices=("etr", "statutory"), help="tax variable")
    common.add_argument("--tau-ref", type=float, metavar="X", help="reference tax rate")
    common.add_argument("--weights", metavar="L,W,REV", help="redistribution weights")
    common.add_argument("--bootstrap", type=int, metavar="B", help="bootstrap replicates")
    common.add_argument("--seed", type=int, metavar="N")
    common.add_argument("--out", type=Path, metavar="DIR", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="shiftlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"shiftlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def effective_config(args: argparse.Namespace) -> RunConfig:
    cfg = load_config(args.config)
    changes = {
        "basis": BASIS_FLAGS[args.basis] if args.basis else None,
        "tax_variable": TaxVariable(args.tax.upper()) if args.tax else None,
        "tau_ref": args.tau_ref,
        "weights": parse_weights(args.weights) if args.weights else None,
        "bootstrap_b": args.bootstrap,
        "seed": args.seed,
        "out": args.out,
    }
    if args.offset is not None:
        changes.update(offset=args.offset, offset_search=False)
    elif args.offset_search:
        changes.update(offset=None, offset_search=True)
    return with_overrides(cfg, **changes)


# ----------------------------------------------------------------------------
# commands

class Run:
    """Lazily computed stages for one invocation."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.out = cfg.out
        self._cache: dict[str, object] = {}

    def _get(self, key: str, make: Callable[[], object]):
        if key not in self._cache:
            self._cache[key] = make()
        return self._cache[key]

    @property
    def inputs(self) -> pipeline.Inputs:
        return self._get("inputs", lambda: pipeline.load_inputs(self.cfg))

    @property
    def prep(self) -> pipeline.Prepared:
        return self._get("prep", lambda: pipeline.prepare(self.cfg, self.inputs))

    @property
    def rows(self) -> regress.RowData:
        return self._get("rows", lambda: pipeline.regression_rows(self.prep))

    @property
    def fit(self) -> pipeline.FitOutcome:
        return self._get("fit", lambda: pipeline.fit_rows(self.cfg, self.rows))

    @property
    def shift(self) -> pipeline.ShiftOutcome:
        return self._get("shift", lambda: pipeline.run_shift(self.cfg, self.prep, self.fit.fit))

    @property
    def impute(self) -> pipeline.ImputeOutcome | None:
        def make():
            if self.inputs.features is None:
                return None
            return pipeline.run_impute(self.cfg, self.inputs)
        return self._get("impute", make)

    def comparison(self) -> dict[str, dict]:
        out = {}
        for kind in COMPARISON_BASES:
            fo = self.fit if kind is self.cfg.basis else pipeline.fit_rows(self.cfg, self.rows, kind,
                                                                           with_cov=False)
            out[kind.value] = {"bic": fo.fit.bic, "r2": fo.fit.r2, "offset": fo.fit.offset, "n": fo.fit.n}
        return out


def cmd_etr(run: Run) -> list[str]:
    return pipeline.write_etr_stage(run.prep, run.out)


def cmd_fit(run: Run) -> list[str]:
    return pipeline.write_fit_stage(run.fit, run.out, run.cfg.cluster)


def cmd_shift(run: Run) -> list[str]:
    return pipeline.write_shift_stage(run.shift, run.out)


def cmd_misalign(run: Run) -> list[str]:
    res = pipeline.run_misalign(run.cfg, run.prep, impute=run.impute)
    return pipeline.write_misalign_stage(res, run.prep, run.out)


def cmd_impute(run: Run) -> list[str]:
    if run.impute is None:
        raise ConfigError("impute needs [inputs] dyad_features")
    return pipeline.write_impute_stage(run.impute, run.out)


def cmd_bootstrap(run: Run) -> list[str]:
    if run.cfg.bootstrap_b < 1:
        raise ConfigError("bootstrap needs B >= 1 ([bootstrap] B or --bootstrap)")
    return pipeline.write_bootstrap_stage(pipeline.bootstrap_statistics(run.cfg, run.prep), run.out)


def cmd_report(run: Run) -> list[str]:
    names = pipeline.write_report_stage(run.prep, run.fit, run.out)
    s = run.shift
    fit = run.fit.fit
    pipeline.write_json(run.out / "report.json", {
        "schema": "1",
        "basis": fit.basis.kind.value,
        "offset": fit.offset,
        "t_star": run.fit.search.offset if run.fit.search else None,
        "n_regression": fit.n,
        "tau_ref": run.cfg.tau_ref,
        "total_shifted_positive": pipeline.clean(s.total_positive),
        "world_shifted_positive": pipeline.clean(s.world_total),
        "sample_share": run.cfg.sample_share,
        "model_comparison": {k: {kk: pipeline.clean(vv) if isinstance(vv, float) else vv for kk, vv in v.items()}
                             for k, v in run.comparison().items()},
    })
    return names + ["report.json"]


def cmd_all(run: Run) -> list[str]:
    names = cmd_etr(run) + cmd_fit(run) + cmd_shift(run)
    if run.impute is not None:
        names += cmd_impute(run)
    names += cmd_misalign(run)
    if run.cfg.bootstrap_b >= 1:
        names += cmd_bootstrap(run)
    return names + cmd_report(run)


HANDLERS = {
    "etr": cmd_etr, "fit": cmd_fit, "shift": cmd_shift, "misalign": cmd_misalign, "impute": cmd_impute,
    "bootstrap": cmd_bootstrap, "report": cmd_report, "all": cmd_all,
}


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(cfg: RunConfig, command: str, artifacts: list[str]) -> None:
    out = cfg.out
    pipeline.write_json(out / "manifest.json", {
        "schema": "1",
        "command": command,
        "config_hash": cfg.digest(),
        "config": cfg.effective(),
        "seed": cfg.seed,
        "versions": {"shiftlab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "artifacts": {name: _sha256(out / name) for name in sorted(set(artifacts))},
    })


def _fail(exc: Exception, code: int) -> int:
    payload = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = effective_config(args)
        cfg.out.mkdir(parents=True, exist_ok=True)
        run = Run(cfg)
        artifacts = HANDLERS[args.command](run)
        write_manifest(cfg, args.command, artifacts)
    except NumericalError as exc:
        return _fail(exc, 2)
    except (ValidationError, ShiftlabError) as exc:
        return _fail(exc, exc.exit_code)
    except (ValueError, OSError) as exc:
        return _fail(exc, 1)
    log.info("wrote %d artifacts to %s", len(artifacts), cfg.out)
    print(json.dumps({"command": args.command, "out": str(cfg.out), "artifacts": sorted(set(artifacts))}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
