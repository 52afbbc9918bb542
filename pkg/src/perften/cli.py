"""Command-line entry point.

    perften evaluate    --config run.json [--model xgb] [--k 5] [--seed 0] [--out DIR]
    perften complete    --config run.json [--model cp|rpca]
    perften reliability --config run.json [--bootstrap-k 200] [--levels 0.05:1.00:0.05]
    perften diagram     --report out/calibration.json [--out DIR]

The config is a JSON document mirroring :class:`RunConfig`; relative paths are
resolved against the config file's directory. Flags override config values.
Exit status is 0 on success, 2 for configuration/schema/parse problems and 1
when a model cannot be fitted.
"""

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .data_io import build_tensor, load_records, write_label_map
from .errors import InfeasibleFitError, ParseError, PerftenError, SchemaError
from .evaluation import cross_validate, kfold_plan
from .models import MODEL_NAMES, canonical_name, model_factory, vocabulary_for
from .reliability import (
    DEFAULT_K,
    CalibrationReport,
    bootstrap_distributions,
    calibration_error,
    default_levels,
    parse_levels,
    percentile_ci,
    write_diagram_csv,
)
from .tensor_core import sparsity
from .tensor_regression import CpConfig, RpcaConfig, complete, require_identifiable

log = logging.getLogger("perften")

EXIT_OK, EXIT_FIT, EXIT_CONFIG = 0, 1, 2
INTERVAL_GAMMA = 0.95


class ConfigError(PerftenError):
    pass


@dataclass
class RunConfig:
    task: str = "run"
    input: Optional[Path] = None
    train: Optional[Path] = None
    test: Optional[Path] = None
    dims: Optional[List[str]] = None
    model: str = "baseline"
    params: dict = field(default_factory=dict)
    k: int = 5
    eval_seed: Optional[int] = None
    bootstrap_k: int = DEFAULT_K
    levels: Optional[np.ndarray] = None
    rel_seed: Optional[int] = None
    out: Path = Path("out")

    @classmethod
    def from_sources(cls, path, args):
        raw = {}
        base = Path.cwd()
        if path is not None:
            path = Path(path)
            try:
                raw = json.loads(path.read_text(encoding="utf-8"))
            except FileNotFoundError:
                raise ConfigError(f"config file {path} does not exist") from None
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path}: invalid JSON ({exc.msg}, line {exc.lineno})") from None
            if not isinstance(raw, dict):
                raise ConfigError("config: top level must be an object")
            base = path.parent
        known = {"task", "input", "train", "test", "dims", "model", "params",
                 "evaluation", "reliability", "out"}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"config: unknown field(s) {', '.join(unknown)}")

        def resolve(p):
            if p is None:
                return None
            if not isinstance(p, str):
                raise ConfigError(f"config: path fields must be strings, got {p!r}")
            p = Path(p)
            return p if p.is_absolute() else base / p

        ev = _section(raw, "evaluation")
        rel = _section(raw, "reliability")
        cfg = cls(
            task=str(raw.get("task", "run")),
            input=resolve(raw.get("input")),
            train=resolve(raw.get("train")),
            test=resolve(raw.get("test")),
            dims=raw.get("dims"),
            model=raw.get("model", "baseline"),
            params=raw.get("params", {}),
            k=ev.get("k", 5),
            eval_seed=ev.get("seed"),
            bootstrap_k=rel.get("K", DEFAULT_K),
            rel_seed=rel.get("seed"),
            out=resolve(raw.get("out", "out")),
        )
        if rel.get("levels") is not None:
            cfg.levels = _levels(rel["levels"], "reliability.levels")
        if getattr(args, "model", None):
            cfg.model = args.model
        if getattr(args, "k", None) is not None:
            cfg.k = args.k
        if getattr(args, "bootstrap_k", None) is not None:
            cfg.bootstrap_k = args.bootstrap_k
        if getattr(args, "seed", None) is not None:
            cfg.eval_seed = cfg.rel_seed = args.seed
        if getattr(args, "levels", None):
            cfg.levels = _levels(args.levels, "--levels")
        if getattr(args, "out", None):
            cfg.out = Path(args.out)
        for name in ("input", "train", "test"):
            override = getattr(args, name, None)
            if override:
                setattr(cfg, name, Path(override))
        cfg.validate()
        return cfg

    def validate(self):
        if not isinstance(self.model, str):
            raise ConfigError("config field 'model' must be a string")
        try:
            self.model = canonical_name(self.model)
        except SchemaError as exc:
            raise ConfigError(f"config field 'model': {exc}") from None
        if not isinstance(self.params, dict):
            raise ConfigError("config field 'params' must be an object")
        if self.dims is not None and (not isinstance(self.dims, list) or not all(isinstance(d, str) for d in self.dims)):
            raise ConfigError("config field 'dims' must be a list of names")
        for name, value in (("evaluation.k", self.k), ("reliability.K", self.bootstrap_k)):
            if not isinstance(value, int) or isinstance(value, bool) or value < 2:
                raise ConfigError(f"config field '{name}' must be an integer >= 2")

    def model_params(self):
        """Parameters for the selected model.

        ``params`` is either one flat object or an object keyed by model name
        (``{"cp": {...}, "rpca": {...}}``), so ``--model`` can switch between
        models sharing a config.
        """
        if self.params and all(_is_model_name(k) and isinstance(v, dict) for k, v in self.params.items()):
            by_name = {canonical_name(k): v for k, v in self.params.items()}
            return dict(by_name.get(self.model, {}))
        return dict(self.params)

    def require(self, *names):
        labels = {"eval_seed": "evaluation.seed", "rel_seed": "reliability.seed"}
        for name in names:
            value = getattr(self, name)
            if value is None:
                raise ConfigError(f"config field '{labels.get(name, name)}' is required (or pass --seed)"
                                  if name.endswith("seed") else f"config field '{name}' is required")
            if isinstance(value, Path) and not value.exists():
                raise ConfigError(f"config field '{name}': {value} does not exist")
            if name.endswith("seed") and (not isinstance(value, int) or isinstance(value, bool)):
                raise ConfigError(f"config field '{labels[name]}' must be an integer")


def _is_model_name(name):
    try:
        canonical_name(name)
    except SchemaError:
        return False
    return True


def _section(raw, name):
    sec = raw.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"config field '{name}' must be an object")
    return sec


def _levels(value, field_name):
    try:
        if isinstance(value, str):
            return parse_levels(value)
        levels = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{field_name}: {exc}") from None
    if levels.ndim != 1 or np.any(levels <= 0) or np.any(levels > 1) or np.any(np.diff(levels) <= 0):
        raise ConfigError(f"{field_name}: levels must be strictly increasing within (0, 1]")
    return levels


@contextlib.contextmanager
def atomic_path(path):
    """Yield a temp path in the target directory; rename onto ``path`` on success."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    os.close(fd)
    try:
        yield tmp
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)


def _fmt(x):
    return repr(float(x))


def cmd_evaluate(cfg):
    cfg.require("input", "eval_seed")
    records = load_records(cfg.input)
    plan = kfold_plan(len(records), cfg.k, cfg.eval_seed)
    report = cross_validate(records, cfg.model, plan, params=cfg.model_params(), dims=cfg.dims, seed=cfg.eval_seed)
    with atomic_path(cfg.out / "eval_report.json") as tmp:
        report.write_json(tmp)
    with atomic_path(cfg.out / "residuals.csv") as tmp:
        report.write_residuals_csv(tmp)
    log.info("%s: mean RMSE %.6g over %d folds", cfg.model, report.mean_rmse, len(report.per_fold_rmse))
    print(f"mean_rmse={report.mean_rmse!r} folds={len(report.per_fold_rmse)} out={cfg.out}")
    return report


def cmd_complete(cfg):
    cfg.require("input")
    if cfg.model not in ("cp", "rpca"):
        raise ConfigError(f"complete needs --model cp or rpca, got {cfg.model!r}")
    records = load_records(cfg.input)
    tensor, vocab = build_tensor(records, cfg.dims)
    if tensor.n_observed == tensor.size:
        log.warning("input tensor is fully observed; passing values through")
    else:
        require_identifiable(tensor)
    params = cfg.model_params()
    if cfg.model == "cp":
        if cfg.eval_seed is not None:
            params.setdefault("seed", cfg.eval_seed)
        mcfg = _build(CpConfig, params)
    else:
        mcfg = _build(RpcaConfig, params)
    filled = complete(tensor, cfg.model, mcfg)
    with atomic_path(cfg.out / "completed.csv") as tmp:
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*vocab.dims, "score", "imputed"])
            for idx in np.ndindex(*tensor.shape):
                labels = [vocab.labels[d][i] for d, i in zip(vocab.dims, idx)]
                w.writerow([*labels, _fmt(filled.values[idx]), "false" if tensor.mask[idx] else "true"])
    with atomic_path(cfg.out / "label_map.json") as tmp:
        write_label_map(tmp, vocab)
    n_imputed = tensor.size - tensor.n_observed
    print(f"imputed={n_imputed} sparsity={sparsity(tensor)!r} out={cfg.out}")
    return filled


def _build(cls, params):
    try:
        return cls(**params)
    except TypeError as exc:
        raise ConfigError(f"config field 'params': {exc}") from None


def cmd_reliability(cfg):
    cfg.require("train", "test", "rel_seed")
    train = load_records(cfg.train)
    test = load_records(cfg.test)
    vocab = vocabulary_for(train, test, dims=cfg.dims)
    factory = model_factory(cfg.model, vocab, cfg.model_params(), seed=cfg.rel_seed)
    ids = ["|".join(r.key(vocab.dims)) for r in test]
    dists = bootstrap_distributions(train, factory, test, K=cfg.bootstrap_k, seed=cfg.rel_seed, test_ids=ids)
    actuals = np.array([r.score for r in test], dtype=float)
    levels = default_levels() if cfg.levels is None else cfg.levels
    report = calibration_error(actuals, dists, levels, K=cfg.bootstrap_k, seed=cfg.rel_seed, model=cfg.model)
    with atomic_path(cfg.out / "calibration.json") as tmp:
        report.write_json(tmp)
    with atomic_path(cfg.out / "diagram.csv") as tmp:
        write_diagram_csv(tmp, report)
    with atomic_path(cfg.out / "intervals.csv") as tmp:
        with open(tmp, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([*vocab.dims, "gamma", "lower", "upper", "actual", "covered"])
            for r, d, y in zip(test, dists, actuals):
                ci = percentile_ci(d, INTERVAL_GAMMA)
                w.writerow([*r.key(vocab.dims), _fmt(INTERVAL_GAMMA), _fmt(ci.lower), _fmt(ci.upper),
                            _fmt(y), "true" if ci.contains(y) else "false"])
    print(f"CE={report.ce!r} coverage={report.coverage!r} average_width={report.average_width!r} out={cfg.out}")
    return report


def cmd_diagram(report_path, out):
    try:
        report = CalibrationReport.read_json(report_path)
    except FileNotFoundError:
        raise ConfigError(f"report {report_path} does not exist") from None
    except (KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"report {report_path} is malformed: {exc}") from None
    out = Path(out) if out else Path(report_path).parent
    with atomic_path(out / "diagram.csv") as tmp:
        write_diagram_csv(tmp, report)
    print(f"rows={len(report.levels)} out={out}")
    return report


def build_parser():
    p = argparse.ArgumentParser(prog="perften", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, models=MODEL_NAMES):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--model", choices=models)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory")

    ev = sub.add_parser("evaluate", help="k-fold cross-validated RMSE")
    common(ev)
    ev.add_argument("--input")
    ev.add_argument("--k", type=int)

    co = sub.add_parser("complete", help="impute missing tensor cells")
    common(co, models=("cp", "rpca"))
    co.add_argument("--input")

    re_ = sub.add_parser("reliability", help="bootstrap intervals and their calibration")
    common(re_)
    re_.add_argument("--train")
    re_.add_argument("--test")
    re_.add_argument("--bootstrap-k", type=int)
    re_.add_argument("--levels", help="START:END:STEP, e.g. 0.05:1.00:0.05")

    dg = sub.add_parser("diagram", help="re-render diagram.csv from a saved calibration.json")
    dg.add_argument("--report", required=True)
    dg.add_argument("--out")
    return p


def _setup_logging():
    level = os.environ.get("PERFTEN_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.command == "diagram":
            cmd_diagram(args.report, args.out)
            return EXIT_OK
        cfg = RunConfig.from_sources(args.config, args)
        {"evaluate": cmd_evaluate, "complete": cmd_complete, "reliability": cmd_reliability}[args.command](cfg)
    except (ConfigError, SchemaError, ParseError) as exc:
        print(f"perften: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleFitError as exc:
        print(f"perften: fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except PerftenError as exc:
        print(f"perften: error: {exc}", file=sys.stderr)
        return EXIT_FIT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
