"""Command-line pipeline: ``simulate``, ``fit``, ``diagnose``, ``compare``.

Every failure prints one machine-parsable line ``error[CODE]: message`` on
stderr and exits non-zero.
"""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import sys
import time
from pathlib import Path

import jsonschema
import numpy as np

from . import diagnostics as diag
from .model import Dataset, MatrixNormalPrior, PriorSpec
from .nngp import MAX_NEIGHBORS, nngp_factors
from .sampler import ALGORITHMS, ChainStore, RunConfig, run_chain
from .simgen import SimSpec, Truth, default_spec, simulate
from .spatial import read_locations_csv, write_locations_csv

log = logging.getLogger("projmc2")


class CliError(Exception):
    def __init__(self, code, message, status=1):
        super().__init__(message)
        self.code = code
        self.status = status


_matrix = {"type": "array", "items": {"type": "array", "items": {"type": "number"}}}
_vector = {"type": "array", "items": {"type": "number"}}
_mn_prior = {"oneOf": [
    {"type": "null"},
    {"type": "object", "additionalProperties": False, "required": ["mean", "cov"],
     "properties": {"mean": _matrix, "cov": _matrix}},
]}

SIMULATE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "n": {"type": "integer", "minimum": 2},
        "seed": {"type": "integer", "minimum": 0},
        "true_beta": _matrix,
        "true_lambda": _matrix,
        "true_sigma2_diag": _vector,
        "true_phi": _vector,
        "prior_phi": _vector,
    },
}

FIT_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["data_dir"],
    "properties": {
        "data_dir": {"type": "string"},
        "algorithm": {"enum": list(ALGORITHMS)},
        "iterations": {"type": "integer", "minimum": 1},
        "warmup": {"type": "integer", "minimum": 0},
        "thin": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "K": {"type": "integer", "minimum": 1},
        "phi": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0},
                "minItems": 1},
        "m": {"type": "integer", "minimum": 1, "maximum": MAX_NEIGHBORS},
        "a": {"type": "number", "exclusiveMinimum": 0},
        "b": {"oneOf": [{"type": "number", "exclusiveMinimum": 0}, _vector]},
        "beta_prior": _mn_prior,
        "lambda_prior": _mn_prior,
        "lsmr_atol": {"type": "number", "exclusiveMinimum": 0},
        "lsmr_btol": {"type": "number", "exclusiveMinimum": 0},
        "lsmr_max_iter": {"oneOf": [{"type": "null"}, {"type": "integer", "minimum": 1}]},
    },
}

FIT_DEFAULTS = {
    "algorithm": "ProjMC2",
    "iterations": 20000,
    "warmup": 5000,
    "thin": 1,
    "seed": 0,
    "phi": [4.0, 6.0],
    "m": 15,
    "a": 2.0,
    "b": 1.0,
    "beta_prior": None,
    "lambda_prior": None,
    "lsmr_atol": 1e-8,
    "lsmr_btol": 1e-8,
    "lsmr_max_iter": None,
}


# ------------------------------------------------------------------ helpers


def load_config(path, schema):
    if path is None:
        return {}
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise CliError("E_NOFILE", f"{path}: config file not found", 3) from None
    except json.JSONDecodeError as exc:
        raise CliError("E_CONFIG", f"{path}:{exc.lineno}: invalid JSON ({exc.msg})", 2) from None
    validate_config(cfg, schema, path)
    return cfg


def validate_config(cfg, schema, source="config"):
    err = jsonschema.exceptions.best_match(jsonschema.Draft7Validator(schema).iter_errors(cfg))
    if err is None:
        return
    if err.validator == "additionalProperties":
        extra = sorted(set(cfg) - set(schema["properties"]))
        key = extra[0] if extra else "?"
        raise CliError("E_CONFIG", f"{source}: invalid config key '{key}' (unknown key)", 2)
    if err.validator == "required":
        raise CliError("E_CONFIG", f"{source}: invalid config: {err.message}", 2)
    key = ".".join(str(p) for p in err.absolute_path) or "<root>"
    raise CliError("E_CONFIG", f"{source}: invalid config key '{key}': {err.message}", 2)


def write_json(path, obj):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_matrix_csv(path, header, mat):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in np.atleast_2d(mat):
            w.writerow([repr(float(v)) for v in row])


def read_matrix_csv(path):
    path = Path(path)
    if not path.exists():
        raise CliError("E_NOFILE", f"{path}: file not found", 3)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise CliError("E_PARSE", f"{path}:1: empty file", 4)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise CliError("E_PARSE", f"{path}:{lineno}: expected {len(header)} fields, "
                               f"found {len(row)}", 4)
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise CliError("E_PARSE", f"{path}:{lineno}: non-numeric value", 4) from None
    return header, np.array(rows, dtype=float).reshape(len(rows), len(header))


def write_csv_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(v):
    return repr(float(v))


def _ensure_dir(path):
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError("E_OUTPUT", f"{path}: cannot create output directory ({exc.strerror})", 3)
    return path


def load_dataset(data_dir) -> Dataset:
    data_dir = Path(data_dir)
    for name in ("locations.csv", "X.csv", "Y.csv"):
        if not (data_dir / name).exists():
            raise CliError("E_NOFILE", f"{data_dir / name}: file not found", 3)
    try:
        locs = read_locations_csv(data_dir / "locations.csv")
    except ValueError as exc:
        raise CliError("E_PARSE", str(exc), 4) from None
    _, x = read_matrix_csv(data_dir / "X.csv")
    _, y = read_matrix_csv(data_dir / "Y.csv")
    for name, mat in (("X.csv", x), ("Y.csv", y)):
        if mat.shape[0] != locs.n:
            raise CliError("E_SHAPE", f"{data_dir / name}: expected {locs.n} rows "
                           f"(from locations.csv), found {mat.shape[0]}", 4)
    try:
        return Dataset(x, y, locs)
    except ValueError as exc:
        raise CliError("E_DATA", str(exc), 4) from None


# ------------------------------------------------------------- subcommands


def cmd_simulate(config=None, out=None, seed=None):
    """Write locations.csv, X.csv, Y.csv, truth.json and the resolved config."""
    cfg = load_config(config, SIMULATE_SCHEMA)
    if seed is not None:
        cfg["seed"] = seed
    base = default_spec().to_dict()
    base.pop("domain")
    base.pop("permute_lambda_init")
    base.update(cfg)
    try:
        spec = SimSpec(**base)
    except ValueError as exc:
        raise CliError("E_CONFIG", f"invalid simulation config: {exc}", 2) from None
    out = _ensure_dir(out)
    data, truth = simulate(spec)
    write_locations_csv(out / "locations.csv", data.locs)
    write_matrix_csv(out / "X.csv", ["intercept"] + [f"z{j}" for j in range(1, data.p)], data.x)
    write_matrix_csv(out / "Y.csv", [f"y{j + 1}" for j in range(data.q)], data.y)
    truth.to_json(out / "truth.json")
    write_json(out / "config.json", base)
    print(f"simulated n={spec.n} q={spec.q} K={spec.K} seed={spec.seed} -> {out}")
    return out


def _resolve_fit_config(cfg, config_path):
    full = copy.deepcopy(FIT_DEFAULTS)
    full.update(cfg)
    if "K" not in cfg:
        full["K"] = len(full["phi"])
    if len(full["phi"]) != full["K"]:
        raise CliError("E_CONFIG", f"invalid config key 'phi': expected K={full['K']} decays, "
                       f"found {len(full['phi'])}", 2)
    data_dir = Path(full["data_dir"])
    if not data_dir.is_absolute() and config_path is not None:
        data_dir = Path(config_path).resolve().parent / data_dir
    full["data_dir"] = str(data_dir.resolve())
    return full


def _prior(obj, key):
    if obj is None:
        return None
    try:
        return MatrixNormalPrior(obj["mean"], obj["cov"])
    except ValueError as exc:
        raise CliError("E_CONFIG", f"invalid config key '{key}': {exc}", 2) from None


def cmd_fit(config=None, out=None, seed=None):
    """Run one sampler and write the chain directory plus run.log."""
    if config is None:
        raise CliError("E_CONFIG", "fit needs --config", 2)
    cfg = load_config(config, FIT_SCHEMA)
    if seed is not None:
        cfg["seed"] = seed
    full = _resolve_fit_config(cfg, config)
    data = load_dataset(full["data_dir"])
    try:
        priors = PriorSpec(psi=full["phi"], a=full["a"], b=full["b"],
                           beta_prior=_prior(full["beta_prior"], "beta_prior"),
                           lambda_prior=_prior(full["lambda_prior"], "lambda_prior"),
                           m=full["m"])
        priors.b_vector(data.q)
        run_cfg = RunConfig(iterations=full["iterations"], warmup=full["warmup"],
                            thin=full["thin"], seed=full["seed"], algorithm=full["algorithm"],
                            K=full["K"], lsmr_atol=full["lsmr_atol"],
                            lsmr_btol=full["lsmr_btol"], lsmr_max_iter=full["lsmr_max_iter"])
    except ValueError as exc:
        raise CliError("E_CONFIG", f"invalid fit config: {exc}", 2) from None
    out = _ensure_dir(out)
    handler = logging.FileHandler(out / "run.log", mode="w", encoding="utf-8")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("projmc2")
    root.addHandler(handler)
    root.setLevel(logging.INFO)
    try:
        t0 = time.perf_counter()
        factors = nngp_factors(data.locs, priors.psi, priors.m)
        log.info("NNGP factors built for n=%d, m=%d in %.3fs", data.n, priors.m,
                 time.perf_counter() - t0)
        step = max(1, run_cfg.iterations // 20)

        def progress(it):
            if it % step == 0 or it == run_cfg.iterations:
                log.info("iteration %d/%d elapsed %.2fs", it, run_cfg.iterations,
                         time.perf_counter() - t0)

        chains = run_chain(data, priors, run_cfg, factors, progress=progress)
        log.info("LSMR iteration-limit warnings: %d", chains.metadata["lsmr_warnings"])
        chains.metadata["data_dir"] = full["data_dir"]
        chains.save(out)
        write_json(out / "config.json", full)
    finally:
        root.removeHandler(handler)
        handler.close()
    print(f"fit {run_cfg.algorithm}: {len(chains)} retained draws -> {out}")
    return out


def _load_chains(path):
    try:
        return ChainStore.load(path)
    except FileNotFoundError as exc:
        raise CliError("E_NOFILE", str(exc), 3) from None
    except (ValueError, KeyError) as exc:
        raise CliError("E_CORRUPT", f"{path}: {exc}", 4) from None


def _blocks_for(chains):
    if chains.intercept_index is not None:
        return ("beta0", "beta1", "lambda", "F", "sigma2")
    return ("beta", "lambda", "F", "sigma2")


def cmd_diagnose(chain_dir, truth=None, out=None):
    """Write ess.csv, traces.csv and (with a truth file) factor_metrics.csv."""
    chains = diag.align_signs(_load_chains(chain_dir))
    out = _ensure_dir(out if out is not None else chain_dir)
    metrics = None
    if truth is not None:
        try:
            t = Truth.from_json(truth)
        except FileNotFoundError:
            raise CliError("E_NOFILE", f"{truth}: file not found", 3) from None
        except (ValueError, KeyError) as exc:
            raise CliError("E_PARSE", f"{truth}: {exc}", 4) from None
        K = chains.ftilde.shape[2]
        if t.f.shape[1] != K:
            raise CliError("E_SHAPE", f"truth K mismatch: expected K={K}, found K={t.f.shape[1]}", 4)
        mode = "stiefel" if chains.algorithm == "ProjMC2" else "sphere"
        try:
            metrics = diag.factor_recovery_metrics(t.f, chains, mode)
        except ValueError as exc:
            raise CliError("E_SHAPE", str(exc), 4) from None

    report = diag.ess_report(chains, _blocks_for(chains))
    write_csv_rows(out / "ess.csv", ["block", "min", "mean", "median", "frac_below_100"],
                   [[r.block, _fmt(r.min), _fmt(r.mean), _fmt(r.median), _fmt(r.frac_below_100)]
                    for r in report.rows()])
    if metrics is not None:
        write_csv_rows(out / "factor_metrics.csv",
                       ["factor", "euclidean_distance", "spherical_variance"],
                       [[f"f{m.factor + 1}", _fmt(m.euclidean_distance),
                         _fmt(m.spherical_variance)] for m in metrics])
    _write_traces(out / "traces.csv", chains)
    print(f"diagnosed {chain_dir}: " + ", ".join(
        f"{r.block} min ESS {r.min:.0f}" for r in report.rows()))
    return out


def _write_traces(path, chains):
    meta = chains.metadata
    start, thin = meta.get("warmup", 0), meta.get("thin", 1)
    R, p, q = chains.beta.shape
    K = chains.lambda_.shape[1]
    names = ([f"beta[{i + 1},{j + 1}]" for i in range(p) for j in range(q)]
             + [f"lambda[{k + 1},{j + 1}]" for k in range(K) for j in range(q)]
             + [f"sigma2[{j + 1}]" for j in range(q)])
    vals = np.hstack([chains.beta.reshape(R, -1), chains.lambda_.reshape(R, -1), chains.sigma2])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "parameter", "value"])
        for r in range(R):
            it = start + (r + 1) * thin
            for name, v in zip(names, vals[r]):
                w.writerow([it, name, repr(float(v))])


def cmd_compare(chain_dirs, out=None):
    """Side-by-side ESS table, one row per block, four columns per run."""
    if len(chain_dirs) < 2:
        raise CliError("E_ARGS", "need ≥ 2 runs", 2)
    runs = [(d, _load_chains(d)) for d in chain_dirs]
    ref_dir, ref = runs[0]
    keys = ("n", "p", "q", "K")
    for d, c in runs[1:]:
        for k in keys:
            if c.metadata.get(k) != ref.metadata.get(k):
                raise CliError("E_SHAPE", f"shape mismatch: {k}={c.metadata.get(k)} in {d} "
                               f"vs {k}={ref.metadata.get(k)} in {ref_dir}", 4)
    labels = []
    for d, c in runs:
        label = c.algorithm or Path(d).name
        if label in labels:
            label = f"{label}@{Path(d).name}"
        labels.append(label)
    blocks = _blocks_for(ref)
    reports = [diag.ess_report(diag.align_signs(c), blocks) for _, c in runs]
    header = ["block"]
    for lab in labels:
        header += [f"{lab}:min", f"{lab}:mean", f"{lab}:median", f"{lab}:frac_below_100"]
    rows = []
    for b in blocks:
        row = [b]
        for rep in reports:
            r = rep[b]
            row += [_fmt(r.min), _fmt(r.mean), _fmt(r.median), _fmt(r.frac_below_100)]
        rows.append(row)
    out = _ensure_dir(out if out is not None else ".")
    write_csv_rows(out / "compare.csv", header, rows)
    for b, rep_row in zip(blocks, rows):
        print(b.ljust(7), " | ".join(
            f"{lab}: {rep[b].min:.0f}/{rep[b].mean:.0f}/{rep[b].median:.0f} "
            f"{100 * rep[b].frac_below_100:.0f}%" for lab, rep in zip(labels, reports)))
    return out / "compare.csv"


# ------------------------------------------------------------------- main


def build_parser():
    parser = argparse.ArgumentParser(prog="projmc2", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config=True):
        if config:
            p.add_argument("--config", help="JSON configuration file")
            p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", help="output directory")

    p = sub.add_parser("simulate", help="generate a synthetic dataset")
    common(p)
    p = sub.add_parser("fit", help="run a sampler on a dataset directory")
    common(p)
    p = sub.add_parser("diagnose", help="ESS, traces and factor metrics for a chain")
    p.add_argument("chain_dir")
    p.add_argument("--truth", help="truth.json from `simulate`")
    common(p, config=False)
    p = sub.add_parser("compare", help="side-by-side ESS table for several chains")
    p.add_argument("chain_dirs", nargs="+")
    common(p, config=False)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "simulate":
            if args.out is None:
                raise CliError("E_ARGS", "simulate needs --out", 2)
            cmd_simulate(args.config, args.out, args.seed)
        elif args.command == "fit":
            if args.out is None:
                raise CliError("E_ARGS", "fit needs --out", 2)
            cmd_fit(args.config, args.out, args.seed)
        elif args.command == "diagnose":
            cmd_diagnose(args.chain_dir, args.truth, args.out)
        elif args.command == "compare":
            cmd_compare(args.chain_dirs, args.out)
    except CliError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return exc.status
    except Exception as exc:  # noqa: BLE001 - top-level guard
        print(f"error[E_INTERNAL]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
