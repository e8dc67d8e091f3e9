"""Command line interface: simulate, identify, evaluate, run-all.

A single JSON config file drives an experiment batch.  Unknown keys anywhere
in the config are rejected.  Outputs are deterministic byte for byte given
the same config, seed offset and package version: seeds are derived
arithmetically per run, floats are written with round-trip precision, JSON
keys are sorted, and no timestamps are emitted.  All files are written
atomically (temp file plus rename) so partial runs never leave torn files.

Exit codes: 0 success, 1 config error, 2 runtime failure (including any
failed run in a batch; the rest of the batch still completes).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .metrics import cod1, complexity, impulse_response_fit
from .estimator import predict_one_step
from .regressor import CoefficientTensor, TimeSeries, read_timeseries_csv, write_timeseries_csv
from .simulation import GroundTruthModel, SimConfig, gen_generic_model, gen_sl_model, simulate
from .slr_algorithm import AlgoConfig, IdentResult, VARIANTS, extract_network, identify

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "load_config",
    "cmd_simulate",
    "cmd_identify",
    "cmd_evaluate",
    "main",
]

_METRIC_NAMES = ("complexity", "cod1", "ir_fit")


class ConfigError(Exception):
    """Invalid configuration or command line; exits with status 1."""


# ---------------------------------------------------------------------------
# config handling


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    n: int
    s: int
    T_true: int
    entry_order: int
    pole_modulus_max: float
    spectral_radius_cap: float
    damping: float
    burn_in: int
    sigma_scale: float


@dataclass(frozen=True)
class ExperimentConfig:
    p: int
    runs: int
    N_id: int
    N_test: int
    T: int
    estimators: tuple[str, ...]
    base_seed: int
    model: ModelSpec
    algorithm: AlgoConfig
    raw: dict

    def sim_config(self) -> SimConfig:
        return SimConfig(
            T_true=self.model.T_true,
            entry_order=self.model.entry_order,
            pole_modulus_max=self.model.pole_modulus_max,
            spectral_radius_cap=self.model.spectral_radius_cap,
            damping=self.model.damping,
            burn_in=self.model.burn_in,
        )


def _expect(d: dict, key: str, kinds, default, context: str, required: bool = False):
    if key not in d:
        if required:
            raise ConfigError(f"{context}: missing required key {key!r}")
        return default
    val = d[key]
    if val is None and not required and default is None:
        return None
    if kinds is float and isinstance(val, int) and not isinstance(val, bool):
        val = float(val)
    if not isinstance(val, kinds) or isinstance(val, bool) and kinds is not bool:
        raise ConfigError(f"{context}: key {key!r} has wrong type {type(val).__name__}")
    return val


def _reject_unknown(d: dict, allowed: set[str], context: str) -> None:
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"{context}: unknown keys {sorted(unknown)}")


def _parse_model(d: dict, T: int) -> ModelSpec:
    allowed = {
        "kind", "n", "s", "T_true", "entry_order", "pole_modulus_max",
        "spectral_radius_cap", "damping", "burn_in", "sigma_scale",
    }
    _reject_unknown(d, allowed, "model")
    kind = _expect(d, "kind", str, "sl", "model")
    if kind not in ("sl", "generic"):
        raise ConfigError(f"model: kind must be 'sl' or 'generic', got {kind!r}")
    spec = ModelSpec(
        kind=kind,
        n=_expect(d, "n", int, 1, "model"),
        s=_expect(d, "s", int, 0, "model"),
        T_true=_expect(d, "T_true", int, T, "model") or T,
        entry_order=_expect(d, "entry_order", int, 2, "model"),
        pole_modulus_max=_expect(d, "pole_modulus_max", float, 0.8, "model"),
        spectral_radius_cap=_expect(d, "spectral_radius_cap", float, 0.95, "model"),
        damping=_expect(d, "damping", float, 0.85, "model"),
        burn_in=_expect(d, "burn_in", int, 200, "model"),
        sigma_scale=_expect(d, "sigma_scale", float, 1.0, "model"),
    )
    if spec.sigma_scale <= 0.0:
        raise ConfigError("model: sigma_scale must be positive")
    return spec


def _parse_algorithm(d: dict, T: int) -> AlgoConfig:
    allowed = {
        "arx_order", "kernel_family", "tol_rel", "max_rank", "inner_cap",
        "max_iter", "opt_rel_tol", "opt_pg_tol", "threshold_rel", "refine_tau",
    }
    _reject_unknown(d, allowed, "algorithm")
    family = _expect(d, "kernel_family", str, "TC", "algorithm")
    if family not in ("TC", "SS2"):
        raise ConfigError(f"algorithm: kernel_family must be 'TC' or 'SS2', got {family!r}")
    return AlgoConfig(
        T=T,
        arx_order=_expect(d, "arx_order", int, None, "algorithm"),
        kernel_family=family,
        tol_rel=_expect(d, "tol_rel", float, 1e-4, "algorithm"),
        max_rank=_expect(d, "max_rank", int, None, "algorithm"),
        inner_cap=_expect(d, "inner_cap", int, 20, "algorithm"),
        max_iter=_expect(d, "max_iter", int, 500, "algorithm"),
        opt_rel_tol=_expect(d, "opt_rel_tol", float, 1e-6, "algorithm"),
        opt_pg_tol=_expect(d, "opt_pg_tol", float, 1e-5, "algorithm"),
        threshold_rel=_expect(d, "threshold_rel", float, 0.05, "algorithm"),
        refine_tau=_expect(d, "refine_tau", bool, True, "algorithm"),
    )


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a config dictionary; raises ConfigError on any violation."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    allowed = {
        "p", "runs", "N_id", "N_test", "T", "estimators", "base_seed",
        "model", "algorithm",
    }
    _reject_unknown(raw, allowed, "config")
    p = _expect(raw, "p", int, None, "config", required=True)
    T = _expect(raw, "T", int, None, "config", required=True)
    runs = _expect(raw, "runs", int, 1, "config")
    N_id = _expect(raw, "N_id", int, None, "config", required=True)
    N_test = _expect(raw, "N_test", int, 1000, "config")
    base_seed = _expect(raw, "base_seed", int, 0, "config")
    if p < 1 or T < 1 or runs < 1 or N_id < 1 or N_test < 1:
        raise ConfigError("config: p, T, runs, N_id, N_test must be positive")
    estimators = _expect(raw, "estimators", list, ["SL-II", "S", "SS"], "config")
    for est in estimators:
        if est not in VARIANTS:
            raise ConfigError(f"config: unknown estimator {est!r}; expected from {VARIANTS}")
    if len(set(estimators)) != len(estimators):
        raise ConfigError("config: duplicate estimator names")
    model = _parse_model(_expect(raw, "model", dict, {}, "config"), T)
    if model.kind == "sl":
        if not 0 <= model.n <= p:
            raise ConfigError(f"model: n must lie in [0, {p}]")
        if not 0 <= model.s <= p * p:
            raise ConfigError(f"model: s must lie in [0, {p * p}]")
    algorithm = _parse_algorithm(_expect(raw, "algorithm", dict, {}, "config"), T)
    return ExperimentConfig(
        p=p, runs=runs, N_id=N_id, N_test=N_test, T=T,
        estimators=tuple(estimators), base_seed=base_seed,
        model=model, algorithm=algorithm, raw=raw,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return parse_config(raw)


# ---------------------------------------------------------------------------
# deterministic file IO


def _atomic_write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_json(path: Path, obj) -> None:
    _atomic_write_text(path, json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _atomic_write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    tmp = path.with_name(path.name + f".tmp{os.getpid()}")
    with open(tmp, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    os.replace(tmp, path)


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


def _run_dir(out: Path, run: int) -> Path:
    return out / "runs" / f"run_{run:03d}"


def _run_seeds(cfg: ExperimentConfig, run: int, seed_offset: int) -> tuple[int, int, int]:
    key = cfg.base_seed + seed_offset + run
    return 1000003 * key + 1, 1000003 * key + 2, 1000003 * key + 3


def _model_to_json(model: GroundTruthModel) -> dict:
    return {
        "kind": model.kind,
        "p": model.p,
        "n": model.n,
        "T_true": model.T_true,
        "seed": model.seed,
        "support": sorted([list(e) for e in model.support]),
        "sparse_coeffs": model.sparse_coeffs.tolist(),
        "F": model.F.tolist(),
        "factor_coeffs": model.factor_coeffs.tolist(),
        "Sigma": model.Sigma.tolist(),
    }


def _result_to_json(res: IdentResult, threshold_rel: float) -> dict:
    hp = res.hyperparams
    if res.label == "SS":
        # dense by definition; thresholding an unstructured estimate is meaningless
        edges = sorted([j, i] for i in range(res.p) for j in range(res.p))
        support_size = res.p * res.p
        loading_support = []
    else:
        net = extract_network(res.estimate.theta_s, res.U, threshold_rel)
        edges = sorted(list(e) for e in net.sparse_edges)
        support_size = len(edges)
        loading_support = net.factor_loading_support.tolist()
    return {
        "status": "ok",
        "label": res.label,
        "p": res.p,
        "T": res.T,
        "n": res.n,
        "nll": res.nll,
        "nll_trace": [[t.step, t.rank, t.nll] for t in res.nll_trace],
        "tau": {
            "beta_ss": hp.tau.beta_ss,
            "rho": hp.tau.rho,
            "omega": hp.tau.omega,
            "family": hp.tau.family,
            "scale": res.tau.scale,
        },
        "hyperparams": {
            "gamma": None if hp.gamma is None else hp.gamma.tolist(),
            "alpha": None if hp.lowrank is None else hp.lowrank.alpha,
            "beta": None if hp.lowrank is None else hp.lowrank.beta.tolist(),
            "lam": hp.lam,
            "scale": hp.scale,
        },
        "U": res.U.tolist(),
        "Sigma_hat": res.Sigma.tolist(),
        "sparse_coeffs": res.sparse_coeffs.coeffs.tolist(),
        "lowrank_coeffs": res.lowrank_coeffs.coeffs.tolist(),
        "coeffs": res.coeffs.coeffs.tolist(),
        "support_size": support_size,
        "edges": edges,
        "factor_loading_support": loading_support,
        "threshold_rel": threshold_rel,
    }


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(cfg: ExperimentConfig, out: Path, seed_offset: int = 0) -> int:
    """Generate the ground-truth models and identification/test data."""
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.echo.json", cfg.raw)
    sim_cfg = cfg.sim_config()
    for run in range(cfg.runs):
        model_seed, id_seed, test_seed = _run_seeds(cfg, run, seed_offset)
        Sigma = cfg.model.sigma_scale * np.eye(cfg.p)
        if cfg.model.kind == "sl":
            model = gen_sl_model(cfg.p, cfg.model.n, cfg.model.s, model_seed,
                                 config=sim_cfg, Sigma=Sigma)
        else:
            model = gen_generic_model(cfg.p, model_seed, config=sim_cfg, Sigma=Sigma)
        rdir = _run_dir(out, run)
        rdir.mkdir(parents=True, exist_ok=True)
        _write_json(rdir / "model.json", _model_to_json(model))
        write_timeseries_csv(rdir / "id_data.csv",
                             simulate(model, cfg.N_id, id_seed, burn_in=cfg.model.burn_in))
        write_timeseries_csv(rdir / "test_data.csv",
                             simulate(model, cfg.N_test, test_seed, burn_in=cfg.model.burn_in))
    return 0


def _identify_task(args: tuple) -> tuple[int, str, str]:
    """One (run, estimator) identification; used both inline and in workers."""
    out_str, run, variant, raw_config = args
    cfg = parse_config(raw_config)
    rdir = _run_dir(Path(out_str), run)
    target = rdir / f"result_{variant}.json"
    try:
        ts = read_timeseries_csv(rdir / "id_data.csv")
        res = identify(ts, variant, cfg.algorithm)
        _write_json(target, _result_to_json(res, cfg.algorithm.threshold_rel))
        return run, variant, "ok"
    except Exception:
        err = traceback.format_exc()
        _write_json(target, {"status": "failed", "label": variant, "error": err})
        return run, variant, err


def cmd_identify(cfg: ExperimentConfig, out: Path, workers: int = 1) -> int:
    """Run every configured estimator on every simulated run."""
    tasks = [
        (str(out), run, variant, cfg.raw)
        for run in range(cfg.runs)
        for variant in cfg.estimators
    ]
    failures = 0
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_identify_task, tasks))
    else:
        outcomes = [_identify_task(t) for t in tasks]
    for run, variant, status in outcomes:
        if status != "ok":
            failures += 1
            print(f"identify failed: run {run}, estimator {variant}:\n{status}",
                  file=sys.stderr)
    return 2 if failures else 0


def _aligned_true_coeffs(model: dict, T: int) -> np.ndarray:
    """True lag tensor G_k = S_k + F H_k cut or zero-padded to T lags."""
    S = np.asarray(model["sparse_coeffs"], dtype=float)
    F = np.asarray(model["F"], dtype=float)
    H = np.asarray(model["factor_coeffs"], dtype=float)
    G = S.copy()
    if F.shape[1] > 0:
        G = G + np.einsum("pn,knq->kpq", F, H)
    T_true, p, _ = G.shape
    if T_true >= T:
        return G[:T]
    out = np.zeros((T, p, p))
    out[:T_true] = G
    return out


def cmd_evaluate(cfg: ExperimentConfig, out: Path) -> int:
    """Compute metrics per run and estimator, plus the TRUE reference rows."""
    rows: list[list] = []
    failures = 0
    for run in range(cfg.runs):
        rdir = _run_dir(out, run)
        with open(rdir / "model.json") as fh:
            model = json.load(fh)
        test = read_timeseries_csv(rdir / "test_data.csv")
        p = model["p"]
        G_true_full = _aligned_true_coeffs(model, model["T_true"])
        G_true_T = _aligned_true_coeffs(model, cfg.T)
        true_tensor = CoefficientTensor(p, model["T_true"], G_true_full)
        cod_true = cod1(test.values, predict_one_step(true_tensor, test))
        s_true = len(model["support"]) if model["kind"] == "sl" else p * p
        for variant in cfg.estimators:
            rpath = rdir / f"result_{variant}.json"
            if not rpath.exists():
                failures += 1
                print(f"evaluate: missing {rpath}", file=sys.stderr)
                continue
            with open(rpath) as fh:
                res = json.load(fh)
            if res.get("status") != "ok":
                failures += 1
                print(f"evaluate: skipping failed run {run} estimator {variant}",
                      file=sys.stderr)
                continue
            coeffs = CoefficientTensor(p, cfg.T, np.asarray(res["coeffs"], dtype=float))
            cod = cod1(test.values, predict_one_step(coeffs, test))
            fit = impulse_response_fit(G_true_T, coeffs.coeffs)
            C = complexity(res["support_size"], res["n"], p)
            rows.append([run, variant, _fmt(C), _fmt(cod), _fmt(fit),
                         res["n"], res["support_size"]])
        rows.append([run, "TRUE", _fmt(complexity(s_true, model["n"], p)),
                     _fmt(cod_true), _fmt(100.0), model["n"], s_true])
    header = ["run", "estimator", "complexity", "cod1", "ir_fit",
              "n_factors", "support_size"]
    _atomic_write_csv(out / "metrics.csv", header, rows)
    _write_summary(cfg, out, header, rows)
    return 2 if failures else 0


def _write_summary(cfg: ExperimentConfig, out: Path, header: list[str],
                   rows: list[list]) -> None:
    """Boxplot-ready quartiles and Tukey whiskers per estimator and metric."""
    order = list(cfg.estimators) + ["TRUE"]
    summary_rows: list[list] = []
    for est in order:
        for metric in _METRIC_NAMES:
            col = header.index(metric)
            vals = np.array([float(r[col]) for r in rows if r[1] == est])
            if vals.size == 0:
                continue
            q1, med, q3 = np.percentile(vals, [25.0, 50.0, 75.0])
            iqr = q3 - q1
            lo = vals[vals >= q1 - 1.5 * iqr].min()
            hi = vals[vals <= q3 + 1.5 * iqr].max()
            summary_rows.append(
                [est, metric, _fmt(lo), _fmt(q1), _fmt(med), _fmt(q3), _fmt(hi)]
            )
    _atomic_write_csv(
        out / "summary.csv",
        ["estimator", "metric", "whisker_low", "q1", "median", "q3", "whisker_high"],
        summary_rows,
    )


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse usage errors are config errors here
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="slrid",
                     description="Sparse plus low-rank time-series identification")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in (
        ("simulate", "generate ground-truth models and data"),
        ("identify", "fit the configured estimators to simulated data"),
        ("evaluate", "compute metrics against the ground truth"),
        ("run-all", "simulate, identify and evaluate in sequence"),
    ):
        cmd = sub.add_parser(name, help=help_)
        cmd.add_argument("--config", required=True, help="path to the JSON config")
        cmd.add_argument("--out", required=True, help="output directory")
        cmd.add_argument("--workers", type=int, default=1,
                         help="parallel workers for identification")
        cmd.add_argument("--seed-offset", type=int, default=0,
                         help="shift applied to every derived seed")
    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        cfg = load_config(args.config)
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        out = Path(args.out)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, seed_offset=args.seed_offset)
        if args.command == "identify":
            return cmd_identify(cfg, out, workers=args.workers)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, out)
        rc = cmd_simulate(cfg, out, seed_offset=args.seed_offset)
        rc = max(rc, cmd_identify(cfg, out, workers=args.workers))
        return max(rc, cmd_evaluate(cfg, out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
