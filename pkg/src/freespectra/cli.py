"""``freespectra`` command-line entry point.

Exit status: 0 on success or a passing verdict, 1 on a failing verdict,
2 on any execution error.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import harness, matops, rmt, spectra
from .config import RunConfig, parse_config
from .errors import FreeSpectraError
from .linearize import linearize
from .ncalg import format_polynomial
from .subord import ModelSpec

EXIT_PASS, EXIT_FAIL, EXIT_ERROR = 0, 1, 2
THREADS_ENV = "FREESPECTRA_THREADS"
_DIAG_RE = "diag("


class Outcome:
    def __init__(self, ok: bool, line: str, paths=()):
        self.ok = ok
        self.line = line
        self.paths = list(paths)


def _write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(harness._jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


def _model_size(cfg: RunConfig, sim_n: int | None = None) -> int:
    """Size of the deterministic matrices fed to the solver."""
    model = cfg["model"]
    if model["model_n"] > 0:
        return model["model_n"]
    if sim_n is not None and cfg["simulation"]["model"] == "same":
        return sim_n
    if not model["dets"]:
        return 1
    if all(spec.startswith(_DIAG_RE) for spec in model["dets"]):
        return math.lcm(*(spec.count(",") + 1 for spec in model["dets"]))
    raise FreeSpectraError("set model.model_n: the solver needs a size for non-diagonal deterministic matrices")


def _model_dets(cfg, sim_n=None):
    return harness.resolve_dets(cfg["model"]["dets"], _model_size(cfg, sim_n))


def _pencil_model(cfg: RunConfig, dets) -> ModelSpec:
    model = cfg["model"]
    if model["gamma"] is not None:
        return ModelSpec(model["gamma"], model["alphas"] or (), model["betas"] or (), dets)
    return ModelSpec.from_linearization(linearize(cfg.polynomial), model["r"], dets)


def _grid(cfg):
    g = cfg["spectra"]["grid"]
    if g is None:
        return None
    lo, hi, step = g
    return lo + step * np.arange(int(round((hi - lo) / step)) + 1)


def _wigner(cfg, law=None):
    return harness.WignerConfig(law or cfg.law(), cfg.seed, cfg["simulation"]["truncation"])


def _need_poly(cfg):
    if cfg.polynomial is None:
        raise FreeSpectraError(f"{cfg.command} needs model.poly")
    return cfg.polynomial


def _out(cfg, name):
    stem = cfg["output"]["stem"] or name
    return Path(cfg["output"]["dir"]), stem


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_linearize(cfg, threads):
    p = _need_poly(cfg)
    lin = linearize(p)
    out, stem = _out(cfg, "linearization")
    path = _write_json(out / f"{stem}.json", {"config": cfg.to_text(), "linearization": lin.to_json()})
    return Outcome(True, f"linearize: m={lin.m} for {format_polynomial(p, cfg['model']['r'])}", [path])


def _density(cfg):
    opts, eps = cfg.solver_options(), cfg["spectra"]["eps"]
    dets = _model_dets(cfg)
    if cfg.polynomial is not None:
        return spectra.polynomial_distribution(cfg.polynomial, dets, _grid(cfg), eps, opts)
    return spectra.density_of_model(_pencil_model(cfg, dets), _grid(cfg), eps, opts)


def cmd_density(cfg, threads):
    d = _density(cfg)
    out, stem = _out(cfg, "density")
    csv_path = out / f"{stem}.csv"
    out.mkdir(parents=True, exist_ok=True)
    csv_path.write_text(d.to_csv())
    failed = int(np.count_nonzero(~d.converged))
    meta = {"config": cfg.to_text(), "eps": d.eps, "mass": d.mass, "points": len(d.points), "failed_points": failed}
    json_path = _write_json(out / f"{stem}.json", meta)
    return Outcome(failed == 0, f"density: {len(d.points)} points, mass={d.mass:.6f}, failed={failed}", [csv_path, json_path])


def _support(cfg):
    opts, sp = cfg.solver_options(), cfg["spectra"]
    dets = _model_dets(cfg)
    if cfg.polynomial is not None:
        return spectra.support_of_polynomial(cfg.polynomial, dets, sp["eps"], sp["threshold"], opts)
    return spectra.support_of_model(_pencil_model(cfg, dets), sp["eps"], sp["threshold"], opts)


def cmd_support(cfg, threads):
    s = _support(cfg)
    out, stem = _out(cfg, "support")
    data = json.loads(s.to_json())
    data["config"] = cfg.to_text()
    path = _write_json(out / f"{stem}.json", data)
    ivs = " U ".join(f"[{a:.6g}, {b:.6g}]" for a, b in s.intervals) or "empty"
    return Outcome(True, f"support: {ivs}", [path])


def cmd_norm(cfg, threads):
    p = _need_poly(cfg)
    s = _support(cfg)
    value = spectra.norm_of_polynomial(p, support=s)
    out, stem = _out(cfg, "norm")
    path = _write_json(out / f"{stem}.json", {"config": cfg.to_text(), "norm": value, "support": [list(iv) for iv in s.intervals]})
    return Outcome(True, f"norm: {value:.8g}", [path])


def cmd_simulate(cfg, threads):
    sim = cfg["simulation"]
    wigner = _wigner(cfg)
    r = cfg["model"]["r"]
    keys = [(n, k) for n in sim["n"] for k in range(sim["trials"])]

    def trial(key):
        n, k = key
        samples = wigner.samples(n, r, k)
        dets = harness.resolve_dets(cfg["model"]["dets"], n)
        if cfg.polynomial is not None:
            return rmt.empirical_spectrum(cfg.polynomial, samples, dets)
        model = _pencil_model(cfg, dets)
        coeffs = [model.gamma, *model.alphas, *model.betas]
        return np.linalg.eigvalsh(matops.kron_assemble(coeffs, [np.eye(n), *[w.matrix for w in samples], *dets]))

    results = harness._run_trials(trial, keys, threads)
    out, stem = _out(cfg, "simulation")
    out.mkdir(parents=True, exist_ok=True)
    rows = ["n,trial,index,eigenvalue"]
    records, errors = [], []
    for (n, k), eigs, err in results:
        if err is not None:
            errors.append({"n": n, "trial": k, "error": err})
            continue
        rows.extend(f"{n},{k},{i},{e!r}" for i, e in enumerate(eigs))
        records.append({"n": n, "trial": k, "min_eig": float(eigs[0]), "max_eig": float(eigs[-1])})
    csv_path = out / f"{stem}.csv"
    csv_path.write_text("\n".join(rows) + "\n")
    json_path = _write_json(out / f"{stem}.json", {"config": cfg.to_text(), "wigner": wigner.describe(), "trials": records, "errors": errors})
    return Outcome(not errors, f"simulate: {len(records)} samples, {len(errors)} errors", [csv_path, json_path])


def _finish(cfg, report, name):
    report.parameters["config"] = cfg.to_text()
    out, stem = _out(cfg, name)
    return Outcome(report.verdict, report.line(), report.write(out, stem))


def cmd_verify_inclusion(cfg, threads):
    sim, sp = cfg["simulation"], cfg["spectra"]
    ok, lines, paths = True, [], []
    for n in sim["n"]:
        model = _pencil_model(cfg, _model_dets(cfg, n))
        report = harness.check_spectrum_inclusion(
            model, _wigner(cfg), n, cfg["verify"]["eps"], sim["trials"],
            sim_dets=cfg["model"]["dets"], support_eps=sp["eps"], threshold=sp["threshold"],
            threads=threads, opts=cfg.solver_options(),
        )
        res = _finish(cfg, report, f"inclusion_n{n}")
        ok, lines, paths = ok and res.ok, lines + [res.line], paths + res.paths
    return Outcome(ok, "; ".join(lines), paths)


def cmd_verify_gap(cfg, threads):
    sim, sp, ver = cfg["simulation"], cfg["spectra"], cfg["verify"]
    exp = harness.GapExperiment(
        _need_poly(cfg), cfg["model"]["dets"], laws=[cfg.law()], n_list=sim["n"], trials=sim["trials"],
        delta=ver["delta"], seed=cfg.seed, gap=ver["gap"], truncation=sim["truncation"],
        model_dets=_model_dets(cfg, sim["n"][0]), eps=sp["eps"], threshold=sp["threshold"],
        threads=threads, opts=cfg.solver_options(),
    )
    return _finish(cfg, harness.check_gap(exp), "gap")


def cmd_verify_norm(cfg, threads):
    sim, sp = cfg["simulation"], cfg["spectra"]
    report = harness.check_strong_convergence(
        _need_poly(cfg), cfg["model"]["dets"], _wigner(cfg), sim["n"], sim["trials"], cfg["verify"]["tol"],
        model_dets=_model_dets(cfg, max(sim["n"])), eps=sp["eps"], threshold=sp["threshold"],
        threads=threads, opts=cfg.solver_options(),
    )
    return _finish(cfg, report, "strong_convergence")


def cmd_compare(cfg, threads):
    sim, ver = cfg["simulation"], cfg["verify"]
    n = sim["n"][0]
    report = harness.compare_density(
        _need_poly(cfg), cfg["model"]["dets"], _wigner(cfg), n, sim["trials"], _grid(cfg), cfg["spectra"]["eps"],
        ver["ks_tol"], ver["moment_tol"], model_dets=_model_dets(cfg, n), threads=threads, opts=cfg.solver_options(),
    )
    return _finish(cfg, report, "density_comparison")


COMMANDS = {
    "linearize": cmd_linearize,
    "density": cmd_density,
    "support": cmd_support,
    "norm": cmd_norm,
    "simulate": cmd_simulate,
    "verify-inclusion": cmd_verify_inclusion,
    "verify-gap": cmd_verify_gap,
    "verify-norm": cmd_verify_norm,
    "compare": cmd_compare,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="freespectra", description=__doc__.splitlines()[0])
    parser.add_argument("command", nargs="?", choices=sorted(COMMANDS), help="overrides run.command in the config")
    parser.add_argument("--config", required=True, type=Path, help="INI run configuration")
    parser.add_argument("--out", type=Path, help="output directory (overrides output.dir)")
    parser.add_argument("--threads", type=int, help=f"worker threads (default: ${THREADS_ENV} or run.threads)")
    parser.add_argument("--seed", type=lambda s: int(s, 0), help="64-bit seed (overrides run.seed)")
    parser.add_argument("--echo-config", action="store_true", help="print the effective config and exit")
    return parser


def _threads(args, cfg) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get(THREADS_ENV)
    if env:
        return int(env)
    return cfg["run"]["threads"]


def run(cfg: RunConfig, threads: int = 1) -> Outcome:
    return COMMANDS[cfg.command](cfg, max(1, threads))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config.read_text(encoding="utf-8"))
        overrides = {}
        if args.command:
            overrides["run__command"] = args.command
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise FreeSpectraError("seed must be a 64-bit unsigned integer")
            overrides["run__seed"] = args.seed
        if args.out is not None:
            overrides["output__dir"] = str(args.out)
        threads = _threads(args, cfg)
        cfg = cfg.with_overrides(**overrides)
        if args.echo_config:
            print(cfg.to_text(), end="")
            return EXIT_PASS
        outcome = run(cfg, threads)
    except (FreeSpectraError, OSError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"freespectra: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(outcome.line)
    return EXIT_PASS if outcome.ok else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
