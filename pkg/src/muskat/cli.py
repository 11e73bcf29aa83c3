"""Command line front end: ``muskat {dn-check,evolve,two-phase,besov,verify}``.

Exit codes: 0 all requested checks passed, 2 bad configuration,
3 smallness violated, 4 a check failed (details in the JSON output).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema
import numpy as np

from .besov import block_norms, besov_norm, partition_for, wiener_norm
from .config import SolverConfig
from .errors import ConfigError, SmallnessViolated
from .spectral_core import PhysicalParams, SpectralField, StripGrid, TorusGrid, fft_workers, inverse

log = logging.getLogger("muskat")

EXIT_OK, EXIT_CONFIG, EXIT_SMALLNESS, EXIT_CHECK = 0, 2, 3, 4

FLUX_TOL = 1e-8  # relative flux mismatch accepted by `two-phase`
TRACE_TOL = 1e-10  # the two spectral remainder extractions must agree to this
ORACLE_TOL = 5e-3


def _data(name: str) -> str:
    return resources.files("muskat").joinpath("data", name).read_text()


def default_config() -> dict:
    return json.loads(_data("default_config.json"))


def schema() -> dict:
    return json.loads(_data("config.schema.json"))


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for key, val in over.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key not in ("eta0", "f"):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    if "dt" in over and "K" not in over:
        out.pop("K", None)
    return out


@dataclass
class RunConfig:
    problem: str
    d: int
    N: int
    L: float
    M: int
    Z: Optional[float]
    T: float
    K: int
    params: PhysicalParams
    eta0_spec: dict
    f_spec: Optional[dict]
    besov_s: list
    fd_resolution: int
    solver: SolverConfig
    seed: int
    output_dir: str
    criteria: Optional[list] = None
    base_dir: Path = field(default=Path("."), repr=False)

    @classmethod
    def from_dict(cls, raw: dict, base_dir: Path = Path(".")) -> "RunConfig":
        try:
            jsonschema.validate(raw, schema())
        except jsonschema.ValidationError as exc:
            where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"invalid config at {where}: {exc.message}") from None
        T = float(raw.get("T", 1.0))
        K = int(raw["K"]) if "K" in raw else max(1, round(T / raw["dt"]))
        try:
            tol = dict(raw.get("tolerances", {}))
            solver = SolverConfig(**tol, M=raw.get("M", SolverConfig.M), K=K)
            params = PhysicalParams(**raw.get("params", {}))
            cfg = cls(raw["problem"], raw.get("d", 1), raw["N"], float(raw.get("L", 2 * np.pi)),
                      raw.get("M", SolverConfig.M), raw.get("Z"), T, K, params, raw["eta0"], raw.get("f"),
                      list(raw.get("besov_s", [1.0])), raw.get("fd_resolution", 128), solver,
                      raw.get("seed", 0), raw.get("output_dir", "muskat-out"), raw.get("criteria"), base_dir)
            cfg.grid()
            cfg.eta0()
            if cfg.f_spec is not None:
                cfg.f()
        except (TypeError, ValueError, OSError) as exc:
            raise ConfigError(str(exc)) from None
        return cfg

    @classmethod
    def load(cls, path: Optional[str]) -> "RunConfig":
        raw = default_config()
        base = Path(".")
        if path is not None:
            try:
                user = json.loads(Path(path).read_text())
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read config {path}: {exc}") from None
            if not isinstance(user, dict):
                raise ConfigError("config must be a JSON object")
            raw = _merge(raw, user)
            base = Path(path).resolve().parent
        return cls.from_dict(raw, base)

    def grid(self) -> TorusGrid:
        return TorusGrid(self.N, self.L, self.d)

    def strip(self) -> StripGrid:
        return StripGrid(self.grid(), M=self.M, Z=self.Z, grading=self.solver.grading)

    def _field(self, spec: dict) -> SpectralField:
        g = self.grid()
        if "modes" in spec:
            return SpectralField.from_modes(g, [tuple(m) for m in spec["modes"]])
        values = np.loadtxt(self.base_dir / spec["file"], ndmin=self.d)
        if values.shape != g.shape:
            raise ValueError(f"field file has shape {values.shape}, grid is {g.shape}")
        return SpectralField.from_physical(g, values, mean_zero=True)

    def eta0(self) -> SpectralField:
        return self._field(self.eta0_spec)

    def f(self) -> SpectralField:
        if self.f_spec is None:
            return SpectralField.from_modes(self.grid(), [((2,) * self.d if self.d > 1 else 2, 1.0, 0.0)])
        return self._field(self.f_spec)

    def as_dict(self) -> dict:
        p = self.params
        return {
            "problem": self.problem, "d": self.d, "N": self.N, "L": self.L, "M": self.M, "Z": self.Z,
            "T": self.T, "K": self.K,
            "params": {"mu_plus": p.mu_plus, "mu_minus": p.mu_minus, "rho_plus": p.rho_plus,
                       "rho_minus": p.rho_minus, "kappa": p.kappa},
            "eta0": self.eta0_spec, "f": self.f_spec, "besov_s": self.besov_s,
            "fd_resolution": self.fd_resolution, "solver": self.solver.as_dict(),
            "seed": self.seed, "output_dir": self.output_dir, "criteria": self.criteria,
        }


# -- output helpers -------------------------------------------------------------


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _summary(cfg: RunConfig, command: str, body: dict) -> dict:
    return {"command": command, "config": cfg.as_dict(), **body}


# -- subcommands ----------------------------------------------------------------


def cmd_dn_check(cfg: RunConfig, out_dir: Path, echo, dump_strip: bool) -> int:
    from .dn_solver import check_smallness, dump_strip_csv, solve_batch, solve_potential, dn_apply
    from .oracle_fd import DEFAULT_DEPTH, fd_dn

    g = cfg.grid()
    eta, f = cfg.eta0(), cfg.f()
    strip = cfg.strip()
    check_smallness(np.asarray(eta.coeffs)[None], g, cfg.solver.c_star)
    sol = solve_batch(strip, np.asarray(eta.coeffs)[None], np.asarray(f.coeffs)[None], cfg.solver)
    trace_err = float(np.max(np.abs(inverse(sol.remainder[0] - sol.remainder_direct[0], g.d))))
    spectral = dn_apply(eta, f, config=cfg.solver, strip=strip)
    rows = [{"comparison": "w_trace_vs_direct_integral", "max_abs_error": trace_err,
             "rel_error": trace_err / max(spectral.sup(), np.finfo(float).tiny),
             "threshold": TRACE_TOL, "passed": trace_err <= TRACE_TOL}]
    if g.d == 1:
        n = cfg.fd_resolution
        oracle = fd_dn(eta, f, n, n, Z=DEFAULT_DEPTH / g.k_min, grid=g)
        diff = (spectral - oracle).sup()
        rel = diff / spectral.sup()
        rows.append({"comparison": "spectral_vs_fd_oracle", "max_abs_error": diff, "rel_error": rel,
                     "threshold": ORACLE_TOL, "passed": rel <= ORACLE_TOL})
        from .plotting import plot_dn_comparison
        plot_dn_comparison(g.points[0], spectral.physical(), oracle.physical(), out_dir / "dn-check.png")
    with open(out_dir / "dn-check.csv", "w") as fh:
        fh.write("comparison,max_abs_error,rel_error,threshold,passed\n")
        for r in rows:
            fh.write(f"{r['comparison']},{r['max_abs_error']:.16e},{r['rel_error']:.16e},"
                     f"{r['threshold']:.3e},{str(r['passed']).lower()}\n")
    if dump_strip:
        dump_strip_csv(solve_potential(eta, f, config=cfg.solver, strip=strip), out_dir / "strip.csv")
    passed = all(r["passed"] for r in rows)
    write_json(out_dir / "run-summary.json", _summary(cfg, "dn-check", {
        "max_error": trace_err, "iterations": int(sol.iterations),
        "contraction_ratio": float(sol.ratios[0]), "table": rows, "passed": passed}))
    for r in rows:
        echo(f"{r['comparison']}: max abs {r['max_abs_error']:.3e}, rel {r['rel_error']:.3e} "
             f"({'ok' if r['passed'] else 'FAIL'})")
    return EXIT_OK if passed else EXIT_CHECK


def _evolve(cfg: RunConfig, problem: str, command: str, out_dir: Path, echo,
            extra: Optional[dict] = None) -> int:
    from .evolution import accepted, run_summary, solve_global_picard
    from .plotting import plot_interface, plot_norms

    eta0 = cfg.eta0()
    path = solve_global_picard(eta0, cfg.T, cfg.K, problem=problem, params=cfg.params,
                               config=cfg.solver, strip=cfg.strip())
    path.report.to_csv(out_dir / "norms.csv")
    plot_norms(path.report, out_dir / "norms.png", title=problem)
    if cfg.d == 1:
        plot_interface(cfg.grid().points[0], inverse(path.coeffs, 1), path.times, out_dir / "interface.png")
    body = run_summary(path, eta0, cfg.solver)
    body["converged"] = bool(path.converged)
    body["differences"] = [float(v) for v in path.differences]
    passed = accepted(path, eta0)
    if extra:
        body.update(extra)
        passed = passed and extra.get("passed", True)
    body["passed"] = passed
    write_json(out_dir / "run-summary.json", _summary(cfg, command, body))
    echo(f"{problem}: {path.iterations} Picard iterations, ratio {path.contraction_ratio:.3g}, "
         f"X1_kappa {path.x1_kappa():.4g}, accepted={body['accepted']}")
    return EXIT_OK if passed else EXIT_CHECK


def cmd_evolve(cfg: RunConfig, out_dir: Path, echo, dump_strip: bool) -> int:
    return _evolve(cfg, cfg.problem, "evolve", out_dir, echo)


def cmd_two_phase(cfg: RunConfig, out_dir: Path, echo, dump_strip: bool) -> int:
    from .two_phase import flux_mismatch, solve_two_phase_state

    eta0 = cfg.eta0()
    state = solve_two_phase_state(eta0, cfg.params, config=cfg.solver, strip=cfg.strip())
    mismatch = flux_mismatch(state, cfg.solver, cfg.strip())
    # the lower flux is the interface velocity, of size kappa |D| eta
    scale = max(cfg.params.kappa * SpectralField(eta0.grid, eta0.grid.kabs * eta0.coeffs, True).sup(),
                np.finfo(float).tiny)
    diag = {
        "f_minus_iterations": state.iterations,
        "f_minus_contraction_ratio": state.contraction_ratio,
        "f_minus_bound_ratio": state.bound_ratio,
        "jump_defect": state.jump_defect(),
        "flux_mismatch": mismatch,
        "flux_mismatch_rel": mismatch / scale,
        "flux_tol": FLUX_TOL,
    }
    with open(out_dir / "traces.csv", "w") as fh:
        fh.write("x,eta,f_minus,f_plus\n")
        pts = eta0.grid.points.reshape(eta0.grid.d, -1)[0]
        for row in zip(pts, state.eta.physical().ravel(), state.f_minus.physical().ravel(),
                       state.f_plus.physical().ravel()):
            fh.write(",".join(f"{v:.16e}" for v in row) + "\n")
    echo(f"f^-: {state.iterations} iterations, ratio {state.contraction_ratio:.3g}, "
         f"relative flux mismatch {diag['flux_mismatch_rel']:.3e}")
    diag["passed"] = diag["flux_mismatch_rel"] <= FLUX_TOL
    return _evolve(cfg, "two_phase", "two-phase", out_dir, echo, {"two_phase": diag, "passed": diag["passed"]})


def cmd_besov(cfg: RunConfig, out_dir: Path, echo, dump_strip: bool) -> int:
    from .plotting import plot_besov_blocks

    u = cfg.eta0()
    P = partition_for(u.grid)
    norms = {f"{s:g}": besov_norm(u, s, P) for s in cfg.besov_s}
    blocks = block_norms(np.asarray(u.coeffs)[None], P)[0]
    with open(out_dir / "besov-blocks.csv", "w") as fh:
        fh.write("j,block_sup\n")
        for j, b in zip(P.js, blocks):
            fh.write(f"{int(j)},{b:.16e}\n")
    plot_besov_blocks(P.js, blocks, out_dir / "besov-blocks.png")
    write_json(out_dir / "run-summary.json", _summary(cfg, "besov", {
        "besov_norms": norms, "wiener_norm": wiener_norm(u), "passed": True}))
    for s, v in norms.items():
        echo(f"B^{s}_(inf,1) norm: {v:.10g}")
    return EXIT_OK


def _run_one(args):
    from .verification import run_criterion
    cid, seed, solver = args
    return run_criterion(cid, seed, solver)


def cmd_verify(cfg: RunConfig, out_dir: Path, echo, dump_strip: bool) -> int:
    from .verification import CRITERIA, report

    ids = sorted(CRITERIA) if cfg.criteria is None else sorted(set(cfg.criteria))
    workers = fft_workers()
    jobs = [(cid, cfg.seed, cfg.solver) for cid in ids]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            results = list(pool.map(_run_one, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_run_one(job))
            echo(results[-1].line())
    if workers > 1:
        for r in results:
            echo(r.line())
    rep = report(results, cfg.seed, cfg.solver)
    write_json(out_dir / "verify-report.json", rep)
    write_json(out_dir / "verify-timing.json", {str(r.id): round(r.seconds, 3) for r in results})
    write_json(out_dir / "run-summary.json", _summary(cfg, "verify", {
        "passed": rep["all_passed"], "failed": [r.id for r in results if not r.passed]}))
    echo(f"{sum(r.passed for r in results)}/{len(results)} criteria passed")
    return EXIT_OK if rep["all_passed"] else EXIT_CHECK


COMMANDS = {
    "dn-check": cmd_dn_check,
    "evolve": cmd_evolve,
    "two-phase": cmd_two_phase,
    "besov": cmd_besov,
    "verify": cmd_verify,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration (defaults are shipped)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides output_dir)")
    common.add_argument("--seed", type=int, help="seed for randomized suites (overrides seed)")
    common.add_argument("--dump-strip", action="store_true", help="write strip slices to strip.csv")
    common.add_argument("--quiet", action="store_true", help="only report errors")
    parser = argparse.ArgumentParser(prog="muskat", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    echo = (lambda msg: None) if args.quiet else print
    try:
        cfg = RunConfig.load(args.config)
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be non-negative")
            cfg.seed = args.seed
        if args.out is not None:
            cfg.output_dir = args.out
    except ConfigError as exc:
        print(f"muskat: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](cfg, out_dir, echo, args.dump_strip)
    except SmallnessViolated as exc:
        write_json(out_dir / "run-summary.json", _summary(cfg, args.command, {
            "passed": False,
            "error": {"type": type(exc).__name__, "message": str(exc),
                      "value": None if exc.value is None else float(exc.value),
                      "threshold": None if exc.threshold is None else float(exc.threshold),
                      "index": exc.index}}))
        print(f"muskat: smallness violated: {exc}", file=sys.stderr)
        return EXIT_SMALLNESS


if __name__ == "__main__":
    sys.exit(main())
