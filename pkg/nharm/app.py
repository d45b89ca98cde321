import argparse
import json
import logging
import sys
from pathlib import Path

from nharm.bubbling import bubble_report, energy_identity_report, entropy_trace
from nharm.config import DEFAULT_SAMPLES, DEFAULT_SEED, VERSION
from nharm.energy import dirichlet_energy, set_threads
from nharm.inequalities import (
    GrowthParams,
    contraction_factor,
    cordes_epsilon_max,
    run_inequality_suite,
)
from nharm.manifolds import MapField
from nharm.runconfig import ConfigError, RunConfig
from nharm.solver import DEGREE_JUMP, minimize, run_continuation, warm_start_sane
from nharm.tables import CordesRow, CordesTable

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2
EXIT_DEGREE_JUMP = 3

COMMANDS = ("check-inequalities", "cordes", "run", "bubble-report", "minimize")


# ------------------------------------------------------------------
# Pretty CLI helpers (stderr; stdout carries JSON / CSV)
# ------------------------------------------------------------------

def _step(num: int, total: int, msg: str):
    print(f"  [{num}/{total}] {msg}", file=sys.stderr)


def _ok(msg: str):
    print(f"       {msg}", file=sys.stderr)


def _fail(msg: str):
    print(f"       ERROR: {msg}", file=sys.stderr)


def _emit(payload: dict, out_dir: Path | None, name: str):
    text = json.dumps(payload, indent=2)
    print(text)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / name).write_text(text + "\n", encoding="utf-8")


# ------------------------------------------------------------------
# Grid parsing
# ------------------------------------------------------------------

def _grid(kind):
    """Comma list ("1,2,6") or inclusive range ("1:5:0.25"); "" is an empty grid."""
    def parse(raw: str) -> list:
        raw = raw.strip()
        if not raw:
            return []
        if ":" in raw:
            parts = raw.split(":")
            if len(parts) != 3:
                raise argparse.ArgumentTypeError(f"range must be start:stop:step, got {raw!r}")
            start, stop, step = (float(x) for x in parts)
            if step <= 0:
                raise argparse.ArgumentTypeError("range step must be positive")
            count = int(round((stop - start) / step)) + 1
            values = [start + i * step for i in range(max(count, 0))]
            return [kind(round(v, 12)) for v in values if v <= stop + 1e-12]
        try:
            return [kind(x) for x in raw.split(",")]
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad grid value in {raw!r}") from None
    return parse


# ------------------------------------------------------------------
# Commands
# ------------------------------------------------------------------

def _cmd_check_inequalities(samples: int, seed: int, out_dir: Path | None) -> int:
    if samples < 1:
        _fail(f"--samples must be >= 1, got {samples}")
        return EXIT_USAGE
    _step(1, 1, f"checking kernel inequalities on {samples} samples (seed {seed})...")
    results = run_inequality_suite(samples, seed)
    passed = all(r.passed for r in results)
    for r in results:
        if r.passed:
            _ok(f"{r.name}: min slack {r.min_slack:.3e}")
        else:
            _fail(f"{r.name}: {r.violations} violation(s); worst sample {json.dumps(r.worst)}")
    _emit({
        "seed": seed,
        "samples": samples,
        "passed": passed,
        "checks": [r.to_dict() for r in results],
    }, out_dir, "inequalities.json")
    return EXIT_OK if passed else EXIT_FAILED


def _cmd_cordes(p_grid: list[float], nn_grid: list[int], out_dir: Path | None) -> int:
    rows = []
    for p in p_grid:
        for nN in nn_grid:
            eps = cordes_epsilon_max(p, nN)
            rows.append(CordesRow(p, nN, eps, contraction_factor(eps) if eps > 0 else 1.0))
    table = CordesTable(rows)
    text = table.to_csv()
    sys.stdout.write(text)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        table.write(out_dir / "cordes.csv")
    return EXIT_OK


def _cmd_run(config_path: Path, out_dir: Path | None) -> int:
    cfg = RunConfig.load(config_path)
    out_dir = out_dir or cfg.output_dir
    total = 4 if cfg.diagnostics.bubbles else 3

    _step(1, total, "building mesh, target and initial map...")
    mesh = cfg.build_mesh()
    target = cfg.build_target()
    field0 = cfg.build_initial(mesh, target)
    params = cfg.growth_params()
    _ok(f"{mesh.kind}: {mesh.node_count} nodes, {mesh.cell_count} cells")

    _step(2, total, f"continuation over {len(cfg.schedule)} steps...")
    run = run_continuation(field0, cfg.schedule, cfg.solver, params)
    for res in run.results:
        _ok(f"p={res.params.p:.6g} delta={res.params.delta:.3g} E={res.energy:.8g} "
            f"{res.status} ({res.iterations} iters)")
    if not warm_start_sane(run):
        _ok("warning: warm-start energies are not ordered in p")

    _step(3, total, f"writing artifacts to {out_dir}...")
    out_dir.mkdir(parents=True, exist_ok=True)
    run.trace.write(out_dir / "trace.csv")
    (out_dir / "final_field.json").write_text(run.final.field.to_json(), encoding="utf-8")

    summary = {
        "config": str(config_path),
        "steps": [r.summary() for r in run.results],
        "entropy_trace": entropy_trace(run.trace, mesh.n),
        "completed": run.completed,
        "flagged_steps": [k for k, r in enumerate(run.results) if r.status != "converged"],
    }
    if cfg.diagnostics.bubbles:
        _step(4, total, "energy identity report...")
        d = cfg.diagnostics
        report = energy_identity_report(run, d.threshold, d.chart_multiple, d.neck_outer,
                                        d.chart_resolution)
        (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
        report.ladder().write(out_dir / "ladder.csv")
        _ok(f"{report.status}: bubbles {report.bubbles}, defect {report.defect:.4g}")
        summary["report_status"] = report.status
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2), encoding="utf-8")

    if not run.completed:
        k = len(run.results) - 1
        _fail(f"degree jump at continuation step {k}: {run.final.message}")
        return EXIT_DEGREE_JUMP
    _ok("done.")
    return EXIT_OK


def _cmd_minimize(config_path: Path, out_dir: Path | None) -> int:
    cfg = RunConfig.load(config_path)
    out_dir = out_dir or cfg.output_dir
    _step(1, 2, "building initial map...")
    mesh = cfg.build_mesh()
    field0 = cfg.build_initial(mesh, cfg.build_target())
    params = cfg.growth_params()
    _step(2, 2, f"minimizing at p={params.p:.6g} delta={params.delta:.3g} s={params.s:.3g}...")
    result = minimize(field0, params, cfg.solver)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "final_field.json").write_text(result.field.to_json(), encoding="utf-8")
    summary = result.summary()
    summary["D_n"] = dirichlet_energy(result.field)
    _emit(summary, out_dir, "summary.json")
    if result.status == DEGREE_JUMP:
        _fail(result.message)
        return EXIT_DEGREE_JUMP
    return EXIT_OK if result.converged else EXIT_FAILED


def _cmd_bubble_report(field_path: Path, args, out_dir: Path | None) -> int:
    if not field_path.is_file():
        _fail(f"field file not found: {field_path}")
        return EXIT_USAGE
    field = MapField.from_json(field_path.read_text(encoding="utf-8"))
    n = field.mesh.n
    params = GrowthParams(n, field.target.N,
                          p=n if args.p is None else args.p,
                          delta=args.delta, s=args.s)
    report = bubble_report(field, params, args.threshold, K=args.chart_multiple)
    if report.status == "no_concentration":
        _ok(f"no concentration: {report.message}")
    _emit(report.to_dict(), out_dir, "report.json")
    if out_dir is not None:
        report.ladder().write(out_dir / "ladder.csv")
    return EXIT_OK


# ------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nharm",
        description="nharm: approximation energies, minimizers and bubbling diagnostics",
    )
    parser.add_argument("-v", "--version", action="version", version=f"nharm {VERSION}")
    parser.add_argument("command", choices=COMMANDS, help=" | ".join(COMMANDS))
    parser.add_argument("--config", type=Path, help="RunConfig JSON (run, minimize)")
    parser.add_argument("--seed", type=int, default=DEFAULT_SEED)
    parser.add_argument("--samples", type=int, default=DEFAULT_SAMPLES)
    parser.add_argument("--out", type=Path, default=None, help="output directory")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads (default: $NHARM_THREADS or 1)")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    parser.add_argument("--p-grid", type=_grid(float), default=_grid(float)("1:5:0.25"))
    parser.add_argument("--nN-grid", dest="nn_grid", type=_grid(int), default=list(range(1, 13)))
    parser.add_argument("--field", type=Path, help="stored MapField JSON (bubble-report)")
    parser.add_argument("--p", type=float, default=None)
    parser.add_argument("--delta", type=float, default=0.0)
    parser.add_argument("--s", type=float, default=1.0)
    parser.add_argument("--threshold", type=float, default=None)
    parser.add_argument("--chart-multiple", type=float, default=8.0)
    return parser


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )

    try:
        set_threads(args.threads)
        if args.command == "check-inequalities":
            return _cmd_check_inequalities(args.samples, args.seed, args.out)

        if args.command == "cordes":
            return _cmd_cordes(args.p_grid, args.nn_grid, args.out)

        if args.command in ("run", "minimize"):
            if args.config is None:
                _fail(f"'{args.command}' needs --config PATH")
                return EXIT_USAGE
            if args.command == "run":
                return _cmd_run(args.config, args.out)
            return _cmd_minimize(args.config, args.out)

        if args.command == "bubble-report":
            if args.field is None:
                _fail("'bubble-report' needs --field PATH")
                return EXIT_USAGE
            return _cmd_bubble_report(args.field, args, args.out)
    except ConfigError as exc:
        _fail(f"config error at {exc}")
        return EXIT_USAGE
    except ValueError as exc:
        _fail(str(exc))
        return EXIT_FAILED
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
