"""Command-line front end: ``levyfield <subcommand> [config] [--seed N] ...``.

Exit codes: 0 success, 1 study failure (the manifest records the failed
stage), 2 configuration error or bad usage.
"""

import argparse
from dataclasses import replace
from datetime import datetime, timezone
import json
import logging
import math
import os
import sys

import numpy as np

from . import __version__, config as config_mod
from . import io
from .analysis import mixed_moment, smoothed_covariance
from .errors import AliasingError, ConfigError, LevyFieldError
from .experiments import (build_mesh, cutoff_rate_study, kl_rate_study, lag_covariance,
                          mc_solution_moments, noise_grid, sample_fields, solve_field, tail_study)
from .fem import assemble_solve, errors_against, h1_norm, interval_mesh
from .field import domination_check, smooth_realization, transform_field
from .matern import eval_grid_spectral
from .measure import jump_moment, levy_characteristic, shell_partition
from .mercer import eig_decay_report, nystrom_eig, spectrum_table
from .noise import (CellGrid, Box, empirical_char_functional, sample_noise, snapshot_bytes,
                    snapshot_from_bytes)

log = logging.getLogger("levyfield")

OUTPUT_ENV = "LEVYFIELD_OUTPUT_DIR"
SUBCOMMANDS = ("sample", "mercer", "solve", "moments", "tails", "cutoff-rate", "kl-rate",
               "validate")


def available_workers():
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


class Run:
    """Output directory, emitted files and the stage currently executing."""

    def __init__(self, out_dir, run_cfg, subcommand):
        self.out = out_dir
        self.cfg = run_cfg
        self.subcommand = subcommand
        self.files = []
        self.stage = "setup"
        self.started = _now()

    def path(self, name):
        self.files.append(name)
        return os.path.join(self.out, name)

    def csv(self, name, header, rows):
        io.write_csv(self.path(name), header, rows)

    def manifest(self, status, failed_stage=None, error=None):
        study = self.cfg.study
        doc = {
            "tool": "levyfield",
            "version": __version__,
            "subcommand": self.subcommand,
            "config_hash": self.cfg.config_hash,
            "seed": study.seed,
            "samples": study.samples,
            "workers": study.workers,
            "started": self.started,
            "finished": _now(),
            "files": list(self.files),
            "status": status,
            "failed_stage": failed_stage,
            "error": error,
        }
        io.atomic_write_text(os.path.join(self.out, "manifest.json"),
                             json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def cmd_sample(run):
    """Field snapshots and lag covariances for each named noise on a shared kernel."""
    rc = run.cfg
    study = rc.study
    mesh = build_mesh(study)
    nodes = mesh.grid_nodes()
    stride = 1 if study.domain.d == 1 else study.mesh_cells[1] + 1
    n_axis = study.mesh_cells[0]
    lag_idx = sorted({int(round(q * n_axis)) * stride for q in (0, 0.125, 0.25, 0.5, 1.0)})
    rows = []
    for name, triplet in rc.sample_noises:
        run.stage = f"sample:{name}"
        cfg = replace(study, triplet=triplet)
        fields = sample_fields(cfg)
        first = fields[0]
        run.csv(f"field_{name}.csv", io.field_header(study.domain.d), io.field_rows(first))
        io.plot_field(first, run.path(f"field_{name}.svg"), title=name)
        values = np.array([f.values for f in fields])
        cov, se = lag_covariance(values, lag_idx)
        lags = np.linalg.norm(nodes[lag_idx] - nodes[0], axis=1)
        theory = smoothed_covariance(triplet, study.kernel, lags)
        rows += [(name, lag, c, s, t) for lag, c, s, t in zip(lags, cov, se, theory)]
    run.csv("lag_covariance.csv", ["noise", "lag", "covariance", "std_error", "theory"], rows)


def cmd_mercer(run):
    rc = run.cfg
    study = rc.study
    run.stage = "nystrom"
    basis = nystrom_eig(study.kernel, study.domain.padded(rc.mercer_padding), rc.mercer_nodes)
    run.csv("spectrum.csv", ["index", "eigenvalue", "sup_norm"], spectrum_table(basis))
    run.stage = "decay"
    rep = eig_decay_report(basis, rc.mercer_window)
    run.csv("decay.csv", ["slope", "intercept", "r_squared", "envelope", "window_lo", "window_hi",
                          "expected_slope"],
            [(rep.slope, rep.intercept, rep.r_squared, rep.envelope, *rep.window,
              -2 * study.kernel.alpha / study.kernel.d)])
    j = np.arange(1, basis.rank + 1)
    io.plot_lines(j, {"eigenvalue": basis.eigenvalues[:basis.rank]}, run.path("spectrum.svg"),
                  title=f"slope {rep.slope:.3f}", logy=True, xlabel="j")


def cmd_solve(run):
    study = run.cfg.study
    run.stage = "noise"
    mesh = build_mesh(study)
    z = sample_noise(study.triplet, noise_grid(study), (study.seed, 0),
                     drift_tolerance=study.drift_tolerance)
    run.stage = "field"
    fr = smooth_realization(z, study.kernel, mesh.vertices, domain=study.domain)
    run.stage = "solve"
    sol = solve_field(study, mesh, fr)
    coef = transform_field(fr, study.transform)
    d = study.domain.d
    run.csv("solution.csv", [f"x{i}" for i in range(d)] + ["field", "coefficient", "solution"],
            ((*mesh.vertices[i], fr.values[i], coef.values[i], sol.values[i])
             for i in range(mesh.n_vertices)))
    diag = dict(sol.diagnostics, h1_norm=h1_norm(sol))
    run.csv("diagnostics.csv", ["key", "value"], sorted(diag.items()))
    io.plot_nodal(mesh.vertices, sol.values, run.path("solution.svg"), title="solution",
                  label="u")


def cmd_moments(run):
    run.stage = "moments"
    res = mc_solution_moments(run.cfg.study)
    run.csv("moments.csv", ["order", "estimate", "ci_low", "ci_high", "bound", "note"],
            zip(res.orders, res.estimates, res.ci_low, res.ci_high, res.bounds, res.bound_notes))
    run.csv("h1_norms.csv", ["sample", "h1_norm"], enumerate(res.norms))


def cmd_tails(run):
    run.stage = "tails"
    res = tail_study(run.cfg.study)
    run.csv("tails.csv", ["threshold", "survival_total", "survival_gaussian", "survival_jump",
                          "gaussian_bound", "jump_bound"], res.rows())
    run.csv("tails_summary.csv", ["calibrated_K", "failures"], [(res.calibrated_K, res.failures)])
    series = {"empirical (jump)": res.survival_jump, "empirical (gaussian)": res.survival_gauss}
    if not all(math.isnan(b) for b in res.jump_bound):
        series["Chernov bound"] = res.jump_bound
    io.plot_lines(res.thresholds, {k: np.maximum(v, 1e-300) for k, v in series.items()},
                  run.path("tails.svg"), logy=True, xlabel="threshold")


def _rate_outputs(run, name, x, fe, ue, ffit, ufit, xlabel, extra=None):
    header = [xlabel, "field_error", "solution_error"] + ([] if extra is None else [extra[0]])
    cols = [x, fe.mean(axis=0), ue.mean(axis=0)] + ([] if extra is None else [extra[1]])
    run.csv(f"{name}.csv", header, zip(*cols))
    run.csv(f"{name}_per_seed.csv", ["sample", xlabel, "field_error", "solution_error"],
            ((s, x[i], fe[s, i], ue[s, i]) for s in range(fe.shape[0]) for i in range(len(x))))
    run.csv(f"{name}_fit.csv", ["quantity", "slope", "intercept", "r_squared", "scale"],
            [(q, f.slope, f.intercept, f.r_squared, f.scale)
             for q, f in (("field", ffit), ("solution", ufit))])
    io.plot_rate(ffit, run.path(f"{name}_field.svg"), "field", xlabel=xlabel)
    io.plot_rate(ufit, run.path(f"{name}_solution.svg"), "solution", xlabel=xlabel)


def cmd_cutoff(run):
    run.stage = "cutoff"
    res = cutoff_rate_study(run.cfg.study)
    _rate_outputs(run, "cutoff", res.distances, res.field_errors, res.solution_errors,
                  res.field_fit, res.solution_fit, "distance")


def cmd_kl(run):
    run.stage = "truncation"
    res = kl_rate_study(run.cfg.study)
    _rate_outputs(run, "truncation", res.n_terms, res.field_errors, res.solution_errors,
                  res.field_fit, res.solution_fit, "n_terms", ("kappa", res.kappa))
    run.csv("truncation_summary.csv", ["support_volume", "floor", "sensitivity_ratio",
                                       "correlation", "raw_correlation", "failures"],
            [(res.support_volume, res.floor, res.sensitivity_ratio, res.correlation,
              res.raw_correlation, res.failures)])


def invariant_checks(study):
    """Quick invariant suite; yields ``(name, passed, detail)``."""
    trip, k = study.triplet, study.kernel

    psi = levy_characteristic(trip, np.array([0.0, 0.5, 1.0, 2.0]))
    yield ("psi_at_zero", psi[0] == 0, f"{psi[0]}")
    yield ("char_modulus", bool(np.all(np.real(psi) <= 1e-12)), f"max Re psi {np.real(psi).max():.3g}")

    if not trip.nu.is_finite:
        dec = shell_partition(trip.nu, study.drift_tolerance)
        yield ("shell_residual", dec.residual <= study.drift_tolerance,
               f"{dec.residual:.3g} <= {study.drift_tolerance}")

    r = np.linspace(0.0, 3.0, 7)
    vals = k.evaluate(r)
    yield ("kernel_monotone", bool(np.all(np.diff(vals) <= 0) and np.all(vals > 0)), "")
    if k.d == 1 or k.alpha > 1:
        try:
            coords, _ = eval_grid_spectral(k, 2.0, 0.05)
            yield ("kernel_spectral", True, f"{len(coords)} nodes")
        except AliasingError as exc:
            yield ("kernel_spectral", False, str(exc))

    grid = CellGrid(Box((0.0,), (1.0,)), (8,))
    f = np.ones(8)
    emp, ref = empirical_char_functional(trip, f, np.array([0.5, 1.0]), 4000, study.seed, grid)
    err = float(np.max(np.abs(emp - ref)))
    yield ("char_functional", err <= 4 / math.sqrt(4000), f"{err:.3g}")

    m2 = mixed_moment(trip, [f, f], grid.cell_volume)
    m1 = mixed_moment(trip, [f], grid.cell_volume)
    var = m2 - m1 ** 2
    want = trip.sigma2 + jump_moment(trip.nu, 2)
    yield ("second_cumulant", abs(var - want) <= 1e-9 * max(1.0, want), f"{var:.6g} vs {want:.6g}")

    z = sample_noise(trip, noise_grid(study), (study.seed, "validate"),
                     drift_tolerance=study.drift_tolerance)
    back = snapshot_from_bytes(snapshot_bytes(z))
    yield ("snapshot_roundtrip", snapshot_bytes(back) == snapshot_bytes(z), "")

    mesh = build_mesh(study)
    fr = smooth_realization(z, k, mesh.vertices, domain=study.domain)
    ab = smooth_realization(z.absolute(), k, mesh.vertices, domain=study.domain)
    dom = domination_check(fr, ab)
    yield ("absolute_domination", dom.ok, f"excess {dom.excess:.3g}")

    box = Box((-1.0,), (1.0,)) if k.d == 1 else Box((-1.0, -1.0), (1.0, 1.0))
    basis = nystrom_eig(k, box, (48,) * k.d)
    lam = basis.eigenvalues
    gram = basis.eigenfunctions[:, :5].T @ (basis.weights[:, None] * basis.eigenfunctions[:, :5])
    yield ("nystrom_order", bool(np.all(np.diff(lam) <= 0) and lam.min() >= 0), "")
    yield ("nystrom_orthonormal", bool(np.allclose(gram, np.eye(5), atol=1e-8)), "")

    m = interval_mesh(0.0, 1.0, 32)
    sol = assemble_solve(m, 1.0, 1.0)
    l2, _ = errors_against(sol, lambda x: 0.5 * x[:, 0] * (1 - x[:, 0]),
                           lambda x: (0.5 - x[:, 0])[:, None])
    yield ("fem_manufactured", l2 < 1e-3, f"L2 error {l2:.3g}")

    study.transform.verify()
    yield ("transform_bounds", True, study.transform.kind)


def cmd_validate(run):
    rows = []
    for name, ok, detail in invariant_checks(run.cfg.study):
        run.stage = f"validate:{name}"
        log.info("%s %s %s", "PASS" if ok else "FAIL", name, detail)
        rows.append((name, bool(ok), detail))
    run.csv("validate.csv", ["check", "passed", "detail"], rows)
    failed = [r[0] for r in rows if not r[1]]
    if failed:
        run.stage = f"validate:{failed[0]}"
        raise LevyFieldError(f"invariant checks failed: {', '.join(failed)}")


COMMANDS = {
    "sample": cmd_sample,
    "mercer": cmd_mercer,
    "solve": cmd_solve,
    "moments": cmd_moments,
    "tails": cmd_tails,
    "cutoff-rate": cmd_cutoff,
    "kl-rate": cmd_kl,
    "validate": cmd_validate,
}


def build_parser():
    p = argparse.ArgumentParser(prog="levyfield",
                                description="Smoothed Levy random fields and elliptic PDE studies.")
    p.add_argument("subcommand", choices=SUBCOMMANDS, metavar="subcommand",
                   help="one of: " + ", ".join(SUBCOMMANDS))
    p.add_argument("config", nargs="?", default=None,
                   help="TOML run configuration (default: the bundled reference config)")
    p.add_argument("--seed", type=int, help="override the master seed")
    p.add_argument("--samples", type=int, help="override the Monte Carlo sample count")
    p.add_argument("--workers", type=int,
                   help="worker processes (default: config value, else available CPUs)")
    p.add_argument("--out", help=f"output directory (overrides ${OUTPUT_ENV} and the config)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def _apply_overrides(rc, args):
    data = json.loads(json.dumps(rc.canonical))
    for key in ("seed", "samples", "workers"):
        val = getattr(args, key)
        if val is not None:
            data[key] = val
    if args.workers is None and "workers" not in rc.canonical:
        data["workers"] = available_workers()
    return config_mod.from_dict(data)


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    path = args.config or config_mod.REFERENCE_CONFIG
    try:
        rc = _apply_overrides(config_mod.load(path), args)
    except ConfigError as exc:
        print(f"levyfield: config error: {exc}", file=sys.stderr)
        return 2
    out = args.out or os.environ.get(OUTPUT_ENV) or rc.output
    os.makedirs(out, exist_ok=True)
    run = Run(out, rc, args.subcommand)
    try:
        COMMANDS[args.subcommand](run)
    except (LevyFieldError, np.linalg.LinAlgError) as exc:
        print(f"levyfield: {args.subcommand} failed at stage {run.stage}: {exc}", file=sys.stderr)
        run.manifest("failed", run.stage, f"{type(exc).__name__}: {exc}")
        return 1
    run.manifest("ok")
    return 0


if __name__ == "__main__":
    sys.exit(main())
