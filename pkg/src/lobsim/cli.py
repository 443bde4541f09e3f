"""Command-line interface: ``lobsim <command> [options]``.

Exit codes: 0 success, 2 invalid input or configuration, 3 runtime failure
(including failed validation checks).

CSV schemas
-----------
trajectory  ``k, tau, bid, ask, spread, imbalance``
densities   ``t, x, v_b, v_a, u_b, u_a``; ``x`` is the relative distance for
            ``v_b``, ``v_a`` and the absolute price for the visible books
            ``u_b(x) = v_b(B - x)`` (``x <= B``) and ``u_a(x) = v_a(x - A)`` (``x >= A``)
jump log    ``t, side, y, size``
reports     ``metric, n, t, value``
validation  ``id, check, value, target, ok``
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .errors import DegenerateStatisticError, LobsimError, ValidationError

log = logging.getLogger("lobsim")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) for v in r])


def _imbalance(vb, va):
    tot = vb + va
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(tot > 0, vb / tot, np.nan)


def density_rows(t: float, s, x_lo: float, x_hi: float):
    """Rows of the density CSV at one time, on the midpoints of the state's grid."""
    d = s.vb.spacing
    xs = (np.arange(int(np.floor(x_lo / d)), int(np.ceil(x_hi / d))) + 0.5) * d
    for x in xs:
        ub = s.vb.eval(s.bid - x) if x <= s.bid else 0.0
        ua = s.va.eval(x - s.ask) if x >= s.ask else 0.0
        yield (t, x, s.vb.eval(x), s.va.eval(x), ub, ua)


# ----------------------------------------------------------------------
def _micro_path(model, rng, cfg, times):
    every = cfg["output"]["record_every"]
    tr = model.simulate_fast(seed=rng, probe_times=times, keep_events=False)
    K = len(tr.bid) - 1
    ks = np.arange(0, K + 1, every)
    if ks[-1] != K:
        ks = np.append(ks, K)
    im = _imbalance(tr.series["volb"][ks], tr.series["vola"][ks])
    traj = [(int(k), tr.tau[k], tr.bid[k], tr.ask[k], tr.ask[k] - tr.bid[k], im[i]) for i, k in enumerate(ks)]
    return traj, {float(t): s for t, (_, s) in tr.flags["probes"].items()}


def _density_extent(sp):
    return min(-sp.x_extent, sp.price_lo), max(sp.x_extent, sp.price_hi)


def cmd_simulate_micro(args, cfg) -> int:
    from .harness import path_rng

    out = Path(cfg["output"]["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    model = cfgmod.build_model(cfg)
    times = [t for t in cfg["output"]["density_times"] if t <= model.params.T]
    lo, hi = _density_extent(model.sp)
    for i in range(args.paths):
        traj, states = _micro_path(model, path_rng(cfg["harness"]["seed"], i), cfg, times)
        _write_csv(out / f"micro_path_{i}.csv", ["k", "tau", "bid", "ask", "spread", "imbalance"], traj)
        rows = (r for t in times for r in density_rows(t, states[float(t)], lo, hi))
        _write_csv(out / f"micro_densities_{i}.csv", ["t", "x", "v_b", "v_a", "u_b", "u_a"], rows)
    print(f"wrote {args.paths} micro path(s) to {out}")
    return EXIT_OK


def cmd_simulate_limit(args, cfg) -> int:
    from .harness import path_rng
    from .limit_sim import time_change

    out = Path(cfg["output"]["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    lim = cfgmod.build_limit(cfg)
    times = [t for t in cfg["output"]["density_times"] if t <= lim.T]
    lo, hi = _density_extent(lim.sp)
    every = cfg["output"]["record_every"]
    for i in range(args.paths):
        path = lim.simulate(path_rng(cfg["harness"]["seed"], i), probe_times=times)
        ms = np.arange(0, path.n_steps + 1, every)
        im = _imbalance(path.flags["volb"][ms], path.flags["vola"][ms])
        rows = [(int(m), path.tau_eta[m], path.B[m], path.A[m], path.A[m] - path.B[m], im[j]) for j, m in enumerate(ms)]
        _write_csv(out / f"limit_path_{i}.csv", ["k", "tau", "bid", "ask", "spread", "imbalance"], rows)
        tc = time_change(path)
        rows = (r for t in times for r in density_rows(t, tc.S(t), lo, hi))
        _write_csv(out / f"limit_densities_{i}.csv", ["t", "x", "v_b", "v_a", "u_b", "u_a"], rows)
        _write_csv(out / f"limit_jumps_{i}.csv", ["t", "side", "y", "size"], path.jump_log)
    print(f"wrote {args.paths} limit path(s) to {out}")
    return EXIT_OK


def cmd_converge(args, cfg) -> int:
    from .harness import convergence_report

    out = Path(cfg["output"]["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    h = cfg["harness"]
    T = max(h["probes"])
    rep = convergence_report(
        lambda n: cfgmod.build_model(cfg, n=n, T=T),
        cfgmod.build_limit(cfg, T=T),
        h["ns"],
        h["probes"],
        h["paths"],
        h["seed"],
        diagnostics=h["diagnostics"],
        threads=h["threads"],
        n_boot=h["n_boot"],
    )
    (out / "report.csv").write_text(rep.to_csv())
    (out / "report.json").write_text(json.dumps(rep.to_json(), indent=2) + "\n")
    sys.stdout.write(rep.to_csv())
    return EXIT_OK


def cmd_jumptest(args, cfg) -> int:
    from .diagnostics import bns_statistic, read_price_csv

    _, x, delta = read_price_csv(args.csv)
    if args.delta is not None:
        delta = args.delta
    r = bns_statistic(x, delta)
    print(json.dumps({"rv": r.rv, "bpv": r.bpv, "qpv": r.qpv, "vartheta": r.vartheta, "delta": r.delta,
                      "z": r.z, "reject_5pct": bool(r.rejects(0.05))}))  # fmt: skip
    return EXIT_OK


def cmd_validate(args, cfg) -> int:
    from .harness import path_rng, validate_assumptions
    from .jump_kernels import kernel_from_config

    out = Path(cfg["output"]["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    model = cfgmod.build_model(cfg)
    times = [t for t in cfg["output"]["density_times"] if t <= model.params.T]
    probe_states = [model.initial_state()]
    for i in range(args.paths):
        tr = model.simulate_fast(seed=path_rng(cfg["harness"]["seed"], i), probe_times=times, keep_events=False)
        probe_states += [s for _, s in tr.flags["probes"].values()]
    kernels = [kernel_from_config(b) for b in cfg["kernels"]]
    rows = validate_assumptions(model, model.params, probe_states, kernels=kernels)
    _write_csv(out / "validation.csv", ["id", "check", "value", "target", "ok"],
               ((r.id, r.check, r.value, r.target, r.ok) for r in rows))  # fmt: skip
    for r in rows:
        print(f"{'ok  ' if r.ok else 'FAIL'} {r.id}: {r.check} = {r.value:.6g} (target {r.target})")
    return EXIT_OK if all(r.ok for r in rows) else EXIT_RUNTIME


def cmd_figures(args, cfg) -> int:
    from .harness import path_rng

    run = args.run
    doc = json.loads(cfgmod.dumps(cfg))
    if cfg["model"]["run"] != run:
        # switch scenario: keep scaling/output settings, reset model keys to the run defaults
        doc["model"] = {"run": run}
    cfg = cfgmod.resolve(doc)
    out = Path(cfg["output"]["out_dir"])
    out.mkdir(parents=True, exist_ok=True)
    model = cfgmod.build_model(cfg)
    times = [t for t in cfg["output"]["density_times"] if t <= model.params.T]
    traj, states = _micro_path(model, path_rng(cfg["harness"]["seed"], 0), cfg, times)
    _write_csv(out / f"run{run}_prices.csv", ["k", "tau", "bid", "ask", "spread", "imbalance"], traj)
    lo, hi = _density_extent(model.sp)
    rows = (r for t in times for r in density_rows(t, states[float(t)], lo, hi))
    _write_csv(out / f"run{run}_densities.csv", ["t", "x", "v_b", "v_a", "u_b", "u_a"], rows)
    (out / f"run{run}_config.json").write_text(cfgmod.dumps(cfg))
    print(f"wrote run {run} scenario to {out}")
    return EXIT_OK


COMMANDS = {
    "simulate-micro": cmd_simulate_micro,
    "simulate-limit": cmd_simulate_limit,
    "converge": cmd_converge,
    "jumptest": cmd_jumptest,
    "validate": cmd_validate,
    "figures": cmd_figures,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON configuration file")
    common.add_argument("--seed", type=int, help="master seed (harness.seed)")
    common.add_argument("--paths", type=int, help="number of paths (harness.paths)")
    common.add_argument("--n", type=int, help="scaling index (scaling.n)")
    common.add_argument("--out-dir", help="output directory (output.out_dir)")
    common.add_argument("--threads", type=int, help="worker threads; falls back to LOBSIM_THREADS")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="lobsim", description="Order-book scaling-limit simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "jumptest":
            p.add_argument("csv", help="CSV file with columns time,price")
            p.add_argument("--delta", type=float, help="sampling interval (default: inferred)")
        if name == "figures":
            p.add_argument("--run", type=int, choices=(1, 2), default=1)
    return ap


def _overrides(args) -> dict:
    ov = {}
    if args.seed is not None:
        ov["harness.seed"] = args.seed
    if args.paths is not None:
        ov["harness.paths"] = args.paths
    if args.n is not None:
        ov["scaling.n"] = args.n
    if args.out_dir is not None:
        ov["output.out_dir"] = args.out_dir
    threads = args.threads
    if threads is None and os.environ.get("LOBSIM_THREADS"):
        try:
            threads = int(os.environ["LOBSIM_THREADS"])
        except ValueError:
            raise ValidationError("LOBSIM_THREADS must be an integer") from None
    if threads is not None:
        ov["harness.threads"] = threads
    return ov


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = cfgmod.load(args.config, _overrides(args))
        if args.paths is None:
            args.paths = cfg["harness"]["paths"] if args.command == "converge" else 1
        if args.paths < 1:
            raise ValidationError("--paths must be >= 1")
        if args.command != "jumptest":
            out = Path(cfg["output"]["out_dir"])
            out.mkdir(parents=True, exist_ok=True)
            (out / "config.resolved.json").write_text(cfgmod.dumps(cfg))
        return COMMANDS[args.command](args, cfg)
    except (ValidationError, DegenerateStatisticError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except LobsimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
