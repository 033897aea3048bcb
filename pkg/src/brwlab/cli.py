"""Command-line entry point.

Exit codes: 0 success, 1 a hard invariant or identity check failed (or a
cap was hit), 2 configuration error, 130 interrupted (a ``.partial.json``
marker is written).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import brw, experiments as ex, rw
from .config import ConfigError, RunConfig, load_config
from .offspring import OffspringCapError, UnsupportedModel, check_boundary_conditions
from .stats import EstimateWithCI
from .streams import Campaign, Cancelled, resolve_workers

log = logging.getLogger("brwlab")

COMMANDS = ("validate-model", "rw-constants", "simulate", "tail-kill", "tail-full", "limit-law",
            "identity-suite", "decompose")

DEFAULTS = {
    "validate-model": {"replications": 10 ** 6},
    "rw-constants": {"replications": 10 ** 5, "n_grid": [100, 400, 1600], "ladder_budget": 10 ** 5},
    "simulate": {"replications": 1000, "n": 12, "beta": 1.0, "ladder_budget": 10 ** 5},
    "tail-kill": {"replications": 10 ** 5, "n": 16, "z_grid": [0.5 * k for k in range(1, 9)]},
    "tail-full": {"replications": 5000, "n": 16, "z_grid": [2.5, 3.0, 3.5, 4.0], "kill_budget": 10 ** 5,
                  "ladder_budget": 10 ** 5, "A": 1.0, "decomposition": False},
    "limit-law": {"replications": 2000, "n": 16, "compare_n": [12],
                  "x_grid": [round(-2 + 0.25 * k, 2) for k in range(17)]},
    "identity-suite": {},
    "decompose": {"replications": 4000, "n": 14, "z": 3.0, "A": 1.0, "ladder_budget": 10 ** 5},
}


class InvariantFailure(RuntimeError):
    pass


def _floats(text):
    return [float(t) for t in text.split(",") if t.strip()]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="brwlab", description="Branching random walk minimum: simulation and checks")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", default="binary_gaussian", help="YAML file or preset name")
        s.add_argument("--seed", type=int)
        s.add_argument("--replications", type=int)
        s.add_argument("--workers", type=int)
        s.add_argument("--output-dir")
        s.add_argument("--n", type=int)
        s.add_argument("--z", type=float)
        s.add_argument("--A", type=float)
        s.add_argument("--z-grid", type=_floats)
        s.add_argument("--x-grid", type=_floats)
    return p


def _settings(cmd: str, cfg: RunConfig, args) -> dict:
    st = dict(DEFAULTS[cmd])
    st.update(cfg.experiment)
    for key, attr in (("n", "n"), ("z", "z"), ("A", "A"), ("z_grid", "z_grid"), ("x_grid", "x_grid")):
        v = getattr(args, attr)
        if v is not None:
            st[key] = v
    reps = args.replications or cfg.replications
    if reps is not None:
        st["replications"] = reps
    if "n" in st and st["n"] < 1:
        raise ConfigError("n must be >= 1", cfg.source)
    return st


def _est_row(axis, coord, n, quantity, est, model_hash, seed):
    return ex._csv_row(axis, coord, n, quantity, est, model_hash, seed)


def _run(cmd: str, cfg: RunConfig, st: dict, camp: Campaign) -> tuple[list, dict, bool]:
    model = cfg.model()
    seed = camp.record()
    mh = model.model_hash
    if cmd == "validate-model":
        rep = check_boundary_conditions(model, st["replications"], camp)
        rows = [_est_row("check", k, "", k, e, mh, seed) for k, e in rep.estimates.items()]
        return rows, rep.to_dict(), rep.passed
    if cmd == "rw-constants":
        walk = rw.derive_walk(model)
        rep = rw.estimate_constants(walk, [int(v) for v in st["n_grid"]], st["replications"], camp,
                                    st["ladder_budget"])
        rows = []
        for n, pp, pm in zip(rep.n_grid, rep.p_plus, rep.p_minus):
            rows.append(_est_row("n", n, n, "P_min_plus_nonneg", pp, mh, seed))
            rows.append(_est_row("n", n, n, "P_min_minus_nonneg", pm, mh, seed))
        for q in ("C_plus_hat", "C_minus_hat", "c0_hat", "mean_H"):
            rows.append(_est_row("constant", q, "", q, getattr(rep, q), mh, seed))
        return rows, rep.to_dict(), True
    if cmd == "simulate":
        walk = rw.derive_walk(model)
        renewal = ex.renewal_for(walk, st["ladder_budget"], camp.child("renewal"))
        n = st["n"]
        stats = brw.run_trees(model, n, st["replications"], camp.child("trees"), beta=st["beta"], renewal=renewal,
                              policy=brw.PrunePolicy("barrier"), cap=cfg.memory_cap)
        q = {"W_n": stats.W_n, "D_n": stats.D_n, "D_n_beta": stats.D_n_beta, "survived": stats.survived,
             "M_n_minus_a_n0": stats.M_n[np.isfinite(stats.M_n)] - brw.a_n(n, 0.0),
             "pruned_mass_bound": stats.pruned_mass_bound}
        rows, est = [], {}
        for k, v in q.items():
            if v.size:
                est[k] = ex.mean_estimate(v, "direct", seed)
                rows.append(_est_row("n", n, n, f"mean_{k}", est[k], mh, seed))
        return rows, {"n": n, "beta": st["beta"], "estimates": {k: e.to_dict() for k, e in est.items()}}, True
    if cmd == "tail-kill":
        rep = ex.exp_killed_tail(model, st["n"], st["z_grid"], st["replications"], camp,
                                 tuple(st["plateau"]) if "plateau" in st else None)
        return rep.csv_rows(), rep.to_dict(), True
    if cmd == "tail-full":
        walk = rw.derive_walk(model)
        renewal = ex.renewal_for(walk, st["ladder_budget"], camp.child("renewal"))
        if "C1" in st:
            C1 = EstimateWithCI(st["C1"], 0.0, 1, None, "config")
        else:
            kt = ex.exp_killed_tail(model, st["n"], DEFAULTS["tail-kill"]["z_grid"], st["kill_budget"],
                                    camp.child("tail-kill"))
            C1 = ex.c1_hat(kt)
        c0 = EstimateWithCI(st["c0"], 0.0, 1, None, "config") if "c0" in st else renewal.c0_hat
        rep = ex.exp_full_tail(model, st["n"], st["z_grid"], st["replications"], camp.child("trees"), C1, c0,
                               st["A"], bool(st["decomposition"]), renewal)
        return rep.csv_rows(), rep.to_dict(), True
    if cmd == "limit-law":
        reps = ex.exp_limit_law(model, st["n"], st["x_grid"], st["replications"], camp,
                                [int(v) for v in st.get("compare_n", [])])
        rows = [r for g in sorted(reps) for r in reps[g].csv_rows()]
        sups = {g: reps[g].sup_distance for g in sorted(reps)}
        return rows, {"reports": {str(g): reps[g].to_dict() for g in sorted(reps)}, "sup_distance": sups}, True
    if cmd == "identity-suite":
        rep = ex.exp_identity_suite(model, camp)
        return rep.csv_rows(), rep.to_dict(), rep.passed
    if cmd == "decompose":
        walk = rw.derive_walk(model)
        renewal = ex.renewal_for(walk, st["ladder_budget"], camp.child("renewal"))
        rep = ex.exp_decomposition(model, st["n"], st["z"], st["A"], st["replications"], camp.child("trees"),
                                   renewal)
        rows = [_est_row("z", rep.z, rep.n, q, getattr(rep, q), mh, seed)
                for q in ("ratio", "sumB_cut", "sumB", "sumB_cut_T", "P_anyB", "P_M_below", "R_hat")]
        return rows, rep.to_dict(), True
    raise ConfigError(f"unknown command {cmd}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cmd = args.command
    try:
        cfg = load_config(args.config)
        st = _settings(cmd, cfg, args)
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    seed = args.seed if args.seed is not None else cfg.seed
    workers = resolve_workers(args.workers if args.workers is not None else cfg.workers)
    out_dir = args.output_dir or cfg.output_dir
    camp = Campaign(seed, cmd, workers)
    stem = os.path.join(out_dir, cmd)
    header = {"command": cmd, "model": {"name": cfg.model_name, "parameters": cfg.model_params},
              "settings": st, "seed": seed}
    try:
        rows, payload, ok = _run(cmd, cfg, st, camp)
    except (Cancelled, KeyboardInterrupt) as e:
        info = {"status": "partial", **header}
        if isinstance(e, Cancelled):
            info.update(blocks_done=e.blocks_done, blocks_total=e.blocks_total)
        ex.write_json(stem + ".partial.json", info)
        print("interrupted; partial marker written", file=sys.stderr)
        return 130
    except (brw.PopulationOverflow, OffspringCapError, rw.StepCapExceeded) as e:
        ex.write_json(stem + ".json", {"status": "capped", "error": str(e), **header})
        print(f"cap exhausted: {e}", file=sys.stderr)
        return 1
    except (UnsupportedModel, ValueError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except (AssertionError, InvariantFailure) as e:
        ex.write_json(stem + ".json", {"status": "invariant_failure", "error": str(e), **header})
        print(f"invariant failure: {e}", file=sys.stderr)
        return 1
    ex.write_csv(stem + ".csv", rows)
    ex.write_json(stem + ".json", {"status": "ok" if ok else "failed", **header, "result": payload})
    print(f"{cmd}: {'pass' if ok else 'FAIL'} -> {stem}.csv, {stem}.json")
    return 0 if ok else 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
