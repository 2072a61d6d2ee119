"""Command-line experiment runner.

Exit status: 0 on success, 2 when a checked inequality is flagged as
violated, 1 on any error (invalid config, capacity cap, bad dump).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from ._accel import backend
from .diagram import render_svg
from .estimators import (MultiscaleParams, branching_bound, census_check, check_build_chain, check_fkg,
                         check_recursion, estimate_gap_prob, estimate_lambda_c, estimate_Pr, estimate_survival)
from .graphical import (CapacityError, DumpError, Lattice, StartPolicy, build_harris, dump_system,
                        expected_events, load_system, max_events, system_from_events)
from .reachability import (Censored, SeedSet, SpaceTimeRect, has_spatial_crossing, has_temporal_crossing,
                           propagate)
from .renewal import law_from_dict

log = logging.getLogger("rcpsim")

EXIT_OK, EXIT_ERROR, EXIT_FLAGGED = 0, 1, 2


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Outputs:
    """Writes every artifact of one run with the provenance columns attached."""

    def __init__(self, out_dir, op, chash, seed):
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.op, self.chash, self.seed = op, chash, seed
        self.files = []

    def csv(self, name, header, rows):
        path = self.dir / name
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(list(header) + ["config_hash", "master_seed"])
            for row in rows:
                w.writerow([_fmt(v) for v in row] + [self.chash, self.seed])
        self.files.append(path.name)
        return path

    def text(self, name, text):
        path = self.dir / name
        path.write_text(text)
        self.files.append(path.name)
        return path

    def summary(self, results, flagged=False):
        doc = {"op": self.op, "config_hash": self.chash, "master_seed": self.seed, "flagged": bool(flagged),
               "files": sorted(self.files), "results": results}
        (self.dir / "summary.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n")
        return doc


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


# ---- config helpers -----------------------------------------------------------

def _lattice(cfg) -> Lattice:
    d = cfg.get("d", 1)
    box = cfg.get("box", 10)
    if isinstance(box, int):
        return Lattice((-box,) * d, (box,) * d)
    if isinstance(box, list):
        return Lattice((box[0],) * d, (box[1],) * d)
    return Lattice(tuple(box["lower"]), tuple(box["upper"]))


def _horizon(cfg):
    h = cfg.get("horizon", 100.0)
    return (0.0, float(h)) if not isinstance(h, list) else (float(h[0]), float(h[1]))


def _lams(cfg):
    lam = cfg.get("lambda", 1.0)
    return [float(v) for v in (lam if isinstance(lam, list) else [lam])]


def _params(cfg, r=None) -> MultiscaleParams:
    s = cfg.get("scales", {})
    return MultiscaleParams(beta=s.get("beta", 0.5), r=s.get("r", 6) if r is None else r, k=s.get("k", 3),
                            c=s.get("c", 2 / 3), eps=s.get("eps", 2.0))


def _policies(cfg):
    if "start_policies" not in cfg:
        return None
    return [StartPolicy(p["kind"], float(p.get("width", 0.0)), tuple(p.get("offsets", ()))) for p in cfg["start_policies"]]


def _origin(cfg, lattice):
    o = cfg.get("origin", 0)
    if isinstance(o, list):
        return tuple(o)
    return o if lattice.d == 1 else (o,) * lattice.d


def _system(cfg, seed):
    law = law_from_dict(cfg["law"])
    lattice = _lattice(cfg)
    horizon = _horizon(cfg)
    lmax = float(cfg.get("lambda_max", max(_lams(cfg))))
    if "system" in cfg:
        marks = {int(k): v for k, v in cfg["system"]["marks"].items()}
        arrows = [(int(a[0]), int(a[1]), *a[2:]) for a in cfg["system"]["arrows"]]
        return system_from_events(lattice, horizon, marks, arrows, lmax, law)
    return build_harris(lattice, horizon, law, lmax, seed)


def _seeds(cfg, system):
    if "seeds" not in cfg:
        return SeedSet.point(_origin(cfg, system.lattice), system.t_lo)
    out = SeedSet(())
    for s in cfg["seeds"]:
        site = int(s[0])
        out = out | (SeedSet.point(site, s[1]) if len(s) == 2 else SeedSet.interval(site, s[1], s[2]))
    return out


def _detection_summary(system, lam, seeds):
    """Deterministic digest of the infected set and box-wide crossings at one rate."""
    iset = propagate(system, lam, seeds)
    canon = iset.canonical()
    digest = hashlib.sha256(repr(sorted(canon.items())).encode()).hexdigest()
    whole = SpaceTimeRect(system.lattice.lower, system.lattice.upper, system.t_lo, system.t_hi)
    surv = iset.survival()
    out = {"lambda": lam, "n_intervals": int(len(iset)), "intervals_sha256": digest,
           "survival": "censored" if isinstance(surv, Censored) else surv,
           "temporal_crossing": bool(has_temporal_crossing(system, lam, whole))}
    if system.lattice.d == 1:
        out["spatial_crossing"] = bool(has_spatial_crossing(system, lam, whole))
    return iset, out


def _interval_rows(iset):
    lat = iset.system.lattice
    for i in np.lexsort((iset.start, iset.site)):
        yield (lat.coord(int(iset.site[i])), iset.start[i], iset.end[i], bool(iset.reaches_cap[i]),
               int(iset.generation[i]), int(iset.parent[i]), int(iset.emitted[i]))


_INTERVAL_HEADER = ("site", "start", "end", "reaches_cap", "generation", "parent", "emitted")


def _est_row(e):
    return (e.mean, e.n, e.ci_lo, e.ci_hi)


_EST_HEADER = ("mean", "n", "ci_lo", "ci_hi")


# ---- operations ---------------------------------------------------------------

def op_simulate(cfg, seed, threads, out, args):
    system = _system(cfg, seed)
    lam = _lams(cfg)[0]
    iset, summary = _detection_summary(system, lam, _seeds(cfg, system))
    out.csv("intervals.csv", _INTERVAL_HEADER, _interval_rows(iset))
    if args.dump:
        dump_system(system, args.dump, {"seeds": cfg.get("seeds"), "origin": cfg.get("origin", 0), **summary})
    return summary, False


def op_replay(cfg, seed, threads, out, args):
    if not args.dump:
        raise ValueError("replay needs --dump <path>")
    system, stored = load_system(args.dump)
    lam = args.lam if args.lam is not None else float(stored["lambda"])
    rcfg = {"seeds": stored.get("seeds"), "origin": stored.get("origin", 0)}
    rcfg = {k: v for k, v in rcfg.items() if v is not None}
    iset, summary = _detection_summary(system, lam, _seeds(rcfg, system))
    out.csv("intervals.csv", _INTERVAL_HEADER, _interval_rows(iset))
    same_rate = lam == float(stored["lambda"])
    keys = [k for k in summary if k in stored]
    identical = all(summary[k] == stored[k] for k in keys)
    res = {"stored": {k: stored[k] for k in keys}, "replayed": summary, "same_rate": same_rate,
           "identical": identical}
    return res, same_rate and not identical


def op_survival(cfg, seed, threads, out, args):
    law = law_from_dict(cfg["law"])
    lams = _lams(cfg)
    ests = estimate_survival(law, lams, cfg.get("d", 1), _lattice(cfg), _horizon(cfg)[1], cfg.get("n", 100),
                             seed, cfg.get("lambda_max"), threads)
    out.csv("survival.csv", ("lambda",) + _EST_HEADER, [(lam, *_est_row(e)) for lam, e in zip(lams, ests)])
    return {"estimates": [e.to_dict() for e in ests]}, False


def op_pr_scan(cfg, seed, threads, out, args):
    law = law_from_dict(cfg["law"])
    lam = _lams(cfg)[0]
    s = cfg.get("scales", {})
    rows, res = [], []
    for r in s.get("r_values", [s.get("r", 6)]):
        pr = estimate_Pr(_params(cfg, r), law, lam, cfg.get("n", 100), _policies(cfg), seed,
                         cfg.get("lambda_max"), threads)
        for label, e in pr.per_policy.items():
            rows.append((r, label, *_est_row(e), label == pr.best_policy))
        res.append(pr.to_dict())
    out.csv("pr_scan.csv", ("r", "policy") + _EST_HEADER + ("is_best",), rows)
    return {"lambda": lam, "scan": res}, False


def op_lambda_c(cfg, seed, threads, out, args):
    law = law_from_dict(cfg["law"])
    br = estimate_lambda_c(law, cfg.get("d", 1), _lattice(cfg), _horizon(cfg)[1], cfg.get("n", 100),
                           cfg.get("theta_lo", 0.01), cfg.get("theta_hi", 0.2), cfg.get("probes"), seed, threads)
    out.csv("lambda_c.csv", ("probe",) + _EST_HEADER, [(p, *_est_row(e)) for p, e in zip(br.probes, br.estimates)])
    return br.to_dict(), False


def op_fkg(cfg, seed, threads, out, args):
    if "events" not in cfg:
        raise cfgmod.ConfigError("config field 'events': missing required field for fkg-check")
    law = law_from_dict(cfg["law"])
    lam = _lams(cfg)[0]
    rep = check_fkg(law, lam, cfg["events"], cfg.get("n", 1000), seed, threads)
    out.csv("fkg.csv", ("p_a", "p_b", "p_ab", "diff", "ci_lo", "ci_hi", "n", "violation"),
            [(rep.p_a.mean, rep.p_b.mean, rep.p_ab.mean, rep.diff, rep.ci_lo, rep.ci_hi, rep.p_a.n, rep.violation)])
    return rep.to_dict(), rep.violation


def op_build_chain(cfg, seed, threads, out, args):
    law = law_from_dict(cfg["law"])
    lam = _lams(cfg)[0]
    s = cfg.get("scales", {})
    rep = check_build_chain(law, lam, s.get("m", 2), s.get("c", 2 / 3), s.get("eps", 2.0), s.get("L", 4),
                            s.get("T", 32.0), cfg.get("n", 1000), seed, threads)
    rows = [(f"A{j}", *_est_row(e)) for j, e in enumerate(rep.p_each)]
    rows.append(("all", *_est_row(rep.p_all)))
    if rep.p_temporal is not None:
        rows.append(("temporal", *_est_row(rep.p_temporal)))
    out.csv("build_chain.csv", ("event",) + _EST_HEADER, rows)
    return rep.to_dict(), rep.violation


def op_gap_scan(cfg, seed, threads, out, args):
    law = law_from_dict(cfg["law"])
    s = cfg.get("scales", {})
    scan = estimate_gap_prob(_params(cfg), law, s.get("n_values", [8, 10, 12]), cfg.get("n", 1000), seed, threads)
    out.csv("gap_scan.csv", ("n_scale",) + _EST_HEADER, [(nv, *_est_row(e)) for nv, e in zip(scan.n_values, scan.estimates)])
    return scan.to_dict(), False


def op_recursion(cfg, seed, threads, out, args):
    law = law_from_dict(cfg["law"])
    s = cfg.get("scales", {})
    rep = check_recursion(_params(cfg), law, _lams(cfg)[0], s.get("n", 10), cfg.get("n", 1000), seed,
                          _policies(cfg), threads)
    rows = [("P_n", rep.n, *_est_row(rep.P_n.best)), ("P_n-k", rep.n - rep.k, *_est_row(rep.P_nk.best)),
            ("P_n-k-1", rep.n - rep.k - 1, *_est_row(rep.P_nk1.best)), ("gap", rep.n, *_est_row(rep.gap))]
    rows.append(("C2", rep.n, rep.C2, "", rep.C2_lo, rep.C2_hi))
    out.csv("recursion.csv", ("quantity", "scale") + _EST_HEADER, rows)
    return rep.to_dict(), False


def op_census(cfg, seed, threads, out, args):
    law = law_from_dict(cfg["law"])
    d = cfg.get("d", 1)
    if "C" in cfg:
        C = float(cfg["C"])
        bb = None
    else:
        bb = branching_bound(law, d, cfg.get("t_grid", [0.5, 1, 2, 4, 8, 16]), 10 * cfg.get("n", 1000), seed)
        C = bb.C.mean
    chk = census_check(law, _lams(cfg)[0], d, _lattice(cfg), _horizon(cfg)[1], cfg.get("n", 1000), seed, C,
                       threads=threads)
    rows = [(g, chk.mean_intervals[g], chk.ratio[g], chk.ratio_se[g], chk.arrow_ratio[g], chk.bound, chk.holds[g])
            for g in range(len(chk.ratio))]
    out.csv("census.csv", ("generation", "mean_intervals", "ratio", "ratio_se", "arrow_ratio", "bound", "holds"), rows)
    res = chk.to_dict()
    if bb is not None:
        res["branching_bound"] = bb.to_dict()
    return res, not all(chk.holds)


def op_diagram(cfg, seed, threads, out, args):
    system = _system(cfg, seed)
    lam = _lams(cfg)[0]
    iset = propagate(system, lam, _seeds(cfg, system))
    svg = render_svg(system, lam, iset)
    head, rest = svg.split(">", 1)
    svg = f"{head}><metadata>config_hash={out.chash} master_seed={out.seed}</metadata>{rest}"
    out.text("diagram.svg", svg)
    return {"lambda": lam, "n_intervals": len(iset)}, False


OPERATIONS = {
    "simulate": op_simulate, "survival": op_survival, "pr-scan": op_pr_scan, "lambda-c": op_lambda_c,
    "fkg-check": op_fkg, "build-chain": op_build_chain, "gap-scan": op_gap_scan, "recursion": op_recursion,
    "census": op_census, "diagram": op_diagram, "replay": op_replay,
}
assert set(OPERATIONS) == set(cfgmod.OPS)


def event_budget(cfg) -> dict:
    """Expected event count of one replicate system, without sampling."""
    law = law_from_dict(cfg["law"])
    lattice = _lattice(cfg)
    horizon = _horizon(cfg)
    lmax = float(cfg.get("lambda_max", max(_lams(cfg))))
    per = expected_events(lattice, horizon, law, lmax)
    n = cfg.get("n", 1)
    return {"sites": lattice.n_sites, "per_replicate": per, "replicates": n, "total": per * n, "cap": max_events()}


def build_parser():
    p = argparse.ArgumentParser(prog="rcpsim", description="Renewal contact process experiments.")
    p.add_argument("--config", help="experiment config (JSON)")
    p.add_argument("--op", choices=cfgmod.OPS, help="operation; overrides the config's 'op'")
    p.add_argument("--seed", type=int, help="master seed (u64); overrides the config's 'seed'")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
    p.add_argument("--out", help="output directory; overrides the config's 'out'")
    p.add_argument("--dry-run", action="store_true", help="validate and print the event budget only")
    p.add_argument("--dump", help="system dump path (written by simulate, read by replay)")
    p.add_argument("--lam", type=float, help="rate for replay (default: the recorded one)")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config is None:
            if args.op != "replay":
                raise cfgmod.ConfigError("--config is required")
            cfg = {"law": {"kind": "exponential"}}
        else:
            cfg = cfgmod.load(args.config)
        if args.op:
            cfg["op"] = args.op
        if args.seed is not None:
            cfg["seed"] = args.seed
        cfgmod.validate(cfg)
        op = cfg.get("op")
        if op is None:
            raise cfgmod.ConfigError("config field 'op': missing (give it in the config or with --op)")
        seed = int(cfg.get("seed", 0))
        chash = cfgmod.config_hash(cfg)
        if args.dry_run:
            budget = event_budget(cfg)
            print(json.dumps({"op": op, "config_hash": chash, "master_seed": seed, "event_budget": budget},
                             sort_keys=True))
            return EXIT_OK
        out = Outputs(args.out or cfg.get("out", "rcpsim_out"), op, chash, seed)
        log.info("running %s (config %s, seed %d, %s kernels)", op, chash, seed, backend())
        results, flagged = OPERATIONS[op](cfg, seed, max(1, args.threads), out, args)
        out.summary(results, flagged)
        print(f"{op}: wrote {', '.join(out.files + ['summary.json'])} to {out.dir}"
              + (" (inequality flagged)" if flagged else ""))
        return EXIT_FLAGGED if flagged else EXIT_OK
    except (cfgmod.ConfigError, CapacityError, DumpError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


def main():
    sys.exit(run())


__all__ = ["run", "main", "build_parser", "event_budget", "OPERATIONS"]
