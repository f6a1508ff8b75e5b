"""Command-line runner.

    hilbert-pcr <simulate|certify|laplace|sweep|audit|accept> [--config PATH] [--out DIR]
                [--seed U64] [--threads K]

Exit codes: 0 success, 2 configuration error, 3 an assumption audit blocks
the requested certificate, 4 acceptance failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import datetime as _dt
import json
import math
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import __version__
from .certificates import (
    CertificateError,
    WeakRateInputs,
    function_from_dict,
    strong_inputs_from_model,
    strong_radius,
    validate_certificate,
    weak_fixed_point,
)
from .config import ConfigError, ExperimentConfig, load_config
from .langevin import SimConfig, compare_to_gaussian, linear_gaussian_drift, simulate
from .laplace import (
    BoundInputs,
    bvm_audit,
    feldman_hajek_check,
    h_bound,
    k_bound,
    kl_commuting_gaussians,
    laplace_pair,
)
from .model import AssumptionError, audit_assumptions, exact_posterior, model_constants
from .spectral import op_norm, standard_normals, STREAM_TAIL, trace
from .tables import write_csv

EXIT_OK, EXIT_CONFIG, EXIT_ASSUMPTION, EXIT_ACCEPT = 0, 2, 3, 4
U64_MAX = 2**64 - 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: configuration error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hilbert-pcr", description="Posterior contraction experiments on a spectral truncation.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_ in [
        ("simulate", "run the preconditioned Langevin SPDE and compare with the exact posterior"),
        ("certify", "compute (and validate) contraction-radius certificates"),
        ("laplace", "Laplace approximation: KL, equivalence verdict and H/K bounds"),
        ("sweep", "certified and empirical radii over a grid of n or delta"),
        ("audit", "sampled audit of the model assumptions"),
        ("accept", "run the acceptance suite"),
    ]:
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", type=Path, default=None, help="TOML experiment file")
        s.add_argument("--out", type=Path, default=None, help="output directory")
        s.add_argument("--seed", type=int, default=None, help="master seed (unsigned 64-bit)")
        s.add_argument("--threads", type=int, default=1, help="worker threads for replica blocks")
    return p


# ---------------------------------------------------------------------------


def _flat_rows(d: dict, prefix: str = ""):
    for k in sorted(d):
        v = d[k]
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flat_rows(v, key + ".")
        else:
            yield {"key": key, "value": v if not isinstance(v, (tuple, list)) else json.dumps(v)}


def _write_kv(path: Path, d: dict) -> None:
    write_csv(path, ["key", "value"], _flat_rows(d))


def _sim_config(cfg: ExperimentConfig, m, threads: int) -> SimConfig:
    s = cfg.sim
    overrides = {"n_replicas": s.n_replicas, "scheme": s.scheme, "seed": cfg.seed, "guard": s.guard,
                 "threads": threads, "p_values": s.p_values, "record_times": s.record_times}
    if s.dt is not None:
        overrides["dt"] = s.dt
    if s.t_end is not None:
        overrides["t_end"] = s.t_end
    return SimConfig.for_model(m, **overrides)


def cmd_simulate(cfg: ExperimentConfig, out: Path, threads: int) -> List[str]:
    m = cfg.model.build()
    audit = audit_assumptions(m, 64, 1.0, cfg.seed)
    for cond in ("A.1", "A.2", "B"):
        if audit[cond].status == "fail":
            raise AssumptionError(cond, "audit failed; the posterior need not be invariant")
    sim = _sim_config(cfg, m, threads)
    tr = simulate(linear_gaussian_drift(m), m.q, m.n, m.theta_star.coeffs, sim, center=m.theta_star)
    rep = compare_to_gaussian(tr.per_mode_stats, exact_posterior(m), tr.times[-1])
    tr.to_csv(out / "moments.csv")
    rep.to_csv(out / "per_mode.csv")
    write_csv(out / "summary.csv", ["key", "value"], [
        {"key": "scheme", "value": sim.scheme}, {"key": "dt", "value": sim.dt},
        {"key": "t_end", "value": sim.t_end}, {"key": "n_replicas", "value": sim.n_replicas},
        {"key": "max_abs_z", "value": rep.max_abs_z}, {"key": "passed", "value": rep.passed},
    ])
    return ["moments.csv", "per_mode.csv", "summary.csv"]


def cmd_audit(cfg: ExperimentConfig, out: Path, threads: int) -> List[str]:
    m = cfg.model.build()
    rows = list(audit_assumptions(m, 256, 1.0, cfg.seed).rows()) + list(bvm_audit(m, 256, 1.0, cfg.seed).rows())
    write_csv(out / "audit.csv", list(rows[0]), rows)
    return ["audit.csv"]


def cmd_certify(cfg: ExperimentConfig, out: Path, threads: int) -> List[str]:
    m = cfg.model.build()
    c = cfg.certificate
    audit = audit_assumptions(m, 256, 1.0, cfg.seed)
    write_csv(out / "audit.csv", list(next(iter(audit.rows()))), audit.rows())
    failed = audit.failed()
    if failed:
        raise AssumptionError(failed[0], "audit failed; strong certificate withheld")
    cert = strong_radius(strong_inputs_from_model(m, c.delta, c.c_universal))
    cert = validate_certificate(cert, m, c.n_samples, cfg.seed)
    _write_kv(out / "certificate_strong.csv", cert.to_dict())
    files = ["audit.csv", "certificate_strong.csv"]
    if c.weak is not None:
        w = c.weak
        k = model_constants(m, c.delta)
        inp = WeakRateInputs(function_from_dict(w.psi), function_from_dict(w.zeta),
                             eps=k.eps2 if w.eps is None else w.eps, b=k.B, tr_q=trace(m.q),
                             q_opnorm=op_norm(m.q), n=m.n, delta=c.delta, z_max=w.z_max)
        _write_kv(out / "certificate_weak.csv", weak_fixed_point(inp).to_dict())
        files.append("certificate_weak.csv")
    return files


def cmd_laplace(cfg: ExperimentConfig, out: Path, threads: int) -> List[str]:
    m = cfg.model.build()
    L = cfg.laplace
    post = exact_posterior(m)
    pair = laplace_pair(m, post)
    fh = feldman_hajek_check(m.q, m.a, m.n)
    a_smooth = bvm_audit(m, 256, 1.0, cfg.seed)["BvM.1"].empirical
    inp = BoundInputs(a_smooth=a_smooth, eps1_2=0.0, eps2_2=0.0, l2=0.0, alpha=L.alpha, sigma=L.sigma,
                      lambda_min=float(m.lam.min()), q_opnorm=op_norm(m.q), tr_q=trace(m.q), n=m.n,
                      delta=L.delta, c1=L.c1, c2=L.c2)
    hb, kb = h_bound(inp), k_bound(inp)
    _write_kv(out / "laplace.csv", {
        "kl_posterior_laplace": kl_commuting_gaussians(pair.posterior, pair.laplace),
        "equivalence": fh.to_dict(),
        "h_bound": hb.value, "k_bound": kb.value, "k_advisory": kb.advisory,
        "bound_inputs": inp.to_dict(),
    })
    return ["laplace.csv"]


def cmd_sweep(cfg: ExperimentConfig, out: Path, threads: int) -> List[str]:
    s, c = cfg.sweep, cfg.certificate
    rows = []
    for v in s.values:
        n = int(v) if s.parameter == "n" else cfg.model.n
        delta = float(v) if s.parameter == "delta" else c.delta
        m = cfg.model.build(n=n)
        cert = validate_certificate(strong_radius(strong_inputs_from_model(m, delta, c.c_universal)),
                                    m, s.n_samples, cfg.seed)
        post = exact_posterior(m)
        z = standard_normals(cfg.seed, STREAM_TAIL, s.n_samples, m.dim)
        dist = np.linalg.norm(post.mean.coeffs + np.sqrt(post.cov.eigs) * z - m.theta_star.coeffs, axis=1)
        ev = cert.empirical_validation
        rows.append({"n": n, "delta": delta, "certified_radius": cert.radius,
                     "empirical_radius": float(np.quantile(dist, 1 - delta)),
                     "tail_mass": ev["tail_mass"], "std_error": ev["std_error"], "passed": ev["passed"]})
    write_csv(out / "sweep.csv", list(rows[0]), rows)
    files = ["sweep.csv"]
    if s.parameter == "n" and len(rows) >= 2:
        x = np.log([r["n"] for r in rows])
        fit = [{"quantity": q, "loglog_slope": float(np.polyfit(x, np.log([r[q] for r in rows]), 1)[0])}
               for q in ("certified_radius", "empirical_radius")]
        write_csv(out / "slopes.csv", ["quantity", "loglog_slope"], fit)
        files.append("slopes.csv")
    return files


def cmd_accept(cfg: ExperimentConfig, out: Path, threads: int) -> List[str]:
    from .acceptance import run_all

    results = run_all(threads=threads)
    write_csv(out / "acceptance.csv", ["criterion", "name", "passed", "seconds", "detail"],
              [{"criterion": r.number, "name": r.name, "passed": r.passed, "seconds": round(r.seconds, 3),
                "detail": r.detail} for r in results])
    if not all(r.passed for r in results):
        raise _AcceptanceFailed(["acceptance.csv"])
    return ["acceptance.csv"]


class _AcceptanceFailed(Exception):
    def __init__(self, files):
        self.files = files


COMMANDS = {"simulate": cmd_simulate, "certify": cmd_certify, "laplace": cmd_laplace,
            "sweep": cmd_sweep, "audit": cmd_audit, "accept": cmd_accept}


def write_manifest(out: Path, command: str, cfg: ExperimentConfig, files: List[str], status: str,
                   threads: int) -> None:
    body = {
        "command": command,
        "config": cfg.semantic_dict(),
        "config_digest": cfg.digest,
        "files": sorted(files),
        "seed": cfg.seed,
        "status": status,
        "threads": threads,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "version": __version__,
    }
    (out / "manifest.json").write_text(json.dumps(body, sort_keys=True, indent=1, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return str(o)
    raise TypeError(type(o).__name__)


def run(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config is not None else ExperimentConfig()
        if args.seed is not None:
            if not 0 <= args.seed <= U64_MAX:
                raise ConfigError("--seed must be an unsigned 64-bit integer")
            cfg = dataclasses.replace(cfg, seed=args.seed)
        if args.threads < 1:
            raise ConfigError("--threads must be >= 1")
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out if args.out is not None else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        files = COMMANDS[args.command](cfg, out, args.threads)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (AssumptionError, CertificateError) as exc:
        print(f"assumption failure: {exc}", file=sys.stderr)
        write_manifest(out, args.command, cfg, [f for f in ("audit.csv",) if (out / f).exists()],
                       "assumption_failure", args.threads)
        return EXIT_ASSUMPTION
    except _AcceptanceFailed as exc:
        write_manifest(out, args.command, cfg, exc.files, "acceptance_failure", args.threads)
        return EXIT_ACCEPT
    write_manifest(out, args.command, cfg, files, "ok", args.threads)
    return EXIT_OK


def main() -> None:
    sys.exit(run())
