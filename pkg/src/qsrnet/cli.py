"""Command line: ``qsrnet certify|simulate|bench --config <path> [--out <dir>] [--seed <u64>]``.

Exit status 0 on success (certified), 2 when the network is not certified,
1 on any error. ``QSRNET_OUT`` overrides the output directory unless
``--out`` is given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .baselines import bench_table, uav_groups
from .config import ConfigError, RunConfig, build_instance, load_config
from .errors import DivergenceDetected, InvalidArgument, QsrNetError
from .network import Certificate, NotCertified, certify, network_digest
from .sim import (
    DisturbanceProfile,
    empirical_gain,
    export_error_csv,
    export_events_csv,
    export_extended_csv,
    gen_switching,
    simulate,
    state_error,
)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_NOT_CERTIFIED = 2
OUT_ENV = "QSRNET_OUT"
U64_MAX = 2**64 - 1


def _u64(text: str) -> int:
    v = int(text, 0)
    if not 0 <= v <= U64_MAX:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qsrnet", description="Certify and test switched networks of QSR-dissipative agents.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (
        ("certify", "solve the compositional LMIs and write certificate.json"),
        ("simulate", "simulate one switching/disturbance scenario against a certificate"),
        ("bench", "time the compositional method against the baselines"),
    ):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", required=True, help="JSON run configuration")
        s.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or the current directory)")
        s.add_argument("--seed", type=_u64, help="override fleet and simulation seeds")
        if name == "simulate":
            s.add_argument("--certificate", help="certificate file (default: <out>/certificate.json)")
            s.add_argument("--extended", action="store_true", help="also write the full trajectory CSV")
    return p


def _out_dir(arg) -> Path:
    d = Path(arg or os.environ.get(OUT_ENV) or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_json(path: Path, doc) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _summary(cert: Certificate) -> str:
    s = cert.supply
    lines = [
        "certified: L2 stable under arbitrary switching",
        f"  agents: {len(cert.agents)}  modes: {len(cert.modes)}",
        "  lambda_max(Q_hat_i): " + ", ".join(f"{v:.4e}" for v in cert.lambda_max),
        f"  q = {s.q:.6e}  r = {s.r:.6e}  gamma = {s.gamma:.6e}",
        f"  beta(x0) = {s.beta_coeff:.6e} * sqrt(V(x0))",
        f"  worst constraint margin: {max(cert.margins):.4e}",
        f"  solver: {cert.solver.get('iterations')} iterations, {cert.solver.get('message')}",
        f"  runtime: {cert.runtime:.2f} s",
    ]
    return "\n".join(lines)


def cmd_certify(cfg: RunConfig, out: Path) -> int:
    inst = build_instance(cfg)
    res = certify(inst.network, cfg.certify)
    if isinstance(res, NotCertified):
        _write_json(
            out / "certify_report.json",
            {
                "status": res.status,
                "message": res.message,
                "t_star": None if res.feasibility is None else res.feasibility.t_star,
                "lower_bound": None if res.feasibility is None else res.feasibility.lower_bound,
            },
        )
        print(f"not certified: {res.status} ({res.message})")
        return EXIT_NOT_CERTIFIED
    res.dump(out / "certificate.json")
    print(_summary(res))
    print(f"wrote {out / 'certificate.json'}")
    return EXIT_OK


def cmd_simulate(cfg: RunConfig, out: Path, cert_path=None, extended: bool = False) -> int:
    inst = build_instance(cfg)
    path = Path(cert_path) if cert_path else out / "certificate.json"
    if not path.exists():
        raise InvalidArgument(f"certificate {path} not found; run 'qsrnet certify' first")
    cert = Certificate.load(path)
    digest = cert.solver.get("network_digest")
    if digest is not None and digest != network_digest(inst.network):
        raise InvalidArgument("certificate was issued for a different network")
    if len(cert.agents) != len(inst.network.agents) or len(cert.modes) != len(inst.network.modes):
        raise InvalidArgument("certificate does not match the configured network")
    sc = cfg.simulate
    mode_ids = [m.id for m in inst.network.modes]
    sig = gen_switching(sc.seed, sc.horizon, sc.n_switches if len(mode_ids) > 1 else 0, len(mode_ids), sc.min_dwell, sc.dt, modes=mode_ids)
    kinds = DisturbanceProfile.random(len(inst.disturbance_scales), sc.seed, inst.disturbance_scales)
    n = sum(inst.network.state_dims)
    x0 = np.zeros(n)
    try:
        traj = simulate(inst.network, sig, kinds, sc.dt, sc.horizon, x0)
    except DivergenceDetected as exc:
        if exc.record is not None:
            export_extended_csv(out / "trajectory_partial.csv", exc.record)
        raise
    err = state_error(traj, inst.state_groups)
    names = [a.name for a in inst.network.agents if a.state_dim > 0]
    for k, name in enumerate(names):
        export_error_csv(out / f"error_{name}.csv", traj.t, err[:, k])
    export_events_csv(out / "events.csv", sig)
    if extended:
        export_extended_csv(out / "trajectory.csv", traj)
    beta = cert.beta(x0)
    rep = empirical_gain(traj, cert.gamma, beta)
    pos = rep.u_norms > 0
    ratio = np.full(len(traj.t), np.nan)
    ratio[pos] = (rep.y_norms[pos] - beta) / rep.u_norms[pos]
    _write_json(
        out / "empirical_gain.json",
        {
            "gamma": cert.gamma,
            "beta": beta,
            "passed": rep.passed,
            "max_ratio": None if not np.isfinite(rep.max_ratio) else rep.max_ratio,
            "worst_excess": rep.worst_excess,
            "worst_time": rep.worst_time,
            "n_switches": sig.n_switches,
            "seed": sc.seed,
            "t": traj.t.tolist(),
            "y_norm": rep.y_norms.tolist(),
            "e_norm": rep.u_norms.tolist(),
            "ratio": [None if not np.isfinite(v) else float(v) for v in ratio],
        },
    )
    print(f"simulated {sc.horizon:g} s at dt = {sc.dt:.6g} s with {sig.n_switches} switches")
    print(f"  max state error: {float(err.max()):.4e}   final: {float(err[-1].max()):.4e}")
    print(f"  max (|y_T| - beta)/|e_T| = {rep.max_ratio:.4e} <= gamma = {cert.gamma:.4e}: {rep.passed}")
    return EXIT_OK if rep.passed else EXIT_ERROR


def cmd_bench(cfg: RunConfig, out: Path) -> int:
    inst = build_instance(cfg)
    fo = None
    if cfg.bench.full_time_limit is not None:
        from dataclasses import replace

        fo = replace(cfg.certify, time_limit=cfg.bench.full_time_limit)
    try:
        groups = uav_groups(inst.network)
    except InvalidArgument:
        groups = None
    res = bench_table(
        inst.network,
        cfg.bench.repetitions,
        cfg.certify,
        groups=groups,
        full_options=fo,
        log=lambda m: print(m, file=sys.stderr),
    )
    res.write(out / "bench.csv")
    sys.stdout.write(res.csv())
    for f in res.flags:
        print(f"warning: {f}", file=sys.stderr)
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        out = _out_dir(args.out)
        if args.command == "certify":
            return cmd_certify(cfg, out)
        if args.command == "simulate":
            return cmd_simulate(cfg, out, args.certificate, args.extended)
        return cmd_bench(cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except (QsrNetError, OSError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
