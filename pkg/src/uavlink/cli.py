"""Command-line interface.

Subcommands mirror the pipeline stages: gen-env, pretrain, run, solve-one,
and report (which also renders trend figures next to the CSV).
"""

from __future__ import annotations

import argparse
import json
import logging
import pathlib
import sys

import numpy as np

from . import harness
from .channel import ChannelVector
from .env import EnvMap
from .estimator import EstimatorBank
from .link import LinkParams
from .solver import SolverError, build_problem, solve

log = logging.getLogger("uavlink")


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--seed", type=int, help="root random seed")
    parser.add_argument("--out", required=True, help="output path")


def _load_cfg(args, extra: dict | None = None) -> harness.RunConfig:
    overrides = dict(extra or {})
    if args.seed is not None:
        overrides["seed"] = args.seed
    return harness.parse_config(args.config, overrides)


def cmd_gen_env(args) -> int:
    cfg = _load_cfg(args)
    streams = harness.seed_control(cfg)
    env = harness.make_env(cfg, streams)
    env.save(args.out)
    print(f"wrote {args.out}: {env.n_buildings} buildings, "
          f"built fraction {env.built_fraction():.4f}")
    return 0


def cmd_pretrain(args) -> int:
    extra = {}
    if args.episodes is not None:
        extra["pretrain_episodes"] = args.episodes
    cfg = _load_cfg(args, extra)
    streams = harness.seed_control(cfg)
    env = EnvMap.load(args.env) if args.env else harness.make_env(cfg, streams)
    bank, history = harness.pretrain(cfg, env, streams)
    out = pathlib.Path(args.out)
    if out.is_dir() or args.out.endswith(("/", "\\")):
        out.mkdir(parents=True, exist_ok=True)
        out = out / "weights.json"
    bank.save(out)
    final_ul = history["mape_ul"][-1] if history["mape_ul"] else float("nan")
    final_dl = history["mape_dl"][-1] if history["mape_dl"] else float("nan")
    print(f"wrote {out}: windowed MAPE ul={final_ul:.3f} dl={final_dl:.3f}")
    return 0


def cmd_run(args) -> int:
    extra = {"traj": args.traj} if args.traj else {}
    cfg = _load_cfg(args, extra)
    streams = harness.seed_control(cfg)
    env = EnvMap.load(args.env) if args.env else harness.make_env(cfg, streams)
    if args.weights:
        bank = EstimatorBank.load(args.weights, cfg.train_config())
    else:
        bank, _ = harness.pretrain(cfg, env, streams)
    trace = [] if args.dump_channels else None
    records = harness.run(cfg, bank, env, streams, trace_sink=trace)
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = harness.report(records, out / "records.csv", out / "summary.json")
    if trace is not None:
        from .channel import write_channel_trace
        write_channel_trace(trace, out / "channels.csv")
        print(f"wrote {out / 'channels.csv'}")
    print(f"wrote {out / 'records.csv'} and {out / 'summary.json'}")
    print(f"feasible {summary['feasible_count']}/{summary['slots']} slots; "
          f"final MAPE ul={summary['final_mape_ul']:.3f} "
          f"dl={summary['final_mape_dl']:.3f}")
    return 0


def cmd_solve_one(args) -> int:
    with open(args.instance, encoding="utf-8") as f:
        inst = json.load(f)
    raw = inst.get("params", {})
    params = LinkParams.from_dbm(
        n0_dbm_hz=raw.get("N0_dbm_hz", -177.0),
        w_hz=raw.get("W_hz", 2e7),
        fu_bits=raw.get("Fu_bits", 1000.0),
        du_s=raw.get("Du_s", 1e-3),
        eps=raw.get("eps", 1e-7),
        snr_th_db=raw.get("snr_th_db", 20.0),
        re_th_bps=raw.get("Re_th_bps", 1e7),
        pb_max_w=raw.get("pB_max_w", 5.0),
        pv_max_w=raw.get("pv_max_w", 1.0),
        tf_s=raw.get("Tf_s", 5.0),
        eta=raw.get("eta", 0.5),
    )
    h_ul = np.array([complex(re, im) for re, im in inst["h_ul"]])
    g_dl = float(inst["g_dl"])
    # ChannelVector carries h only as far as the solver is concerned
    ch_ul = ChannelVector("btu", 0, h_ul, h_ul, 1.0, True)
    h_dl = np.zeros(len(h_ul), dtype=complex)
    h_dl[0] = np.sqrt(g_dl)
    ch_dl = ChannelVector("utb", 0, h_dl, h_dl, 1.0, True)
    doc = {"status": "ok"}
    try:
        problem = build_problem(ch_ul, ch_dl, params)
        sol = solve(problem)
    except SolverError as exc:
        doc["status"] = type(exc).__name__
        doc["message"] = str(exc)
    else:
        doc.update({
            "status": sol.status,
            "V_re": sol.V.real.tolist(),
            "V_im": sol.V.imag.tolist(),
            "p": sol.p,
            "phi": sol.phi,
            "v_re": sol.v.real.tolist(),
            "v_im": sol.v.imag.tolist(),
            "tightness": sol.tightness,
            "E_eu": sol.e_eu,
            "iterations": sol.iterations,
            "gap": sol.gap,
        })
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1)
    print(f"wrote {args.out}: status {doc['status']}")
    return 0


def cmd_report(args) -> int:
    records = harness.read_csv(args.records)
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = harness.summarize(records)
    with open(out / "summary.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
    from .figures import render_figures
    paths = render_figures(records, out)
    print(f"wrote {out / 'summary.json'}")
    for p in paths:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uavlink",
        description="UAV link simulator and joint transmit-power optimizer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-env", help="generate a building map as JSON")
    _common(p)
    p.set_defaults(func=cmd_gen_env)

    p = sub.add_parser("pretrain", help="pre-train the channel estimators")
    _common(p)
    p.add_argument("--episodes", type=int, help="override pretrain episodes")
    p.add_argument("--env", help="existing environment JSON")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("run", help="pre-train (unless weights given) and run "
                                   "the per-slot loop")
    _common(p)
    p.add_argument("--traj", choices=["c2t", "vat"], help="trajectory kind")
    p.add_argument("--env", help="existing environment JSON")
    p.add_argument("--weights", help="existing estimator checkpoint")
    p.add_argument("--dump-channels", action="store_true",
                   help="also write the per-slot true channel trace CSV")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("solve-one", help="solve a single JSON instance")
    _common(p)
    p.add_argument("--instance", required=True,
                   help="JSON with h_ul ([re, im] pairs), g_dl, params")
    p.set_defaults(func=cmd_solve_one)

    p = sub.add_parser("report", help="summarize a records CSV and render "
                                      "trend figures")
    _common(p)
    p.add_argument("--records", required=True, help="records.csv from a run")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
