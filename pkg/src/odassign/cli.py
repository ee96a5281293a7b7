"""Command-line entry point: ``odassign <command> [options]``.

Commands
    inspect   network and demand statistics
    paths     build (or reuse) the k-shortest route cache
    solve     MSA or Frank-Wolfe baseline, writes trace.csv
    train     IPPO training, writes metrics.csv and checkpoint.ckpt
    eval      deterministic evaluation of a checkpoint
    compare   gap-per-step CSV for MSA, FW and optionally a checkpoint

Every command that writes files takes ``--out-dir``; the resolved settings
are echoed there as ``config.yaml``.  Exit status: 0 success, 1 I/O or
validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import yaml

from . import datasets, tntp
from .env import TrafficEnv, scale_demand
from .equilibrium import solve_fw, solve_msa
from .errors import CheckpointError, ConfigError, OdassignError
from .ippo import TrainConfig, evaluate_policy, load_policy, loads_train_state, train_loop
from .network import MAX_ROUTES
from .paths import build_route_sets

log = logging.getLogger("odassign")

DATA_KEYS = ("network", "net", "trips", "nodes", "routes", "k")


# data ------------------------------------------------------------------------

def _add_data_args(p):
    g = p.add_argument_group("data")
    g.add_argument("--network", help="bundled or ODASSIGN_DATA dataset name "
                   f"(bundled: {', '.join(datasets.bundled_names())})")
    g.add_argument("--net", help="TNTP network file (overrides --network)")
    g.add_argument("--trips", help="TNTP trips file")
    g.add_argument("--nodes", help="TNTP node coordinate file")
    g.add_argument("--routes", help="route cache path; built and written when missing")
    g.add_argument("--k", type=int, help="routes per OD pair (default 6)")


def _data_settings(args, conf):
    out = {key: conf.get(key) for key in DATA_KEYS}
    for key in DATA_KEYS:
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    if out["net"] is None and out["network"] is None:
        out["network"] = "siouxfalls"
    if out["k"] is None:
        out["k"] = MAX_ROUTES
    return out


def _load_data(ds, need_coords=False):
    if ds["net"] is not None:
        if ds["trips"] is None:
            raise ConfigError("--net needs --trips")
        net = tntp.read_network(_existing(ds["net"]))
        dm = tntp.read_trips(_existing(ds["trips"]), net)
        coords = tntp.read_node_coords(_existing(ds["nodes"]), net) if ds["nodes"] else None
    else:
        net, dm, coords = datasets.load(ds["network"])
    if need_coords and coords is None:
        raise ConfigError("this run uses coordinate features but no node file was found; "
                          "pass --nodes or set use_coords: false")
    return net, dm, coords


def _existing(path):
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"no such file: {p}")
    return p


def _route_sets(ds, net, dm):
    path = ds.get("routes")
    if path and Path(path).is_file():
        return tntp.loads_routes(Path(path).read_text(), net, dm)
    rs = build_route_sets(net, dm, int(ds["k"]))
    if path:
        tntp.write_atomic(path, tntp.dumps_routes(rs, net, dm))
    return rs


# config ------------------------------------------------------------------------

def _read_config(path):
    if path is None:
        return {}
    try:
        doc = yaml.safe_load(_existing(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from None
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a mapping")
    return doc


def _parse_overrides(items):
    out = {}
    for item in items or ():
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, val = item.split("=", 1)
        out[key.strip()] = yaml.safe_load(val)
    return out


def _echo_config(out_dir, settings):
    tntp.write_atomic(Path(out_dir) / "config.yaml",
                      yaml.safe_dump(_plain(settings), sort_keys=True))


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    return obj


def _write(out_dir, name, text):
    path = Path(out_dir) / name
    tntp.write_atomic(path, text)
    return path


# commands ----------------------------------------------------------------------

def cmd_inspect(args):
    conf = _read_config(args.config)
    ds = _data_settings(args, conf)
    net, dm, coords = _load_data(ds)
    stats = {"nodes": net.num_nodes, "links": net.num_links, "zones": net.num_zones,
             "od_pairs": dm.num_agents, "total_demand": dm.total,
             "declared_total": dm.declared_total,
             "coordinates": coords is not None, "checksum": net.checksum()}
    text = json.dumps(stats, indent=2) + "\n"
    if args.out_dir:
        _write(args.out_dir, "inspect.json", text)
    sys.stdout.write(text)
    return 0


def cmd_paths(args):
    conf = _read_config(args.config)
    ds = _data_settings(args, conf)
    net, dm, _ = _load_data(ds)
    if not ds.get("routes"):
        if not args.out_dir:
            raise ConfigError("paths needs --routes or --out-dir")
        ds["routes"] = str(Path(args.out_dir) / "routes.json")
    rs = _route_sets(ds, net, dm)
    counts = rs.counts
    sys.stdout.write(json.dumps({"routes_file": ds["routes"], "agents": rs.num_agents,
                                 "routes": int(counts.sum()), "min_routes": int(counts.min()),
                                 "max_routes": int(counts.max())}, indent=2) + "\n")
    if args.out_dir:
        _echo_config(args.out_dir, {"command": "paths", **ds})
    return 0


SOLVE_DEFAULTS = {"method": "fw", "objective": "ue", "max_iters": 100, "gap_tol": 0.0,
                  "demand": "fixed", "beta": None, "seed": 0, "record_time": False}


def _merged(args, conf, defaults):
    out = dict(defaults)
    out.update({k: v for k, v in conf.items() if k in defaults})
    for key in defaults:
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


def _beta(ds, settings):
    beta = settings.get("beta")
    if beta is None:
        name = (ds.get("network") or "").lower()
        return datasets.DEFAULT_BETA.get(name, (0.5, 1.0))
    return tuple(float(v) for v in beta)


def cmd_solve(args):
    conf = _read_config(args.config)
    ds = _data_settings(args, conf)
    s = _merged(args, conf, SOLVE_DEFAULTS)
    if s["method"] not in ("msa", "fw"):
        raise ConfigError(f"unknown method {s['method']!r}")
    net, dm, _ = _load_data(ds)
    if s["demand"] == "variable":
        dm = scale_demand(dm, _beta(ds, s), np.random.default_rng(int(s["seed"])))
    elif s["demand"] != "fixed":
        raise ConfigError(f"unknown demand mode {s['demand']!r}")
    solver = solve_fw if s["method"] == "fw" else solve_msa
    _, trace = solver(net, dm, s["objective"], int(s["max_iters"]), float(s["gap_tol"]))
    _write(args.out_dir, "trace.csv", trace.to_csv(record_time=bool(s["record_time"])))
    _echo_config(args.out_dir, {"command": "solve", **ds, **s})
    sys.stdout.write(f"{s['method']} {s['objective']}: {len(trace)} iterations, "
                     f"final gap {trace.gaps[-1]:.6g}\n")
    return 0


TRAIN_FLAGS = {"seed": "seed", "variant": "variant", "episodes": "total_episodes",
               "hidden_size": "hidden_size", "lr": "lr", "workers": "workers",
               "objective": "objective", "demand": "demand_mode", "record_time": "record_time"}


def cmd_train(args):
    conf = _read_config(args.config)
    ds = _data_settings(args, conf)
    train_conf = dict(conf.get("train", {}) or {})
    for flag, key in TRAIN_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None:
            train_conf[key] = val
    train_conf.update(_parse_overrides(args.set))
    if "beta_range" not in train_conf and train_conf.get("demand_mode") == "variable":
        train_conf["beta_range"] = list(_beta(ds, {}))
    cfg = TrainConfig.from_dict(train_conf)
    net, dm, coords = _load_data(ds, need_coords=cfg.use_coords)
    rs = _route_sets(ds, net, dm)
    out = Path(args.out_dir)
    _echo_config(out, {"command": "train", **ds, "train": cfg.to_dict()})
    resume = args.resume
    if resume is not None:
        _existing(resume)
    st = train_loop(cfg, net, rs, dm, coords, out_dir=out, resume=resume,
                    max_seconds=args.max_seconds)
    last = st.metrics.rows[-1] if st.metrics.rows else None
    msg = f"trained {st.iteration} iterations, {st.episodes} episodes"
    if last is not None:
        msg += f"; last min gap {last[3]:.6g}"
    sys.stdout.write(msg + "\n")
    return 0


def _checkpoint_config(ckpt):
    echoed = Path(ckpt).parent / "config.yaml"
    if echoed.is_file():
        return yaml.safe_load(echoed.read_text()) or {}
    return {}


def _marl_env(ckpt, args, conf, demand=None):
    path = Path(ckpt)
    if not path.is_file():
        raise CheckpointError(f"checkpoint not found: {path}")
    st = loads_train_state(path.read_bytes())
    saved = _checkpoint_config(path)
    merged = {k: saved.get(k) for k in DATA_KEYS}
    merged.update({k: v for k, v in conf.items() if k in DATA_KEYS})
    ds = _data_settings(args, merged)
    cfg = st.cfg
    net, dm, coords = _load_data(ds, need_coords=cfg.use_coords)
    rs = _route_sets(ds, net, dm)
    env_cfg = cfg.env_config()
    if demand is not None:
        env_cfg = replace(env_cfg, demand_mode=demand[0], beta_range=demand[1])
    env = TrafficEnv(env_cfg, net, rs, dm, coords)
    policy = load_policy(path)
    return ds, env, policy


def cmd_eval(args):
    conf = _read_config(args.config)
    ds, env, policy = _marl_env(args.checkpoint, args, conf)
    rep = evaluate_policy(policy, env, int(args.episodes), int(args.seed),
                          deterministic=not args.stochastic)
    if args.out_dir:
        _write(args.out_dir, "eval.json", rep.to_json())
        _write(args.out_dir, "episodes.csv", rep.episode_log().to_csv())
        _echo_config(args.out_dir, {"command": "eval", **ds, "checkpoint": args.checkpoint,
                                    "episodes": args.episodes, "seed": args.seed,
                                    "stochastic": bool(args.stochastic)})
    sys.stdout.write(f"mean min gap over {args.episodes} episodes: {rep.mean_min_gap:.6g}\n")
    return 0


COMPARE_DEFAULTS = {"steps": 10, "objective": "so", "demand": "variable", "draws": 5,
                    "seed": 0, "beta": None}


def compare_traces(net, dm, steps, objective, demand, draws, seed, beta, env=None, policy=None):
    """Mean gap per step over demand draws for MSA, FW and (optionally) a policy."""
    n = 1 if demand == "fixed" else int(draws)
    msa = np.zeros(steps)
    fw = np.zeros(steps)
    marl = np.zeros(steps) if policy is not None else None
    for i in range(n):
        if demand == "fixed":
            d = dm
        else:
            d = scale_demand(dm, beta, np.random.default_rng([int(seed), i]))
        msa += np.array(solve_msa(net, d, objective, steps)[1].gaps)
        fw += np.array(solve_fw(net, d, objective, steps)[1].gaps)
        if policy is not None:
            # the env draws its episode demand from the same stream as ``d`` above
            state, obs = env.reset(np.random.default_rng([int(seed), i]))
            for t in range(steps):
                a, _, _, _ = policy.act(obs, env.mask, None, deterministic=True)
                state, obs, _, _, info = env.step(state, a)
                marl[t] += info["global_gap"]
    return msa / n, fw / n, (marl / n if marl is not None else None)


def cmd_compare(args):
    conf = _read_config(args.config)
    s = _merged(args, conf, COMPARE_DEFAULTS)
    env = policy = None
    steps = int(s["steps"])
    if args.checkpoint:
        ds, env, policy = _marl_env(args.checkpoint, args, conf)
        if env.cfg.steps_per_episode < steps:
            raise ConfigError(f"checkpoint episodes have {env.cfg.steps_per_episode} steps, "
                              f"fewer than --steps {steps}")
        beta = _beta(ds, s)
        env = TrafficEnv(replace(env.cfg, objective=s["objective"],
                                 demand_mode=s["demand"], beta_range=beta),
                         env.net, env.rs, env.dm, env.coords)
        net, dm = env.net, env.dm
    else:
        ds = _data_settings(args, conf)
        net, dm, _ = _load_data(ds)
        beta = _beta(ds, s)
    if s["demand"] not in ("fixed", "variable"):
        raise ConfigError(f"unknown demand mode {s['demand']!r}")
    msa, fw, marl = compare_traces(net, dm, steps, s["objective"], s["demand"], s["draws"],
                                   s["seed"], beta, env, policy)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "msa_gap", "fw_gap", "marl_gap"])
    for t in range(steps):
        w.writerow([t + 1, repr(float(msa[t])), repr(float(fw[t])),
                    repr(float(marl[t])) if marl is not None else ""])
    _write(args.out_dir, "compare.csv", buf.getvalue())
    _echo_config(args.out_dir, {"command": "compare", **ds, **s, "beta": list(beta),
                                "checkpoint": args.checkpoint})
    sys.stdout.write(f"step {steps}: msa {msa[-1]:.6g}, fw {fw[-1]:.6g}"
                     + (f", marl {marl[-1]:.6g}" if marl is not None else "") + "\n")
    return 0


# parser ------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="odassign", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, fn, help_, out_required=True):
        sp = sub.add_parser(name, help=help_)
        sp.set_defaults(fn=fn)
        sp.add_argument("--config", help="YAML settings file; flags override it")
        sp.add_argument("--out-dir", required=out_required, help="output directory")
        _add_data_args(sp)
        return sp

    command("inspect", cmd_inspect, "network and demand statistics", out_required=False)
    command("paths", cmd_paths, "build the route cache", out_required=False)

    sp = command("solve", cmd_solve, "run MSA or Frank-Wolfe")
    sp.add_argument("--method", choices=("msa", "fw"))
    sp.add_argument("--objective", choices=("ue", "so"))
    sp.add_argument("--max-iters", type=int)
    sp.add_argument("--gap-tol", type=float)
    sp.add_argument("--demand", choices=("fixed", "variable"))
    sp.add_argument("--beta", type=float, nargs=2, metavar=("LOW", "HIGH"))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--record-time", action="store_true", default=None)

    sp = command("train", cmd_train, "train a policy with IPPO")
    sp.add_argument("--variant", choices=("S", "SA", "D", "DA"))
    sp.add_argument("--episodes", type=int)
    sp.add_argument("--hidden-size", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--workers", type=int)
    sp.add_argument("--objective", choices=("ue", "so"))
    sp.add_argument("--demand", choices=("fixed", "variable"))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override any training option")
    sp.add_argument("--resume", help="checkpoint to continue from")
    sp.add_argument("--max-seconds", type=float, help="stop after this wall time")
    sp.add_argument("--record-time", action="store_true", default=None)

    sp = command("eval", cmd_eval, "evaluate a checkpoint", out_required=False)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--episodes", type=int, default=5)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--stochastic", action="store_true", help="sample actions")

    sp = command("compare", cmd_compare, "gap per step for MSA, FW and a checkpoint")
    sp.add_argument("--steps", type=int)
    sp.add_argument("--objective", choices=("ue", "so"))
    sp.add_argument("--demand", choices=("fixed", "variable"))
    sp.add_argument("--draws", type=int)
    sp.add_argument("--beta", type=float, nargs=2, metavar=("LOW", "HIGH"))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--checkpoint")
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except FileNotFoundError as exc:
        print(f"odassign: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"odassign: error: {exc}", file=sys.stderr)
        return 1
    except (OdassignError, ValueError) as exc:
        print(f"odassign: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
