"""Command line entry point: ``gtf run | ablate | train | check``."""

from __future__ import annotations

import argparse
import logging
import sys

from . import __version__
from .errors import ConfigError, GTFError


def _values(text):
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(float(tok))
        except ValueError:
            out.append(tok)
    return out


def build_parser():
    p = argparse.ArgumentParser(prog="gtf", description=__doc__)
    p.add_argument("--version", action="version", version=f"gtf {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="guided sampling for every sweep point in a config")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--out")

    a = sub.add_parser("ablate", help="sweep one guidance axis and rank the runs")
    a.add_argument("--config", required=True)
    a.add_argument("--axis", required=True, choices=("w1", "w2", "scheduler", "cfg"))
    a.add_argument("--values", required=True, type=_values,
                   help="comma-separated list; 'all' for every scheduler")
    a.add_argument("--seed", type=int)
    a.add_argument("--out")

    t = sub.add_parser("train", help="train the learned denoiser on the config's analytic world")
    t.add_argument("--config", required=True)
    t.add_argument("--checkpoint", required=True)

    c = sub.add_parser("check", help="run the oracle suite on the analytic demo world")
    c.add_argument("--tolerance-profile", choices=("strict", "default"), default="default")
    return p


def _train(args):
    from .config import load_config
    from .diffusion import build_schedule
    from .mlp import Mlp, save_checkpoint, train

    cfg = load_config(args.config)
    world = cfg.world.data_world()
    sched = build_schedule(cfg.schedule.T, cfg.schedule.beta_start, cfg.schedule.beta_end)
    tcfg = cfg.world.train_config()
    net = Mlp.init(cfg.world.mlp_spec(world), world.conditions, sched.T, seed=tcfg.seed)
    result = train(net, world, sched, tcfg)
    save_checkpoint(result.net, args.checkpoint)
    for epoch, loss in enumerate(result.losses):
        print(f"epoch {epoch:3d}  loss {loss:.6f}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "check":
            from .checks import run_checks

            results = run_checks(args.tolerance_profile)
            for res in results:
                print(res.line())
            return 0 if all(r.passed for r in results) else 1
        if args.command == "train":
            return _train(args)

        from .config import load_config
        from .runner import ablate, run

        cfg = load_config(args.config).with_overrides(seed=args.seed, out=args.out)
        if args.command == "run":
            rows = run(cfg)
        else:
            rows = ablate(cfg, args.axis, args.values)
        for row in rows:
            print(f"{row['run_id']}  grid_kl={row['grid_kl']}  sliced_w={row['sliced_w']:.4g}"
                  f"  mean_err={row['mean_err']:.4g}")
        print(f"wrote {cfg.output.dir}")
        return 0
    except (ConfigError, GTFError, OSError, ValueError) as exc:
        print(f"gtf: error: {exc}", file=sys.stderr)
        return 1
