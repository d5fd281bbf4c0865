"""Command-line entry point: ``risloc <subcommand> --config run.yaml``."""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from .harness.config import LEARNED, METHODS, default_config, dump_config, load_config
from .harness import experiment as exp
from .harness import radiomap as rm


def _resolve(args):
    config = load_config(args.config) if args.config else default_config(args.profile)
    if args.output_dir:
        config.output_dir = args.output_dir
    seeds = {k: v for k, v in (("train", args.train_seed), ("eval", args.eval_seed)) if v is not None}
    if seeds:
        config.seeds = dataclasses.replace(config.seeds, **seeds)
    if getattr(args, "snr", None) is not None:
        config.snr_db = [args.snr]
    config.validate()
    if args.print_config:
        print(dump_config(config), end="")
    return config


def _print_table(table):
    print(f"{'method':<16}{'snr_db':>8}{'T':>4}{'mse':>12}{'rmse':>10}{'median':>10}")
    for r in table.rows:
        print(f"{r['method']:<16}{r['snr_db']:>8g}{r['frames']:>4}{r['mse']:>12.4f}{r['rmse']:>10.4f}"
              f"{r['median']:>10.4f}")


def cmd_train(args):
    config = _resolve(args)
    methods = [args.method] if args.method else [m for m in config.methods if m in LEARNED or m == "wknn"]
    for method in methods:
        for snr in config.snr_db:
            path = exp.artifact_path(config, method, snr)
            exp.train_method(config, method, snr, path)
            print(f"{method} @ {snr:g} dB -> {path}")


def cmd_evaluate(args):
    config = _resolve(args)
    _print_table(exp.run_experiment(config, train=args.train, methods=[args.method] if args.method else None))


def cmd_baseline(args):
    config = _resolve(args)
    table = exp.run_experiment(config, train=True, methods=[args.method], table_name=f"baseline_{args.method}.csv")
    _print_table(table)


def cmd_sweep(args):
    config = _resolve(args)
    _print_table(exp.sweep_frames(config, checkpoint=args.checkpoint))


def cmd_radiomap(args):
    config = _resolve(args)
    snr = config.snr_db[0]
    weights = exp.load_method(config, "active", snr, args.checkpoint)
    power = 10 ** (snr / 10)
    maps = rm.episode_radiomaps(weights, config.scene, power, config.frames, config.seeds.eval, args.episodes)
    out = Path(args.out or Path(config.output_dir) / "radiomaps")
    for idx, rmap in zip(args.episodes, maps):
        paths = rm.write_radiomap(rmap, out / f"episode_{idx}", extra={"episode": idx, "snr_db": snr})
        q = rm.focusing_fraction(rmap)
        print(f"episode {idx}: {len(paths)} files in {paths[0].parent}, q_t = {np.round(q, 4).tolist()}")


def cmd_grad_check(args):
    from . import autodiff as ad
    from .dataset import make_batch
    from .policy import network as net
    from .scene import desk_scene

    scene = desk_scene(ris_rows=args.ris_rows, ris_cols=args.ris_cols)
    w = net.init_policy(scene.n_elements, "pilot", args.seed, hidden=args.hidden, head_width=args.head_width)
    power = 10 ** (args.snr / 10)
    batch = make_batch(scene, args.seed, np.arange(args.batch), args.frames)
    w.feature_scale[:] = np.sqrt(power) * np.abs(batch.h_d).mean()

    def build():
        return net.loss_final(net.rollout(w, batch, power, scene.noise_power).estimates, batch.positions)

    rep = ad.grad_check(build, w.params, tolerance=args.tolerance, h=1e-5, max_entries=args.max_entries,
                        rng=np.random.default_rng(args.seed))
    for name, err in sorted(rep.per_param.items()):
        print(f"{name:<10} {err:.3e}")
    print(f"max relative error {rep.max_rel_error:.3e} (tolerance {rep.tolerance:g}): "
          f"{'PASS' if rep.passed else 'FAIL'}")
    return 0 if rep.passed else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="risloc", description="Active RIS configuration for UE localization.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="experiment YAML; defaults to the built-in profile")
        p.add_argument("--profile", default="desk", choices=["desk", "paper"])
        p.add_argument("--output-dir")
        p.add_argument("--train-seed", type=int)
        p.add_argument("--eval-seed", type=int)
        p.add_argument("--snr", type=float, help="override the SNR list with one value (dB)")
        p.add_argument("--print-config", action="store_true", help="echo the resolved configuration")
        return p

    p = common(sub.add_parser("train", help="train learned methods and build fingerprint databases"))
    p.add_argument("--method", choices=[*LEARNED, "wknn"])
    p.set_defaults(func=cmd_train)

    p = common(sub.add_parser("evaluate", help="evaluate saved checkpoints on the test set"))
    p.add_argument("--method", choices=METHODS)
    p.add_argument("--train", action="store_true", help="train any missing checkpoint first")
    p.set_defaults(func=cmd_evaluate)

    p = common(sub.add_parser("baseline", help="train (if needed) and evaluate one baseline"))
    p.add_argument("--method", required=True, choices=[m for m in METHODS if m != "active"])
    p.set_defaults(func=cmd_baseline)

    p = common(sub.add_parser("sweep-frames", help="evaluate one active policy at t = 1..T"))
    p.add_argument("--checkpoint")
    p.set_defaults(func=cmd_sweep)

    p = common(sub.add_parser("radiomap", help="export per-frame RSS maps of test episodes"))
    p.add_argument("--checkpoint")
    p.add_argument("--episodes", type=int, nargs="+", default=[0])
    p.add_argument("--out")
    p.set_defaults(func=cmd_radiomap)

    p = sub.add_parser("grad-check", help="finite-difference check of the policy gradient")
    p.add_argument("--ris-rows", type=int, default=2)
    p.add_argument("--ris-cols", type=int, default=2)
    p.add_argument("--hidden", type=int, default=8)
    p.add_argument("--head-width", type=int, default=8)
    p.add_argument("--frames", type=int, default=3)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--snr", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-entries", type=int, default=12)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")
    try:
        return args.func(args) or 0
    except (FileNotFoundError, ValueError, exp.RunDirLocked, exp.MetricsError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
