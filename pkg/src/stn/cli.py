"""Command-line entry point.

Subcommands: gen-data, train, refine, eval, visualize, gradcheck.  Exit codes:
0 success, 1 usage error, 2 runtime failure.  Every command that writes
outputs drops a resolved run_config JSON next to them; read-only commands
print theirs to stdout.  STN_DATA_DIR provides the default --data root.
"""

import argparse
import json
import os
import sys

import numpy as np

from . import decoder, glyphlang, refine, training
from .config import VARIANTS
from .params import load_checkpoint, save_checkpoint
from .spotlight import weight_map_to_pgm_bytes


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser():
    parser = _Parser(prog="stn", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a glyphlang dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="supervised training")
    p.add_argument("--data", default=os.environ.get("STN_DATA_DIR"))
    p.add_argument("--variant", choices=VARIANTS, default="stnr")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--l2", type=float, default=1e-5)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--patience", type=int, default=10)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("refine", help="actor-critic refinement")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", default=os.environ.get("STN_DATA_DIR"))
    p.add_argument("--iters", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("eval", help="token/sequence accuracy and mean reward")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", default=os.environ.get("STN_DATA_DIR"))
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("visualize", help="spotlight reading-path overlays")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    return parser


def _write_config(args, path):
    resolved = {k: v for k, v in sorted(vars(args).items())}
    with open(path, "w") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require_data(args):
    if not args.data:
        raise _UsageError("--data is required (or set STN_DATA_DIR)")
    return glyphlang.load_dataset(args.data)


def _cmd_gen_data(args):
    os.makedirs(args.out, exist_ok=True)
    glyphlang.dataset_generate(args.count, args.seed, out_dir=args.out)
    _write_config(args, os.path.join(args.out, "run_config.json"))
    print("wrote %d pairs to %s" % (args.count, args.out))
    return 0


def _out_sibling(out_path, suffix):
    stem, _ = os.path.splitext(out_path)
    return stem + suffix


def _cmd_train(args):
    dataset = _require_data(args)
    config = training.TrainConfig(
        lr=args.lr, l2=args.l2, batch_size=args.batch_size,
        epochs=args.epochs, seed=args.seed, variant=args.variant,
        patience=args.patience, workers=args.workers)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    _write_config(args, _out_sibling(args.out, "_config.json"))
    store, rows = training.train_supervised(
        config, dataset, metrics_path=_out_sibling(args.out, "_metrics.csv"))
    save_checkpoint(args.out, store, extra_config=config.to_dict())
    last = rows[-1]
    print("trained %d epochs; best val loss %.4f, last val token acc %.4f"
          % (len(rows), min(r["val_loss"] for r in rows), last["val_token_acc"]))
    return 0


def _cmd_refine(args):
    dataset = _require_data(args)
    store, extra = load_checkpoint(args.ckpt)
    config = refine.RefineConfig(lr=args.lr, batch_size=args.batch_size,
                                 workers=args.workers)
    os.makedirs(os.path.dirname(os.path.abspath(args.out)), exist_ok=True)
    _write_config(args, _out_sibling(args.out, "_config.json"))
    store, rows = refine.refine_loop(
        store, dataset, args.iters, args.seed,
        curve_path=_out_sibling(args.out, "_rewards.csv"), config=config)
    save_checkpoint(args.out, store, extra_config=extra)
    print("refined %d iterations; best mean reward %.4f"
          % (len(rows), max(r["mean_reward"] for r in rows)))
    return 0


def _cmd_eval(args):
    dataset = _require_data(args)
    store, _ = load_checkpoint(args.ckpt)
    tok, seq, reward = training.evaluate_accuracy(store, dataset,
                                                  workers=args.workers)
    print(json.dumps({k: v for k, v in sorted(vars(args).items())},
                     sort_keys=True))
    print("token accuracy:    %.4f" % tok)
    print("sequence accuracy: %.4f" % seq)
    print("mean reward:       %.4f" % reward)
    return 0


def _safe_token_name(token_id):
    name = glyphlang.ID_TO_TOKEN[token_id]
    return {"{": "lbrace", "}": "rbrace"}.get(name, name)


def visualize_spotlights(store, image, out_dir):
    """Write one weight-map overlay per decoded step plus tokens.txt with the
    decoded sequence and the handle trajectory."""
    os.makedirs(out_dir, exist_ok=True)
    tokens, handles, maps = decoder.greedy_decode(image, store)
    base = np.rint(np.asarray(image) * 255.0)
    lines = []
    for t, (tok, handle, wmap) in enumerate(zip(tokens, handles, maps)):
        heat = weight_map_to_pgm_bytes(wmap)
        up = np.kron(heat.astype(np.float64), np.ones((4, 4)))
        overlay = 0.5 * base + 0.5 * up
        name = "step_%03d_%s.pgm" % (t, _safe_token_name(tok))
        glyphlang.write_pgm(os.path.join(out_dir, name), overlay)
        lines.append("%s\t%.6f\t%.6f\t%.6f\n"
                     % (glyphlang.ID_TO_TOKEN[tok], handle.x, handle.y,
                        handle.sigma))
    with open(os.path.join(out_dir, "tokens.txt"), "w") as fh:
        fh.writelines(lines)
    return tokens


def _cmd_visualize(args):
    store, _ = load_checkpoint(args.ckpt)
    image = glyphlang.read_pgm(args.image) / 255.0
    tokens = visualize_spotlights(store, image, args.out)
    _write_config(args, os.path.join(args.out, "run_config.json"))
    print("decoded: %s" % " ".join(glyphlang.token_names(tokens)))
    return 0


def _cmd_gradcheck(args):
    print(json.dumps({k: v for k, v in sorted(vars(args).items())},
                     sort_keys=True))
    report = training.gradient_check(tolerance=args.tolerance, seed=args.seed)
    all_ok = True
    for name, max_rel, ok in report:
        print("%-14s max rel err %.3e  %s" % (name, max_rel,
                                              "pass" if ok else "FAIL"))
        all_ok = all_ok and ok
    return 0 if all_ok else 2


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "refine": _cmd_refine,
    "eval": _cmd_eval,
    "visualize": _cmd_visualize,
    "gradcheck": _cmd_gradcheck,
}


def run(argv):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as err:
        print("error: %s" % err, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args)
    except Exception as err:  # runtime failure contract: exit code 2
        print("error: %s" % err, file=sys.stderr)
        return 2


def main():
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
