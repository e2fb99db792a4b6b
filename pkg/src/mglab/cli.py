"""Command-line entry point: ``mglab {gen,run,eval,kl-check,net}``.

Exit codes: 0 on success, 2 on a validation error (bad input, unreadable
file, cap violation), 3 on a numerical failure.
"""

import argparse
import os
import sys
import traceback

import numpy as np

from .validation import NumericalError, ValidationError

# source file stem -> component name used in error messages
_ORIGINS = {
    "game": "game-core", "bandit": "bandit-core", "schedules": "bandit-core",
    "learners": "learners", "history": "learners", "certified": "certified-policy",
    "mpg": "mpg", "hard_instances": "hard-instances", "evaluators": "evaluators",
    "experiment": "bench-cli", "cli": "bench-cli", "validation": "bench-cli",
}


def _origin(exc):
    origin = "bench-cli"
    for frame in traceback.extract_tb(exc.__traceback__):
        parts = frame.filename.replace(os.sep, "/").split("/")
        stem = os.path.splitext(parts[-1])[0]
        if len(parts) > 1 and parts[-2] == "mglab" and stem in _ORIGINS:
            if stem != "validation":
                origin = _ORIGINS[stem]
    return origin


def _emit(text, path):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", newline="") as f:
            f.write(text)


# -- subcommands ---------------------------------------------------------------

def cmd_gen(args):
    from .experiment import generate_game_text

    spec = {"kind": args.kind}
    if args.kind == "random":
        spec.update(m=args.m, S=args.S, H=args.H, A=args.A if len(args.A) > 1 else args.A[0],
                    seed=args.seed, bernoulli=args.bernoulli, cooperative=args.cooperative)
    else:
        spec.update(m=args.m, k=args.k, epsilon=args.epsilon)
        if args.kind == "hard-mdp":
            spec["H"] = args.H
    _emit(generate_game_text(spec), args.output)
    return 0


def cmd_run(args):
    from dataclasses import replace

    from .experiment import load_config, run

    cfg, sha = load_config(args.config)
    changes = {}
    if args.out is not None:
        changes["out"] = args.out
    if args.workers is not None:
        changes["workers"] = args.workers
    if args.save_history:
        changes["save_history"] = True
    if changes:
        cfg = replace(cfg, **changes)
    outputs = run(cfg, sha)
    for out in outputs:
        print(f"seed {out.seed}: max gap {out.report['max_gap']!r}")
    print(f"wrote {os.path.abspath(cfg.out)}")
    return 0


def cmd_eval(args):
    from .evaluators import certified_report
    from .game import load_game
    from .history import RunHistory

    try:
        hist, game = RunHistory.load(args.history)
    except (OSError, KeyError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"cannot read history {args.history}: {exc}") from exc
    if args.game is not None:
        game = load_game(args.game)[0]
    if game is None:
        raise ValidationError("history carries no game; pass --game")
    kind = hist.params.get("algorithm", "cce")
    report = certified_report(game, hist, kind=kind, mc_episodes=args.mc, rng=args.seed)
    if args.csv:
        report.to_csv(args.csv)
    _emit(report.to_json() + "\n", args.output)
    return 0


def cmd_kl_check(args):
    from .hard_instances import kl_decomposition_check, random_history_rule

    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.instances):
        n_actions = int(rng.integers(2, args.max_actions + 1))
        n = int(rng.integers(1, args.max_steps + 1))
        P = rng.uniform(0.05, 0.95, n_actions)
        Q = rng.uniform(0.05, 0.95, n_actions)
        lhs, rhs = kl_decomposition_check(P, Q, random_history_rule(n_actions, rng), n)
        worst = max(worst, abs(lhs - rhs))
    ok = worst <= args.tol
    print(f"instances {args.instances} max |lhs - rhs| {worst!r} {'ok' if ok else 'FAILED'}")
    if not ok:
        raise NumericalError(f"KL decomposition residual {worst!r} exceeds {args.tol!r}")
    return 0


def cmd_net(args):
    from .hard_instances import block_one_net, hamming_one_net, is_one_net

    if args.action == "emit":
        net = hamming_one_net(args.m) if args.k == 1 else block_one_net(args.m, args.k)
        _emit("".join(" ".join(str(int(v)) for v in row) + "\n" for row in net), args.output)
        return 0
    try:
        net = np.loadtxt(args.file, dtype=np.int64, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ValidationError(f"cannot read net {args.file}: {exc}") from exc
    A = (args.A,) * net.shape[1]
    if net.size and (net.min() < 0 or net.max() >= args.A):
        raise ValidationError(f"net entries must lie in [0, {args.A})")
    ok = is_one_net(net, A)
    print(f"{len(net)} points, m={net.shape[1]}, A={args.A}: {'1-net' if ok else 'NOT a 1-net'}")
    return 0 if ok else 1


def build_parser():
    ap = argparse.ArgumentParser(prog="mglab", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a game file")
    g.add_argument("kind", choices=["random", "hard-one-step", "hard-mdp"])
    g.add_argument("--m", type=int, required=True, help="number of players")
    g.add_argument("--S", type=int, default=2)
    g.add_argument("--H", type=int, default=2)
    g.add_argument("--A", type=int, nargs="+", default=[2], help="actions (one value or one per player)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--bernoulli", action="store_true")
    g.add_argument("--cooperative", action="store_true")
    g.add_argument("--k", type=int, default=1, help="hard games: 2k actions per player")
    g.add_argument("--epsilon", type=float, default=0.1)
    g.add_argument("-o", "--output", default="-")
    g.set_defaults(func=cmd_gen)

    r = sub.add_parser("run", help="run an experiment from a TOML config or a manifest.json")
    r.add_argument("config")
    r.add_argument("--out", help="override the output directory")
    r.add_argument("--workers", type=int, help="threads across seeds")
    r.add_argument("--save-history", action="store_true")
    r.set_defaults(func=cmd_run)

    e = sub.add_parser("eval", help="recompute the gap report of a saved history")
    e.add_argument("history")
    e.add_argument("--game", help="game file, if the history does not embed one")
    e.add_argument("--mc", type=int, default=0, help="Monte Carlo episodes (0 = exact only)")
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--csv", help="also write the per-player CSV table here")
    e.add_argument("-o", "--output", default="-")
    e.set_defaults(func=cmd_eval)

    k = sub.add_parser("kl-check", help="check the KL decomposition on random bandit runs")
    k.add_argument("--instances", type=int, default=50)
    k.add_argument("--max-actions", type=int, default=4)
    k.add_argument("--max-steps", type=int, default=12)
    k.add_argument("--seed", type=int, default=0)
    k.add_argument("--tol", type=float, default=1e-10)
    k.set_defaults(func=cmd_kl_check)

    n = sub.add_parser("net", help="emit or verify covering codes")
    nsub = n.add_subparsers(dest="action", required=True)
    ne = nsub.add_parser("emit")
    ne.add_argument("--m", type=int, required=True)
    ne.add_argument("--k", type=int, default=1, help="1 = Hamming net over {0,1}; else block net over 2k actions")
    ne.add_argument("-o", "--output", default="-")
    nv = nsub.add_parser("verify")
    nv.add_argument("file")
    nv.add_argument("--A", type=int, default=2)
    n.set_defaults(func=cmd_net)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"mglab: error [{_origin(exc)}]: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, FloatingPointError) as exc:
        print(f"mglab: numerical failure [{_origin(exc)}]: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
