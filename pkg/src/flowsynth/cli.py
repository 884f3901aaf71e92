"""Command-line entry point: ``flowsynth simulate | train | transfer | eval``.

Exit codes: 0 success (simulate: Converged), 1 usage, parse, config or
checkpoint errors, 2 simulate finished but the flowsheet is infeasible.

Run directory layout for train/transfer/eval::

    <out>/manifest.json
    <out>/checkpoints/final.ckpt      (+ episode_NNNNNN.ckpt at cadence)
    <out>/curves.csv                  episode,reward,moving_avg_100
    <out>/best_flowsheet.fs           only when at least one episode ran

simulate writes ``streams.csv`` (edge_id,from_node,to_node,temperature,
HOAc,MeOH,MeOAc,H2O) and ``economics.csv`` (item,value) into ``--out``.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import json
import logging
import sys
from pathlib import Path

from . import config as C
from .economics import flowsheet_economics, step_reward
from .flowsheet import ParseError, deserialize, serialize
from .learncore.checkpoint import CheckpointError
from .simulate import Status, evaluate
from .thermo import COMPONENT_IDS
from .units import Fidelity

log = logging.getLogger("flowsynth")

EXIT_OK, EXIT_USAGE, EXIT_INFEASIBLE = 0, 1, 2


class UsageError(Exception):
    pass


def _num(x: float) -> str:
    return format(float(x), ".17g")


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _resolve(args, extra: list[dict]):
    overrides = list(extra) + [C.parse_override(s) for s in (args.set or [])]
    return C.resolve(args.config, overrides)


def _write_manifest(out: Path, command: str, argv, resolved: dict, started: str, outputs: list[str]):
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": resolved,
        "config_hash": C.config_hash(resolved),
        "seed": resolved["train"]["seed"],
        "started": started,
        "finished": _now(),
        "outputs": sorted(outputs),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- simulate -----------------------------------------------------------------


def cmd_simulate(args, argv) -> int:
    started = _now()
    extra = [{"env": {"fidelity": args.fidelity}}] if args.fidelity else []
    cfg, resolved = _resolve(args, extra)
    try:
        text = Path(args.flowsheet).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read flowsheet {args.flowsheet}: {exc}") from None
    g = deserialize(text)
    env = cfg.env
    outcome = evaluate(g, env.fidelity, env.thermo, env.units, env.tear)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for eid in sorted(outcome.graph.edges):
        e = outcome.graph.edges[eid]
        to = "-" if e.to_node is None else e.to_node
        if e.payload is None:
            rows.append([eid, e.from_node, to] + [""] * 5)
        else:
            rows.append([eid, e.from_node, to, _num(e.payload.temperature)] + [_num(f) for f in e.payload.flows])
    _write_csv(out / "streams.csv", ["edge_id", "from_node", "to_node", "temperature", *COMPONENT_IDS], rows)
    econ = [("status", outcome.status.value), ("iterations", outcome.iterations)]
    if outcome.status is Status.CONVERGED:
        econ += [(k, _num(v)) for k, v in flowsheet_economics(outcome, env.cost, env.thermo).rows()]
    econ.append(("reward_meur", _num(step_reward(outcome, outcome.graph.complete, env.cost, env.thermo))))
    _write_csv(out / "economics.csv", ["item", "value"], econ)
    _write_manifest(out, "simulate", argv, resolved, started, ["streams.csv", "economics.csv"])
    print(f"{outcome.status.value} after {outcome.iterations} iteration(s)")
    if outcome.message:
        print(outcome.message)
    return EXIT_OK if outcome.status is Status.CONVERGED else EXIT_INFEASIBLE


# -- training -----------------------------------------------------------------


def _training_overrides(args, default_env: str) -> list[dict]:
    o: dict = {"env": {"fidelity": args.env or default_env}, "train": {}}
    if args.episodes is not None:
        o["train"]["episodes"] = args.episodes
    if args.seed is not None:
        o["train"]["seed"] = args.seed
    if getattr(args, "workers", None) is not None:
        o["train"]["workers"] = args.workers
    if getattr(args, "checkpoint_every", None) is not None:
        o["train"]["checkpoint_every"] = args.checkpoint_every
    return [o]


def _progress(every: int):
    def report(done, curve):
        if every and done % every == 0:
            log.info("episode %d  ma100 %.4f  best %.4f", done, curve.moving_average[-1], curve.best_reward)
    return report


def _finish_run(out: Path, agent, curve, command, argv, resolved, started) -> None:
    from .agent.train import save_agent

    outputs = ["curves.csv", "checkpoints/final.ckpt"]
    _write_csv(out / "curves.csv", ["episode", "reward", "moving_avg_100"],
               [(i, _num(r), _num(m)) for i, r, m in curve.rows()])
    save_agent(agent, out / "checkpoints" / "final.ckpt")
    if curve.best_flowsheet is not None:
        (out / "best_flowsheet.fs").write_text(serialize(curve.best_flowsheet), encoding="utf-8")
        outputs.append("best_flowsheet.fs")
    outputs += [f"checkpoints/{p.name}" for p in sorted((out / "checkpoints").glob("episode_*.ckpt"))]
    _write_manifest(out, command, argv, resolved, started, outputs)
    print(f"{len(curve)} episodes, best reward {curve.best_reward:.6g}, outputs in {out}")


def cmd_train(args, argv) -> int:
    from .agent.train import train

    started = _now()
    cfg, resolved = _resolve(args, _training_overrides(args, "shortcut"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    agent, curve = train(cfg.train, cfg.env, spec=cfg.agent, checkpoint_dir=out / "checkpoints",
                         progress=_progress(args.log_every))
    _finish_run(out, agent, curve, "train", argv, resolved, started)
    return EXIT_OK


def cmd_transfer(args, argv) -> int:
    from .agent.train import load_agent, transfer

    started = _now()
    cfg, resolved = _resolve(args, _training_overrides(args, "rigorous"))
    if not Path(args.source).is_file():
        raise UsageError(f"checkpoint not found: {args.source}")
    pre = load_agent(args.source)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    agent, curve = transfer(pre, cfg.env, cfg.train, checkpoint_dir=out / "checkpoints",
                            progress=_progress(args.log_every))
    resolved = dict(resolved, pretrained=str(args.source))
    _finish_run(out, agent, curve, "transfer", argv, resolved, started)
    return EXIT_OK


def cmd_eval(args, argv) -> int:
    from .agent.train import evaluate_policy, load_agent

    started = _now()
    o = _training_overrides(args, "rigorous")
    cfg, resolved = _resolve(args, o)
    if not Path(args.checkpoint).is_file():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    agent = load_agent(args.checkpoint)
    n = args.episodes if args.episodes is not None else 10
    episodes = evaluate_policy(agent, cfg.env, n, greedy=args.greedy, seed=cfg.train.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "eval.csv", ["episode", "reward", "status"],
               [(i + 1, _num(ep.reward), ep.status) for i, ep in enumerate(episodes)])
    outputs = ["eval.csv"]
    if episodes:
        best = max(episodes, key=lambda ep: ep.reward)
        (out / "best_flowsheet.fs").write_text(serialize(best.final_state), encoding="utf-8")
        outputs.append("best_flowsheet.fs")
        print(f"{n} episodes, best reward {best.reward:.6g}")
    resolved = dict(resolved, checkpoint=str(args.checkpoint), greedy=bool(args.greedy))
    _write_manifest(out, "eval", argv, resolved, started, outputs)
    return EXIT_OK


# -- parser -------------------------------------------------------------------


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="YAML config file layered over the built-in defaults")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="dotted override applied after the config file, e.g. train.lr=1e-4")


def _run_flags(p: argparse.ArgumentParser, env_default: str):
    p.add_argument("--env", choices=[f.value for f in Fidelity], help=f"simulator fidelity (default {env_default})")
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True, help="run directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flowsynth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a flowsheet file and write stream and economics tables")
    p.add_argument("flowsheet")
    p.add_argument("--fidelity", choices=[f.value for f in Fidelity])
    p.add_argument("--out", default=".", help="output directory (default: current)")
    _common(p)

    for name, env_default, helptext in (("train", "shortcut", "train an agent from scratch"),
                                        ("transfer", "rigorous", "fine-tune a pretrained checkpoint")):
        p = sub.add_parser(name, help=helptext)
        _run_flags(p, env_default)
        if name == "transfer":
            p.add_argument("--from", dest="source", required=True, help="pretrained checkpoint")
        p.add_argument("--workers", type=int, help="parallel rollout workers (default 1)")
        p.add_argument("--checkpoint-every", type=int, help="episodes between periodic checkpoints")
        p.add_argument("--log-every", type=int, default=100)
        _common(p)

    p = sub.add_parser("eval", help="roll out a checkpoint and export its best flowsheet")
    _run_flags(p, "rigorous")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--greedy", action="store_true", help="argmax at every action level")
    _common(p)
    return parser


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "transfer": cmd_transfer, "eval": cmd_eval}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args, argv)
    except ParseError as exc:
        print(f"error: {args.command}: {exc}", file=sys.stderr)
    except (UsageError, C.ConfigError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
