"""Command-line entry point: ``neuraltraj <verb> ...``.

Exit codes: 0 ok, 2 configuration error, 3 stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .exceptions import ConfigError, MissingOutputs, NeuralTrajError, StageFailure
from .pipeline import ExperimentManifest, build_preset, report, run
from .pipeline.presets import PRESETS, SCALES
from .pipeline.stages import STAGES

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


def _csv(s: str) -> list[str]:
    return [x for x in s.split(",") if x]


def _ints(s: str) -> list[int]:
    return [int(x) for x in _csv(s)]


def _extra(args) -> dict:
    if not args.config:
        return {}
    try:
        d = json.loads(args.config)
    except json.JSONDecodeError as e:
        raise ConfigError(f"--config is not JSON: {e}") from None
    if not isinstance(d, dict):
        raise ConfigError("--config must be a JSON object")
    return d


def _stage_parser(sub, verb, help_):
    p = sub.add_parser(verb, help=help_, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0, help="stage seed")
    p.add_argument("--config", default="", help="extra stage config as a JSON object")
    return p


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="neuraltraj", description=__doc__,
                                 formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = ap.add_subparsers(dest="verb", required=True)

    p = _stage_parser(sub, "gen-teleop", "scripted-expert episodes")
    p.add_argument("--tasks", type=_csv, required=True, help="comma-separated task ids")
    p.add_argument("--envs", type=_ints, default=[0], help="comma-separated env ids")
    p.add_argument("--n-per", type=int, default=10, help="episodes per (task, env)")
    p.add_argument("--agent", choices=["robot", "human"], default="robot")
    p.add_argument("--no-actions", action="store_true", help="drop actions and states (video only)")

    p = _stage_parser(sub, "pretrain-wm", "pretrain the world model on a video corpus")
    p.add_argument("--corpus", required=True, help="dataset directory")
    p.add_argument("--steps", type=int, default=3000)

    p = _stage_parser(sub, "finetune-wm", "LoRA-finetune a world model on robot videos")
    p.add_argument("--model", required=True, help="world-model checkpoint")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--steps", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--r", type=int, default=4, help="LoRA rank")
    p.add_argument("--alpha", type=float, default=4.0, help="LoRA alpha")

    p = _stage_parser(sub, "rollout", "generate videos from a world model")
    p.add_argument("--model", required=True, help="world-model checkpoint")
    p.add_argument("--tasks", type=_csv, required=True)
    p.add_argument("--envs", type=_ints, default=[0])
    p.add_argument("--n-per", type=int, default=4)
    p.add_argument("--T", type=int, default=64, help="frames generated after the initial one")

    p = _stage_parser(sub, "label", "attach pseudo-actions to videos")
    p.add_argument("--videos", required=True, help="dataset directory to label")
    p.add_argument("--method", choices=["idm", "latent"], default="idm")
    p.add_argument("--train", default=None, help="dataset to train the labeler on (IDM needs actions)")
    p.add_argument("--labeler", default=None, help="reuse a trained labeler checkpoint instead")
    p.add_argument("--steps", type=int, default=None, help="labeler training steps (estimator default if unset)")

    p = _stage_parser(sub, "train-policy", "train a policy on real and/or neural data")
    p.add_argument("--real", default=None, help="real dataset directory")
    p.add_argument("--neural", default=None, help="neural dataset directory")
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--n-real", type=int, default=None, help="use only this many real episodes")
    p.add_argument("--n-neural", type=int, default=None, help="use only this many neural episodes")
    p.add_argument("--ratio", type=_ints, default=[1, 1], help="real:neural sampling ratio")
    p.add_argument("--neural-target", choices=["actions", "latent"], default="actions")
    p.add_argument("--exec-head", choices=["auto", "r", "n"], default="auto")

    p = _stage_parser(sub, "eval", "closed-loop evaluation of a policy checkpoint")
    p.add_argument("--model", required=True, help="policy checkpoint")
    p.add_argument("--tasks", type=_csv, required=True)
    p.add_argument("--envs", type=_ints, default=None, help="override env ids")
    p.add_argument("--trials", type=int, default=10)

    p = _stage_parser(sub, "bench", "IF / PA scores of generated videos")
    p.add_argument("--videos", required=True, help="dataset directory")

    for verb, help_ in (("run", "execute a manifest"), ("report", "summarize a completed manifest run")):
        p = sub.add_parser(verb, help=help_, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.add_argument("manifest", help="manifest JSON path")
        p.add_argument("--workdir", default="runs", help="cache and report root")
        if verb == "run":
            p.add_argument("--resume", action="store_true", help="skip stages whose cached outputs verify")
            p.add_argument("--no-report", action="store_true", help="skip writing the report")
        else:
            p.add_argument("--out", default=None, help="report directory (default <workdir>/reports/<name>)")

    p = sub.add_parser("preset", help="write a preset manifest", formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("name", choices=sorted(PRESETS))
    p.add_argument("--scale", choices=sorted(SCALES), default="full")
    p.add_argument("--seed", type=int, default=0, help="manifest seed")
    p.add_argument("--out", required=True, help="manifest JSON path")
    return ap


def _stage_config(args) -> tuple[dict, dict]:
    v = args.verb
    if v == "gen-teleop":
        cfg = {"tasks": args.tasks, "envs": args.envs, "n_per": args.n_per, "agent": args.agent}
        if args.no_actions:
            cfg.update(with_actions=False, with_states=False)
        return cfg, {}
    if v == "pretrain-wm":
        return {"steps": args.steps}, {"corpus": args.corpus}
    if v == "finetune-wm":
        return {"steps": args.steps, "lr": args.lr, "r": args.r, "alpha": args.alpha}, \
            {"model": args.model, "data": args.data}
    if v == "rollout":
        return {"tasks": args.tasks, "envs": args.envs, "n_per": args.n_per, "T": args.T}, {"model": args.model}
    if v == "label":
        cfg = {"method": args.method} | ({"steps": args.steps} if args.steps else {})
        ins = {"videos": args.videos} | {k: getattr(args, k) for k in ("train", "labeler") if getattr(args, k)}
        return cfg, ins
    if v == "train-policy":
        cfg = {"steps": args.steps, "ratio": args.ratio, "neural_target": args.neural_target,
               "exec_head": args.exec_head}
        cfg |= {k: getattr(args, k) for k in ("n_real", "n_neural") if getattr(args, k) is not None}
        return cfg, {k: getattr(args, k) for k in ("real", "neural") if getattr(args, k)}
    if v == "eval":
        return {"tasks": args.tasks, "trials": args.trials} | ({"envs": args.envs} if args.envs else {}), \
            {"model": args.model}
    if v == "bench":
        return {}, {"videos": args.videos}
    raise ConfigError(v)


def _run_stage(args) -> int:
    cfg, inputs = _stage_config(args)
    cfg |= _extra(args)
    for name, path in inputs.items():
        if not Path(path).exists():
            raise ConfigError(f"--{name} {path} does not exist")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        outs = STAGES[args.verb](cfg, {k: Path(p) for k, p in inputs.items()}, out, args.seed)
    except ConfigError:
        raise
    except Exception as e:
        raise StageFailure(args.verb, f"{type(e).__name__}: {e}") from e
    print(json.dumps({k: str(out / p) for k, p in outs.items()}))
    return EXIT_OK


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.verb == "preset":
            build_preset(args.name, args.scale, args.seed).save(args.out)
            print(args.out)
            return EXIT_OK
        if args.verb in ("run", "report"):
            m = ExperimentManifest.load(args.manifest)
            if args.verb == "run":
                run(m, args.workdir, resume=args.resume, log=lambda s: print(s, flush=True))
                if args.no_report:
                    return EXIT_OK
                rep = report(m, args.workdir)
            else:
                rep = report(m, args.workdir, args.out)
            print(rep.files["markdown"].read_text(encoding="utf-8"))
            print(f"report written to {rep.directory}")
            return EXIT_OK
        return _run_stage(args)
    except (ConfigError, MissingOutputs) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NeuralTrajError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
