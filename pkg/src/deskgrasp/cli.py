"""Command-line interface.

Every subcommand prints a JSON result to stdout and exits 0 on success; all
failures print a machine-readable {"error": {"type", "message"}} object to
stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .baseline import CNNBaseline, CNNConfig
from .checkpoint import load_model, save_checkpoint
from .dataset import load_dataset, save_dataset
from .errors import ConfigurationError, DeskGraspError
from .evaluate import evaluate
from .fileio import atomic_write_json
from .gmm import GmmModel, fit_gmm
from .interpreter import RemoteInterpreter
from .model import PolicyConfig, PolicyNet
from .pipeline import load_registry, run_inference_pipeline
from .scene import SceneConfig, demos_to_arrays, generate_demos
from .skills import ContextSet, SceneObservation, plan
from .sweep import SweepConfig, parse_sweep_csv, run_sweep
from .train import TrainConfig, train_model


def _emit(obj: dict):
    print(json.dumps(obj, sort_keys=True))


def _scene_config(args) -> SceneConfig:
    return SceneConfig(height=args.height, width=args.width, scale=args.scale)


def cmd_gen_data(args) -> int:
    demos = generate_demos(args.n, seed=args.seed, config=_scene_config(args))
    save_dataset(args.out, demos)
    _emit({"command": "gen-data", "out": args.out, "n": args.n,
           "seed": args.seed})
    return 0


def _build_training_model(args, height: int, width: int, action_dim: int):
    overrides = {}
    if args.config:
        with open(args.config) as f:
            overrides = json.load(f)
        kind = overrides.pop("model", args.model)
        if kind != args.model:
            raise ConfigurationError(
                f"config file says model {kind!r} but --model is {args.model!r}")
    overrides.setdefault("height", height)
    overrides.setdefault("width", width)
    overrides.setdefault("action_dim", action_dim)
    if args.model == "rasnet":
        return PolicyNet(PolicyConfig.from_json(overrides), seed=args.seed)
    return CNNBaseline(CNNConfig.from_json(overrides), seed=args.seed)


def cmd_train(args) -> int:
    demos = load_dataset(args.data)
    images, actions = demos_to_arrays(demos)
    model = _build_training_model(args, images.shape[2], images.shape[3],
                                  actions.shape[1])
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                         optimizer=args.optimizer, lr=args.lr, seed=args.seed,
                         log_path=args.log, clip_norm=args.clip_norm,
                         max_steps=args.max_steps)
    history = train_model(model, images, actions, config)
    save_checkpoint(args.out, model)
    _emit({"command": "train", "out": args.out, "model": args.model,
           "epochs": len(history), "final_loss": history[-1]["loss"]})
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.ckpt)
    demos = load_dataset(args.data)
    gmm = GmmModel.load(args.gmm) if args.gmm else None
    report = evaluate(model, demos, eps=args.eps, gmm=gmm)
    payload = report.to_json()
    if args.out:
        atomic_write_json(args.out, payload)
    _emit(payload)
    return 0


def cmd_fit_gmm(args) -> int:
    demos = load_dataset(args.data)
    actions = np.stack([d.action for d in demos])
    model = fit_gmm(actions, K=args.k, seed=args.seed)
    model.save(args.out)
    _emit({"command": "fit-gmm", "out": args.out, "k": args.k,
           "converged": model.converged, "n_iter": model.n_iter,
           "log_likelihood": model.log_likelihood,
           "degenerate": model.degenerate})
    return 0


def cmd_sweep(args) -> int:
    config = SweepConfig(
        ns=[int(v) for v in args.ns.split(",")],
        seeds=[int(v) for v in args.seeds.split(",")],
        test_episodes=args.test_episodes, train_steps=args.train_steps)
    rows = run_sweep(config, args.out,
                     progress=lambda row: _emit({"command": "sweep", **row}))
    parse_sweep_csv(args.out, from_path=True)      # schema self-check
    _emit({"command": "sweep", "out": args.out, "rows": len(rows)})
    return 0


def _context_and_interpreter(args):
    context = ContextSet.load(args.context) if args.context else None
    interpreter = RemoteInterpreter(args.endpoint) if args.endpoint else None
    return context, interpreter


def cmd_select_skill(args) -> int:
    scene = SceneObservation.load(args.scene)
    context, interpreter = _context_and_interpreter(args)
    action_plan = plan(args.instruction, scene, context=context,
                       interpreter=interpreter)
    _emit(action_plan.to_json())
    return 0


def cmd_infer(args) -> int:
    scene = SceneObservation.load(args.scene)
    registry = load_registry(args.skills)
    context, interpreter = _context_and_interpreter(args)
    gmm = GmmModel.load(args.gmm) if args.gmm else None
    trace = run_inference_pipeline(args.instruction, scene, registry,
                                   context=context, gmm=gmm,
                                   interpreter=interpreter)
    if args.out:
        atomic_write_json(args.out, trace)
    _emit(trace)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="deskgrasp",
        description="Recurrent-spiking visuomotor policy benchmark tools")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="render a demonstration dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--scale", type=float, default=20.0)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="behavior-clone a policy on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--config", default=None, help="model config JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--model", choices=["rasnet", "cnn"], default="rasnet")
    p.add_argument("--optimizer", choices=["sgd", "adam"], default="adam")
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch-size", type=int, default=8)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--clip-norm", type=float, default=1.0)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--log", default=None, help="per-epoch JSONL metrics path")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--gmm", default=None)
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--out", default=None, help="also write the report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("fit-gmm", help="fit the action-refinement mixture")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=int, default=6)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fit_gmm)

    p = sub.add_parser("sweep", help="data-efficiency sweep vs. the CNN baseline")
    p.add_argument("--ns", default="10,20,40,100,200")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--out", required=True)
    p.add_argument("--train-steps", type=int, default=1500)
    p.add_argument("--test-episodes", type=int, default=200)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("select-skill", help="plan skills for an instruction")
    p.add_argument("--scene", required=True)
    p.add_argument("--instruction", required=True)
    p.add_argument("--context", default=None)
    p.add_argument("--endpoint", default=None)
    p.set_defaults(func=cmd_select_skill)

    p = sub.add_parser("infer", help="run the full plan->policy pipeline")
    p.add_argument("--instruction", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--skills", required=True, help="skill registry JSON")
    p.add_argument("--gmm", default=None)
    p.add_argument("--context", default=None)
    p.add_argument("--endpoint", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_infer)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DeskGraspError as exc:
        print(json.dumps(exc.to_json(), sort_keys=True), file=sys.stderr)
        return 2
    except OSError as exc:
        print(json.dumps({"error": {"type": "io_error", "message": str(exc)}},
                         sort_keys=True), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
