"""Command-line entry points.

Every command prints the resolved configuration and seed first. Failures exit
nonzero with a single ``error kind=<kind> message="<text>"`` line on stderr.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from .checkpoint import CheckpointError, IncompatibleCheckpoint
from .config import ConfigError, RunConfig, help_text
from .dsp import CLIP_SAMPLES, mono_average
from .learning import Trainer, TrainingDiverged
from .metrics import SepReport, StereoReport, bss_eval, sliding_inference, sliding_separation
from .model import SepStereoModel
from .synth import load_dataset, read_frames, save_dataset, separation_example, solo_subset, synth_dataset
from .wavio import WavFormatError, read_wav, write_wav

EXIT_CODES = {"missing_file": 2, "corrupt_checkpoint": 3, "config": 4, "incompatible": 4, "input": 5, "diverged": 6}


class CliError(Exception):
    def __init__(self, kind: str, message: str):
        super().__init__(message)
        self.kind = kind


def _print_config(cfg: RunConfig) -> None:
    print("# resolved config")
    print(cfg.to_text(), end="")
    print(f"# seed={cfg['seed']}")


def _require(path: str | None, what: str) -> Path:
    if not path or not Path(path).exists():
        raise CliError("missing_file", f"{what} not found: {path}")
    return Path(path)


def _load_config(path: str | None) -> RunConfig:
    if path:
        _require(path, "config")
    return RunConfig.load(path)


def _load_checkpoint(path: str, config_path: str | None):
    """Checkpoint plus the effective config; its architecture keys win over ``--config``."""
    ckpt = ckpt_io.load(_require(path, "checkpoint"))
    if config_path:
        cli_cfg = _load_config(config_path)
        for w in ckpt_io.check_compatible(ckpt.config, cli_cfg):
            print(f"warning: config differs from checkpoint: {w}", file=sys.stderr)
        cfg = RunConfig({**cli_cfg.values, **ckpt.config.architecture()})
    else:
        cfg = RunConfig.load(None)
        cfg.values.update({k: v for k, v in ckpt.config.values.items() if k != "seed"})
        if "SEPSTEREO_SEED" not in os.environ:
            cfg.values["seed"] = ckpt.config["seed"]
    return ckpt, cfg


def _dataset(cfg: RunConfig):
    if cfg["data.dir"]:
        return load_dataset(_require(cfg["data.dir"], "data directory"))
    return synth_dataset(cfg["data.scenes"], seed=cfg["seed"], duration=cfg["data.duration"],
                         height=cfg["model.frame_height"], width=cfg["model.frame_width"])


def _mono_samples(path: str) -> np.ndarray:
    clip = read_wav(_require(path, "audio file"))
    x = mono_average(clip.samples[0], clip.samples[1]) if clip.samples.shape[0] == 2 else clip.samples[0]
    if len(x) < CLIP_SAMPLES:
        raise CliError("input", f"{path}: {len(x)} samples, need at least {CLIP_SAMPLES}")
    return x


def _frames(path: str) -> np.ndarray:
    return read_frames(_require(path, "frames directory"))


# ------------------------------------------------------------------ commands

def cmd_synth(args) -> None:
    cfg = _load_config(args.config)
    if args.seed is not None:
        cfg.values["seed"] = args.seed
    if args.scenes is not None:
        cfg.values["data.scenes"] = args.scenes
    cfg.values["data.dir"] = args.out
    _print_config(cfg)
    data = synth_dataset(cfg["data.scenes"], seed=cfg["seed"], duration=cfg["data.duration"],
                         height=cfg["model.frame_height"], width=cfg["model.frame_width"])
    save_dataset(args.out, data)
    print(f"wrote {len(data)} scenes to {args.out}")


def cmd_train(args) -> None:
    cfg = _load_config(args.config)
    if args.steps is not None:
        cfg.values["train.steps"] = args.steps
    data = _dataset(cfg)
    solos = solo_subset(data)
    streams = {
        "stereo_data": data if args.task in ("stereo", "joint") else (),
        "sep_data": solos if args.task in ("sep", "joint") else (),
        "task": args.task,
    }
    if args.task == "sep" and len(solos) < 2:
        raise CliError("input", f"task sep needs at least two single-source scenes, found {len(solos)}")
    if args.resume:
        ckpt = ckpt_io.load(_require(args.resume, "checkpoint"))
        for w in ckpt_io.check_compatible(ckpt.config, cfg):
            print(f"warning: config differs from checkpoint: {w}", file=sys.stderr)
        cfg = RunConfig({**cfg.values, **ckpt.config.architecture()})
        trainer = ckpt_io.restore_trainer(ckpt, **streams)
    else:
        model = SepStereoModel(cfg.model_config(), seed=cfg["seed"])
        trainer = Trainer(model, cfg.train_config(), cfg.loss_weights(), stft_cfg=cfg.stft_config(), **streams)
    _print_config(cfg)
    n = cfg["train.steps"]
    every = max(1, n // 10)
    with open(cfg["train.log"], "a") if cfg["train.log"] else nullcontext() as log:
        trainer.log = log
        trainer.train(n, lambda rec: print(rec.line()) if rec.step % every == 0 else None)
        trainer.log = None
    if trainer.records and (n - 1) % every:
        print(trainer.records[-1].line())
    ckpt_io.save(args.ckpt, ckpt_io.from_trainer(trainer, cfg))
    print(f"saved checkpoint {args.ckpt} at step {trainer.step}")


def cmd_binauralize(args) -> None:
    ckpt, cfg = _load_checkpoint(args.ckpt, args.config)
    if args.mode:
        cfg.values["infer.mode"] = args.mode
    _print_config(cfg)
    model = ckpt_io.restore_model(ckpt)
    out = sliding_inference(model, _mono_samples(args.mono), _frames(args.frames), cfg=cfg.stft_config(),
                            mode=cfg["infer.mode"])
    write_wav(args.out, out)
    print(f"wrote {args.out} ({out.shape[1]} samples, 2 channels)")


def cmd_separate(args) -> None:
    ckpt, cfg = _load_checkpoint(args.ckpt, args.config)
    _print_config(cfg)
    model = ckpt_io.restore_model(ckpt)
    out = sliding_separation(model, _mono_samples(args.mix), _frames(args.frames_a), _frames(args.frames_b),
                             cfg=cfg.stft_config(), placement=cfg["train.placement"])
    write_wav(args.out_a, out[0])
    write_wav(args.out_b, out[1])
    print(f"wrote {args.out_a} and {args.out_b}")


def cmd_eval_stereo(args) -> None:
    ckpt, cfg = _load_checkpoint(args.ckpt, args.config)
    _print_config(cfg)
    model = ckpt_io.restore_model(ckpt)
    report = StereoReport()
    for ex in load_dataset(_require(args.data, "data directory")):
        pred = sliding_inference(model, ex.mono.samples[0], ex.frames, cfg=cfg.stft_config(), mode=cfg["infer.mode"])
        report.add(pred, ex.stereo.samples)
    print(report.table())
    print(report.keyvalues())


def cmd_eval_sep(args) -> None:
    ckpt, cfg = _load_checkpoint(args.ckpt, args.config)
    _print_config(cfg)
    model = ckpt_io.restore_model(ckpt)
    solos = solo_subset(load_dataset(_require(args.data, "data directory")))
    if len(solos) < 2:
        raise CliError("input", f"need at least two single-source scenes, found {len(solos)}")
    report = SepReport()
    for a, b in zip(solos[0::2], solos[1::2]):
        n = min(len(a.mono), len(b.mono))
        ex = separation_example(a, b, crop=n, cfg=cfg.stft_config())
        est = sliding_separation(model, ex.mix, a.frames, b.frames, cfg=cfg.stft_config(),
                                 placement=cfg["train.placement"])
        report.extend(bss_eval(est, np.stack([ex.a, ex.b])))
    print(report.table())
    print(report.keyvalues())


def cmd_gradcheck(args) -> None:
    from .checks import MODEL_TOL, OP_TOL, run_full_suite, run_op_suite

    cfg = RunConfig.load(None)
    _print_config(cfg)
    ok = True
    for name, err in run_op_suite(trials=args.trials, seed=cfg["seed"]).items():
        ok &= err < OP_TOL
        print(f"{name:24s} max_rel_err={err:.3e} {'ok' if err < OP_TOL else 'FAIL'}")
    if args.full:
        for name, err in run_full_suite(seed=cfg["seed"]).items():
            ok &= err < MODEL_TOL
            print(f"{name:24s} max_rel_err={err:.3e} {'ok' if err < MODEL_TOL else 'FAIL'}")
    if not ok:
        raise CliError("gradcheck", "gradient check exceeded tolerance")


# -------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="sepstereo", formatter_class=argparse.RawDescriptionHelpFormatter,
        description="Visually guided binaural generation and separation.",
        epilog="config keys (key=value file, env SEPSTEREO_SEED overrides seed):\n" + help_text(),
    )
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="render a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--scenes", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--config")
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", help="train and write a checkpoint")
    s.add_argument("--config")
    s.add_argument("--task", choices=("stereo", "sep", "joint"), default="joint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--resume", help="continue from this checkpoint")
    s.add_argument("--steps", type=int, help="override train.steps")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("binauralize", help="mono wav + frames -> binaural wav")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--mono", required=True)
    s.add_argument("--frames", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--mode", choices=("apnet", "unet", "unsupervised"))
    s.add_argument("--config")
    s.set_defaults(func=cmd_binauralize)

    s = sub.add_parser("separate", help="mixture wav + two frame sets -> two wavs")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--mix", required=True)
    s.add_argument("--frames-a", required=True)
    s.add_argument("--frames-b", required=True)
    s.add_argument("--out-a", required=True)
    s.add_argument("--out-b", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_separate)

    for name, func in (("eval-stereo", cmd_eval_stereo), ("eval-sep", cmd_eval_sep)):
        s = sub.add_parser(name, help="evaluate a checkpoint on a dataset directory")
        s.add_argument("--ckpt", required=True)
        s.add_argument("--data", required=True)
        s.add_argument("--config")
        s.set_defaults(func=func)

    s = sub.add_parser("gradcheck", help="finite-difference check of every op")
    s.add_argument("--full", action="store_true", help="also check the composed model")
    s.add_argument("--trials", type=int, default=1)
    s.set_defaults(func=cmd_gradcheck)
    return p


def _fail(kind: str, message: str) -> int:
    print(f"error kind={kind} message={json.dumps(message)}", file=sys.stderr)
    return EXIT_CODES.get(kind, 1)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except CliError as exc:
        return _fail(exc.kind, str(exc))
    except FileNotFoundError as exc:
        return _fail("missing_file", str(exc))
    except IncompatibleCheckpoint as exc:
        return _fail("incompatible", str(exc))
    except CheckpointError as exc:
        return _fail("corrupt_checkpoint", str(exc))
    except ConfigError as exc:
        return _fail("config", str(exc))
    except WavFormatError as exc:
        return _fail("input", str(exc))
    except TrainingDiverged as exc:
        return _fail("diverged", str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
