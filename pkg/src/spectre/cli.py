"""Command-line entry point: ``spectre <command> -c config.json [--set key=value]...``."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from . import config as config_mod
from . import pipeline
from .cyrope import build_table
from .errors import ArtifactError, ConfigError, MissingArtifactError, SpectreError
from .nn import SpectreModel, load_checkpoint, read_checkpoint, write_checkpoint
from .signal import DATASET_MAGIC, read_dataset, read_dataset_header, write_dataset
from .spectral import CODEBOOK_MAGIC, read_codebook, write_codebook
from .train import RunReport, evaluate, finetune_loop, pretrain_loop

COMMANDS = ("synth", "codebook", "pretrain", "finetune", "eval", "ablate", "inspect", "inspect-rope")


def _echo(msg: str) -> None:
    print(msg, flush=True)


def _require(path) -> Path:
    if not path:
        raise ConfigError("a required input path is not set")
    p = Path(path)
    if not p.is_file():
        raise MissingArtifactError(p)
    return p


def _load_data(path, patch_len):
    segs = read_dataset(_require(path), patch_len=patch_len)
    x, y = pipeline.arrays(segs)
    if y is None:
        raise ArtifactError(f"dataset {path} carries no kinematics targets")
    return x, y


def _check_shape(cfg, x, path):
    if x.shape[1:] != (cfg.channels, cfg.segment_len):
        raise ConfigError(f"dataset {path} is [C={x.shape[1]}, L={x.shape[2]}], config expects "
                          f"[C={cfg.channels}, L={cfg.segment_len}]")


def _out(run, name: str) -> Path:
    root = run.output_root()
    root.mkdir(parents=True, exist_ok=True)
    return root / name


def _save_config(run, stem: str) -> None:
    _out(run, f"{stem}.config.json").write_text(json.dumps(run.to_dict(), indent=2, sort_keys=True))


def _log(run):
    return _echo if run.log_every else None


# -- commands ---------------------------------------------------------------------

def cmd_synth(run, args):
    synth = run.synth_cfg()
    out = Path(args.out) if args.out else _out(run, "data.sptr")
    train, test = pipeline.synthetic_split(synth, run.preprocess_cfg(), run.test_segments)
    write_dataset(out, train)
    _echo(f"wrote {out} ({len(train)} segments)")
    if test:
        test_path = out.with_name(out.stem + "_test" + out.suffix)
        write_dataset(test_path, test)
        _echo(f"wrote {test_path} ({len(test)} segments)")


def cmd_codebook(run, args):
    cfg = run.model_cfg()
    if run.pretrain_target == "none":
        raise ConfigError("pretrain_target 'none' needs no codebook")
    x, _ = _load_data(run.train_data, cfg.patch_len)
    _check_shape(cfg, x, run.train_data)
    cb = pipeline.codebook_for(run.pretrain_target, x, cfg.k, run.seeds_obj().data,
                               cfg.patch_len, run.stft_cfg())
    out = Path(args.out) if args.out else _out(run, "codebook.spcb")
    write_codebook(out, cb)
    _echo(f"wrote {out} (K={cb.k}, D_s={cb.dim}, inertia={cb.inertia:.6g}, iters={cb.n_iter})")


def cmd_pretrain(run, args):
    cfg = run.model_cfg()
    if run.pretrain_target == "none":
        raise ConfigError("pretrain_target 'none' has no pre-training stage; run finetune directly")
    x, _ = _load_data(run.train_data, cfg.patch_len)
    _check_shape(cfg, x, run.train_data)
    cb = read_codebook(_require(run.codebook))
    pipeline.check_codebook(cb, run.pretrain_target, cfg)
    seeds = run.seeds_obj().as_dict()
    model, report = pretrain_loop(cfg, run.optim_cfg("pretrain"), x, cb.labels_for(x), seeds,
                                  run.pretrain_target, log=_log(run), log_every=run.log_every)
    report.extra["run_config_hash"] = run.config_hash()
    write_checkpoint(_out(run, "pretrain.spck"), model)
    report.write(_out(run, "pretrain.json"))
    _save_config(run, "pretrain")
    _echo(f"pretrain done: final loss {report.loss_curve[-1]:.4f} (chance {report.metrics['chance_loss']:.4f})")


def cmd_finetune(run, args):
    cfg = run.model_cfg()
    x, y = _load_data(run.train_data, cfg.patch_len)
    _check_shape(cfg, x, run.train_data)
    test = _load_data(run.test_data, cfg.patch_len) if run.test_data else None
    model = None
    target = "none"
    if run.checkpoint:
        model = SpectreModel(cfg, seed=run.seeds_obj().model)
        load_checkpoint(_require(run.checkpoint), model)
        target = run.pretrain_target
    model, report = finetune_loop(cfg, run.optim_cfg("finetune"), x, y, run.seeds_obj().as_dict(),
                                  model=model, eval_data=test, pretrain_target=target,
                                  log=_log(run), log_every=run.log_every)
    report.extra["run_config_hash"] = run.config_hash()
    write_checkpoint(_out(run, "finetune.spck"), model)
    report.write(_out(run, "finetune.json"))
    _save_config(run, "finetune")
    m = report.metrics.get("test", report.metrics["train"])
    _echo(f"finetune done: R2 {m['r2']:.4f} MSE {m['mse']:.5f} MAE {m['mae']:.5f}")


def cmd_eval(run, args):
    cfg = run.model_cfg()
    model = SpectreModel(cfg)
    load_checkpoint(_require(run.checkpoint), model)
    path = run.test_data or run.train_data
    x, y = _load_data(path, cfg.patch_len)
    _check_shape(cfg, x, path)
    metrics = evaluate(model, x, y)
    report = RunReport("eval", run.pretrain_target, cfg.pe_type, cfg.mask_style, cfg.config_hash(),
                       run.seeds_obj().as_dict(), metrics={"test": metrics},
                       extra={"data": str(path), "checkpoint": str(run.checkpoint)})
    report.write(_out(run, "eval.json"))
    _echo(json.dumps(metrics, indent=2))


def cmd_ablate(run, args):
    cfg = run.model_cfg()
    train = _load_data(run.train_data, cfg.patch_len)
    test = _load_data(_require(run.test_data), cfg.patch_len)
    _check_shape(cfg, train[0], run.train_data)
    reports = pipeline.run_ablation(cfg, train, test, run.optim_cfg("pretrain"), run.optim_cfg("finetune"),
                                    seeds=tuple(run.ablate_seeds), pe_types=tuple(run.ablate_pe_types),
                                    targets=tuple(run.ablate_targets), log=_echo,
                                    log_every=run.log_every)
    for pe, target, seed, pre, ft in reports:
        stem = f"ablate/{pe}_{target}_s{seed}"
        if pre is not None:
            pre.write(_out(run, f"{stem}_pretrain.json"))
        ft.write(_out(run, f"{stem}_finetune.json"))
    table = pipeline.ablation_table(reports)
    table["run_config_hash"] = run.config_hash()
    _out(run, "ablation.json").write_text(json.dumps(table, indent=2, sort_keys=True))
    _save_config(run, "ablate")
    for row in table["rows"]:
        _echo(f"{row['pe_type']:>9} {row['pretrain_target']:>14}  R2 {row['r2']['mean']:.4f} "
              f"+- {row['r2']['std']:.4f}")
    for o in table["orderings"]:
        status = "holds" if o["holds"] else "FAILS"
        _echo(f"ordering {o['better']} > {o['worse']}: margin {o['margin']:.4f} "
              f"vs std {o['required']:.4f} -> {status}")


def cmd_inspect(args):
    p = _require(args.path)
    magic = p.read_bytes()[:4]
    if magic == DATASET_MAGIC:
        hdr = read_dataset_header(p.read_bytes())
        read_dataset(p)
        _echo("dataset")
        for k, v in hdr.items():
            _echo(f"  {k}: {v}")
    elif magic == CODEBOOK_MAGIC:
        cb = read_codebook(p)
        _echo("codebook")
        for k, v in (("K", cb.k), ("D_s", cb.dim), ("feature_kind", cb.feature_kind),
                     ("window_len", cb.stft_cfg.window_len), ("hop", cb.stft_cfg.hop),
                     ("log_feature", cb.stft_cfg.log_feature), ("patch_len", cb.patch_len),
                     ("fit_seed", cb.fit_seed), ("inertia", cb.inertia)):
            _echo(f"  {k}: {v}")
    else:
        h, tensors = read_checkpoint(p)
        _echo("checkpoint")
        _echo(f"  config_hash: {h}")
        _echo(f"  parameters: {sum(t.size for t in tensors.values())}")
        for name, t in tensors.items():
            _echo(f"  {name}: {list(t.shape)}")


def cmd_inspect_rope(run, args):
    cfg = run.model_cfg()
    table = build_table(cfg.head_dim, cfg.channels, cfg.temporal_base)
    _echo("pair,theta_t,theta_c")
    for i, tt, tc in table.frequency_rows():
        _echo(f"{i},{tt!r},{tc!r}")


# -- argument handling --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="spectre", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        if name == "inspect":
            sp.add_argument("path")
            continue
        sp.add_argument("-c", "--config", help="run config JSON (defaults apply when omitted)")
        sp.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key; dotted keys reach into sections")
        sp.add_argument("-o", "--out", help="output file (synth, codebook)")
        sp.add_argument("--data", help="training dataset path")
        sp.add_argument("--test-data", help="held-out dataset path")
        sp.add_argument("--codebook", help="codebook path")
        sp.add_argument("--checkpoint", help="checkpoint path")
        sp.add_argument("--k", type=int, help="number of clusters")
        sp.add_argument("--seed", type=int, help="sets all three seeds")
    return parser


def resolve_config(args) -> config_mod.RunConfig:
    run = config_mod.load(args.config) if args.config else config_mod.RunConfig()
    shortcuts = []
    if args.data:
        shortcuts.append(f"train_data={json.dumps(args.data)}")
    if args.test_data:
        shortcuts.append(f"test_data={json.dumps(args.test_data)}")
    if args.codebook:
        shortcuts.append(f"codebook={json.dumps(args.codebook)}")
    if args.checkpoint:
        shortcuts.append(f"checkpoint={json.dumps(args.checkpoint)}")
    if args.k is not None:
        shortcuts.append(f"model.k={args.k}")
    if args.seed is not None:
        shortcuts += [f"seeds.{s}={args.seed}" for s in ("data", "model", "mask")]
    run = config_mod.apply_overrides(run, shortcuts + list(args.set))
    return replace(run, mode=args.command if args.command in config_mod.MODES else run.mode).validate()


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "inspect":
            cmd_inspect(args)
            return 0
        run = resolve_config(args)
        handler = {
            "synth": cmd_synth, "codebook": cmd_codebook, "pretrain": cmd_pretrain,
            "finetune": cmd_finetune, "eval": cmd_eval, "ablate": cmd_ablate,
            "inspect-rope": cmd_inspect_rope,
        }[args.command]
        handler(run, args)
        return 0
    except SpectreError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
