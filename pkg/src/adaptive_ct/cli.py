"""Command-line entry point: ``adaptive-ct {gen-data,train,eval,plot,inspect-checkpoint}``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path


from . import checkpoint as ckpt_io
from . import evaluation as ev
from . import plotting
from .config import ConfigError, RunConfig, config_from_dict, load_config
from .phantoms import generate_dataset, load_dataset, save_dataset
from .trainer import METRICS_HEADER, Trainer, TrainingAborted

log = logging.getLogger("adaptive_ct")

EXIT_CONFIG = 2
EXIT_ABORT = 3
EXIT_GEOMETRY = 4
EXIT_CSV = 5


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.workers is not None:
        overrides["workers"] = args.workers
    if args.mask_repeats:
        overrides["mask_repeats"] = True
    if args.greedy is not None:
        overrides["greedy"] = args.greedy
    return cfg.replace(**overrides) if overrides else cfg


def _echo_config(cfg: RunConfig, out: Path) -> None:
    text = cfg.dumps()
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.txt").write_text(text)
    print("# resolved config")
    print(text, end="")


def cmd_gen_data(cfg: RunConfig, out: Path) -> int:
    for split in ("train", "test"):
        spec = cfg.dataset_spec(split)
        records = generate_dataset(spec)
        path = out / f"{split}.ctph"
        save_dataset(path, records, spec.image_size)
        kinds = {k: sum(1 for _, s in records if s.kind == k) for k in spec.shape_kinds}
        grid = sorted(set(spec.rotation_grid))
        print(f"{path}: {len(records)} phantoms, kinds {kinds}, "
              f"{len(grid)} rotations {grid[0]:g}..{grid[-1]:g} deg")
    return 0


def _load_images(path: Path, cfg: RunConfig):
    size, records = load_dataset(path)
    if size != cfg.image_size:
        print(f"geometry mismatch: dataset {path} has image size {size}, "
              f"config expects {cfg.image_size}", file=sys.stderr)
        raise SystemExit(EXIT_GEOMETRY)
    return records


def _truncate_metrics(path: Path, episodes: int) -> None:
    """Keep the header plus the first ``episodes`` rows."""
    lines = path.read_text().splitlines(keepends=True) if path.exists() else []
    keep = lines[:1 + episodes] if lines else [",".join(METRICS_HEADER) + "\n"]
    path.write_text("".join(keep))


def cmd_train(cfg: RunConfig, out: Path, data: Path | None, resume: Path | None) -> int:
    records = _load_images(data or out / "train.ctph", cfg)
    images = [img for img, _ in records]
    trainer = Trainer(images, cfg.environment(), cfg.agent_config(), cfg.train_config())
    metrics = out / "metrics.csv"
    if resume is not None:
        state = ckpt_io.load(resume)
        saved = config_from_dict(state.config)
        if saved.image_size != cfg.image_size:
            print(f"geometry mismatch: checkpoint image size {saved.image_size}, "
                  f"config {cfg.image_size}", file=sys.stderr)
            return EXIT_GEOMETRY
        ckpt_io.restore_trainer(trainer, state)
        _truncate_metrics(metrics, trainer.episode)
    else:
        metrics.write_text(",".join(METRICS_HEADER) + "\n")

    remaining = cfg.episodes - trainer.episode
    snapshot = cfg.to_dict()
    with open(metrics, "a") as fh:
        def on_record(rec):
            fh.write(rec.csv_row() + "\n")
            if cfg.checkpoint_every and trainer.episode % cfg.checkpoint_every == 0:
                fh.flush()
                ckpt_io.save(out / f"ckpt_{trainer.episode:07d}.ctac",
                             ckpt_io.from_trainer(trainer, snapshot))
        try:
            trainer.train(max(remaining, 0), on_record)
        except TrainingAborted as exc:
            fh.flush()
            ckpt_io.save(out / "partial.ctac", ckpt_io.from_trainer(trainer, snapshot))
            print(f"training aborted at episode {trainer.episode}: {exc}", file=sys.stderr)
            return EXIT_ABORT
    ckpt_io.save(out / "final.ctac", ckpt_io.from_trainer(trainer, snapshot))
    print(f"trained {trainer.episode} episodes -> {out / 'final.ctac'}, {metrics}")
    return 0


def cmd_eval(cfg: RunConfig, out: Path, data: Path | None, checkpoint: Path | None) -> int:
    records = _load_images(data or out / "test.ctph", cfg)
    images = [img for img, _ in records]
    shapes = [s for _, s in records]
    env = cfg.eval_environment()
    policies = [ev.EquidistantPolicy(), ev.RandomPolicy()]
    if checkpoint is not None:
        state = ckpt_io.load(checkpoint)
        saved = config_from_dict(state.config)
        if saved.image_size != cfg.image_size:
            print(f"geometry mismatch: checkpoint image size {saved.image_size}, "
                  f"dataset/config image size {cfg.image_size}", file=sys.stderr)
            return EXIT_GEOMETRY
        acfg = saved.agent_config()
        policies = [ev.LearnedPolicy(state.params, acfg, greedy=True, mask_repeats=cfg.mask_repeats),
                    ev.LearnedPolicy(state.params, acfg, greedy=False, mask_repeats=cfg.mask_repeats)
                    ] + policies
        if not cfg.greedy:
            policies = policies[1:]
    reports = []
    for policy in policies:
        rep = ev.evaluate(policy, images, env, cfg.horizon, cfg.eval_seed, "test", cfg.workers)
        ev.write_report_csv(rep, out / f"eval_{rep.policy_id}.csv")
        conc = ev.angle_concentration(rep.angles, shapes)
        med = conc["median"]
        print(f"{rep.policy_id:16s} M={cfg.horizon} PSNR {rep.cell()} dB  "
              f"median angle distance {med if isinstance(med, str) else f'{med:.2f}'}")
        reports.append(rep)
    ev.write_summary(reports, out / "summary.csv")
    return 0


def cmd_plot(out: Path, metrics: list[Path], reports: list[Path], window: int,
             summaries: list[Path] = ()) -> int:
    out.mkdir(parents=True, exist_ok=True)
    try:
        if metrics:
            curves = {p.parent.name or p.stem: plotting.read_metrics(p) for p in metrics}
            (out / "training_curve.svg").write_text(plotting.training_curve_svg(curves, window))
        by_m: dict[int, dict[str, list[float]]] = {}
        for p in reports:
            values, m = plotting.read_report(p)
            label = p.stem[len("eval_"):] if p.stem.startswith("eval_") else p.stem
            by_m.setdefault(m, {})[label] = values
        rows = [row for p in summaries for row in plotting.read_summary(p)]
    except plotting.MalformedCSV as exc:
        print(f"malformed CSV: {exc}", file=sys.stderr)
        return EXIT_CSV
    for m, groups in sorted(by_m.items()):
        (out / f"comparison_M{m}.svg").write_text(
            plotting.box_chart(groups, f"final PSNR, M = {m}", "PSNR [dB]"))
    if summaries:
        (out / "summary.svg").write_text(plotting.summary_chart(rows))
    print(f"wrote plots to {out}")
    return 0


def cmd_inspect(path: Path) -> int:
    state = ckpt_io.load(path)
    print(f"checkpoint {path}: episode {state.episode}")
    for group, opt in state.optimizers.items():
        print(f"  optimizer {group}: t={opt.t} lr={opt.lr} weight_decay={opt.weight_decay}")
    total = 0
    for name, arr in state.params.items():
        total += arr.size
        print(f"  {name:20s} {tuple(arr.shape)}")
    print(f"  {total} parameters")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path)
    common.add_argument("--seed", type=int)
    common.add_argument("--out", type=Path, default=Path("run"))
    common.add_argument("--workers", type=int)
    common.add_argument("--mask-repeats", action="store_true")
    common.add_argument("--greedy", action=argparse.BooleanOptionalAction, default=None)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="adaptive-ct", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-data", parents=[common])
    t = sub.add_parser("train", parents=[common])
    t.add_argument("--data", type=Path)
    t.add_argument("--resume", type=Path)
    e = sub.add_parser("eval", parents=[common])
    e.add_argument("--data", type=Path)
    e.add_argument("--checkpoint", type=Path)
    pl = sub.add_parser("plot", parents=[common])
    pl.add_argument("--metrics", type=Path, nargs="*", default=[])
    pl.add_argument("--reports", type=Path, nargs="*", default=[])
    pl.add_argument("--summaries", type=Path, nargs="*", default=[])
    pl.add_argument("--window", type=int, default=500)
    i = sub.add_parser("inspect-checkpoint", parents=[common])
    i.add_argument("checkpoint", type=Path)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.command == "inspect-checkpoint":
        return cmd_inspect(args.checkpoint)
    if args.command == "plot":
        return cmd_plot(args.out, args.metrics, args.reports, args.window, args.summaries)
    try:
        cfg = _resolve_config(args)
    except ConfigError as exc:
        print(f"config error ({exc.key}): {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _echo_config(cfg, args.out)
    try:
        if args.command == "gen-data":
            return cmd_gen_data(cfg, args.out)
        if args.command == "train":
            return cmd_train(cfg, args.out, args.data, args.resume)
        return cmd_eval(cfg, args.out, args.data, args.checkpoint)
    except SystemExit as exc:
        return int(exc.code)


if __name__ == "__main__":
    sys.exit(main())
