"""Command-line surface: train, eval, infer, gen-data.

Exit codes: 0 ok, 2 usage error, 3 config error, 4 runtime/numerical fault.
Every failure prints a single diagnostic line ``error: <kind>: <message>``
to stderr.  The only environment override is DUALSTYLE_OUT_DIR for the
output directory; everything else comes from flags and the config file.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import inference, trainer
from .attrs import attribute_diff
from .config import ExperimentConfig
from .errors import ConfigError, DualStyleError
from .imageio import ImageGrid, read_image, write_image
from .metrics import evaluate_bundle
from .synthdata import SynthSpec, build_dataset, oracle_classify

MODES = ("label", "reference", "interp", "multiref-avg", "multiref-mix", "reconstruct")


class UsageError(DualStyleError):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualstyle",
                                     description="multi-attribute image translation with label- and reference-based styles")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--steps", type=int, default=None, help="override the config step budget")
    p_train.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_train.add_argument("--out", default=None, help="output directory (default: config out_dir)")
    p_train.add_argument("--progress", action="store_true")

    p_eval = sub.add_parser("eval", help="compute the metric row for a checkpoint")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--out", default=None, help="metric report file (default: stdout only)")
    p_eval.add_argument("--n-eval", type=int, default=None, help="number of (source, target) pairs")
    p_eval.add_argument("--eval-seed", type=int, default=None, help="protocol seed (default: config seed)")

    p_infer = sub.add_parser("infer", help="run one synthesis mode and write an image grid")
    p_infer.add_argument("--config", required=True)
    p_infer.add_argument("--checkpoint", required=True)
    p_infer.add_argument("--mode", required=True, choices=MODES)
    p_infer.add_argument("--source-id", type=int, default=None, help="index into the test split")
    p_infer.add_argument("--source-path", default=None, help="P6 pixmap source image")
    p_infer.add_argument("--ref-ids", default=None, help="comma-separated test-split indices")
    p_infer.add_argument("--ref-paths", default=None, help="comma-separated P6 pixmap paths")
    p_infer.add_argument("--edit", default="", help="edits 'name=bit,...'; ';'-separated groups, one per reference")
    p_infer.add_argument("--alphas", default=None, help="comma-separated interpolation rates")
    p_infer.add_argument("--alpha-count", type=int, default=5, help="uniform alpha grid size incl. endpoints")
    p_infer.add_argument("--noise-seed", type=int, default=0)
    p_infer.add_argument("--out", required=True, help="output pixmap path")

    p_gen = sub.add_parser("gen-data", help="generate the synthetic dataset")
    p_gen.add_argument("--config", required=True)
    p_gen.add_argument("--out", default=None, help="output directory (default: config out_dir)")
    p_gen.add_argument("--dump-images", type=int, default=0, help="also write the first N train images")
    return parser


def _load_config(path: str) -> ExperimentConfig:
    return ExperimentConfig.from_file(path)


def _out_dir(cfg: ExperimentConfig, flag: str | None) -> Path:
    env = os.environ.get("DUALSTYLE_OUT_DIR")
    return Path(flag or env or cfg.out_dir)


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    if args.steps is not None:
        cfg.steps = args.steps
    if args.seed is not None:
        cfg.seed = args.seed
    cfg.validate()
    trainer.run_training(cfg, out_dir=_out_dir(cfg, args.out), progress=args.progress)
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args.config)
    state = trainer.load_checkpoint(args.checkpoint, cfg)
    spec = SynthSpec.from_config(cfg)
    train_ds, test_ds = build_dataset(spec, cfg.n_train, cfg.n_test, cfg.seed)
    seed = cfg.seed if args.eval_seed is None else args.eval_seed
    n_eval = args.n_eval
    if n_eval is not None and n_eval < 1:
        raise UsageError("--n-eval must be at least 1")
    report = evaluate_bundle(state.bundle, spec, train_ds, test_ds, seed=seed,
                             n_eval=n_eval, p_flip=cfg.p_flip,
                             groups=tuple(tuple(g) for g in cfg.groups))
    print("FID(label)|FID(ref)  Acc(label)|Acc(ref)  LPIPS")
    print(report.table_row())
    if args.out:
        Path(args.out).write_text(report.serialize())
    return 0


def _parse_edits(edit_spec: str, cfg: ExperimentConfig) -> list[dict[int, int]]:
    groups = []
    for chunk in edit_spec.split(";"):
        edits: dict[int, int] = {}
        for item in chunk.split(","):
            item = item.strip()
            if not item:
                continue
            if "=" not in item:
                raise UsageError(f"bad edit {item!r}, expected name=0 or name=1")
            name, value = (s.strip() for s in item.split("=", 1))
            if name not in cfg.attr_names:
                raise UsageError(f"unknown attribute {name!r} (have {', '.join(cfg.attr_names)})")
            if value not in ("0", "1"):
                raise UsageError(f"edit value for {name!r} must be 0 or 1")
            edits[cfg.attr_names.index(name)] = int(value)
        groups.append(edits)
    return groups


def _apply_edits(y_s: np.ndarray, edits: dict[int, int]) -> np.ndarray:
    y_t = y_s.copy()
    for idx, value in edits.items():
        y_t[idx] = value
    return y_t


def cmd_infer(args) -> int:
    cfg = _load_config(args.config)
    state = trainer.load_checkpoint(args.checkpoint, cfg)
    bundle = state.bundle
    spec = SynthSpec.from_config(cfg)
    _, test_ds = build_dataset(spec, cfg.n_train, cfg.n_test, cfg.seed)

    def fetch(idx: int | None, path: str | None, what: str):
        if (idx is None) == (path is None):
            raise UsageError(f"give exactly one of an id or a path for the {what}")
        if idx is not None:
            if not 0 <= idx < len(test_ds):
                raise UsageError(f"{what} id {idx} outside test split of size {len(test_ds)}")
            return test_ds.images[idx], test_ds.labels[idx].copy()
        image = read_image(path)
        decision = oracle_classify(spec, image)
        if decision.abstain.any():
            raise UsageError(f"oracle cannot label the {what} image {path}")
        return image, decision.values.copy()

    source, y_s = fetch(args.source_id, args.source_path, "source")
    refs: list[tuple[np.ndarray, np.ndarray]] = []
    if args.ref_ids or args.ref_paths:
        if args.ref_ids and args.ref_paths:
            raise UsageError("give --ref-ids or --ref-paths, not both")
        if args.ref_ids:
            for tok in args.ref_ids.split(","):
                refs.append(fetch(int(tok), None, "reference"))
        else:
            for tok in args.ref_paths.split(","):
                refs.append(fetch(None, tok, "reference"))

    edit_groups = _parse_edits(args.edit, cfg)
    noise = np.random.default_rng([cfg.seed, 21, args.noise_seed]).standard_normal(cfg.noise_dim)
    mode = args.mode
    tiles: list[np.ndarray] = [source]
    captions = ["source"]

    if mode in ("reference", "interp", "multiref-avg", "multiref-mix") and not refs:
        raise UsageError(f"mode {mode!r} requires at least one reference")

    if mode == "reconstruct":
        diff = np.zeros(cfg.n_attrs, dtype=np.int8) if not edit_groups[0] else \
            attribute_diff(y_s, _apply_edits(y_s, edit_groups[0]))
        tiles.append(inference.label_based(bundle, source, diff, noise))
        captions.append("reconstruct")
    elif mode == "label":
        diff = attribute_diff(y_s, _apply_edits(y_s, edit_groups[0]))
        tiles.append(inference.label_based(bundle, source, diff, noise))
        captions.append("label-based")
    elif mode == "reference":
        ref_img, y_r = refs[0]
        edits = edit_groups[0] or {i: int(y_r[i]) for i in range(cfg.n_attrs) if y_r[i] != y_s[i]}
        diff = attribute_diff(y_s, _apply_edits(y_s, edits))
        tiles.append(ref_img)
        captions.append("reference")
        tiles.append(inference.reference_based(bundle, source, ref_img, diff))
        captions.append("reference-based")
    elif mode == "interp":
        ref_img, y_r = refs[0]
        edits = edit_groups[0] or {i: int(y_r[i]) for i in range(cfg.n_attrs) if y_r[i] != y_s[i]}
        diff = attribute_diff(y_s, _apply_edits(y_s, edits))
        if args.alphas is not None:
            alphas = [float(a) for a in args.alphas.split(",")]
        else:
            count = max(2, args.alpha_count)
            alphas = [i / (count - 1) for i in range(count)]
        for a in alphas:
            if not 0.0 <= a <= 1.0:
                raise UsageError(f"alpha {a} outside [0, 1]")
        tiles.append(ref_img)
        captions.append("reference")
        for a, img in zip(alphas, inference.interp_sweep(bundle, source, ref_img, diff, noise, alphas)):
            tiles.append(img)
            captions.append(f"alpha={a:g}")
    else:  # multiref-avg / multiref-mix
        if len(edit_groups) == 1 and len(refs) > 1 and not edit_groups[0]:
            edit_groups = [dict() for _ in refs]
        if len(edit_groups) != len(refs):
            raise UsageError(f"need one ';'-separated edit group per reference "
                             f"({len(refs)} references, {len(edit_groups)} groups)")
        diffs = []
        for (ref_img, y_r), edits in zip(refs, edit_groups):
            edits = edits or {i: int(y_r[i]) for i in range(cfg.n_attrs) if y_r[i] != y_s[i]}
            diffs.append(attribute_diff(y_s, _apply_edits(y_s, edits)))
        for ref_img, _ in refs:
            tiles.append(ref_img)
            captions.append("reference")
        ref_imgs = [r for r, _ in refs]
        if mode == "multiref-avg":
            tiles.append(inference.multiref_average(bundle, source, ref_imgs, diffs))
            captions.append("avg")
        else:
            tiles.append(inference.multiref_mix(bundle, source, ref_imgs, diffs))
            captions.append("mix")

    grid = ImageGrid(1, len(tiles), cfg.image_size)
    for i, tile in enumerate(tiles):
        grid.set(0, i, tile)
    grid.col_captions = captions
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    grid.save(out)
    return 0


def cmd_gen_data(args) -> int:
    cfg = _load_config(args.config)
    out = _out_dir(cfg, args.out)
    out.mkdir(parents=True, exist_ok=True)
    spec = SynthSpec.from_config(cfg)
    train_ds, test_ds = build_dataset(spec, cfg.n_train, cfg.n_test, cfg.seed)
    train_ds.save_manifest(out / "train_manifest.tsv")
    test_ds.save_manifest(out / "test_manifest.tsv")
    for i in range(min(args.dump_images, len(train_ds))):
        write_image(out / f"train_{int(train_ds.ids[i]):06d}.ppm", train_ds.images[i])
    print(f"wrote manifests for {len(train_ds)} train / {len(test_ds)} test samples to {out}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"train": cmd_train, "eval": cmd_eval, "infer": cmd_infer, "gen-data": cmd_gen_data}
    try:
        return handlers[args.command](args)
    except (UsageError, ValueError) as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
        return 3
    except (DualStyleError, FileNotFoundError, OSError) as exc:
        print(f"error: runtime: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
