"""Command-line front end: train, eval, predict, sweep, bench.

Settings resolve in the order defaults < config file < --variant < explicit
flags; flags always win. Config files use the same ``key = value`` format as
dataset sidecars, keyed by the flag names with underscores (plus ``variant``,
``scenario``, ``n_scenes``, ``jitter``, ``data_dir``, ``fold``).

Variant tags follow the SGAN-kVP-N naming: ``<k>V`` trains with a best-of-k
loss and no pooling, ``<k>VP`` adds the pooling module, ``lstm-only`` is the
plain deterministic sequence model, and ``linear`` (eval only) is the
least-squares baseline.
"""

from __future__ import annotations

import argparse
import csv
import re
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .data import Scene, leave_one_out, load_dataset_dir, load_set, dump_predictions, parse_sidecar
from .estimators import LinearForecaster, SocialGanForecaster
from .metrics import ade, collision_rate, fde, min_of_n
from .model import DivergenceError
from .rng import substream
from .scenarios import KINDS, synth_scenarios

_SETTING_TYPES = {
    "t_obs": int, "t_pred": int, "noise_dim": int, "k_variety": int,
    "pool_mode": str, "batch_scenes": int, "epochs": int, "lr": float,
    "adv_weight": float, "variety_weight": float, "seed": int,
    "grid_neighborhood": float, "grid_cells": int,
}

_DATA_KEYS = ("data_dir", "fold", "scenario", "n_scenes", "jitter", "stride")


def variant_overrides(tag: str) -> dict:
    """Map a variant tag onto estimator settings."""
    if tag in ("lstm", "lstm-only"):
        return {"k_variety": 1, "pool_mode": "none", "noise_dim": 0, "adv_weight": 0.0}
    m = re.fullmatch(r"(\d+)V(P?)", tag)
    if m is None:
        raise ValueError(f"unknown variant {tag!r} (use e.g. 20V, 20VP, lstm-only)")
    return {"k_variety": int(m.group(1)), "pool_mode": "once" if m.group(2) else "none"}


def resolve_settings(args) -> dict:
    """Estimator kwargs merged from config file, variant tag, and flags."""
    settings: dict = {}
    file_cfg = parse_sidecar(args.config) if getattr(args, "config", None) else {}
    for key, value in file_cfg.items():
        if key == "k":
            key = "k_variety"
        if key in _SETTING_TYPES:
            settings[key] = _SETTING_TYPES[key](value)
    variant = getattr(args, "variant", None) or file_cfg.get("variant")
    if variant and variant != "linear":
        settings.update(variant_overrides(variant))
    for key in _SETTING_TYPES:
        flag = getattr(args, key, None)
        if flag is not None:
            settings[key] = flag
    return settings


def _data_option(args, name, cast=str):
    value = getattr(args, name, None)
    if value is None and getattr(args, "config", None):
        value = parse_sidecar(args.config).get(name)
        if value is not None:
            value = cast(value)
    return value


def load_corpus(args, settings) -> dict[str, list[Scene]]:
    """Scenes grouped by fold name, from a data directory or a scenario kind."""
    t_obs = settings.get("t_obs", 8)
    t_pred = settings.get("t_pred", 8)
    scenario = _data_option(args, "scenario")
    data_dir = _data_option(args, "data_dir")
    if scenario is not None:
        n_scenes = _data_option(args, "n_scenes", int) or 200
        jitter = _data_option(args, "jitter", float)
        jitter = 0.03 if jitter is None else jitter
        rng = substream(settings.get("seed", 0), f"scenario/{scenario}")
        return {scenario: synth_scenarios(scenario, n_scenes, rng, t_obs, t_pred, jitter)}
    if data_dir is not None:
        stride = _data_option(args, "stride", int) or 1
        return load_dataset_dir(data_dir, t_obs, t_pred, stride)
    raise FileNotFoundError("no data source: pass --data-dir or --scenario (or set one in --config)")


def _rebuild_generator(est: SocialGanForecaster, **overrides):
    """Clone the trained weights into a generator with altered settings
    (pool_mode / horizons); all pooling paths are always allocated, so the
    weights transfer across modes."""
    params = {**est.get_params(), **overrides}
    twin = SocialGanForecaster(**params)
    twin._init_models()
    source = {p.name: p.value.data for p in est.generator_.params()}
    for p in twin.generator_.params():
        p.value.data = source[p.name].copy()
    return twin.generator_


def model_tag(est, n_samples: int) -> str:
    if isinstance(est, LinearForecaster):
        return "Linear"
    if est.noise_dim == 0 and est.adv_weight == 0 and est.pool_mode == "none":
        return "LSTM"
    suffix = "P" if est.pool_mode != "none" else ""
    return f"SGAN-{est.k_variety}V{suffix}-{n_samples}"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    settings = resolve_settings(args)
    if (getattr(args, "variant", None) or "") == "linear":
        print("the linear baseline has no trainable parameters", file=sys.stderr)
        return 2
    folds = load_corpus(args, settings)
    fold = _data_option(args, "fold")
    if fold is not None:
        if fold not in folds:
            print(f"unknown fold {fold!r}; available: {sorted(folds)}", file=sys.stderr)
            return 2
        scenes = [s for name, ss in folds.items() if name != fold for s in ss]
        if not scenes:  # single synthetic corpus: holding it out leaves nothing
            scenes = folds[fold]
    else:
        scenes = [s for ss in folds.values() for s in ss]

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    est = SocialGanForecaster(**settings)
    log_rows = []
    try:
        est.fit(scenes, progress=log_rows.append)
    except DivergenceError as e:
        print(f"training diverged: {e}", file=sys.stderr)
        return 3
    est.save(out_dir / "model.ckpt")
    with open(out_dir / "train_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "d_loss", "g_adv", "g_variety"])
        for rec in log_rows:
            writer.writerow([rec["epoch"], f"{rec['d_loss']:.9f}",
                             f"{rec['g_adv']:.9f}", f"{rec['g_variety']:.9f}"])
    print(f"wrote {out_dir / 'model.ckpt'} and {out_dir / 'train_log.csv'}")
    return 0


def _eval_one(est, scenes, n_samples, seed, fold, threshold, workers) -> dict:
    start = time.perf_counter()
    if isinstance(est, LinearForecaster):
        preds = est.predict(scenes)
        best = preds
        scene_ade = [ade(s.future, p) for s, p in zip(scenes, preds)]
        scene_fde = [fde(s.future, p) for s, p in zip(scenes, preds)]
    else:
        def draw(item):
            idx, scene = item
            rng = substream(seed, f"eval/{fold}/{idx}")
            return est.generator_.sample(scene, n_samples, rng)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                sample_sets = list(pool.map(draw, enumerate(scenes)))
        else:
            sample_sets = [draw(item) for item in enumerate(scenes)]
        scene_ade, scene_fde, best = [], [], []
        for scene, samples in zip(scenes, sample_sets):
            positions = [s.positions for s in samples]
            scene_ade.append(min_of_n(ade, scene.future, positions))
            scene_fde.append(min_of_n(fde, scene.future, positions))
            best.append(positions[int(np.argmin([ade(scene.future, p) for p in positions]))])
    return {
        "ade": float(np.mean(scene_ade)),
        "fde": float(np.mean(scene_fde)),
        "collision_rate": collision_rate(best, threshold),
        "seconds": time.perf_counter() - start,
    }


def cmd_eval(args) -> int:
    settings = resolve_settings(args)
    est = SocialGanForecaster.load(args.ckpt)
    # evaluate on windows matching the checkpointed model
    settings["t_obs"], settings["t_pred"] = est.t_obs, est.t_pred
    folds = load_corpus(args, settings)
    fold = _data_option(args, "fold")
    names = [fold] if fold is not None else sorted(folds)
    if fold is not None and fold not in folds:
        print(f"unknown fold {fold!r}; available: {sorted(folds)}", file=sys.stderr)
        return 2

    models: list = [est]
    if args.lstm_ckpt:
        models.append(SocialGanForecaster.load(args.lstm_ckpt))
    if args.with_linear:
        models.append(LinearForecaster(est.t_obs, est.t_pred).fit())

    seed = settings.get("seed", 0)
    rows = []
    for name in names:
        for m in models:
            n = 1 if isinstance(m, LinearForecaster) else args.n_samples
            r = _eval_one(m, folds[name], n, seed, name, args.collision_threshold, args.workers)
            rows.append([name, model_tag(m, n), n, f"{r['ade']:.6f}", f"{r['fde']:.6f}",
                         f"{r['collision_rate']:.6f}", f"{r['seconds']:.4f}"])

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fold", "model", "n_samples", "ade", "fde", "collision_rate", "seconds"])
        writer.writerows(rows)
    print(f"wrote {out}")
    return 0


def _load_scene_file(path, t_obs, t_pred, stride) -> list[Scene]:
    _, scenes = load_set(path, t_obs, t_pred, stride)
    if not scenes:
        raise FileNotFoundError(f"{path}: no complete {t_obs}+{t_pred}-step windows")
    return scenes


def cmd_predict(args) -> int:
    est = SocialGanForecaster.load(args.ckpt)
    scenes = _load_scene_file(args.scene_file, est.t_obs, est.t_pred, args.stride)
    rng = substream(args.seed, "predict")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        for scene_id, scene in enumerate(scenes):
            if args.n_samples == 0:
                continue
            for sample_id, sample in enumerate(est.generator_.sample(scene, args.n_samples, rng)):
                dump_predictions(fh, scene_id, sample_id, sample.positions,
                                 scene.ped_ids, scene.t_obs)
    print(f"wrote {out}")
    return 0


def cmd_sweep(args) -> int:
    est = SocialGanForecaster.load(args.ckpt)
    scenes = _load_scene_file(args.scene_file, est.t_obs, est.t_pred, args.stride)
    if not 0 <= args.scene_index < len(scenes):
        print(f"scene index {args.scene_index} out of range ({len(scenes)} scenes)", file=sys.stderr)
        return 2
    scene = scenes[args.scene_index]
    if "," in args.direction:
        direction = np.array([float(v) for v in args.direction.split(",")])
    else:
        direction = np.zeros(est.noise_dim)
        direction[int(args.direction)] = 1.0
    alphas = [float(v) for v in args.alphas.split(",")]
    try:
        samples = est.generator_.latent_sweep(scene, direction, alphas)
    except ValueError as e:
        print(str(e), file=sys.stderr)
        return 2
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        for sample_id, sample in enumerate(samples):
            dump_predictions(fh, args.scene_index, sample_id, sample.positions,
                             scene.ped_ids, scene.t_obs)
    print(f"wrote {out}")
    return 0


def _bench_scene(n_people: int, t_obs: int, t_pred: int, rng) -> Scene:
    """Random straight-line crowd in a 10 m box (future part is filler)."""
    total = t_obs + t_pred
    start = rng.uniform(-5.0, 5.0, size=(n_people, 1, 2))
    angle = rng.uniform(0, 2 * np.pi, size=n_people)
    vel = 1.2 * np.stack([np.cos(angle), np.sin(angle)], axis=1)[:, None, :]
    steps = np.arange(total)[None, :, None] * 0.4
    return Scene(0, list(range(1, n_people + 1)), start + vel * steps, t_obs)


BENCH_MODES = (("lstm-only", "none"), ("pool-once", "once"),
               ("pool-per-step", "per_step"), ("grid-per-step", "grid"))


def cmd_bench(args) -> int:
    if args.ckpt:
        est = SocialGanForecaster.load(args.ckpt)
    else:
        est = SocialGanForecaster(seed=args.seed if args.seed is not None else 0)
        est._init_models()
    sizes = [int(v) for v in args.sizes.split(",")]
    horizons = [int(v) for v in args.t_pred_list.split(",")]
    rng = substream(est.seed, "bench")

    rows = []
    for label, mode in BENCH_MODES:
        for t_pred in horizons:
            gen = _rebuild_generator(est, pool_mode=mode, t_pred=t_pred)
            for n_people in sizes:
                scene = _bench_scene(n_people, est.t_obs, t_pred, rng)
                gen.predict_scenes([scene])  # warm-up
                best = min(
                    _timed(gen, scene) for _ in range(args.repeats)
                )
                rows.append([label, n_people, t_pred, f"{best:.6f}", gen.pool_counter.count])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "n_people", "t_pred", "seconds", "pool_calls"])
        writer.writerows(rows)
    print(f"wrote {out}")
    return 0


def _timed(gen, scene) -> float:
    start = time.perf_counter()
    gen.predict_scenes([scene])
    return time.perf_counter() - start


# ---------------------------------------------------------------------------
# argument wiring
# ---------------------------------------------------------------------------


def _add_settings_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value settings file; flags override it")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--variant", help="model variant tag: kV, kVP, lstm-only, linear")
    p.add_argument("--t-obs", dest="t_obs", type=int, default=None)
    p.add_argument("--t-pred", dest="t_pred", type=int, default=None)
    p.add_argument("--k", dest="k_variety", type=int, default=None,
                   help="best-of-k samples during training")
    p.add_argument("--pool-mode", dest="pool_mode", choices=["none", "once", "per_step", "grid"],
                   default=None)
    p.add_argument("--noise-dim", dest="noise_dim", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-scenes", dest="batch_scenes", type=int, default=None)
    p.add_argument("--adv-weight", dest="adv_weight", type=float, default=None)
    p.add_argument("--variety-weight", dest="variety_weight", type=float, default=None)


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data-dir", dest="data_dir", help="directory of frame ped_id x y files")
    p.add_argument("--fold", help="held-out set name (leave-one-out)")
    p.add_argument("--scenario", choices=list(KINDS), help="synthetic corpus kind")
    p.add_argument("--n-scenes", dest="n_scenes", type=int, default=None)
    p.add_argument("--jitter", type=float, default=None)
    p.add_argument("--stride", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="socialgan",
                                     description="train and evaluate the trajectory GAN")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model, write model.ckpt + train_log.csv")
    _add_settings_flags(p)
    _add_data_flags(p)
    p.add_argument("--out-dir", dest="out_dir", default=".")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="min-of-N metrics per fold, to CSV")
    _add_settings_flags(p)
    _add_data_flags(p)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--n-samples", dest="n_samples", type=int, default=1)
    p.add_argument("--with-linear", action="store_true", help="add the linear baseline rows")
    p.add_argument("--lstm-ckpt", dest="lstm_ckpt", help="checkpoint of an lstm-only model to compare")
    p.add_argument("--collision-threshold", dest="collision_threshold", type=float, default=0.10)
    p.add_argument("--out", default="metrics.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", help="dump N samples per scene for plotting")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene-file", dest="scene_file", required=True)
    p.add_argument("--n-samples", dest="n_samples", type=int, default=300)
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="predictions.txt")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("sweep", help="latent-direction sweep on one scene")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--scene-file", dest="scene_file", required=True)
    p.add_argument("--scene-index", dest="scene_index", type=int, default=0)
    p.add_argument("--direction", required=True,
                   help="noise-space direction: an index or a comma-separated vector")
    p.add_argument("--alphas", default="-2,-1,0,1,2")
    p.add_argument("--stride", type=int, default=1)
    p.add_argument("--out", default="sweep.txt")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("bench", help="prediction wall-clock and pooling-call counts")
    p.add_argument("--ckpt", help="optional checkpoint; defaults to fresh init")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--sizes", default="2,4,8,16", help="comma-separated crowd sizes")
    p.add_argument("--t-pred-list", dest="t_pred_list", default="8,12")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--out", default="bench.csv")
    p.set_defaults(func=cmd_bench)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as e:
        print(str(e), file=sys.stderr)
        return 1
    except (ValueError, DivergenceError) as e:
        print(str(e), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
