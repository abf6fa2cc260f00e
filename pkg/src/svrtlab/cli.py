"""Command-line entry point tying generation, training, and analysis together.

Subcommands:

- ``gen``       write a packed dataset + manifest (optionally a PNG gallery)
- ``train``     train one task over one or more seeds, write run records
- ``pretrain``  shuffled-label pretraining, write a backbone checkpoint
- ``finetune``  frozen-backbone linear probe from a checkpoint
- ``analyze``   cluster / pca / slopes / correlate over run records
- ``repro``     named end-to-end profiles chaining gen -> train -> analyze

Exit codes: 0 success, 2 usage error, 3 missing data, 4 runtime failure.
Every command writes a ``*.config.json`` echo of its resolved parameters
next to its outputs, and all outputs are deterministic under a fixed seed.
"""

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import datasets, raster
from .analysis import (
    correlate_slopes,
    correlation_table_csv,
    dendrogram_to_csv,
    matrix_from_results,
    matrix_to_csv,
    pca,
    slope_vector,
    ward_cluster,
)
from .errors import SvrtError
from .nn import AttentionConfig, MiniResNet, ModelConfig, insert_attention, load_checkpoint, save_checkpoint
from .plots import dendrogram_svg, label_colors, pca_scatter_svg, save_svg, slope_bars_svg
from .tasks import CLUSTERS, TASKS
from .training import (
    RunConfig,
    finetune_frozen,
    load_results,
    pretrain_shuffled,
    save_results,
    to_inputs,
    train,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_RUNTIME = 4

TIERS = ("tiny", "small", "medium")


def _echo_config(out_dir, name, payload):
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{name}.config.json")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
    return path


def _write_text(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _model_config(args):
    config = ModelConfig(depth_tier=args.tier)
    if args.attn != "none":
        attention = AttentionConfig(
            kind=args.attn,
            d=args.attn_d,
            n_heads=args.attn_heads,
            insert_after_block=args.attn_block,
            scale=args.attn_scale,
        )
        config = insert_attention(config, attention)
    return config


def _add_model_flags(parser):
    parser.add_argument("--tier", choices=TIERS, default="small", help="model depth tier")
    parser.add_argument("--image-size", type=int, default=64, help="square input side in pixels")
    parser.add_argument("--attn", choices=("none", "sam", "fbam"), default="none",
                        help="attention module to insert")
    parser.add_argument("--attn-d", type=int, default=None,
                        help="attention projection width (default: module default; "
                             "desk-scale runs want something small like 64)")
    parser.add_argument("--attn-heads", type=int, default=None, help="attention head count")
    parser.add_argument("--attn-block", type=int, default=None,
                        help="stage after which the module is inserted (1..4)")
    parser.add_argument("--attn-scale", choices=("sqrt_d", "sqrt_content"), default="sqrt_d",
                        help="attention score scaling convention")


def _add_split_flags(parser, n_train=2000):
    parser.add_argument("--n-train", type=int, default=n_train)
    parser.add_argument("--n-val", type=int, default=2000)
    parser.add_argument("--n-test", type=int, default=2000)


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args):
    base = datasets.dataset_basename(args.task, args.split)
    _echo_config(args.out, base, {
        "command": "gen", "task": args.task, "n": args.n, "split": args.split,
        "seed": args.seed, "size": args.size, "png_sample": args.png_sample,
    })
    path = datasets.save_dataset(args.out, args.task, args.split, args.n, args.seed, args.size)
    manifest, labels, images = datasets.load_dataset(path)
    print(f"wrote {path} count={manifest.count} checksum={manifest.checksum}")
    if args.png_sample:
        per_class = [args.png_sample - args.png_sample // 2, args.png_sample // 2]
        written = 0
        for label in (0, 1):
            index = np.flatnonzero(labels == label)[: per_class[label]]
            for rank, i in enumerate(index):
                png = os.path.join(args.out, f"{base}_label{label}_{rank:03d}.png")
                raster.write_png(png, images[i])
                written += 1
        print(f"wrote {written} inspection PNGs under {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _load_split(data_dir, task_id, split, image_size):
    path = os.path.join(data_dir, datasets.dataset_basename(task_id, split) + ".bin")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    manifest, labels, images = datasets.load_dataset(path)
    if images.shape[1] != image_size:
        raise SvrtError(
            f"{path} holds {images.shape[1]}x{images.shape[2]} images, "
            f"--image-size is {image_size}; regenerate with gen --size {image_size}"
        )
    return to_inputs(images), labels.astype(np.float64), manifest.count


def _records_name(task_id, tier, attn, n_train, seeds):
    seed_tag = "-".join(str(s) for s in seeds)
    return f"task{task_id:02d}_{tier}_{attn}_n{n_train}_s{seed_tag}"


def _train_batch(out_dir, task_id, model_config, args, seeds, data_dir=None, quiet=False):
    """Train one task for each seed; write one records file; return results."""
    splits = None
    n_train, n_val, n_test = args.n_train, args.n_val, args.n_test
    if data_dir is not None:
        loaded = {}
        for split in ("train", "val", "test"):
            x, y, count = _load_split(data_dir, task_id, split, args.image_size)
            loaded[split] = (x, y)
        splits = loaded
        n_train = splits["train"][1].size
        n_val = splits["val"][1].size
        n_test = splits["test"][1].size

    results = []
    for seed in seeds:
        config = RunConfig(
            task_id=task_id,
            model=model_config,
            n_train=n_train,
            n_val=n_val,
            n_test=n_test,
            epochs=args.epochs,
            lr_schedule=(args.lr, args.lr_switch, args.lr_late),
            n_restarts=args.restarts,
            seed=seed,
            batch_size=args.batch_size,
            image_size=args.image_size,
        )
        result = train(config, splits=splits)
        results.append(result)
        if not quiet:
            print(
                f"task={task_id} attn={model_config.attention} seed={seed} "
                f"test_acc={result.test_acc:.4f} best_val={result.best_val_acc:.4f} "
                f"epochs={result.epochs_ran} wall={result.wall_time:.1f}s"
            )
    base = _records_name(task_id, model_config.depth_tier, model_config.attention, n_train, seeds)
    save_results(os.path.join(out_dir, base + ".jsonl"), results)
    return results, base


def cmd_train(args):
    model_config = _model_config(args)
    model = MiniResNet(model_config, args.image_size)
    if model.attention is not None:
        print(f"params={model.param_count()} attention_params={model.attention.param_count()}")
    else:
        print(f"params={model.param_count()}")

    os.makedirs(args.out, exist_ok=True)
    results, base = _train_batch(args.out, args.task, model_config, args, args.seeds, args.data_dir)
    _echo_config(args.out, base, {
        "command": "train",
        "task": args.task,
        "model": dataclasses.asdict(model_config),
        "image_size": args.image_size,
        "n_train": args.n_train, "n_val": args.n_val, "n_test": args.n_test,
        "epochs": args.epochs,
        "lr_schedule": [args.lr, args.lr_switch, args.lr_late],
        "restarts": args.restarts,
        "batch_size": args.batch_size,
        "seeds": list(args.seeds),
        "data_dir": args.data_dir,
    })
    mean = float(np.mean([r.test_acc for r in results]))
    print(f"mean_test_acc={mean:.4f} records={os.path.join(args.out, base + '.jsonl')}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# pretrain / finetune


def cmd_pretrain(args):
    model_config = ModelConfig(depth_tier=args.tier)
    _echo_config(args.out, "pretrain", {
        "command": "pretrain", "tier": args.tier, "image_size": args.image_size,
        "per_task": args.per_task, "fresh_per_task": args.fresh_per_task,
        "epochs": args.epochs, "lr": args.lr, "batch_size": args.batch_size,
        "seed": args.seed, "target_acc": args.target_acc,
    })
    result, model = pretrain_shuffled(
        model_config=model_config,
        per_task=args.per_task,
        fresh_per_task=args.fresh_per_task,
        epochs=args.epochs,
        lr=args.lr,
        batch_size=args.batch_size,
        image_size=args.image_size,
        seed=args.seed,
        target_acc=args.target_acc,
    )
    ckpt = args.checkpoint or os.path.join(args.out, "pretrained.ckpt")
    save_checkpoint(ckpt, model)
    summary = {
        "pool_acc": result.pool_acc, "fresh_acc": result.fresh_acc,
        "epochs_ran": result.epochs_ran, "n_pool": result.n_pool, "n_fresh": result.n_fresh,
    }
    _write_text(os.path.join(args.out, "pretrain.json"), json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(
        f"pool_acc={result.pool_acc:.4f} fresh_acc={result.fresh_acc:.4f} "
        f"epochs={result.epochs_ran} checkpoint={ckpt} wall={result.wall_time:.1f}s"
    )
    return EXIT_OK


def cmd_finetune(args):
    if not os.path.exists(args.checkpoint):
        raise FileNotFoundError(args.checkpoint)
    model = load_checkpoint(args.checkpoint)
    config = RunConfig(
        task_id=args.task,
        model=model.config,
        n_train=args.n_train,
        n_val=args.n_val,
        n_test=args.n_test,
        epochs=args.epochs,
        lr_schedule=(args.lr, args.lr_switch, args.lr_late),
        seed=args.seed,
        batch_size=args.batch_size,
        image_size=model.image_size,
    )
    name = f"finetune_task{args.task:02d}"
    _echo_config(args.out, name, {
        "command": "finetune", "task": args.task, "checkpoint": args.checkpoint,
        "n_train": args.n_train, "n_val": args.n_val, "n_test": args.n_test,
        "epochs": args.epochs, "lr_sweep": list(args.lr_sweep), "seed": args.seed,
    })
    result, _head = finetune_frozen(model, config, lr_sweep=tuple(args.lr_sweep))
    payload = dataclasses.asdict(result)
    payload["wall_time"] = 0.0
    _write_text(os.path.join(args.out, name + ".json"), json.dumps(payload, indent=2, sort_keys=True) + "\n")
    print(
        f"task={args.task} selected_lr={result.selected_lr:g} "
        f"best_val={result.best_val_acc:.4f} test_acc={result.test_acc:.4f} "
        f"wall={result.wall_time:.1f}s"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze


def _collect_records(runs_dir):
    if not os.path.isdir(runs_dir):
        raise FileNotFoundError(runs_dir)
    results = []
    for name in sorted(os.listdir(runs_dir)):
        if name.endswith(".jsonl"):
            results.extend(load_results(os.path.join(runs_dir, name)))
    return results


def _grid_cells(results, tasks, tiers, sizes, attn):
    """Missing (task, tier, size) combos for one attention kind."""
    have = {
        (r.config.task_id, r.config.model.depth_tier, r.config.n_train)
        for r in results
        if r.config.model.attention == attn
    }
    return [
        (task, tier, size)
        for task in tasks
        for tier in tiers
        for size in sizes
        if (task, tier, size) not in have
    ]


def _filter(results, attn, tasks):
    return [
        r for r in results
        if r.config.model.attention == attn and r.config.task_id in tasks
    ]


def _analyze_inputs(args):
    results = _collect_records(args.runs_dir)
    if not results:
        print(f"no .jsonl run records under {args.runs_dir}", file=sys.stderr)
        return None
    tasks = tuple(args.tasks) if args.tasks else tuple(
        sorted({r.config.task_id for r in results})
    )
    tiers = tuple(args.tiers) if args.tiers else tuple(
        t for t in TIERS if any(r.config.model.depth_tier == t for r in results)
    )
    sizes = tuple(args.sizes) if args.sizes else tuple(
        sorted({r.config.n_train for r in results})
    )
    return results, tasks, tiers, sizes


def _require_complete(results, tasks, tiers, sizes, attn):
    missing = _grid_cells(results, tasks, tiers, sizes, attn)
    if missing:
        shown = ", ".join(f"(task {t}, {d}, n={n})" for t, d, n in missing[:20])
        extra = "" if len(missing) <= 20 else f" and {len(missing) - 20} more"
        print(f"missing {len(missing)} cells for attn={attn}: {shown}{extra}", file=sys.stderr)
        return False
    return True


def cmd_analyze(args):
    loaded = _analyze_inputs(args)
    if loaded is None:
        return EXIT_MISSING
    results, tasks, tiers, sizes = loaded
    os.makedirs(args.out, exist_ok=True)
    _echo_config(args.out, f"analyze_{args.sub}", {
        "command": "analyze", "sub": args.sub, "runs_dir": args.runs_dir,
        "tasks": list(tasks), "tiers": list(tiers), "sizes": list(sizes),
        "attn": args.attn, "standardize": args.standardize, "x_mode": args.x_mode,
    })

    if args.sub in ("cluster", "pca"):
        if not _require_complete(results, tasks, tiers, sizes, "none"):
            return EXIT_MISSING
        matrix = matrix_from_results(_filter(results, "none", tasks), tiers, sizes)
        colors = label_colors(matrix.task_ids, CLUSTERS)
        if args.sub == "cluster":
            dendrogram = ward_cluster(matrix, standardize=args.standardize)
            _write_text(os.path.join(args.out, "dendrogram.csv"), dendrogram_to_csv(dendrogram))
            save_svg(
                os.path.join(args.out, "dendrogram.svg"),
                dendrogram_svg(dendrogram, labels=list(matrix.task_ids), colors=colors),
            )
            print(f"wrote dendrogram.csv and dendrogram.svg ({len(dendrogram.merges)} merges)")
        else:
            k = min(args.k, len(matrix.columns))
            result = pca(matrix, k=k, standardize=args.standardize)
            header = "# explained_ratio," + ",".join(
                f"pc{j + 1}={result.explained_ratio[j]:.6f}" for j in range(k)
            )
            lines = [header, "task," + ",".join(f"pc{j + 1}" for j in range(k))]
            for i, task in enumerate(matrix.task_ids):
                lines.append(f"{task}," + ",".join(f"{v:.6f}" for v in result.projections[i]))
            _write_text(os.path.join(args.out, "pca.csv"), "\n".join(lines) + "\n")
            if k >= 2:
                save_svg(
                    os.path.join(args.out, "pca.svg"),
                    pca_scatter_svg(result, list(matrix.task_ids), colors=colors),
                )
            print(f"wrote pca.csv (k={k}) explained={result.explained_ratio[:k]}")
        return EXIT_OK

    # slopes and correlate need a vanilla and an attention grid on one tier
    kind = args.attn
    tier = args.slope_tier or tiers[0]
    ok = _require_complete(results, tasks, (tier,), sizes, "none")
    ok = _require_complete(results, tasks, (tier,), sizes, kind) and ok
    if not ok:
        return EXIT_MISSING
    vanilla = matrix_from_results(_filter(results, "none", tasks), (tier,), sizes)
    attn = matrix_from_results(_filter(results, kind, tasks), (tier,), sizes)
    slopes = slope_vector(attn, vanilla, sizes, model_tag=kind, x_mode=args.x_mode)

    if args.sub == "slopes":
        lines = ["task,slope"] + [
            f"{task},{slope:.6f}" for task, slope in zip(vanilla.task_ids, slopes.slopes)
        ]
        _write_text(os.path.join(args.out, f"slopes_{kind}.csv"), "\n".join(lines) + "\n")
        save_svg(
            os.path.join(args.out, f"slopes_{kind}.svg"),
            slope_bars_svg(
                slopes,
                labels=[str(t) for t in vanilla.task_ids],
                colors=label_colors(vanilla.task_ids, CLUSTERS),
                title=f"{kind} / vanilla accuracy-ratio slope vs n_train",
            ),
        )
        print(f"wrote slopes_{kind}.csv and slopes_{kind}.svg")
        return EXIT_OK

    if not _require_complete(results, tasks, tiers, sizes, "none"):
        return EXIT_MISSING
    full = matrix_from_results(_filter(results, "none", tasks), tiers, sizes)
    k = min(args.k, len(full.columns))
    components = pca(full, k=k, standardize=args.standardize)
    table = correlate_slopes(slopes, components.projections)
    _write_text(os.path.join(args.out, f"correlate_{kind}.csv"), correlation_table_csv(table))
    for j, (r, p) in enumerate(table):
        print(f"{kind} slopes vs pc{j + 1}: r={r:+.4f} p={p:.4g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# repro profiles


def _profile_micro(args):
    """Minutes-scale wiring check: gen -> train from files -> all analyses."""
    data_dir = os.path.join(args.out, "data")
    runs_dir = os.path.join(args.out, "runs")
    analysis_dir = os.path.join(args.out, "analysis")
    tasks = (1, 2, 3)
    size = 32
    train_ns = (32, 64)
    n_eval = 64

    for task in tasks:
        for split, count in (("train", max(train_ns)), ("val", n_eval), ("test", n_eval)):
            datasets.save_dataset(data_dir, task, split, count, args.seed, size)
    print(f"generated {len(tasks)} tasks under {data_dir}")

    ns = argparse.Namespace(
        n_train=0, n_val=0, n_test=0, epochs=8, lr=1e-3, lr_switch=6, lr_late=1e-4,
        restarts=1, batch_size=16, image_size=size,
    )
    for task in tasks:
        for model_config in (
            ModelConfig(depth_tier="tiny"),
            insert_attention(
                ModelConfig(depth_tier="tiny"),
                AttentionConfig(kind="sam", d=16, n_heads=1, insert_after_block=2),
            ),
        ):
            for n_train in train_ns:
                loaded = {}
                x, y, _ = _load_split(data_dir, task, "train", size)
                loaded["train"] = (x[:n_train], y[:n_train])
                for split in ("val", "test"):
                    xs, ys, _ = _load_split(data_dir, task, split, size)
                    loaded[split] = (xs, ys)
                config = RunConfig(
                    task_id=task, model=model_config,
                    n_train=n_train, n_val=n_eval, n_test=n_eval,
                    epochs=ns.epochs, lr_schedule=(ns.lr, ns.lr_switch, ns.lr_late),
                    n_restarts=1, seed=args.seed, batch_size=ns.batch_size, image_size=size,
                )
                result = train(config, splits=loaded)
                base = _records_name(task, "tiny", model_config.attention, n_train, (args.seed,))
                os.makedirs(runs_dir, exist_ok=True)
                save_results(os.path.join(runs_dir, base + ".jsonl"), [result])
    print(f"trained {len(tasks) * 2 * len(train_ns)} runs under {runs_dir}")

    rc = EXIT_OK
    for sub in ("cluster", "pca", "slopes", "correlate"):
        sub_args = argparse.Namespace(
            sub=sub, runs_dir=runs_dir, out=analysis_dir, tasks=None, tiers=None,
            sizes=None, attn="sam", standardize=False, x_mode="log10", k=2,
            slope_tier=None,
        )
        rc = max(rc, cmd_analyze(sub_args))
    return rc


def _profile_ordering(args):
    """Learnability-ordering experiment: easy spatial tasks vs task 21."""
    runs_dir = os.path.join(args.out, "runs")
    os.makedirs(runs_dir, exist_ok=True)
    ns = argparse.Namespace(
        n_train=2000, n_val=2000, n_test=2000, epochs=30, lr=1e-3, lr_switch=20,
        lr_late=1e-4, restarts=1, batch_size=32, image_size=64,
    )
    seeds = tuple(range(args.n_seeds))
    model_config = ModelConfig(depth_tier="small")
    means = {}
    for task in (2, 3, 4, 11, 21):
        results, _ = _train_batch(runs_dir, task, model_config, ns, seeds)
        means[task] = float(np.mean([r.test_acc for r in results]))
    sr = float(np.mean([means[t] for t in (2, 3, 4, 11)]))
    print(f"SR mean={sr:.4f} task21={means[21]:.4f} gap={sr - means[21]:.4f}")
    return EXIT_OK


def _profile_attention(args):
    """Attention-benefit experiment on task 1 (same/different).

    Task 1 is barely learnable at this scale, so the profile leans on
    restart selection: each run trains three restarts and keeps the one
    with the best validation accuracy.
    """
    runs_dir = os.path.join(args.out, "runs")
    os.makedirs(runs_dir, exist_ok=True)
    ns = argparse.Namespace(
        n_train=1000, n_val=1000, n_test=2000, epochs=60, lr=1e-3, lr_switch=40,
        lr_late=1e-4, restarts=3, batch_size=32, image_size=64,
    )
    seeds = tuple(range(args.n_seeds))
    vanilla_cfg = ModelConfig(depth_tier="small")
    sam_cfg = insert_attention(
        vanilla_cfg, AttentionConfig(kind="sam", d=64, n_heads=2, insert_after_block=2)
    )
    sam_runs, _ = _train_batch(runs_dir, 1, sam_cfg, ns, seeds)
    vanilla_runs, _ = _train_batch(runs_dir, 1, vanilla_cfg, ns, seeds)
    sam = float(np.mean([r.test_acc for r in sam_runs]))
    vanilla = float(np.mean([r.test_acc for r in vanilla_runs]))
    print(f"sam_mean={sam:.4f} vanilla_mean={vanilla:.4f} improvement={sam - vanilla:+.4f}")
    return EXIT_OK


def _profile_shuffle(args):
    """Shuffled-label pretraining plus one frozen-backbone probe."""
    result, model = pretrain_shuffled(
        model_config=ModelConfig(depth_tier="tiny"),
        per_task=100,
        fresh_per_task=40,
        epochs=50,
        image_size=32,
        seed=args.seed,
    )
    ckpt = os.path.join(args.out, "pretrained.ckpt")
    save_checkpoint(ckpt, model)
    print(f"pool_acc={result.pool_acc:.4f} fresh_acc={result.fresh_acc:.4f} checkpoint={ckpt}")
    config = RunConfig(
        task_id=2, model=model.config, n_train=500, n_val=500, n_test=500,
        epochs=20, lr_schedule=(1e-3, 15, 1e-4), seed=args.seed, image_size=32,
    )
    probe, _head = finetune_frozen(model, config)
    print(f"probe task=2 selected_lr={probe.selected_lr:g} test_acc={probe.test_acc:.4f}")
    return EXIT_OK


PROFILES = {
    "micro": _profile_micro,
    "ordering": _profile_ordering,
    "attention": _profile_attention,
    "shuffle": _profile_shuffle,
}


def cmd_repro(args):
    _echo_config(args.out, f"repro_{args.profile}", {
        "command": "repro", "profile": args.profile, "seed": args.seed,
        "n_seeds": args.n_seeds,
    })
    return PROFILES[args.profile](args)


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="svrtlab",
        description="Generate, train on, and analyze the 23 synthetic visual-reasoning tasks.",
    )
    parser.add_argument("--threads", type=int, default=None,
                        help="worker hint (SVRT_THREADS env overrides); outputs never depend on it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write a packed dataset and its manifest")
    p.add_argument("--task", type=int, required=True, choices=sorted(TASKS), metavar="1..23")
    p.add_argument("--n", type=int, required=True, help="sample count (class-balanced, even)")
    p.add_argument("--split", default="train", choices=("train", "val", "test", "pool", "fresh"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=128, help="image side in pixels")
    p.add_argument("--png-sample", type=int, default=0, metavar="K",
                   help="also write K inspection PNGs, split over both classes")
    p.add_argument("--out", default="data")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("train", help="train one task, write run records")
    p.add_argument("--task", type=int, required=True, choices=sorted(TASKS), metavar="1..23")
    _add_model_flags(p)
    _add_split_flags(p)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-switch", type=int, default=20, help="epoch at which the late rate starts")
    p.add_argument("--lr-late", type=float, default=1e-4)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seeds", type=int, nargs="+", default=[0])
    p.add_argument("--data-dir", default=None,
                   help="load packed train/val/test files instead of generating in memory")
    p.add_argument("--out", default="runs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pretrain", help="shuffled-label pretraining, save a checkpoint")
    p.add_argument("--tier", choices=TIERS, default="tiny")
    p.add_argument("--image-size", type=int, default=32)
    p.add_argument("--per-task", type=int, default=100)
    p.add_argument("--fresh-per-task", type=int, default=40)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--target-acc", type=float, default=0.95)
    p.add_argument("--checkpoint", default=None, help="checkpoint path (default <out>/pretrained.ckpt)")
    p.add_argument("--out", default="pretrain")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("finetune", help="frozen-backbone linear probe from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--task", type=int, required=True, choices=sorted(TASKS), metavar="1..23")
    _add_split_flags(p, n_train=500)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-switch", type=int, default=15)
    p.add_argument("--lr-late", type=float, default=1e-4)
    p.add_argument("--lr-sweep", type=float, nargs="+", default=[1e-4, 1e-5, 1e-6])
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="finetune")
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("analyze", help="cluster / pca / slopes / correlate over run records")
    p.add_argument("sub", choices=("cluster", "pca", "slopes", "correlate"))
    p.add_argument("--runs-dir", required=True)
    p.add_argument("--out", default="analysis")
    p.add_argument("--tasks", type=int, nargs="+", default=None,
                   help="expected task rows (default: tasks present in the records)")
    p.add_argument("--tiers", nargs="+", choices=TIERS, default=None)
    p.add_argument("--sizes", type=int, nargs="+", default=None,
                   help="expected n_train grid (default: sizes present)")
    p.add_argument("--attn", choices=("sam", "fbam"), default="sam",
                   help="attention kind for slopes/correlate")
    p.add_argument("--slope-tier", choices=TIERS, default=None,
                   help="tier for the slope fit (default: first tier present)")
    p.add_argument("--x-mode", choices=("log10", "raw", "index"), default="log10")
    p.add_argument("--standardize", action="store_true")
    p.add_argument("--k", type=int, default=2, help="principal components kept")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("repro", help="named end-to-end experiment profiles")
    p.add_argument("--profile", required=True, choices=sorted(PROFILES))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-seeds", type=int, default=3, help="seeds per configuration where relevant")
    p.add_argument("--out", default="repro")
    p.set_defaults(func=cmd_repro)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is None:
        args.threads = int(os.environ.get("SVRT_THREADS", "1") or 1)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"missing data: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except SvrtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
