"""Command-line pipeline: synth-data, pretrain, train-ubcg, eval, visualize.

Exit codes: 0 success, 2 usage/config error, 3 runtime/training error.
``ZPT_NUM_THREADS`` caps torch worker threads for reproducible timings.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

import torch

from .checkpoint import load_pretrained, load_ubcg, save_pretrained, save_ubcg
from .config import RunConfig, default_run_config, load_run_config
from .errors import CheckpointError, ConfigError, DataFormatError, TrainingError
from .harness import (embed_graph, generate_task_samples, run_discrete, run_node_only,
                      run_pseudo_label, run_simple_classifier, run_zpt, sample_tasks,
                      export_projection)
from .pretrain import pretrain
from .tag import generate_synthetic_tag, load_tag, save_tag
from .ubcg import parameter_count, train_ubcg

EVAL_MODES = ("zpt", "zpt-context", "discrete", "node-only", "simple", "pseudo")


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        return load_run_config(args.config, seed_override=args.seed)
    config = default_run_config()
    if args.seed is not None:
        from .config import override_seed
        config = override_seed(config, args.seed)
    return config


def _run_id(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True).encode("utf-8")
    return hashlib.sha256(canonical).hexdigest()[:12]


def cmd_synth_data(args) -> int:
    config = _load_config(args)
    graph = generate_synthetic_tag(config.data)
    save_tag(graph, args.out)
    print(f"wrote {graph.num_nodes} nodes, {len(graph.edges)} edges to {args.out}")
    return 0


def cmd_pretrain(args) -> int:
    config = _load_config(args)
    graph = load_tag(args.data)
    print(f"pretraining: lr={config.pretrain.learning_rate} epochs={config.pretrain.epochs} "
          f"alpha={config.pretrain.alpha} batch={config.pretrain.batch_size}")
    model, log = pretrain(graph, config.pretrain, config.text_encoder, config.graph_encoder)
    digest = save_pretrained(args.out, model)
    log_path = Path(str(args.out) + ".log.jsonl")
    with log_path.open("w", encoding="utf-8") as fh:
        for record in log:
            fh.write(json.dumps(record, sort_keys=True) + "\n")
    print(f"saved checkpoint {args.out} (digest {digest[:12]}), log {log_path}")
    return 0


def cmd_train_ubcg(args) -> int:
    config = _load_config(args)
    if not Path(args.pretrained).exists():
        raise ConfigError(f"pretrained checkpoint not found: {args.pretrained}")
    graph = load_tag(args.data)
    model = load_pretrained(args.pretrained)
    node_embs, text_embs = embed_graph(model, graph)
    print(f"training generator: lr={config.ubcg.learning_rate} epochs={config.ubcg.epochs} "
          f"latent_dim={config.ubcg.latent_dim}")
    generator, _ = train_ubcg(node_embs, text_embs, config.ubcg)
    print(f"generator parameters: {parameter_count(generator)}")
    digest = save_ubcg(args.out, generator)
    print(f"saved checkpoint {args.out} (digest {digest[:12]})")
    return 0


def _eval_report(args, config: RunConfig, metrics, extra: dict) -> dict:
    payload = {
        "mode": args.mode,
        "config": config.to_dict(),
        "seed": config.seed,
        "metrics": metrics.to_dict(),
    }
    payload.update(extra)
    payload["run_id"] = _run_id({"mode": args.mode, "config": payload["config"]})
    return payload


def cmd_eval(args, projection: bool = False) -> int:
    config = _load_config(args)
    harness = config.harness
    if args.template:
        harness = replace(harness, template=args.template)
    graph = load_tag(args.data)
    if not Path(args.pretrained).exists():
        raise ConfigError(f"pretrained checkpoint not found: {args.pretrained}")
    model = load_pretrained(args.pretrained)
    tasks = sample_tasks(graph, harness.n_way, harness.num_tasks,
                         harness.queries_per_class, harness.seed)
    extra: dict = {"template": harness.template,
                   "lam": config.hybrid.lam,
                   "samples_per_class": harness.samples_per_class,
                   "latent_dim": config.ubcg.latent_dim}

    needs_generator = args.mode in ("zpt", "zpt-context", "simple")
    generator = None
    if needs_generator:
        if not args.ubcg or not Path(args.ubcg).exists():
            raise ConfigError(f"mode {args.mode!r} needs --ubcg pointing at a checkpoint")
        generator = load_ubcg(args.ubcg)

    condition_template = harness.template if args.mode == "zpt-context" else None
    if args.mode in ("zpt", "zpt-context"):
        metrics, _ = run_zpt(graph, model, generator, tasks, config.hybrid,
                             harness.samples_per_class, harness.num_context,
                             condition_template)
    elif args.mode == "discrete":
        metrics = run_discrete(graph, model, tasks, harness.template, config.hybrid.lam)
    elif args.mode == "node-only":
        node_embs, text_embs = embed_graph(model, graph)
        ablated, _ = train_ubcg(node_embs, text_embs, config.ubcg, text_direction=False)
        metrics, _ = run_node_only(graph, model, ablated, tasks, config.hybrid,
                                   harness.samples_per_class, harness.num_context)
    elif args.mode == "simple":
        metrics = run_simple_classifier(graph, model, generator, tasks,
                                        harness.samples_per_class, harness.seed)
    elif args.mode == "pseudo":
        metrics = run_pseudo_label(graph, model, tasks, harness.template, config.hybrid,
                                   num_context=harness.num_context)
    else:  # pragma: no cover - argparse restricts choices
        raise ConfigError(f"unknown mode {args.mode!r}, valid modes: {EVAL_MODES}")

    report = _eval_report(args, config, metrics, extra)

    if projection:
        if generator is None:
            raise ConfigError("projection export needs a generated sample bank; "
                              "use mode zpt or zpt-context")
        task = tasks[0]
        node_embs, text_embs = embed_graph(model, graph)
        pos = {node_id: k for k, node_id in enumerate(graph.node_ids)}
        rows = [pos[q] for q in task.query_ids]
        bank_v, bank_t, bank_y = generate_task_samples(
            task, model, generator, harness.samples_per_class, harness.seed,
            condition_template)
        csv_path = Path(args.out).with_suffix(".projection.csv")
        report["projection"] = export_projection(
            node_embs[rows], text_embs[rows], list(task.truth),
            bank_v, bank_t, bank_y.numpy(), task.class_names,
            csv_path, seed=harness.seed)
        report["projection_csv"] = str(csv_path)
        print(f"wrote projection {csv_path}")

    Path(args.out).write_text(json.dumps(report, indent=2, sort_keys=True), encoding="utf-8")
    print(f"mode={args.mode} accuracy={metrics.accuracy:.4f} macro_f1={metrics.macro_f1:.4f} "
          f"-> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zpt",
        description="Zero-shot prompt tuning on text-attributed graphs")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="TOML run config; defaults apply if omitted")
        p.add_argument("--seed", type=int, help="override every seed in the config")

    p = sub.add_parser("synth-data", help="generate the planted synthetic corpus")
    common(p)
    p.add_argument("--out", required=True, help="output graph directory")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("pretrain", help="contrastive encoder pre-training")
    common(p)
    p.add_argument("--data", required=True, help="graph directory")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train-ubcg", help="train the bimodal conditional generator")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--pretrained", required=True, help="pretrained encoder checkpoint")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_ubcg)

    for name, with_projection in (("eval", False), ("visualize", True)):
        p = sub.add_parser(name, help="run a zero-shot evaluation mode"
                           + (" and export the 2-D projection" if with_projection else ""))
        common(p)
        p.add_argument("--data", required=True)
        p.add_argument("--pretrained", required=True)
        p.add_argument("--ubcg", help="generator checkpoint (zpt/zpt-context/simple modes)")
        p.add_argument("--mode", default="zpt", choices=EVAL_MODES)
        p.add_argument("--template", help="override the discrete/context template")
        p.add_argument("--out", required=True, help="JSON report path")
        p.set_defaults(func=cmd_eval, projection=with_projection)

    return parser


def main(argv=None) -> int:
    threads = os.environ.get("ZPT_NUM_THREADS")
    if threads:
        torch.set_num_threads(max(1, int(threads)))
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if getattr(args, "projection", None) is not None:
            return args.func(args, projection=args.projection)
        return args.func(args)
    except (ConfigError, DataFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (TrainingError, CheckpointError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
