"""Command-line entry point.

Subcommands: synth, synthetic-corpus, train, eval (retrieval | zeroshot |
probe), gradcheck, export-embeddings, report. Every run embeds a config
fingerprint into its outputs; exit codes are 0 (success), 1 (validation
error) and 2 (internal error), with grep-able ERROR[...] prefixes on stderr.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .errors import SarAlignError, ValidationError
from .evaluation import (
    DEFAULT_KS,
    ProbeConfig,
    retrieval_eval,
    train_linear_probe,
    zero_shot_classify,
)
from .features import FeatureResolver
from .manifests import load_manifest_dir, parse_classification_manifest
from .meta import EMBEDDINGS_VERSION, LOSS_LOG_VERSION, config_fingerprint
from .network import image_forward, init_params, text_forward
from .records import validate_records
from .reporting import (
    aggregate_summaries,
    append_summary_row,
    eval_report_dict,
    retrieval_report_dict,
    write_report,
)
from .synthesis import DEFAULT_CAPTIONS_PER_IMAGE, export_pairs, read_pairs
from .synthetic import make_synthetic_corpus
from .text import tokenize
from .training import TrainConfig, finite_diff_gradcheck, train_stage

CONFIG_ENV_VAR = "SARALIGN_CONFIG"


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems are validation errors (exit 1)
        raise ValidationError(f"{self.prog}: {message}")


def _log(args, message):
    if getattr(args, "verbose", False):
        print(message, file=sys.stderr)


def _split_filter(pairs, split):
    if split == "all":
        return pairs
    kept = [p for p in pairs if p.split == split]
    if not kept:
        raise ValidationError(f"corpus has no records with split {split!r}")
    return kept


def _coerce_field(name: str, raw: str):
    types = {f.name: f.type for f in fields(TrainConfig)}
    if name not in types:
        raise ValidationError(f"unknown config key {name!r}")
    if raw.lower() in ("none", "null"):
        return None
    if raw.lower() in ("true", "false"):
        return raw.lower() == "true"
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            continue
    return raw


def load_train_config(args) -> TrainConfig:
    """Config file (flag or SARALIGN_CONFIG env var) plus --set overrides."""
    data: dict = {}
    path = args.config or os.environ.get(CONFIG_ENV_VAR)
    if path:
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ValidationError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config file {path}: invalid JSON ({exc.msg})") from None
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        data[key] = _coerce_field(key, value)
    if getattr(args, "seed", None) is not None:
        data["seed"] = args.seed
    if getattr(args, "save_moments", False):
        data["save_moments"] = True
    return TrainConfig.from_dict(data)


def _write_loss_log(path, reports, fingerprint):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# format=saralign-loss-log version={LOSS_LOG_VERSION} "
                 f"fingerprint={fingerprint}\n")
        fh.write("# step\tepoch\tloss\tlr\tgrad_norm\n")
        for r in reports:
            fh.write(f"{r.step}\t{r.epoch}\t{r.loss!r}\t{r.lr!r}\t{r.grad_norm!r}\n")


def cmd_synth(args) -> int:
    sink: list[str] = []
    records = load_manifest_dir(args.manifests, strict=args.strict,
                                error_sink=sink if not args.strict else None)
    report = validate_records(records)
    _log(args, "\n".join(report.summary_lines()))
    if sink:
        for err in sink:
            print(f"WARN[validation]: dropped: {err}", file=sys.stderr)
    config = {
        "command": "synth",
        "seed": args.seed,
        "captions_per_image": args.captions_per_image,
        "strict": args.strict,
    }
    fingerprint = config_fingerprint(config)
    stats = export_pairs(records, args.out, seed=args.seed,
                         captions_per_image=args.captions_per_image,
                         fingerprint=fingerprint, threads=args.threads)
    print(json.dumps({"fingerprint": fingerprint, **stats.as_dict()}, indent=2))
    return 0


def cmd_synthetic_corpus(args) -> int:
    config = {
        "command": "synthetic-corpus",
        "seed": args.seed,
        "domain": args.domain,
        "train_pairs": args.train_pairs,
        "test_pairs": args.test_pairs,
    }
    fingerprint = config_fingerprint(config)
    corpus = make_synthetic_corpus(seed=args.seed, domain=args.domain,
                                   n_train=args.train_pairs, n_test=args.test_pairs)
    paths = corpus.write(args.out_dir, fingerprint=fingerprint)
    print(json.dumps({
        "fingerprint": fingerprint,
        "paths": {k: str(v) for k, v in paths.items()},
        "train_pairs": len(corpus.train_pairs),
        "test_pairs": len(corpus.test_pairs),
    }, indent=2))
    return 0


def cmd_train(args) -> int:
    header, pairs = read_pairs(args.pairs)
    pairs = _split_filter(pairs, args.split)
    resolver = FeatureResolver(args.features_root or Path(args.pairs).parent)
    config = load_train_config(args)
    init = load_checkpoint(args.init) if args.init else None
    ckpt, reports = train_stage(pairs, resolver, config, init=init)
    save_checkpoint(ckpt, args.out)
    loss_log = args.loss_log or str(args.out) + ".losses.tsv"
    _write_loss_log(loss_log, reports, ckpt.fingerprint)
    print(json.dumps({
        "stage_tag": ckpt.stage_tag,
        "fingerprint": ckpt.fingerprint,
        "steps": len(reports),
        "final_loss": reports[-1].loss if reports else None,
        "checkpoint": str(args.out),
        "loss_log": loss_log,
    }, indent=2))
    return 0


def _eval_common(args):
    ckpt = load_checkpoint(args.ckpt)
    ks = tuple(int(k) for k in args.k.split(",")) if getattr(args, "k", None) else DEFAULT_KS
    return ckpt, ks


def _labeled_features(args, split):
    records = parse_classification_manifest(args.manifest)
    if split != "all":
        records = [r for r in records if r.meta.split == split]
    if not records:
        raise ValidationError(f"manifest has no records with split {split!r}")
    resolver = FeatureResolver(args.features_root or Path(args.manifest).parent)
    features = resolver.gather([(r.meta.feature_ref, r.meta.image_id) for r in records])
    labels = [r.class_label for r in records]
    return features, labels


def cmd_eval_retrieval(args) -> int:
    ckpt, ks = _eval_common(args)
    _header, pairs = read_pairs(args.pairs)
    pairs = _split_filter(pairs, args.split)
    resolver = FeatureResolver(args.features_root or Path(args.pairs).parent)
    i2t, t2i, mean_recall = retrieval_eval(pairs, resolver, ckpt, ks)
    report = retrieval_report_dict(i2t, t2i, mean_recall, ckpt.fingerprint)
    if args.out:
        write_report(report, args.out)
    if args.summary:
        append_summary_row(args.summary, "retrieval", ckpt.fingerprint,
                           report["metrics"])
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_eval_zeroshot(args) -> int:
    ckpt, _ = _eval_common(args)
    features, labels = _labeled_features(args, args.split)
    prompts = None
    if args.prompts:
        prompts = json.loads(Path(args.prompts).read_text(encoding="utf-8"))
    report = zero_shot_classify(features, labels, ckpt, prompts=prompts,
                                fingerprint=ckpt.fingerprint)
    payload = eval_report_dict(report)
    if args.out:
        write_report(payload, args.out)
    if args.summary:
        append_summary_row(args.summary, "zeroshot", ckpt.fingerprint, report.metrics)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_eval_probe(args) -> int:
    ckpt, _ = _eval_common(args)
    features, labels = _labeled_features(args, args.split)
    config = ProbeConfig(lr=args.lr, max_steps=args.max_steps,
                         eval_every=args.eval_every, patience=args.patience,
                         val_fraction=args.val_fraction, seed=args.seed)
    head, report = train_linear_probe(features, labels, ckpt, config,
                                      fingerprint=ckpt.fingerprint)
    payload = eval_report_dict(report)
    if args.out:
        write_report(payload, args.out)
    if args.summary:
        append_summary_row(args.summary, "probe", ckpt.fingerprint, report.metrics)
    if args.out_head:
        head_ckpt = Checkpoint(
            stage_tag="probe", params=ckpt.params, vocab=ckpt.vocab,
            config=ckpt.config, fingerprint=ckpt.fingerprint,
            extra_tensors={"probe.W": head.weight, "probe.b": head.bias},
            extra_meta={"classes": head.classes})
        save_checkpoint(head_ckpt, args.out_head)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for trial in range(args.trials):
        n = int(rng.integers(2, 9))
        d = int(rng.integers(4, 17))
        vocab_size = int(rng.integers(8, 20))
        tau = float(rng.uniform(0.05, 2.0))
        params = init_params(feature_dim=int(rng.integers(3, 9)), vocab_size=vocab_size,
                             token_dim=int(rng.integers(3, 7)),
                             hidden_dim=int(rng.integers(4, 9)),
                             embed_dim=d, n_layers=2, tau=tau,
                             seed=int(rng.integers(0, 2**31)))
        features = rng.normal(size=(n, params.feature_dim))
        token_lists = [list(rng.integers(0, vocab_size, size=rng.integers(2, 7)))
                       for _ in range(n)]
        err = finite_diff_gradcheck(params, features, token_lists,
                                    tau_learnable=True, h=args.h)
        worst = max(worst, err)
        _log(args, f"trial {trial}: N={n} d={d} tau={tau:.3f} max rel err {err:.3e}")
    print(json.dumps({"trials": args.trials, "max_relative_error": worst,
                      "tolerance": args.tolerance,
                      "passed": worst < args.tolerance}, indent=2))
    if worst >= args.tolerance:
        raise SarAlignError(
            f"gradient check failed: {worst:.3e} >= {args.tolerance:.1e}")
    return 0


def cmd_export_embeddings(args) -> int:
    ckpt = load_checkpoint(args.ckpt)
    _header, pairs = read_pairs(args.pairs)
    pairs = _split_filter(pairs, args.split)
    resolver = FeatureResolver(args.features_root or Path(args.pairs).parent)
    features = resolver.gather([(p.feature_ref, p.image_id) for p in pairs])
    zv, _ = image_forward(features, ckpt.params)
    token_lists = [tokenize(p.caption.text, ckpt.vocab) for p in pairs]
    if any(not t for t in token_lists):
        raise ValidationError("corpus contains untokenizable captions")
    zt, _ = text_forward(token_lists, ckpt.params)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(f"# format=saralign-embeddings version={EMBEDDINGS_VERSION} "
                 f"fingerprint={ckpt.fingerprint} embed_dim={ckpt.params.embed_dim}\n")
        fh.write("# image_id\tmodality\tcomponents...\n")
        for p, row in zip(pairs, zv):
            fh.write(p.image_id + "\timage\t" + "\t".join(repr(v) for v in row) + "\n")
        for p, row in zip(pairs, zt):
            fh.write(p.image_id + "\ttext\t" + "\t".join(repr(v) for v in row) + "\n")
    print(json.dumps({"out": str(args.out), "rows": 2 * len(pairs),
                      "embed_dim": ckpt.params.embed_dim}, indent=2))
    return 0


def cmd_report(args) -> int:
    print(aggregate_summaries(args.summaries), end="")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="saralign",
                     description="SAR image-text alignment toolkit")
    parser.add_argument("--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize a pair corpus from manifests")
    p.add_argument("--manifests", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--captions-per-image", type=int, default=DEFAULT_CAPTIONS_PER_IMAGE)
    strictness = p.add_mutually_exclusive_group()
    strictness.add_argument("--strict", dest="strict", action="store_true", default=True)
    strictness.add_argument("--permissive", dest="strict", action="store_false")
    p.add_argument("--threads", type=int, default=1)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("synthetic-corpus",
                       help="generate the built-in clustered benchmark")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--domain", choices=("target", "source"), default="target")
    p.add_argument("--train-pairs", type=int, default=512)
    p.add_argument("--test-pairs", type=int, default=128)
    p.set_defaults(func=cmd_synthetic_corpus)

    p = sub.add_parser("train", help="contrastive training (stage 1 or stage 2)")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--init", help="stage-1 checkpoint to fine-tune from")
    p.add_argument("--features-root")
    p.add_argument("--split", default="train",
                   choices=("train", "val", "test", "all"))
    p.add_argument("--config", help=f"JSON config file (default ${CONFIG_ENV_VAR})")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--seed", type=int)
    p.add_argument("--save-moments", action="store_true")
    p.add_argument("--loss-log")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    eval_sub = p.add_subparsers(dest="eval_task", required=True)

    r = eval_sub.add_parser("retrieval", help="image<->text retrieval R@K")
    r.add_argument("--ckpt", required=True)
    r.add_argument("--pairs", required=True)
    r.add_argument("--features-root")
    r.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    r.add_argument("--k", default="1,5,10")
    r.add_argument("--out")
    r.add_argument("--summary")
    r.set_defaults(func=cmd_eval_retrieval)

    z = eval_sub.add_parser("zeroshot", help="zero-shot classification accuracy")
    z.add_argument("--ckpt", required=True)
    z.add_argument("--manifest", required=True,
                   help="classification CSV with labels and feature refs")
    z.add_argument("--features-root")
    z.add_argument("--split", default="test", choices=("train", "val", "test", "all"))
    z.add_argument("--prompts", help="JSON file: class -> list of prompts")
    z.add_argument("--out")
    z.add_argument("--summary")
    z.set_defaults(func=cmd_eval_zeroshot)

    b = eval_sub.add_parser("probe", help="frozen-encoder linear probe")
    b.add_argument("--ckpt", required=True)
    b.add_argument("--manifest", required=True)
    b.add_argument("--features-root")
    b.add_argument("--split", default="train", choices=("train", "val", "test", "all"))
    b.add_argument("--lr", type=float, default=0.05)
    b.add_argument("--max-steps", type=int, default=2000)
    b.add_argument("--eval-every", type=int, default=10)
    b.add_argument("--patience", type=int, default=20)
    b.add_argument("--val-fraction", type=float, default=0.25)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    b.add_argument("--summary")
    b.add_argument("--out-head", help="write a probe-tagged checkpoint with the head")
    b.set_defaults(func=cmd_eval_probe)

    p = sub.add_parser("gradcheck",
                       help="finite-difference check of the loss gradients")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--h", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("export-embeddings",
                       help="dump image/text embeddings for external plotting")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--pairs", required=True)
    p.add_argument("--features-root")
    p.add_argument("--split", default="all", choices=("train", "val", "test", "all"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("report", help="aggregate summary rows into one table")
    p.add_argument("summaries", nargs="+")
    p.set_defaults(func=cmd_report)

    return parser


def run(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"ERROR[validation]: {exc}", file=sys.stderr)
        return 1
    except SarAlignError as exc:
        print(f"ERROR[internal]: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"ERROR[internal]: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
