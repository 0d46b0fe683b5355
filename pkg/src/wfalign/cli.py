"""Command line entry point.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numeric divergence during training.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import dataset as dsio
from .anchors import aggregate_report
from .augment import augment_corpus
from .config import RunConfig, load_config
from .errors import ConfigError, DivergedError, WfAlignError
from .ingest import CaptureConfig, PcapStats, parse_packet_jsonl, parse_pcap, \
    parse_resource_jsonl
from .core import PairedSample, TrafficTrace

log = logging.getLogger("wfalign")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4


class UsageError(Exception):
    pass


# --- helpers ------------------------------------------------------------------

def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _out(args, default: str) -> Path:
    return Path(args.out or default)


def _claim(path: Path, force: bool) -> Path:
    if path.exists() and not force:
        raise UsageError(f"{path} exists; pass --force to overwrite")
    return path


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _inputs_hash(paths) -> dict:
    files = {str(p): dsio.file_sha256(p) for p in paths if p is not None}
    combined = hashlib.sha256("".join(f"{k}={v};" for k, v in sorted(files.items())).encode())
    return {"files": files, "sha256": combined.hexdigest()}


def _report(cfg: RunConfig, args, inputs, **body) -> dict:
    return {"command": args.command, "config": cfg.to_dict(), "seed": args.seed,
            "inputs": _inputs_hash(inputs), **body}


def _site_labels(samples) -> list[PairedSample]:
    """Fill missing labels with the site's position in sorted site order."""
    order = {s: i for i, s in enumerate(sorted({p.site_id for p in samples}))}
    out = []
    for p in samples:
        if p.label is None:
            t = TrafficTrace(p.traffic.packets, p.site_id, order[p.site_id])
            p = PairedSample(p.logic, t, p.site_id)
        out.append(p)
    return out


def _gallery_profiles(samples):
    seen, profiles = set(), []
    for s in samples:
        if s.site_id not in seen:
            seen.add(s.site_id)
            profiles.append(s.logic)
    return profiles


def _load_model(path):
    from .neural.checkpoint import load_checkpoint
    model, _ = load_checkpoint(path)
    return model


def _keyed(values, what):
    out = {}
    for v in values or []:
        if "=" not in v:
            raise UsageError(f"{what} must look like SITE=PATH, got {v!r}")
        site, path = v.split("=", 1)
        out.setdefault(site, []).append(Path(path))
    return out


# --- commands -----------------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    from .synth import gen_corpus, gen_sites

    out = _out(args, "synth")
    train_p, test_p = out / "train.jsonl", out / "test.jsonl"
    for p in (train_p, test_p):
        _claim(p, args.force)
    sites = gen_sites(cfg.gen)
    n_test = max(1, int(round(len(sites) * cfg.eval.test_fraction)))
    if n_test >= len(sites):
        raise ConfigError("need at least one training site and one test site")
    train_sites, test_sites = sites[:-n_test], sites[-n_test:]
    dsio.write_dataset(gen_corpus(cfg.gen, train_sites), train_p)
    dsio.write_dataset(gen_corpus(cfg.gen, test_sites, seed_offset=1,
                                  label_offset=len(train_sites)), test_p)
    _write_json(out / "synth.json", {"config": cfg.to_dict(), "train_sites": len(train_sites),
                                     "test_sites": len(test_sites)})
    log.info("wrote %d train and %d test sites to %s", len(train_sites), len(test_sites), out)
    return EXIT_OK


def cmd_extract(args, cfg: RunConfig) -> int:
    out = _claim(_out(args, "dataset.jsonl"), args.force)
    traffic = _keyed(args.traffic, "--traffic")
    resources = _keyed(args.resources, "--resources")
    if not traffic:
        raise UsageError("give at least one --traffic SITE=PATH")
    missing = sorted(set(traffic) - set(resources))
    if missing:
        raise UsageError(f"no --resources for site(s) {', '.join(missing)}")
    capture = CaptureConfig(client_hint=args.client)
    samples = []
    for site in sorted(traffic):
        profile = None
        for rp in resources[site]:
            prof = parse_resource_jsonl(rp.read_text(encoding="utf-8"), site)
            profile = prof if profile is None else \
                replace(profile, resources=profile.resources + prof.resources)
        for tp in traffic[site]:
            if tp.suffix in (".pcap", ".cap"):
                stats = PcapStats()
                trace = parse_pcap(tp.read_bytes(), capture, site, None, stats)
                log.info("%s: %s", tp, stats)
            else:
                trace = parse_packet_jsonl(tp.read_text(encoding="utf-8"), site)
            samples.append(PairedSample(profile, trace, site))
    dsio.write_dataset(_site_labels(samples), out)
    log.info("wrote %d samples to %s", len(samples), out)
    return EXIT_OK


def cmd_augment(args, cfg: RunConfig) -> int:
    out = _claim(_out(args, "augmented.jsonl"), args.force)
    pairs = dsio.read_dataset(args.input)
    aug = augment_corpus(pairs, cfg.augment, copies=args.copies)
    dsio.write_dataset(aug, out)
    log.info("%d of %d pairs augmented", len(aug), len(pairs) * args.copies)
    return EXIT_OK


def cmd_anchors(args, cfg: RunConfig) -> int:
    out = _out(args, "anchors")
    js, txt = _claim(out / "anchors.json", args.force), _claim(out / "anchors.txt", args.force)
    pairs = dsio.read_dataset(args.input)
    seed = args.seed if args.seed is not None else 0
    rep = aggregate_report(pairs, cfg.eval.n_perm, seed, cfg.eval.alpha)
    _write_json(js, _report(cfg, args, [args.input], report=rep.to_dict()))
    txt.write_text(rep.to_text())
    sys.stdout.write(rep.to_text())
    return EXIT_OK


def cmd_train(args, cfg: RunConfig) -> int:
    from .neural.checkpoint import save_checkpoint
    from .neural.model import DualEncoder
    from .neural.training import train

    out = _claim(_out(args, "checkpoint"), args.force)
    cross = _site_labels(dsio.read_dataset(args.input))
    labeled = _site_labels(dsio.read_dataset(args.labeled)) if args.labeled else cross
    aug = []
    if cfg.train.mix_ratio[1] > 0:
        aug = dsio.read_dataset(args.augmented) if args.augmented else \
            augment_corpus(cross, cfg.augment)
    model = DualEncoder(cfg.model)
    extra = _report(cfg, args, [args.input, args.labeled, args.augmented])
    try:
        res = train({"crossmodal": cross, "augmented": aug, "labeled": labeled},
                    cfg.train, model=model)
    except DivergedError as exc:
        model.load_state_dict(exc.state)
        save_checkpoint(model, out, {**extra, "diverged": True, "history": exc.history})
        log.error("training diverged: %s; last finite parameters saved to %s", exc, out)
        return EXIT_DIVERGED
    save_checkpoint(res.model, out, {**extra, "epoch_losses": res.epoch_losses})
    log.info("checkpoint written to %s", out)
    return EXIT_OK


def cmd_embed(args, cfg: RunConfig) -> int:
    from .encoding import encode_logic, encode_traffic
    from .neural.model import encode_logic_embed, encode_traffic_embed

    out = _claim(_out(args, "embeddings.jsonl"), args.force)
    model = _load_model(args.checkpoint)
    pairs = dsio.read_dataset(args.input)
    enc = model.cfg.encoding
    if args.modality == "traffic":
        z = encode_traffic_embed(model, [encode_traffic(p.traffic, enc) for p in pairs])
    else:
        z = encode_logic_embed(model, [encode_logic(p.logic, enc) for p in pairs])
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for p, row in zip(pairs, z):
            fh.write(json.dumps({"label": p.label, "site_id": p.site_id,
                                 "z": [float(v) for v in row]}, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_gallery(args, cfg: RunConfig) -> int:
    from .retrieval import build_gallery, save_gallery

    out = _claim(_out(args, "gallery"), args.force)
    model = _load_model(args.checkpoint)
    profiles = _gallery_profiles(dsio.read_dataset(args.input))
    save_gallery(build_gallery(model, profiles), out)
    log.info("gallery of %d classes written to %s", len(profiles), out)
    return EXIT_OK


def cmd_classify(args, cfg: RunConfig) -> int:
    from .retrieval import classify_embedding, embed_traces, load_gallery

    out = _claim(_out(args, "predictions.jsonl"), args.force)
    model = _load_model(args.checkpoint)
    gallery = load_gallery(args.gallery)
    pairs = dsio.read_dataset(args.input)
    theta = cfg.eval.threshold if args.threshold is None else args.threshold
    z = embed_traces(model, [p.traffic for p in pairs])
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as fh:
        for p, zi in zip(pairs, z):
            pred = classify_embedding(gallery, zi, theta)
            fh.write(json.dumps({"predicted": pred.class_id, "score": pred.score,
                                 "site_id": p.site_id}, sort_keys=True) + "\n")
    return EXIT_OK


def _take_shots(samples, n):
    by_site = {}
    for s in samples:
        by_site.setdefault(s.site_id, []).append(s)
    short = sorted(k for k, v in by_site.items() if len(v) < n)
    if short:
        raise ConfigError(f"fewer than {n} support traces for site(s) {', '.join(short[:5])}")
    return [s for v in by_site.values() for s in v[:n]]


def cmd_eval(args, cfg: RunConfig) -> int:
    from .retrieval import (FewShotMemory, Gallery, build_gallery, embed_traces,
                            linear_probe_fit, model_checksum, open_world_eval,
                            tip_adapter_logits, topk_accuracy_embeddings)

    out = _out(args, "eval")
    report_p = _claim(out / f"report_{args.mode}.json", args.force)
    model = _load_model(args.checkpoint)
    test = dsio.read_dataset(args.input)
    profiles = _gallery_profiles(test)
    sites = [p.site_id for p in profiles]
    gallery = build_gallery(model, profiles, sites)
    zq = embed_traces(model, [p.traffic for p in test])
    labels = [p.site_id for p in test]
    inputs = [args.input, args.unmonitored, args.support]
    metrics = {"n_queries": len(test), "n_classes": len(sites)}
    if args.mode == "closed":
        metrics.update(top1=topk_accuracy_embeddings(gallery, zq, labels, 1),
                       top5=topk_accuracy_embeddings(gallery, zq, labels, min(5, len(sites))))
    elif args.mode == "open":
        if not args.unmonitored:
            raise UsageError("open mode needs --unmonitored")
        unm = dsio.read_dataset(args.unmonitored)
        zu = embed_traces(model, [p.traffic for p in unm])
        ow = open_world_eval((zq @ gallery.anchors.T).max(1), (zu @ gallery.anchors.T).max(1))
        metrics.update(auc=ow.auc, best_f1=ow.best_f1, best_threshold=ow.best_threshold,
                       n_unmonitored=len(unm))
        csv_p = _claim(out / "pr_curve.csv", args.force)
        with open(csv_p, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["threshold", "precision", "recall"])
            w.writerows(ow.pr_rows())
    else:
        if not args.support:
            raise UsageError(f"{args.mode} mode needs --support")
        shots = _take_shots([s for s in dsio.read_dataset(args.support) if s.site_id in sites],
                            cfg.eval.shots)
        missing = sorted(set(sites) - {s.site_id for s in shots})
        if missing:
            raise ConfigError(f"no support traces for site(s) {', '.join(missing[:5])}")
        zs = embed_traces(model, [s.traffic for s in shots])
        ys = [s.site_id for s in shots]
        truth = np.array(labels)
        if args.mode == "fewshot-linear":
            probe = linear_probe_fit(zs, ys, sites, l2=cfg.eval.probe_l2)
            pred = np.array(probe.predict(zq))
        else:
            mem = FewShotMemory.build(gallery, zs, ys, cfg.eval.tip_alpha, cfg.eval.tip_beta)
            pred = np.array(sites)[np.argmax(tip_adapter_logits(gallery, mem, zq), axis=1)]
        metrics.update(top1=float(np.mean(pred == truth)), shots=cfg.eval.shots,
                       n_support=len(shots))
    report = _report(cfg, args, inputs, mode=args.mode, metrics=metrics,
                     model_checksum=model_checksum(model))
    _write_json(report_p, report)
    sys.stdout.write(json.dumps(metrics, sort_keys=True) + "\n")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "extract": cmd_extract, "augment": cmd_augment,
            "anchors": cmd_anchors, "train": cmd_train, "embed": cmd_embed,
            "gallery": cmd_gallery, "classify": cmd_classify, "eval": cmd_eval}


def build_parser() -> argparse.ArgumentParser:
    def common_flags(suppress: bool) -> argparse.ArgumentParser:
        # subcommands repeat the global flags; SUPPRESS keeps them from
        # overwriting a value given before the subcommand name
        d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        c = argparse.ArgumentParser(add_help=False)
        c.add_argument("--config", default=d(None), help="JSON run configuration")
        c.add_argument("--seed", type=int, default=d(None),
                       help="overrides every seed in the config")
        c.add_argument("--threads", type=int, default=d(1), help="torch intra-op threads")
        c.add_argument("--force", action="store_true", default=d(False),
                       help="overwrite existing outputs")
        c.add_argument("--out", default=d(None), help="output path")
        c.add_argument("-v", "--verbose", action="store_true", default=d(False))
        return c

    common = common_flags(True)
    p = argparse.ArgumentParser(prog="wfalign", parents=[common_flags(False)],
                                description="Zero-shot website fingerprinting toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("synth", parents=[common], help="generate a synthetic train/test split")

    s = sub.add_parser("extract", parents=[common], help="build a dataset from captures")
    s.add_argument("--traffic", action="append", metavar="SITE=PATH",
                   help="pcap or packet JSONL (repeatable)")
    s.add_argument("--resources", action="append", metavar="SITE=PATH",
                   help="resource log JSONL (repeatable)")
    s.add_argument("--client", help="client IP address for direction inference")

    s = sub.add_parser("augment", parents=[common], help="structure-aware augmentation")
    s.add_argument("input")
    s.add_argument("--copies", type=int, default=1)

    s = sub.add_parser("anchors", parents=[common], help="alignment anchor statistics")
    s.add_argument("input")

    s = sub.add_parser("train", parents=[common], help="train the dual encoder")
    s.add_argument("input", help="cross-modal dataset")
    s.add_argument("--labeled", help="labeled traffic dataset (default: the input)")
    s.add_argument("--augmented", help="pre-augmented dataset (default: augment the input)")

    s = sub.add_parser("embed", parents=[common], help="embed a dataset")
    s.add_argument("checkpoint")
    s.add_argument("input")
    s.add_argument("--modality", choices=["traffic", "logic"], default="traffic")

    s = sub.add_parser("gallery", parents=[common], help="build a logic gallery")
    s.add_argument("checkpoint")
    s.add_argument("input")

    s = sub.add_parser("classify", parents=[common], help="zero-shot classification")
    s.add_argument("checkpoint")
    s.add_argument("gallery")
    s.add_argument("input")
    s.add_argument("--threshold", type=float)

    s = sub.add_parser("eval", parents=[common], help="evaluate a checkpoint")
    s.add_argument("checkpoint")
    s.add_argument("input", help="monitored test dataset")
    s.add_argument("--mode", choices=["closed", "open", "fewshot-linear", "fewshot-tip"],
                   default="closed")
    s.add_argument("--unmonitored", help="unmonitored dataset (open mode)")
    s.add_argument("--support", help="labeled support dataset (few-shot modes)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        import torch
        torch.set_num_threads(max(1, args.threads))
        cfg = _config(args)
        return COMMANDS[args.command](args, cfg)
    except (UsageError, ConfigError) as exc:
        print(f"wfalign {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergedError as exc:
        print(f"wfalign {args.command}: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except (WfAlignError, OSError, ValueError) as exc:
        print(f"wfalign {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
