"""Command-line entry point: gen-data, train, infer, eval, grad-check."""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path
from typing import Sequence

from .checkpoint import load_checkpoint, save_checkpoint
from .concepts import load_image_concepts
from .config import PRESETS, load_config, preset
from .data import group_sentences, read_jsonl, write_jsonl, write_synthetic
from .gradcheck import CHECKS, TOLERANCE, run_suite
from .metrics import evaluate
from .trainer import HeldOut, build_vocab, model_from_checkpoint, resume_from_checkpoint, train


def _shared(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat JSON file of TrainConfig fields")
    p.add_argument("--preset", choices=sorted(PRESETS), default="full")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="srecap", description="Unpaired captioning from semantic concepts.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("gen-data", help="write a synthetic corpus, concept file and split")
    _shared(p)
    p.add_argument("--size", type=int, default=50)

    p = sub.add_parser("train", help="sentence-reconstruction training")
    _shared(p)
    p.add_argument("--corpus", type=Path, required=True)
    p.add_argument("--mode", choices=("coarse", "fine"))
    p.add_argument("--split", type=Path, help="split.json; trains on 'train' ids, evaluates on 'heldout'")
    p.add_argument("--concepts", type=Path, help="image-concept file used for held-out evaluation")
    p.add_argument("--log", type=Path, help="line-delimited JSON training log")
    p.add_argument("--epochs-xe", type=int)
    p.add_argument("--epochs-rl", type=int)
    p.add_argument("--resume", type=Path, help="continue from a checkpoint")

    p = sub.add_parser("infer", help="caption image-concept records")
    _shared(p)
    p.add_argument("--concepts", type=Path, required=True)
    p.add_argument("--checkpoint", type=Path, required=True)
    p.add_argument("--beam", type=int)
    p.add_argument("--max-len", type=int)
    p.add_argument("--mode", choices=("coarse", "fine"), help="must match the checkpoint")

    p = sub.add_parser("eval", help="BLEU-1..4 and CIDEr-D as JSON")
    _shared(p)
    p.add_argument("--candidates", type=Path, required=True)
    p.add_argument("--references", type=Path, required=True)

    p = sub.add_parser("grad-check", help="finite-difference gradient suite")
    _shared(p)
    p.set_defaults(preset="desk")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--check", action="append", choices=sorted(CHECKS), help="limit to named checks")
    return parser


def resolve_config(args, **flags):
    """Preset, then config file, then explicit flags."""
    values = load_config(args.config) if args.config else {}
    values.update({k: v for k, v in flags.items() if v is not None})
    if args.seed is not None:
        values["seed"] = args.seed
    return preset(args.preset, **values)


def cmd_gen_data(args) -> int:
    paths = write_synthetic(args.out or Path("."), args.seed if args.seed is not None else 0, args.size)
    for kind, path in paths.items():
        print(f"{kind}: {path}")
    return 0


def cmd_train(args) -> int:
    cfg = resolve_config(args, mode=args.mode, epochs_xe=args.epochs_xe, epochs_rl=args.epochs_rl)
    records = read_jsonl(args.corpus)
    held_records = []
    if args.split:
        split = json.loads(args.split.read_text(encoding="utf-8"))
        train_ids, held_ids = set(split["train"]), set(split.get("heldout", []))
        held_records = [r for r in records if str(r["id"]) in held_ids]
        records = [r for r in records if str(r["id"]) in train_ids]
    resume = None
    if args.resume:
        resume = resume_from_checkpoint(load_checkpoint(args.resume))
        vocab = resume.model.vocab
    else:
        vocab = build_vocab(records, cfg)
    heldout = None
    if held_records:
        concepts = read_jsonl(args.concepts) if args.concepts else None
        heldout = HeldOut.from_records(held_records, concepts, vocab, cfg)
    out = args.out or Path("model.ckpt")
    t0 = time.perf_counter()
    if args.log:
        with open(args.log, "w", encoding="utf-8", newline="\n") as fh:
            result = train(records, cfg, heldout, vocab, log_file=fh, resume=resume)
    else:
        result = train(records, cfg, heldout, vocab, resume=resume)
    save_checkpoint(result.checkpoint(), out)
    last = result.history[-1] if result.history else {}
    print(json.dumps({"checkpoint": str(out), "epoch": result.epoch, "loss": last.get("loss"),
                      "cider": last.get("cider"), "seconds": round(time.perf_counter() - t0, 2)}))
    return 0


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    if args.mode and args.mode != ckpt.config.mode:
        raise SystemExit(f"error: --mode {args.mode} but checkpoint was trained in {ckpt.config.mode} mode")
    model = model_from_checkpoint(ckpt)
    beam = args.beam if args.beam is not None else ckpt.config.beam
    max_len = args.max_len if args.max_len is not None else ckpt.config.max_len
    if beam < 1 or max_len < 1:
        raise SystemExit("error: --beam and --max-len must be positive")
    rows = []
    for rec in read_jsonl(args.concepts):
        cs = load_image_concepts(rec, model.vocab, ckpt.config.max_concepts)
        rows.append({"id": str(rec["id"]), "caption": " ".join(model.caption(cs, beam, max_len))})
    if args.out:
        write_jsonl(args.out, rows)
    else:
        for row in rows:
            print(json.dumps(row, ensure_ascii=False, sort_keys=True))
    return 0


def cmd_eval(args) -> int:
    cands = {k: v[0] for k, v in group_sentences(read_jsonl(args.candidates), key="caption").items()}
    refs = group_sentences(read_jsonl(args.references))
    missing = sorted(set(refs) - set(cands))
    if missing:
        raise SystemExit(f"error: no candidate for ids {missing[:5]}")
    text = json.dumps(evaluate(cands, refs), sort_keys=True)
    if args.out:
        args.out.write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_grad_check(args) -> int:
    cfg = resolve_config(args)
    results = run_suite(range(args.seeds), args.check, cfg)
    worst: dict[str, float] = {}
    for r in results:
        worst[r.name] = max(worst.get(r.name, 0.0), r.error)
    for name, err in worst.items():
        print(f"{'ok  ' if err <= TOLERANCE else 'FAIL'} {name:<22} max rel err {err:.3e}")
    return 0 if all(r.ok for r in results) else 1


COMMANDS = {"gen-data": cmd_gen_data, "train": cmd_train, "infer": cmd_infer, "eval": cmd_eval,
            "grad-check": cmd_grad_check}


def run_cli(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
