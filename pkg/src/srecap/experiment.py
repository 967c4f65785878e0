"""The desk-scale synthetic experiment: XE overfit, then SCST from the XE checkpoint."""
from __future__ import annotations

import time
from dataclasses import dataclass

from .config import TrainConfig, preset
from .data import gen_synthetic_corpus
from .trainer import (
    HeldOut, TrainResult, build_vocab, greedy_captions, heldout_cider, make_examples, resume_from_checkpoint, train,
)


@dataclass
class DeskRun:
    mode: str
    xe: TrainResult
    xe_loss: float
    reconstruction: float
    heldout_cider_xe: float
    xe_seconds: float
    heldout: HeldOut
    records: list


@dataclass
class RlRun:
    result: TrainResult
    heldout_cider_rl: float
    seconds: float


def synthetic_split(seed: int = 0, size: int = 50):
    sents, concepts, split = gen_synthetic_corpus(seed, size)
    train_ids, held_ids = set(split["train"]), set(split["heldout"])
    train_recs = [s for s in sents if s["id"] in train_ids]
    held_recs = [s for s in sents if s["id"] in held_ids]
    held_concepts = [c for c in concepts if c["id"] in held_ids]
    return train_recs, held_recs, held_concepts


def reconstruction_rate(result: TrainResult, records) -> float:
    """Fraction of training sentences greedy-decoded exactly from their own concepts."""
    model = result.model
    examples = make_examples(records, model.vocab, model.config.max_concepts)
    caps = greedy_captions(model, {ex.id: ex.concepts for ex in examples}, model.config.max_len)
    return sum(caps[ex.id] == ex.tokens for ex in examples) / len(examples)


def run_xe(mode: str = "fine", data_seed: int = 0, epochs: int = 200, log_file=None,
           cfg: TrainConfig | None = None) -> DeskRun:
    cfg = cfg or preset("desk", mode=mode, epochs_xe=epochs)
    train_recs, held_recs, held_concepts = synthetic_split(data_seed)
    vocab = build_vocab(train_recs, cfg)
    heldout = HeldOut.from_records(held_recs, held_concepts, vocab, cfg)
    t0 = time.perf_counter()
    result = train(train_recs, cfg, heldout, vocab, log_file=log_file, phases=("xe",), eval_every=20)
    seconds = time.perf_counter() - t0
    return DeskRun(cfg.mode, result, result.history[-1]["loss"], reconstruction_rate(result, train_recs),
                   result.history[-1]["cider"], seconds, heldout, train_recs)


def run_rl(run: DeskRun, log_file=None) -> RlRun:
    """SCST epochs on a copy of the XE result, leaving ``run`` untouched."""
    start = TrainResult(*_copy_result(run.xe))
    t0 = time.perf_counter()
    result = train(run.records, start.model.config, run.heldout, log_file=log_file, resume=start, phases=("rl",))
    seconds = time.perf_counter() - t0
    return RlRun(result, heldout_cider(result.model, run.heldout.concept_sets, run.heldout.references), seconds)


def _copy_result(res: TrainResult):
    resumed = resume_from_checkpoint(res.checkpoint())
    return resumed.model, resumed.optimizer, list(res.history), res.epoch
