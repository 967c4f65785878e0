"""Sentence-reconstruction training: cross-entropy pretraining, then self-critical RL."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .autodiff import AdamState, Tensor, adam_update, backward, clip_global_norm, pick_last
from .checkpoint import Checkpoint
from .concepts import (
    EOS_ID, ConceptSet, ConceptVocabulary, extract_sentence_concepts, load_image_concepts, load_lexicon,
    tokenize,
)
from .config import TrainConfig
from .metrics import IdfTable, build_idf, cider_d, corpus_cider_d
from .model import Captioner

log = logging.getLogger(__name__)

ARCH_FIELDS = ("mode", "embed_dim", "hidden_dim", "heads", "ffn_dim", "attn_dim", "rows")


@dataclass
class Example:
    id: str
    tokens: list[str]
    ids: list[int]
    concepts: ConceptSet


def make_examples(records: Sequence[Mapping], vocab: ConceptVocabulary, max_concepts: int) -> list[Example]:
    out = []
    for rec in records:
        toks = tokenize(rec["sentence"])
        out.append(Example(str(rec["id"]), toks, vocab.encode(toks),
                           extract_sentence_concepts(toks, vocab, max_concepts)))
    return out


def xe_loss(log_probs: Tensor, targets, mask=None) -> Tensor:
    """-sum_t log p_t[y*_t] from per-step log-distributions (..., T, |D|).

    With leading batch axes the per-sequence sums are averaged.
    """
    targets = np.asarray(targets, dtype=np.int64)
    vocab = log_probs.shape[-1]
    if targets.shape != log_probs.shape[:-1]:
        raise ValueError(f"targets {targets.shape} do not match distributions {log_probs.shape}")
    if np.any((targets < 0) | (targets >= vocab)):
        raise ValueError(f"target id outside the vocabulary of size {vocab}")
    picked = pick_last(log_probs, targets)
    if mask is not None:
        picked = picked * Tensor(np.asarray(mask, dtype=float))
    n_seq = int(np.prod(targets.shape[:-1], dtype=np.int64)) or 1
    return -(picked.sum()) * (1.0 / n_seq)


def with_eos(seq: Sequence[int], max_len: int | None = None) -> list[int]:
    """Target ids for a decoded sequence: EOS appended unless it was cut off at ``max_len``."""
    seq = list(seq)
    return seq if max_len is not None and len(seq) >= max_len else seq + [EOS_ID]


def sequence_nll(model: Captioner, concept_sets, targets) -> tuple[Tensor, int]:
    """Summed teacher-forced NLL of explicit target lists (EOS included) and the token count."""
    logp, _, mask = model.token_log_probs(concept_sets, targets, append_eos=False)
    return -((logp * Tensor(mask.astype(float))).sum()), int(mask.sum())


def xe_batch_loss(model: Captioner, batch: Sequence[Example]) -> tuple[Tensor, int]:
    """Mean per-sequence NLL for a batch plus its token count."""
    nll, ntok = sequence_nll(model, [ex.concepts for ex in batch], [ex.ids + [EOS_ID] for ex in batch])
    return nll * (1.0 / len(batch)), ntok


def apply_gradients(model: Captioner, loss: Tensor, state: AdamState, cfg: TrainConfig, lr: float) -> float:
    params = model.params
    for p in params.values():
        p.zero_grad()
    backward(loss, params.values())
    grads, norm = clip_global_norm({k: p.grad for k, p in params.items()}, cfg.grad_clip)
    adam_update(params, grads, state, lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
    return norm


def make_batches(examples: Sequence[Example], batch_size: int, rng: np.random.Generator) -> list[list[Example]]:
    """Shuffle, group neighbours of similar concept-set size, then shuffle batch order."""
    order = rng.permutation(len(examples))
    shuffled = [examples[i] for i in order]
    shuffled.sort(key=lambda ex: len(ex.concepts.coarse_ids))
    batches = [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]
    return [batches[i] for i in rng.permutation(len(batches))]


def scst_step(model: Captioner, batch: Sequence[Example], references: Sequence[Sequence[Sequence[str]]],
              reward_fn: Callable[[list[str], Sequence[Sequence[str]]], float], state: AdamState,
              cfg: TrainConfig, rng: np.random.Generator, lr: float | None = None) -> dict:
    """One self-critical update with the greedy decode as baseline.

    Surrogate loss: -mean_b (r(sample_b) - r(greedy_b)) * log p(sample_b).
    """
    sets = [ex.concepts for ex in batch]
    greedy, _ = model.greedy(sets, cfg.max_len)
    sampled, _ = model.sample(sets, rng, cfg.max_len)
    words = model.vocab.decode
    r_sample = np.array([reward_fn(words(s), refs) for s, refs in zip(sampled, references)])
    r_greedy = np.array([reward_fn(words(g), refs) for g, refs in zip(greedy, references)])
    advantage = r_sample - r_greedy
    targets = [with_eos(s, cfg.max_len) for s in sampled]
    logp, _, mask = model.token_log_probs(sets, targets, append_eos=False)
    weights = mask.astype(float) * advantage[:, None]
    loss = -(logp * Tensor(weights)).sum() * (1.0 / len(batch))
    apply_gradients(model, loss, state, cfg, cfg.rl_lr if lr is None else lr)
    return {"loss": float(loss.data), "reward_sample": float(r_sample.mean()),
            "reward_greedy": float(r_greedy.mean()), "advantage": advantage}


def greedy_captions(model: Captioner, sets: Mapping[str, ConceptSet], max_len: int | None = None,
                    batch_size: int = 64) -> dict[str, list[str]]:
    keys = sorted(sets)
    out = {}
    for i in range(0, len(keys), batch_size):
        chunk = keys[i : i + batch_size]
        seqs, _ = model.greedy([sets[k] for k in chunk], max_len)
        out.update({k: model.vocab.decode(s) for k, s in zip(chunk, seqs)})
    return out


def heldout_cider(model: Captioner, sets: Mapping[str, ConceptSet],
                  references: Mapping[str, Sequence[Sequence[str]]]) -> float:
    return corpus_cider_d(greedy_captions(model, sets, model.config.max_len), references)


@dataclass
class HeldOut:
    """Image-side concept sets and reference sentences for evaluation during training."""

    concept_sets: dict[str, ConceptSet]
    references: dict[str, list[list[str]]]

    @classmethod
    def from_records(cls, sentences: Sequence[Mapping], concept_records: Sequence[Mapping] | None,
                     vocab: ConceptVocabulary, cfg: TrainConfig) -> "HeldOut":
        refs: dict[str, list[list[str]]] = {}
        for rec in sentences:
            refs.setdefault(str(rec["id"]), []).append(tokenize(rec["sentence"]))
        if concept_records is not None:
            sets = {str(r["id"]): load_image_concepts(r, vocab, cfg.max_concepts)
                    for r in concept_records if str(r["id"]) in refs}
        else:
            sets = {k: extract_sentence_concepts(v[0], vocab, cfg.max_concepts) for k, v in refs.items()}
        missing = set(refs) - set(sets)
        if missing:
            raise ValueError(f"no concept record for held-out ids {sorted(missing)[:5]}")
        return cls(sets, refs)


@dataclass
class TrainResult:
    model: Captioner
    optimizer: AdamState
    history: list[dict] = field(default_factory=list)
    epoch: int = 0

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(self.model.config, self.model.vocab,
                          {k: v.data.copy() for k, v in self.model.params.items()},
                          AdamState(self.optimizer.step, dict(self.optimizer.m), dict(self.optimizer.v)),
                          self.epoch)


def build_vocab(records: Sequence[Mapping], cfg: TrainConfig, lexicon: Mapping[str, str] | None = None):
    lexicon = load_lexicon() if lexicon is None else lexicon
    return ConceptVocabulary.build((tokenize(r["sentence"]) for r in records), lexicon, cfg.min_count)


def train(records: Sequence[Mapping], cfg: TrainConfig, heldout: HeldOut | None = None,
          vocab: ConceptVocabulary | None = None, log_file=None, resume: TrainResult | None = None,
          phases: Sequence[str] = ("xe", "rl"), eval_every: int = 1) -> TrainResult:
    """XE epochs then SCST epochs over the sentence -> concepts -> sentence loop.

    Each epoch appends {"epoch", "phase", "loss", "cider"} to the history (and
    to ``log_file`` as a JSON line); ``cider`` is the held-out greedy CIDEr-D
    when a held-out set is given, otherwise null. XE loss is per token.
    """
    if not records:
        raise ValueError("training corpus is empty")
    if resume is not None:
        model, opt, epoch = resume.model, resume.optimizer, resume.epoch
        history = resume.history
        for name in ARCH_FIELDS:
            if getattr(cfg, name) != getattr(model.config, name):
                raise ValueError(f"config {name}={getattr(cfg, name)} does not match the checkpoint")
        model.config = cfg
    else:
        vocab = vocab or build_vocab(records, cfg)
        model, opt, epoch, history = Captioner.init(cfg, vocab), AdamState(), 0, []
    cfg = model.config
    examples = make_examples(records, model.vocab, cfg.max_concepts)
    order_rng = np.random.default_rng([cfg.seed, 1, epoch])
    sample_rng = np.random.default_rng([cfg.seed, 2, epoch])

    def emit(phase, loss, last):
        cider = None
        if heldout is not None and (last or (epoch % eval_every == 0)):
            cider = heldout_cider(model, heldout.concept_sets, heldout.references)
        row = {"epoch": epoch, "phase": phase, "loss": loss, "cider": cider}
        history.append(row)
        log.info("epoch %d %s loss %.4f cider %s", epoch, phase, loss, cider)
        if log_file is not None:
            log_file.write(json.dumps(row) + "\n")
            log_file.flush()

    if "xe" in phases:
        for i in range(cfg.epochs_xe):
            epoch += 1
            total, tokens = 0.0, 0
            for batch in make_batches(examples, cfg.batch_size, order_rng):
                loss, ntok = xe_batch_loss(model, batch)
                apply_gradients(model, loss, opt, cfg, cfg.lr)
                total += float(loss.data) * len(batch)
                tokens += ntok
            emit("xe", total / tokens, i == cfg.epochs_xe - 1)

    if "rl" in phases and cfg.epochs_rl:
        train_idf = build_idf([[ex.tokens] for ex in examples])

        def reward(cand, refs, idf: IdfTable = train_idf):
            return cider_d(cand, refs, idf)

        for i in range(cfg.epochs_rl):
            epoch += 1
            losses = []
            for batch in make_batches(examples, cfg.batch_size, order_rng):
                stats = scst_step(model, batch, [[ex.tokens] for ex in batch], reward, opt, cfg, sample_rng)
                losses.append(stats["loss"])
            emit("rl", float(np.mean(losses)), i == cfg.epochs_rl - 1)

    return TrainResult(model, opt, history, epoch)


def model_from_checkpoint(ckpt: Checkpoint) -> Captioner:
    params = {k: Tensor(v.copy(), requires_grad=True, name=k) for k, v in ckpt.params.items()}
    return Captioner(ckpt.config, ckpt.vocab, params)


def resume_from_checkpoint(ckpt: Checkpoint) -> TrainResult:
    opt = AdamState(ckpt.optimizer.step, dict(ckpt.optimizer.m), dict(ckpt.optimizer.v))
    return TrainResult(model_from_checkpoint(ckpt), opt, [], ckpt.epoch)
