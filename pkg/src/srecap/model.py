"""The full captioner: concepts -> relationships -> relationship embedding -> decoder."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .autodiff import Tensor, concat, embedding, pick_last
from .concepts import (
    BOS_ID, EOS_ID, ConceptSet, ConceptVocabulary, padded_ids,
)
from .config import TrainConfig
from .decoder import (
    DEFAULT_BANNED, DecoderParams, DecoderState, StepOutput, beam_search, decode_step,
    greedy_search, project_memory, sample_search,
)
from .embedding import EmbeddingParams, assemble, structured_embed
from .explorer import AttentionBlock, FineBlocks, coarse_explore, fine_explore

_BLOCK_KEYS = ("wq", "wk", "wv", "wo", "w_f", "b_f", "w_ff", "b_ff")


@dataclass
class Encoded:
    memory: Tensor       # (B, n, e): M_c or M_f
    c_avg: Tensor        # (B, e)
    memory_proj: Tensor  # (B, n, d_a)


class Captioner:
    """Parameters live in ``self.params`` (name -> Tensor); the structured views share them."""

    def __init__(self, config: TrainConfig, vocab: ConceptVocabulary, params: dict[str, Tensor]):
        self.config = config
        self.vocab = vocab
        self.params = params
        self._bind()

    @classmethod
    def init(cls, config: TrainConfig, vocab: ConceptVocabulary, seed: int | None = None) -> "Captioner":
        """Uniform(-s, s) weights and zero biases, drawn in a fixed name order from ``seed``."""
        rng = np.random.default_rng(config.seed if seed is None else seed)
        s = config.init_scale
        e, d = config.embed_dim, config.hidden_dim
        params: dict[str, Tensor] = {
            "embed": Tensor(rng.uniform(-s, s, size=(len(vocab), e)), requires_grad=True)
        }
        groups = ["coarse"] if config.mode == "coarse" else ["fine.attribute", "fine.object", "fine.relation"]
        for g in groups:
            block = AttentionBlock.init(rng, e, config.heads, config.ffn_dim, s)
            params.update({f"{g}.{k}": v for k, v in block.named().items()})
        kinds = ["g"] if config.mode == "coarse" else ["a", "o", "r"]
        for k in kinds:
            emb = EmbeddingParams.init(rng, e, config.attn_dim, config.rows, s)
            params.update({f"embed_{k}.{n}": v for n, v in emb.named().items()})
        dec = DecoderParams.init(rng, params["embed"], d, config.attn_dim, s)
        params.update({f"decoder.{n}": v for n, v in dec.named().items()})
        for name, t in params.items():
            t.name = name
        return cls(config, vocab, params)

    def _bind(self):
        p, cfg = self.params, self.config

        def block(prefix):
            return AttentionBlock.from_named({k: p[f"{prefix}.{k}"] for k in _BLOCK_KEYS}, cfg.heads)

        def emb(kind):
            return EmbeddingParams(p[f"embed_{kind}.w_s1"], p[f"embed_{kind}.w_s2"])

        if cfg.mode == "coarse":
            self.coarse = block("coarse")
            self.embeds = {"g": emb("g")}
        else:
            self.fine = FineBlocks(block("fine.attribute"), block("fine.object"), block("fine.relation"))
            self.embeds = {k: emb(k) for k in ("a", "o", "r")}
        self.decoder = DecoderParams(
            embed=p["embed"], **{n: p[f"decoder.{n}"] for n in
                                 ("lstm_w", "lstm_b", "w_m", "w_h", "w_alpha", "w_pr", "w_ph")}
        )

    @property
    def memory_rows(self) -> int:
        return self.config.rows * (1 if self.config.mode == "coarse" else 3)

    # forward

    def encode(self, concept_sets: Sequence[ConceptSet]) -> Encoded:
        """Batch-encode concept sets, padding each concept group and masking the padding."""
        table = self.params["embed"]
        g_ids, g_mask = padded_ids([cs.coarse_ids for cs in concept_sets])
        c_g = embedding(table, g_ids)
        keep = Tensor((~g_mask).astype(float)[..., None])
        counts = (~g_mask).sum(axis=1).astype(float)[:, None]
        c_avg = (c_g * keep).sum(axis=1) * Tensor(1.0 / counts)
        if self.config.mode == "coarse":
            r_g = coarse_explore(c_g, self.coarse, g_mask)
            memory = assemble(structured_embed(r_g, self.embeds["g"], g_mask))
        else:
            a_ids, a_mask = padded_ids([cs.attribute_ids for cs in concept_sets])
            o_ids, o_mask = padded_ids([cs.object_ids for cs in concept_sets])
            r_ids, r_mask = padded_ids([cs.relation_ids for cs in concept_sets])
            c_a, c_o, c_r = (embedding(table, i) for i in (a_ids, o_ids, r_ids))
            r_a, r_o, r_r = fine_explore(c_a, c_o, c_r, self.fine, (a_mask, o_mask, r_mask))
            # output rows follow the query rows: objects, relations, objects
            memory = assemble([
                structured_embed(r_a, self.embeds["a"], o_mask),
                structured_embed(r_o, self.embeds["o"], r_mask),
                structured_embed(r_r, self.embeds["r"], o_mask),
            ])
        return Encoded(memory, c_avg, project_memory(memory, self.decoder))

    def step(self, prev_ids, state: DecoderState, enc: Encoded) -> StepOutput:
        return decode_step(prev_ids, state, enc.memory, enc.c_avg, self.decoder,
                           rows=self.config.rows, memory_proj=enc.memory_proj)

    def token_log_probs(self, concept_sets: Sequence[ConceptSet], sequences: Sequence[Sequence[int]],
                        append_eos: bool = True) -> tuple[Tensor, np.ndarray, np.ndarray]:
        """Teacher-forced log p_t[y_t] for each target token.

        Targets are ``sequence + [EOS]`` (unless ``append_eos`` is False).
        Returns (log_probs (B, T), targets (B, T), mask (B, T) True on real tokens).
        """
        targets = [list(s) + ([EOS_ID] if append_eos else []) for s in sequences]
        if any(len(t) == 0 for t in targets):
            raise ValueError("cannot score an empty target sequence")
        B, T = len(targets), max(len(t) for t in targets)
        tgt = np.full((B, T), EOS_ID, dtype=np.int64)
        mask = np.zeros((B, T), dtype=bool)
        for b, t in enumerate(targets):
            if any(not 0 <= i < len(self.vocab) for i in t):
                raise ValueError(f"target id outside the vocabulary in sequence {b}")
            tgt[b, : len(t)] = t
            mask[b, : len(t)] = True
        inputs = np.concatenate([np.full((B, 1), BOS_ID, dtype=np.int64), tgt[:, :-1]], axis=1)
        enc = self.encode(concept_sets)
        state = DecoderState.zeros(B, self.config.hidden_dim)
        picked = []
        for t in range(T):
            out = self.step(inputs[:, t], state, enc)
            state = out.state
            picked.append(pick_last(out.log_probs, tgt[:, t]).reshape(B, 1))
        return concat(picked, axis=1), tgt, mask

    # decoding (no gradient bookkeeping needed)

    def _detached(self):
        return Captioner(self.config, self.vocab, {k: Tensor(v.data) for k, v in self.params.items()})

    def _step_fn(self, enc: Encoded):
        tiled: dict[int, Encoded] = {enc.c_avg.shape[0]: enc}

        def step(prev, state):
            h, c = state
            b = len(prev)
            if b not in tiled:  # beam rows all share one example's encoding
                tiled[b] = Encoded(*(Tensor(np.repeat(t.data, b, axis=0))
                                     for t in (enc.memory, enc.c_avg, enc.memory_proj)))
            out = self.step(prev, DecoderState(Tensor(h), Tensor(c)), tiled[b])
            return out.log_probs.data, (out.state.h.data, out.state.c.data)

        return step

    def _zero_state(self, batch: int):
        d = self.config.hidden_dim
        return np.zeros((batch, d)), np.zeros((batch, d))

    def greedy(self, concept_sets: Sequence[ConceptSet], max_len: int | None = None,
               banned=DEFAULT_BANNED):
        model = self._detached()
        enc = model.encode(concept_sets)
        return greedy_search(model._step_fn(enc), self._zero_state(len(concept_sets)),
                             len(concept_sets), max_len or self.config.max_len, banned)

    def sample(self, concept_sets: Sequence[ConceptSet], rng: np.random.Generator,
               max_len: int | None = None, banned=DEFAULT_BANNED):
        model = self._detached()
        enc = model.encode(concept_sets)
        return sample_search(model._step_fn(enc), self._zero_state(len(concept_sets)),
                             len(concept_sets), max_len or self.config.max_len, rng, banned)

    def beam(self, concept_set: ConceptSet, beam: int | None = None, max_len: int | None = None,
             banned=DEFAULT_BANNED):
        model = self._detached()
        enc = model.encode([concept_set])

        def select(state, rows):
            return state[0][rows], state[1][rows]

        return beam_search(model._step_fn(enc), self._zero_state(1), select,
                           beam or self.config.beam, max_len or self.config.max_len, banned)

    def caption(self, concept_set: ConceptSet, beam: int = 1, max_len: int | None = None) -> list[str]:
        if beam == 1:
            seqs, _ = self.greedy([concept_set], max_len)
            ids = seqs[0]
        else:
            ids, _ = self.beam(concept_set, beam, max_len)
        return self.vocab.decode(ids)
