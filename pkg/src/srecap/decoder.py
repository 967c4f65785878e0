"""Attention LSTM sentence decoder and the greedy / sampling / beam decoding loops.

The search loops only need a step function ``step(prev_ids, state) ->
(log_probs, state)`` over numpy arrays with a leading hypothesis axis, so they
work equally for the captioning model and for hand-built toy models.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autodiff import Tensor, concat, embedding, log_softmax, lstm_step, softmax, swap_last, tanh
from .concepts import BOS_ID, EOS_ID, PAD_ID


@dataclass
class DecoderParams:
    embed: Tensor    # (|D|, e), shared with the concept embedding
    lstm_w: Tensor   # (2e + d, 4d)
    lstm_b: Tensor   # (4d,)
    w_m: Tensor      # (d_a, e)
    w_h: Tensor      # (d_a, d)
    w_alpha: Tensor  # (d_a,)
    w_pr: Tensor     # (|D|, e)
    w_ph: Tensor     # (|D|, d)

    @property
    def hidden_dim(self) -> int:
        return self.w_h.shape[1]

    def named(self) -> dict[str, Tensor]:
        return {k: getattr(self, k) for k in
                ("lstm_w", "lstm_b", "w_m", "w_h", "w_alpha", "w_pr", "w_ph")}

    @classmethod
    def init(cls, rng, embed: Tensor, hidden_dim: int, attn_dim: int, scale: float = 0.08):
        vocab, e = embed.shape

        def w(*shape):
            return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True)

        return cls(
            embed=embed,
            lstm_w=w(2 * e + hidden_dim, 4 * hidden_dim),
            lstm_b=Tensor(np.zeros(4 * hidden_dim), requires_grad=True),
            w_m=w(attn_dim, e),
            w_h=w(attn_dim, hidden_dim),
            w_alpha=w(attn_dim),
            w_pr=w(vocab, e),
            w_ph=w(vocab, hidden_dim),
        )


@dataclass
class DecoderState:
    h: Tensor
    c: Tensor
    t: int = 0

    @classmethod
    def zeros(cls, batch: int, hidden_dim: int) -> "DecoderState":
        return cls(Tensor(np.zeros((batch, hidden_dim))), Tensor(np.zeros((batch, hidden_dim))), 0)


@dataclass
class StepOutput:
    log_probs: Tensor  # (B, |D|)
    state: DecoderState
    alpha: Tensor      # (B, n)

    @property
    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs.data)


def project_memory(memory: Tensor, params: DecoderParams) -> Tensor:
    """W_M M^T laid out as (B, n, d_a); independent of the step so computed once."""
    return memory @ swap_last(params.w_m)


def decode_step(
    prev_ids,
    state: DecoderState,
    memory: Tensor,
    c_avg: Tensor,
    params: DecoderParams,
    rows: int | None = None,
    memory_proj: Tensor | None = None,
) -> StepOutput:
    """One decoder step for a batch.

    ``memory`` is the (B, n, e) relationship embedding, ``c_avg`` the (B, e)
    mean concept vector. When ``rows`` is given, n must be ``rows`` (coarse)
    or ``3 * rows`` (fine).
    """
    n = memory.shape[-2]
    if rows is not None and n not in (rows, 3 * rows):
        raise ValueError(f"memory has {n} rows; expected {rows} or {3 * rows}")
    prev_ids = np.asarray(prev_ids, dtype=np.int64)
    word = embedding(params.embed, prev_ids)
    x = concat([word, c_avg], axis=-1)
    h, c = lstm_step(x, state.h, state.c, params.lstm_w, params.lstm_b)
    if memory_proj is None:
        memory_proj = project_memory(memory, params)
    hproj = (h @ swap_last(params.w_h)).reshape(h.shape[0], 1, params.w_h.shape[0])
    scores = (tanh(memory_proj + hproj) @ params.w_alpha.reshape(-1, 1)).reshape(h.shape[0], n)
    alpha = softmax(scores)
    context = (alpha.reshape(h.shape[0], 1, n) @ memory).reshape(h.shape[0], memory.shape[-1])
    logits = context @ swap_last(params.w_pr) + h @ swap_last(params.w_ph)
    return StepOutput(log_softmax(logits), DecoderState(h, c, state.t + 1), alpha)


StepFn = Callable[[np.ndarray, object], tuple[np.ndarray, object]]
SelectFn = Callable[[object, np.ndarray], object]

# never emitted by any decoding loop
DEFAULT_BANNED = (PAD_ID, BOS_ID)


def _ban(logp: np.ndarray, banned: Sequence[int]) -> np.ndarray:
    if len(banned):
        logp = logp.copy()
        logp[:, list(banned)] = -np.inf
    return logp


def greedy_search(step: StepFn, state, batch: int, max_len: int, banned=DEFAULT_BANNED):
    """Argmax decoding (lowest id on ties). Returns (sequences, log_probs), EOS stripped."""
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    prev = np.full(batch, BOS_ID, dtype=np.int64)
    seqs: list[list[int]] = [[] for _ in range(batch)]
    scores = np.zeros(batch)
    done = np.zeros(batch, dtype=bool)
    for _ in range(max_len):
        logp, state = step(prev, state)
        choice = np.argmax(_ban(logp, banned), axis=-1)
        for b in np.flatnonzero(~done):
            scores[b] += logp[b, choice[b]]
            if choice[b] == EOS_ID:
                done[b] = True
            else:
                seqs[b].append(int(choice[b]))
        if done.all():
            break
        prev = choice
    return seqs, scores


def sample_search(step: StepFn, state, batch: int, max_len: int, rng: np.random.Generator,
                  banned=DEFAULT_BANNED):
    """Multinomial sampling from each step distribution (banned ids removed).

    The reported log-probability is the sum of the unrestricted log p_t of
    the chosen tokens, so it matches re-scoring the sequence.
    """
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    prev = np.full(batch, BOS_ID, dtype=np.int64)
    seqs: list[list[int]] = [[] for _ in range(batch)]
    scores = np.zeros(batch)
    done = np.zeros(batch, dtype=bool)
    for _ in range(max_len):
        logp, state = step(prev, state)
        restricted = _ban(logp, banned)
        p = np.exp(restricted - restricted.max(axis=-1, keepdims=True))
        cdf = np.cumsum(p, axis=-1)
        u = rng.random(batch) * cdf[:, -1]
        choice = np.array([min(int(np.searchsorted(cdf[b], u[b], side="right")), p.shape[1] - 1)
                           for b in range(batch)], dtype=np.int64)
        # a zero-probability id can only be hit through rounding at the boundary
        for b in range(batch):
            while p[b, choice[b]] == 0.0:
                choice[b] -= 1
        for b in np.flatnonzero(~done):
            scores[b] += logp[b, choice[b]]
            if choice[b] == EOS_ID:
                done[b] = True
            else:
                seqs[b].append(int(choice[b]))
        if done.all():
            break
        prev = choice
    return seqs, scores


def beam_search(step: StepFn, state, select: SelectFn, beam: int, max_len: int,
                banned=DEFAULT_BANNED):
    """Beam search for one example over summed log-probabilities.

    ``state`` has one hypothesis row; ``select(state, rows)`` gathers rows.
    Finished hypotheses compete on total log-probability (no length
    normalisation); ties go to the lexicographically smaller id sequence.
    Hypotheses still open after ``max_len`` steps count as finished. The
    greedy path is kept as a candidate, so the result never scores below it.
    Returns (sequence, log_prob) with EOS stripped.
    """
    if beam < 1:
        raise ValueError("beam must be at least 1")
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    alive: list[tuple[float, tuple[int, ...]]] = [(0.0, ())]
    finished: list[tuple[float, tuple[int, ...]]] = []
    greedy_state = state
    for t in range(max_len):
        prev = np.array([h[1][-1] if h[1] else BOS_ID for h in alive], dtype=np.int64)
        logp, state = step(prev, state)
        logp = _ban(logp, banned)
        k = min(beam, logp.shape[1])
        cands = []
        for i, (score, toks) in enumerate(alive):
            top = np.argsort(-logp[i], kind="stable")[: k + 1]
            for tok in top:
                if np.isfinite(logp[i, tok]):
                    cands.append((score + float(logp[i, tok]), toks + (int(tok),), i))
        cands.sort(key=lambda c: (-c[0], c[1]))
        next_alive, rows = [], []
        for rank, (score, toks, i) in enumerate(cands):
            if toks[-1] == EOS_ID:
                if rank < beam:
                    finished.append((score, toks[:-1]))
            elif len(next_alive) < beam:
                next_alive.append((score, toks))
                rows.append(i)
        if not next_alive:
            alive = []
            break
        alive = next_alive
        state = select(state, np.asarray(rows, dtype=np.int64))
        if finished and max(f[0] for f in finished) >= alive[0][0]:
            alive = []
            break
    finished.extend(alive)
    seqs, scores = greedy_search(step, greedy_state, 1, max_len, banned)
    finished.append((float(scores[0]), tuple(seqs[0])))
    score, toks = min(finished, key=lambda f: (-f[0], f[1]))
    return list(toks), score
