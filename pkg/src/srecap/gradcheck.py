"""Finite-difference checks of every differentiable building block."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .autodiff import (
    Tensor, activation, backward, finite_difference_gradient, lstm_step, matmul, relative_error, softmax,
)
from .concepts import RESERVED, ConceptVocabulary, partition
from .config import TrainConfig, preset
from .decoder import DecoderParams, DecoderState, decode_step
from .embedding import EmbeddingParams, structured_embed
from .explorer import AttentionBlock, feed_forward, multi_head_attention
from .model import Captioner
from .trainer import xe_batch_loss, Example

TOLERANCE = 1e-4
EPS = 1e-5


@dataclass
class CheckResult:
    name: str
    seed: int
    error: float

    @property
    def ok(self) -> bool:
        return self.error <= TOLERANCE


def check_function(fn: Callable[[dict[str, Tensor]], Tensor], inputs: dict[str, np.ndarray],
                   rng: np.random.Generator, coords: int | None = 24, eps: float = EPS) -> float:
    """Worst relative error between backward() and central differences over ``inputs``.

    At most ``coords`` randomly chosen coordinates per input are differenced.
    """
    tensors = {k: Tensor(v.copy(), requires_grad=True) for k, v in inputs.items()}
    backward(fn(tensors), tensors.values())
    analytic, numeric = [], []
    for name, value in inputs.items():
        flat = value.reshape(-1)
        idx = np.arange(flat.size) if coords is None or flat.size <= coords else \
            np.sort(rng.choice(flat.size, coords, replace=False))
        picked = flat[idx].copy()

        def f(sub, name=name, idx=idx):
            arr = value.copy().reshape(-1)
            arr[idx] = sub
            trial = {k: Tensor(v) for k, v in inputs.items()}
            trial[name] = Tensor(arr.reshape(value.shape))
            return float(fn(trial).data)

        numeric.append(finite_difference_gradient(f, picked, eps))
        analytic.append(tensors[name].grad.reshape(-1)[idx])
    return relative_error(np.concatenate(analytic), np.concatenate(numeric))


def _projector(rng, shape):
    w = rng.normal(size=shape)
    return lambda t: (t * Tensor(w)).sum()


def _away_from_zero(rng, shape, margin=1e-2):
    x = rng.normal(size=shape)
    return np.where(np.abs(x) < margin, np.sign(x + 1e-12) * margin * 2, x)


def _block_inputs(rng, cfg, prefix=""):
    s = 0.3
    e, f = cfg.embed_dim, cfg.ffn_dim
    return {
        f"{prefix}wq": rng.uniform(-s, s, (e, e)), f"{prefix}wk": rng.uniform(-s, s, (e, e)),
        f"{prefix}wv": rng.uniform(-s, s, (e, e)), f"{prefix}wo": rng.uniform(-s, s, (e, e)),
        f"{prefix}w_f": rng.uniform(-s, s, (e, f)), f"{prefix}b_f": rng.uniform(-s, s, f),
        f"{prefix}w_ff": rng.uniform(-s, s, (f, e)), f"{prefix}b_ff": rng.uniform(-s, s, e),
    }


def _block(t, cfg, prefix=""):
    keys = ("wq", "wk", "wv", "wo", "w_f", "b_f", "w_ff", "b_ff")
    return AttentionBlock(heads=cfg.heads, **{k: t[prefix + k] for k in keys})


def _toy_vocab():
    words = ["young", "old", "woman", "man", "dog", "shirt", "wearing", "chasing", "a"]
    cats = {"young": "attribute", "old": "attribute", "woman": "object", "man": "object",
            "dog": "object", "shirt": "object", "wearing": "relation", "chasing": "relation"}
    return ConceptVocabulary(RESERVED + tuple(sorted(words)), cats)


def _examples(vocab):
    sents = [["a", "young", "woman", "wearing", "a", "shirt"], ["a", "dog", "chasing", "a", "old", "man"],
             ["a", "man"]]
    out = []
    for i, toks in enumerate(sents):
        ids = vocab.encode(toks)
        out.append(Example(str(i), toks, ids, partition([j for j in ids if vocab.category_of(j)], vocab)))
    return out


def _model_check(mode: str):
    def run(rng, cfg):
        vocab = _toy_vocab()
        model = Captioner.init(TrainConfig(**{**cfg.to_dict(), "mode": mode, "init_scale": 0.3}),
                               vocab, seed=int(rng.integers(1 << 31)))
        examples = _examples(vocab)
        names = list(model.params)
        inputs = {k: model.params[k].data.copy() for k in names}

        def fn(t):
            m = Captioner(model.config, vocab, dict(t))
            return xe_batch_loss(m, examples)[0]

        return check_function(fn, inputs, rng, coords=3)
    return run


def _check_matmul(rng, cfg):
    e = cfg.embed_dim
    proj = _projector(rng, (5, e))
    return check_function(lambda t: proj(matmul(t["a"], t["b"])),
                          {"a": rng.normal(size=(5, e)), "b": rng.normal(size=(e, e))}, rng)


def _check_softmax(rng, cfg):
    mask = rng.random((5, 9)) < 0.3
    mask[:, 0] = False
    proj = _projector(rng, (5, 9))
    return check_function(lambda t: proj(softmax(t["x"], mask)), {"x": rng.normal(size=(5, 9)) * 2}, rng)


def _check_activation(kind):
    def run(rng, cfg):
        proj = _projector(rng, (5, cfg.embed_dim))
        return check_function(lambda t: proj(activation(t["x"], kind)),
                              {"x": _away_from_zero(rng, (5, cfg.embed_dim))}, rng)
    return run


def _check_lstm(rng, cfg):
    e, d = cfg.embed_dim, cfg.hidden_dim
    ph, pc = _projector(rng, (d,)), _projector(rng, (d,))
    inputs = {"x": rng.normal(size=2 * e), "h": rng.normal(size=d), "c": rng.normal(size=d),
              "w": rng.uniform(-0.2, 0.2, (2 * e + d, 4 * d)), "b": rng.uniform(-0.2, 0.2, 4 * d)}

    def fn(t):
        h, c = lstm_step(t["x"], t["h"], t["c"], t["w"], t["b"])
        return ph(h) + pc(c)

    return check_function(fn, inputs, rng)


def _check_mha(rng, cfg):
    e = cfg.embed_dim
    mask = np.array([False] * 5 + [True] * 2)
    inputs = {"q": rng.normal(size=(4, e)), "k": rng.normal(size=(7, e)), "v": rng.normal(size=(7, e)),
              **_block_inputs(rng, cfg)}
    proj = _projector(rng, (4, e))
    return check_function(lambda t: proj(multi_head_attention(t["q"], t["k"], t["v"], _block(t, cfg), mask)),
                          inputs, rng)


def _check_ffn(rng, cfg):
    inputs = {"x": rng.normal(size=(5, cfg.embed_dim)), **_block_inputs(rng, cfg)}
    proj = _projector(rng, (5, cfg.embed_dim))
    return check_function(lambda t: proj(feed_forward(t["x"], _block(t, cfg))), inputs, rng)


def _check_structured(rng, cfg):
    e, da, r = cfg.embed_dim, cfg.attn_dim, cfg.rows
    inputs = {"r": rng.normal(size=(7, e)), "w_s1": rng.uniform(-0.3, 0.3, (da, e)),
              "w_s2": rng.uniform(-0.3, 0.3, (r, da))}
    proj = _projector(rng, (r, e))
    return check_function(lambda t: proj(structured_embed(t["r"], EmbeddingParams(t["w_s1"], t["w_s2"]))),
                          inputs, rng)


def _check_decode_step(rng, cfg):
    e, d, da, n, vocab = cfg.embed_dim, cfg.hidden_dim, cfg.attn_dim, 3 * cfg.rows, 15
    s = 0.2
    inputs = {
        "embed": rng.uniform(-s, s, (vocab, e)), "lstm_w": rng.uniform(-s, s, (2 * e + d, 4 * d)),
        "lstm_b": rng.uniform(-s, s, 4 * d), "w_m": rng.uniform(-s, s, (da, e)),
        "w_h": rng.uniform(-s, s, (da, d)), "w_alpha": rng.uniform(-s, s, da),
        "w_pr": rng.uniform(-s, s, (vocab, e)), "w_ph": rng.uniform(-s, s, (vocab, d)),
        "memory": rng.normal(size=(2, n, e)), "c_avg": rng.normal(size=(2, e)),
        "h": rng.normal(size=(2, d)), "c": rng.normal(size=(2, d)),
    }
    prev = rng.integers(vocab, size=2)
    proj_p, proj_a = _projector(rng, (2, vocab)), _projector(rng, (2, n))

    def fn(t):
        params = DecoderParams(**{k: t[k] for k in ("embed", "lstm_w", "lstm_b", "w_m", "w_h",
                                                    "w_alpha", "w_pr", "w_ph")})
        out = decode_step(prev, DecoderState(t["h"], t["c"]), t["memory"], t["c_avg"], params, rows=cfg.rows)
        return proj_p(out.log_probs) + proj_a(out.alpha)

    return check_function(fn, inputs, rng)


CHECKS: dict[str, Callable[[np.random.Generator, TrainConfig], float]] = {
    "matmul": _check_matmul,
    "softmax": _check_softmax,
    "relu": _check_activation("relu"),
    "tanh": _check_activation("tanh"),
    "sigmoid": _check_activation("sigmoid"),
    "lstm_step": _check_lstm,
    "multi_head_attention": _check_mha,
    "feed_forward": _check_ffn,
    "structured_embed": _check_structured,
    "decode_step": _check_decode_step,
    "xe_loss_coarse": _model_check("coarse"),
    "xe_loss_fine": _model_check("fine"),
}


def run_suite(seeds=range(10), names=None, cfg: TrainConfig | None = None) -> list[CheckResult]:
    cfg = cfg or preset("desk")
    results = []
    for name in names or CHECKS:
        for seed in seeds:
            rng = np.random.default_rng([seed, sum(map(ord, name))])
            results.append(CheckResult(name, seed, CHECKS[name](rng, cfg)))
    return results
