"""CIDEr-D and BLEU scorers over tokenised sentences.

CIDEr-D follows the usual construction (TF-IDF n-gram vectors for n = 1..4,
clipped cosine similarity, Gaussian length penalty, x10). Orders at which
neither candidate nor reference has any n-gram are left out of the average
rather than counted as zero, so a sentence scored against itself is 10 at
every length.
"""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Mapping, Sequence

Tokens = Sequence[str]


def ngrams(tokens: Tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


@dataclass
class IdfTable:
    n: int
    corpus_size: int
    df: dict[tuple[str, ...], int] = field(default_factory=dict)

    def idf(self, gram: tuple[str, ...]) -> float:
        # unseen n-grams are treated as appearing in one example
        return math.log(self.corpus_size / max(1, self.df.get(gram, 0)))


def build_idf(references: Sequence[Sequence[Tokens]], n: int = 4) -> IdfTable:
    """Document frequency counts examples (each a list of references), not sentences."""
    if not references:
        raise ValueError("cannot build IDF from an empty corpus")
    df: Counter = Counter()
    for refs in references:
        grams = set()
        for ref in refs:
            for k in range(1, n + 1):
                grams.update(ngrams(ref, k))
        df.update(grams)
    return IdfTable(n, len(references), dict(df))


def _tfidf(tokens: Tokens, k: int, idf: IdfTable) -> dict[tuple[str, ...], float]:
    return {g: c * idf.idf(g) for g, c in ngrams(tokens, k).items()}


def _order_similarity(cand: Tokens, ref: Tokens, k: int, idf: IdfTable) -> float | None:
    vc, vr = _tfidf(cand, k, idf), _tfidf(ref, k, idf)
    if not vc and not vr:
        return None
    keys_c, keys_r = sorted(vc), sorted(vr)
    nc = sum(vc[g] * vc[g] for g in keys_c)
    nr = sum(vr[g] * vr[g] for g in keys_r)
    if nc == 0.0 or nr == 0.0:
        # every n-gram has zero IDF: fall back to exact agreement of the counts
        return 1.0 if nc == nr and ngrams(cand, k) == ngrams(ref, k) else 0.0
    dot = sum(min(vc[g], vr[g]) * vr[g] for g in keys_r if g in vc)
    return dot / math.sqrt(nc * nr)


def cider_d(candidate: Tokens, references: Sequence[Tokens], idf: IdfTable, sigma: float = 6.0) -> float:
    """CIDEr-D of one candidate against its references, in [0, 10]."""
    if not candidate or not references:
        return 0.0
    total = 0.0
    for ref in references:
        penalty = math.exp(-((len(candidate) - len(ref)) ** 2) / (2.0 * sigma**2))
        sims = [s for k in range(1, idf.n + 1)
                if (s := _order_similarity(candidate, ref, k, idf)) is not None]
        total += penalty * sum(sims) / len(sims)
    return 10.0 * total / len(references)


def corpus_cider_d(candidates: Mapping[str, Tokens], references: Mapping[str, Sequence[Tokens]],
                   idf: IdfTable | None = None) -> float:
    """Mean CIDEr-D over examples; IDF comes from the references unless given."""
    keys = sorted(references)
    if idf is None:
        idf = build_idf([references[k] for k in keys])
    return sum(cider_d(candidates.get(k, []), references[k], idf) for k in keys) / len(keys)


def _clipped(candidate: Tokens, references: Sequence[Tokens], k: int) -> tuple[int, int]:
    cand = ngrams(candidate, k)
    best: Counter = Counter()
    for ref in references:
        for g, c in ngrams(ref, k).items():
            best[g] = max(best[g], c)
    return sum(min(c, best[g]) for g, c in cand.items()), sum(cand.values())


def _closest_ref_len(c: int, references: Sequence[Tokens]) -> int:
    return min((abs(len(r) - c), len(r)) for r in references)[1]


def _bleu_from_counts(matches, totals, c_len: int, r_len: int) -> float:
    if c_len == 0 or any(t == 0 or m == 0 for m, t in zip(matches, totals)):
        return 0.0
    log_p = sum(math.log(m / t) for m, t in zip(matches, totals)) / len(matches)
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(log_p)


def bleu(candidate: Tokens, references: Sequence[Tokens], max_n: int = 4) -> float:
    """Sentence BLEU-max_n, no smoothing: any empty order gives 0."""
    if not references:
        return 0.0
    counts = [_clipped(candidate, references, k) for k in range(1, max_n + 1)]
    return _bleu_from_counts([m for m, _ in counts], [t for _, t in counts],
                             len(candidate), _closest_ref_len(len(candidate), references))


def corpus_bleu(candidates: Mapping[str, Tokens], references: Mapping[str, Sequence[Tokens]],
                max_n: int = 4) -> float:
    """BLEU with clipped counts and lengths pooled over the corpus."""
    matches, totals = [0] * max_n, [0] * max_n
    c_len = r_len = 0
    for key in sorted(references):
        cand = candidates.get(key, [])
        for k in range(1, max_n + 1):
            m, t = _clipped(cand, references[key], k)
            matches[k - 1] += m
            totals[k - 1] += t
        c_len += len(cand)
        r_len += _closest_ref_len(len(cand), references[key])
    return _bleu_from_counts(matches, totals, c_len, r_len)


def evaluate(candidates: Mapping[str, Tokens], references: Mapping[str, Sequence[Tokens]]) -> dict:
    """BLEU-1..4 and CIDEr-D over the ids present in ``references``."""
    out = {f"bleu{n}": corpus_bleu(candidates, references, n) for n in range(1, 5)}
    out["cider"] = corpus_cider_d(candidates, references)
    out["n"] = len(references)
    return out
