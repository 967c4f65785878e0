"""Record files (line-delimited JSON) and the synthetic sentence grammar."""
from __future__ import annotations

import itertools
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .concepts import ATTRIBUTE, OBJECT, RELATION, load_lexicon, tokenize


def read_jsonl(path: str | Path) -> list[dict]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    records.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc.msg}") from None
    return records


def write_jsonl(path: str | Path, records: Iterable[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, sort_keys=True) + "\n")


def group_sentences(records: Iterable[dict], key: str = "sentence") -> dict[str, list[list[str]]]:
    """id -> tokenised sentences; accepts either ``sentence`` or ``caption`` fields."""
    out: dict[str, list[list[str]]] = {}
    for rec in records:
        text = rec.get(key, rec.get("caption", rec.get("sentence")))
        if text is None:
            raise ValueError(f"record {rec.get('id')!r} has no sentence or caption")
        out.setdefault(str(rec["id"]), []).append(tokenize(text))
    return out


# object kinds -> (objects, attributes that describe them)
KINDS = {
    "person": (("woman", "man"), ("young", "old")),
    "animal": (("dog", "cat"), ("brown", "black")),
    "clothing": (("shirt", "hat"), ("red", "black")),
}
# relation -> allowed (subject kind, object kind) pairs
RELATIONS = {
    "wearing": (("person", "clothing"),),
    "holding": (("person", "animal"), ("person", "clothing")),
    "watching": (("person", "animal"),),
    "chasing": (("animal", "person"), ("animal", "animal")),
}


@dataclass(frozen=True)
class SyntheticGrammar:
    """Sentences "a <attr> <obj> <rel> a <attr> <obj>" with kind-consistent slots.

    Each relation restricts the kinds of its subject and object and each
    attribute describes fixed kinds. Some concept sets still admit several
    sentences (an animal chasing an animal, "black" on animals and clothing);
    only one sentence per concept set is ever drawn.
    """

    kinds: dict = field(default_factory=lambda: KINDS)
    relations: dict = field(default_factory=lambda: RELATIONS)
    template: str = "a {a1} {o1} {rel} a {a2} {o2}"

    def lexicon(self) -> dict[str, str]:
        lex = {}
        for objs, attrs in self.kinds.values():
            lex.update({o: OBJECT for o in objs})
            lex.update({a: ATTRIBUTE for a in attrs})
        lex.update({r: RELATION for r in self.relations})
        return lex

    def sentences(self) -> Iterator[tuple[str, list[tuple[str, str]]]]:
        """Every sentence of the grammar with its (word, category) concepts in sentence order."""
        for rel, pairs in self.relations.items():
            for subj_kind, obj_kind in pairs:
                s_objs, s_attrs = self.kinds[subj_kind]
                o_objs, o_attrs = self.kinds[obj_kind]
                for a1, o1, a2, o2 in itertools.product(s_attrs, s_objs, o_attrs, o_objs):
                    if (a1, o1) == (a2, o2):
                        continue
                    text = self.template.format(a1=a1, o1=o1, rel=rel, a2=a2, o2=o2)
                    concepts = [(a1, ATTRIBUTE), (o1, OBJECT), (rel, RELATION), (a2, ATTRIBUTE), (o2, OBJECT)]
                    seen, uniq = set(), []
                    for w, c in concepts:
                        if w not in seen:
                            seen.add(w)
                            uniq.append((w, c))
                    yield text, uniq


def gen_synthetic_corpus(seed: int, size: int, grammar: SyntheticGrammar | None = None,
                         min_count: int = 5, heldout_fraction: float = 0.2, max_tries: int = 1000):
    """Sample ``size`` sentences with distinct concept sets and an 80/20 split by id.

    Redraws until every grammar word occurs at least ``min_count`` times in
    the training part, so the whole grammar survives vocabulary pruning.
    Returns (sentence records, concept records, {"train": ids, "heldout": ids}).
    """
    if size < 2:
        raise ValueError("synthetic corpus needs at least 2 sentences")
    grammar = grammar or SyntheticGrammar()
    lexicon = load_lexicon()
    for word, cat in grammar.lexicon().items():
        if lexicon.get(word) != cat:
            raise ValueError(f"grammar word {word!r} is not a {cat} in the category lexicon")
    by_set: dict[frozenset, list] = {}
    for text, concepts in grammar.sentences():
        by_set.setdefault(frozenset(w for w, _ in concepts), []).append((text, concepts))
    readings = [by_set[k] for k in sorted(by_set, key=sorted)]
    if size > len(readings):
        raise ValueError(f"grammar has only {len(readings)} distinct concept sets, asked for {size}")
    rng = np.random.default_rng(seed)
    n_held = max(1, int(round(size * heldout_fraction)))
    words = set(grammar.lexicon())
    for _ in range(max_tries):
        picks = rng.permutation(len(readings))[:size]
        # one sentence per concept set; ambiguous sets get a random reading
        chosen = [readings[i][rng.integers(len(readings[i]))] for i in picks]
        train = chosen[: size - n_held]
        counts = Counter(t for text, _ in train for t in tokenize(text))
        if all(counts[w] >= min_count for w in words):
            break
    else:
        raise ValueError("could not draw a corpus where every grammar word is frequent enough")
    width = len(str(size - 1))
    ids = [f"syn{i:0{width}d}" for i in range(size)]
    sentences = [{"id": i, "sentence": text} for i, (text, _) in zip(ids, chosen)]
    concepts = [
        {"id": i, "concepts": [{"word": w, "category": c, "score": 1.0} for w, c in cs]}
        for i, (_, cs) in zip(ids, chosen)
    ]
    split = {"train": ids[: size - n_held], "heldout": ids[size - n_held :]}
    return sentences, concepts, split


def write_synthetic(out_dir: str | Path, seed: int, size: int) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    sentences, concepts, split = gen_synthetic_corpus(seed, size)
    paths = {"corpus": out / "corpus.jsonl", "concepts": out / "concepts.jsonl", "split": out / "split.json"}
    write_jsonl(paths["corpus"], sentences)
    write_jsonl(paths["concepts"], concepts)
    paths["split"].write_text(json.dumps(split, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return paths
