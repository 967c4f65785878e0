"""Concept vocabulary, sentence/image concept extraction and concept embedding."""
from __future__ import annotations

import string
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .autodiff import Tensor, embedding, mean

ATTRIBUTE, OBJECT, RELATION = "attribute", "object", "relation"
CATEGORIES = (ATTRIBUTE, OBJECT, RELATION)

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
NULL_TOKENS = {ATTRIBUTE: "<null_a>", OBJECT: "<null_o>", RELATION: "<null_r>"}
RESERVED = (PAD, BOS, EOS, UNK, NULL_TOKENS[ATTRIBUTE], NULL_TOKENS[OBJECT], NULL_TOKENS[RELATION])
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3

_PUNCT = str.maketrans("", "", string.punctuation)


def tokenize(text: str) -> list[str]:
    """Lowercase, drop ASCII punctuation, split on whitespace."""
    return text.lower().translate(_PUNCT).split()


def load_lexicon(path: str | Path | None = None) -> dict[str, str]:
    """Read a ``word<TAB>category`` file; defaults to the lexicon shipped with the package."""
    if path is None:
        text = resources.files("srecap").joinpath("resources/lexicon.tsv").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    lexicon: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            word, category = line.rstrip("\n").split("\t")
        except ValueError:
            raise ValueError(f"lexicon line {lineno}: expected 'word<TAB>category'") from None
        word = word.strip().lower()
        category = category.strip()
        if category not in CATEGORIES:
            raise ValueError(f"lexicon line {lineno}: unknown category {category!r}")
        if " " in word:
            continue  # multi-word concepts are not supported
        if lexicon.get(word, category) != category:
            raise ValueError(f"lexicon word {word!r} listed under two categories")
        lexicon[word] = category
    return lexicon


class ConceptVocabulary:
    """Caption vocabulary D plus the categorised concept words (a subset of D)."""

    def __init__(self, words: Sequence[str], categories: Mapping[str, str]):
        if tuple(words[: len(RESERVED)]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        self.words: tuple[str, ...] = tuple(words)
        self.index: dict[str, int] = {w: i for i, w in enumerate(self.words)}
        if len(self.index) != len(self.words):
            raise ValueError("duplicate words in vocabulary")
        for word, category in categories.items():
            if category not in CATEGORIES:
                raise ValueError(f"concept {word!r} has unknown category {category!r}")
            if word not in self.index:
                raise ValueError(f"concept {word!r} is not in the caption vocabulary")
        self.categories: dict[str, str] = dict(categories)
        self.null_ids = {c: self.index[NULL_TOKENS[c]] for c in CATEGORIES}
        self._id_category = {self.index[w]: c for w, c in self.categories.items()}
        for c, i in self.null_ids.items():
            self._id_category[i] = c

    @classmethod
    def build(
        cls,
        sentences: Iterable[Sequence[str]],
        lexicon: Mapping[str, str],
        min_count: int = 5,
    ) -> "ConceptVocabulary":
        """Keep words seen at least ``min_count`` times; concepts are lexicon words that survive."""
        counts = Counter(tok for sent in sentences for tok in sent)
        kept = sorted(w for w, n in counts.items() if n >= min_count and w not in RESERVED)
        categories = {w: lexicon[w] for w in kept if w in lexicon}
        return cls(RESERVED + tuple(kept), categories)

    def __len__(self) -> int:
        return len(self.words)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def category_of(self, token_id: int) -> str | None:
        return self._id_category.get(token_id)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.index.get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.words[i] for i in ids]

    def to_dict(self) -> dict:
        return {"words": list(self.words), "categories": dict(sorted(self.categories.items()))}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ConceptVocabulary":
        return cls(d["words"], d["categories"])


@dataclass(frozen=True)
class ConceptSet:
    """Global concept ids in order plus the per-category partition (NULL-filled when empty)."""

    global_ids: tuple[int, ...]
    attribute_ids: tuple[int, ...]
    object_ids: tuple[int, ...]
    relation_ids: tuple[int, ...]

    @property
    def coarse_ids(self) -> tuple[int, ...]:
        """Rows fed to the coarse explorer: C_g, or the three NULL ids when C_g is empty."""
        if self.global_ids:
            return self.global_ids
        return self.attribute_ids + self.object_ids + self.relation_ids

    def by_category(self, category: str) -> tuple[int, ...]:
        return {ATTRIBUTE: self.attribute_ids, OBJECT: self.object_ids, RELATION: self.relation_ids}[category]

    def words(self, vocab: ConceptVocabulary) -> list[str]:
        return vocab.decode(self.global_ids)


def partition(ids: Sequence[int], vocab: ConceptVocabulary) -> ConceptSet:
    groups: dict[str, list[int]] = {c: [] for c in CATEGORIES}
    for i in ids:
        groups[vocab.category_of(i)].append(i)
    for c in CATEGORIES:
        if not groups[c]:
            groups[c].append(vocab.null_ids[c])
    return ConceptSet(
        tuple(ids),
        tuple(groups[ATTRIBUTE]),
        tuple(groups[OBJECT]),
        tuple(groups[RELATION]),
    )


def extract_sentence_concepts(
    tokens: Sequence[str], vocab: ConceptVocabulary, max_concepts: int = 20
) -> ConceptSet:
    """Concept words of a sentence: first occurrences, in order, capped at ``max_concepts``."""
    seen: list[int] = []
    for tok in tokens:
        if tok in vocab.categories:
            i = vocab.index[tok]
            if i not in seen:
                seen.append(i)
                if len(seen) == max_concepts:
                    break
    return partition(seen, vocab)


def load_image_concepts(record: Mapping, vocab: ConceptVocabulary, k: int = 20) -> ConceptSet:
    """Top-``k`` scored concepts of an image-concept record (ties broken by word)."""
    entries = []
    for item in record["concepts"]:
        word = str(item["word"]).lower()
        category = item["category"]
        if word not in vocab.categories:
            raise KeyError(f"concept {word!r} is not in the concept vocabulary")
        if vocab.categories[word] != category:
            raise ValueError(
                f"concept {word!r} has category {category!r} but the vocabulary says {vocab.categories[word]!r}"
            )
        entries.append((-float(item["score"]), word))
    entries.sort()
    ids: list[int] = []
    for _, word in entries:
        i = vocab.index[word]
        if i not in ids:
            ids.append(i)
        if len(ids) == k:
            break
    return partition(ids, vocab)


def embed_concepts(cs: ConceptSet, table: Tensor) -> dict[str, Tensor]:
    """Rows of the shared embedding table for C_g (coarse rows), C_a, C_o and C_r."""
    return {
        "global": embedding(table, cs.coarse_ids),
        ATTRIBUTE: embedding(table, cs.attribute_ids),
        OBJECT: embedding(table, cs.object_ids),
        RELATION: embedding(table, cs.relation_ids),
    }


def average_concepts(c_global: Tensor) -> Tensor:
    if c_global.shape[-2] < 1:
        raise ValueError("cannot average an empty concept matrix")
    return mean(c_global, axis=-2)


def padded_ids(groups: Sequence[Sequence[int]]) -> tuple[np.ndarray, np.ndarray]:
    """Stack id lists into a PAD-filled (B, max_len) array and a mask that is True on padding."""
    width = max(len(g) for g in groups)
    ids = np.full((len(groups), width), PAD_ID, dtype=np.int64)
    mask = np.ones((len(groups), width), dtype=bool)
    for b, g in enumerate(groups):
        ids[b, : len(g)] = g
        mask[b, : len(g)] = False
    return ids, mask
