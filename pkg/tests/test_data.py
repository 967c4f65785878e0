import pytest

from srecap.concepts import ConceptVocabulary, extract_sentence_concepts, load_image_concepts, load_lexicon, tokenize
from srecap.data import SyntheticGrammar, gen_synthetic_corpus, group_sentences, read_jsonl, write_synthetic


def test_grammar_words_in_lexicon():
    lex = load_lexicon()
    for word, cat in SyntheticGrammar().lexicon().items():
        assert lex[word] == cat


def test_sizes_and_split():
    sents, concepts, split = gen_synthetic_corpus(0, 50)
    assert len(sents) == len(concepts) == 50
    assert len(split["train"]) == 40 and len(split["heldout"]) == 10
    assert set(split["train"]).isdisjoint(split["heldout"])
    assert all(c["score"] == 1.0 for rec in concepts for c in rec["concepts"])


def test_size_checked():
    with pytest.raises(ValueError):
        gen_synthetic_corpus(0, 1)


def test_same_seed_identical_files(tmp_path):
    a = write_synthetic(tmp_path / "a", 3, 30)
    b = write_synthetic(tmp_path / "b", 3, 30)
    for kind in a:
        assert a[kind].read_bytes() == b[kind].read_bytes()
    c = write_synthetic(tmp_path / "c", 4, 30)
    assert c["corpus"].read_bytes() != a["corpus"].read_bytes()


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_extractor_recovers_annotation(seed):
    sents, concepts, split = gen_synthetic_corpus(seed, 50)
    train = {s["id"] for s in sents if s["id"] in split["train"]}
    vocab = ConceptVocabulary.build([tokenize(s["sentence"]) for s in sents if s["id"] in train],
                                    load_lexicon(), 5)
    for sent, rec in zip(sents, concepts):
        from_text = extract_sentence_concepts(tokenize(sent["sentence"]), vocab)
        assert vocab.decode(from_text.global_ids) == [c["word"] for c in rec["concepts"]]
        assert set(load_image_concepts(rec, vocab).global_ids) == set(from_text.global_ids)


def test_distinct_concept_sets():
    _, concepts, _ = gen_synthetic_corpus(0, 50)
    keys = {frozenset(c["word"] for c in rec["concepts"]) for rec in concepts}
    assert len(keys) == 50


def test_jsonl_helpers(tmp_path):
    path = tmp_path / "x.jsonl"
    path.write_text('{"id": "1", "caption": "A dog."}\n\n{"id": "1", "sentence": "the dog"}\n', encoding="utf-8")
    assert group_sentences(read_jsonl(path)) == {"1": [["a", "dog"], ["the", "dog"]]}
    path.write_text('{"id": 1\n', encoding="utf-8")
    with pytest.raises(ValueError, match=":1:"):
        read_jsonl(path)
