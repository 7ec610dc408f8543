"""Caption parser tests: hand-traced fixtures plus grammar round trips."""

import json
import random
from pathlib import Path

import pytest

from layoutmorph.backends.synthetic import render_caption
from layoutmorph.core import CandidateSet, CategoryPalette
from layoutmorph.errors import MissingCandidates
from layoutmorph.parser import (
    GENERATED,
    GT,
    LexiconTagger,
    NNPM,
    ObjInfo,
    SynonymMapper,
    default_tagger,
    load_tagger_lexicon,
    objs_extract,
    pos_tag_extract,
    singularize,
    tokenize,
    word2num,
)
from layoutmorph.scenegen import default_palette

FIXTURES = json.loads(
    (Path(__file__).parent / "data" / "caption_fixtures.json").read_text(encoding="utf-8")
)

_IDS = [f["caption"][:36] for f in FIXTURES]


@pytest.fixture(scope="module")
def mapper():
    return SynonymMapper(default_palette())


def as_triples(infos):
    return [[o.name, o.num, o.hasNum] for o in infos]


def test_fixture_corpus_is_large_enough():
    assert len(FIXTURES) >= 30


@pytest.mark.parametrize("fx", FIXTURES, ids=_IDS)
def test_nnpm_extraction_matches_hand_trace(fx):
    assert as_triples(pos_tag_extract(fx["caption"])) == fx["nnpms"]


@pytest.mark.parametrize("fx", FIXTURES, ids=_IDS)
def test_generated_parse_matches_hand_trace(fx, mapper):
    got = objs_extract(fx["caption"], None, GENERATED, mapper=mapper)
    assert as_triples(got) == fx["generated"]


@pytest.mark.parametrize("fx", FIXTURES, ids=_IDS)
def test_gt_parse_matches_hand_trace(fx, mapper):
    candidates = CandidateSet(fx["gt_candidates"])
    got = objs_extract(fx["caption"], candidates, GT, mapper=mapper)
    assert {o.name: o.num for o in got} == fx["gt_expected"]
    # GT counts always come from the segmentation, never the caption
    assert all(o.hasNum for o in got)
    assert all(o.name in candidates and o.num == candidates[o.name] for o in got)
    assert len(got) == len({o.name for o in got})


def test_word2num_values():
    assert word2num("three") == 3
    assert word2num("a") == 1
    assert word2num("an") == 1
    assert word2num("twelve") == 12
    assert word2num("twenty-one") == 21
    assert word2num("ninety-nine") == 99
    assert word2num("12") == 12
    assert word2num("several") is None
    assert word2num("the") is None
    assert word2num("zero") is None
    assert word2num("0") is None
    assert word2num("hundred") is None


def test_tokenize_splits_on_punctuation_and_lowercases():
    assert tokenize("A dog, a cat!") == ["a", "dog", "a", "cat"]
    assert tokenize("Twenty-One Birds.") == ["twenty-one", "birds"]
    assert tokenize("the dog's ball") == ["the", "dog", "s", "ball"]


def test_empty_caption_rejected():
    with pytest.raises(ValueError):
        tokenize("")
    with pytest.raises(ValueError):
        tokenize("   ")
    with pytest.raises(ValueError):
        pos_tag_extract("")


def test_punctuation_only_caption_yields_no_mentions():
    assert pos_tag_extract("...!!!") == []


def test_tagger_example_sequences():
    tagger = default_tagger()
    assert [t.pos for t in tagger.tag("a brown dog")] == ["DET", "ADJ", "NN"]
    assert [t.pos for t in tagger.tag("two cats")] == ["NUM", "NN"]
    assert [t.text for t in tagger.tag("Two CATS")] == ["two", "cats"]
    assert tagger.tag("a brown dog") == tagger.tag("a brown dog")


def test_tagger_suffix_fallbacks():
    tagger = default_tagger()

    def pos(word):
        return tagger.tag(word)[0].pos

    assert pos("zorbs") == "NN"  # unknown plural-looking word
    assert pos("glittery") == "ADJ"
    assert pos("joyful") == "ADJ"
    assert pos("blorp") == "OTHER"
    # explicit lexicon entries beat the suffix heuristics
    assert pos("flies") == "OTHER"
    assert pos("his") == "DET"
    assert pos("is") == "OTHER"


def test_tagger_auto_derives_plurals():
    tagger = default_tagger()
    for word in ("benches", "people", "geese", "women", "children", "skis"):
        assert tagger.tag(word)[0].pos == "NN", word


def test_tagger_rejects_unknown_tag_class():
    with pytest.raises(ValueError):
        LexiconTagger({"VERB": ["run"]})


def test_adjacent_adjectives_keep_only_the_last_as_modifier():
    got = pos_tag_extract("a big red dog")
    assert as_triples(got) == [["red dog", 1, False]]


def test_singularize():
    cases = {
        "cats": "cat",
        "benches": "bench",
        "buses": "bus",
        "puppies": "puppy",
        "people": "person",
        "men": "man",
        "women": "woman",
        "children": "child",
        "leaves": "leaf",
        "sheep": "sheep",
        "skis": "ski",
        "horses": "horse",
        "dog": "dog",
    }
    for plural, singular in cases.items():
        assert singularize(plural) == singular, plural


def test_mapper_examples(mapper):
    assert mapper.map("people") == "person"
    assert mapper.map("puppy") == "dog"
    assert mapper.map("brown dog") == "dog"
    assert mapper.map("ski slope markers") is None
    assert mapper.map("flash drive", CandidateSet({"person": 1})) is None


def test_mapper_candidate_restriction(mapper):
    assert mapper.map("people", CandidateSet({"dog": 1})) is None
    assert mapper.map("people", CandidateSet({"person": 2})) == "person"


def test_mapper_requires_palette_membership():
    palette = CategoryPalette.from_pairs([("tree", (10, 20, 30))])
    mapper = SynonymMapper(palette, synonyms={"puppy": "dog"})
    assert mapper.map("puppy") is None
    assert mapper.map("tree") == "tree"


def test_mapper_rejects_empty_name(mapper):
    with pytest.raises(ValueError):
        mapper.map("")


def test_objinfo_validation():
    with pytest.raises(ValueError):
        ObjInfo(name="dog", num=0, hasNum=True)
    with pytest.raises(ValueError):
        ObjInfo(name="dog", num=2, hasNum=False)
    with pytest.raises(ValueError):
        ObjInfo(name="", num=1, hasNum=False)


def test_nnpm_surface_join():
    assert NNPM(nouns=("dog",)).surface == "dog"
    assert NNPM(nouns=("slope", "markers"), modifier="snowy").surface == "snowy slope markers"
    with pytest.raises(ValueError):
        NNPM(nouns=())


def test_gt_path_requires_candidates(mapper):
    with pytest.raises(MissingCandidates):
        objs_extract("a dog", None, GT, mapper=mapper)


def test_gt_path_requires_mapper():
    with pytest.raises(ValueError):
        objs_extract("a dog", CandidateSet({"dog": 1}), GT)


def test_unknown_source_rejected(mapper):
    with pytest.raises(ValueError):
        objs_extract("a dog", None, "hybrid", mapper=mapper)


def test_generated_path_without_mapper_keeps_surfaces():
    got = objs_extract("two puppies", None, GENERATED)
    assert as_triples(got) == [["puppies", 2, True]]


def test_grammar_round_trip_generated():
    # parsing a fault-free synthetic caption recovers the census exactly
    palette = default_palette()
    mapper = SynonymMapper(palette)
    rng = random.Random(20260814)
    for _ in range(200):
        names = rng.sample(palette.names, rng.randint(0, 4))
        items = sorted((name, rng.randint(1, 12)) for name in names)
        caption = render_caption(items)
        parsed = objs_extract(caption, None, GENERATED, mapper=mapper)
        assert [(o.name, o.num) for o in parsed] == items
        assert all(o.hasNum for o in parsed)


def test_grammar_round_trip_gt():
    palette = default_palette()
    mapper = SynonymMapper(palette)
    rng = random.Random(99)
    for _ in range(100):
        names = rng.sample(palette.names, rng.randint(1, 4))
        census = {name: rng.randint(1, 9) for name in names}
        caption = render_caption(sorted(census.items()))
        parsed = objs_extract(caption, CandidateSet(census), GT, mapper=mapper)
        assert {o.name: o.num for o in parsed} == census


def test_default_lexicon_covers_palette_and_grammar_words():
    lexicon = load_tagger_lexicon()
    nouns = set(lexicon["NN"])
    assert set(default_palette().names) <= nouns
    # grammar scaffolding must never read as an object mention
    others = set(lexicon["OTHER"])
    assert {"picture", "scene", "of", "and"} <= others
