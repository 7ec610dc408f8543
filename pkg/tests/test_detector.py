"""Detector tests: inclusion relation, categorization, case evaluation."""

import random
from types import SimpleNamespace

import pytest

from layoutmorph.backends.base import FaultPolicy
from layoutmorph.backends.synthetic import caption_synthetic
from layoutmorph.core import CandidateSet
from layoutmorph.detector import (
    ABNORMAL,
    MISCLASSIFICATION,
    NORMAL,
    NUMERICAL_INACCURACY,
    OMISSION,
    CaseVerdict,
    ConfusionTable,
    Detector,
    Violation,
    categorize,
    detect,
    evaluate_case,
    load_confusables,
)
from layoutmorph.errors import CaseFailure
from layoutmorph.parser import CaptionParser, ObjInfo, SynonymMapper
from layoutmorph.scenegen import default_palette, generate_scene


def gt(name, num):
    return ObjInfo(name=name, num=num, hasNum=True)


def gen(name, num, has_num=True):
    if not has_num and num != 1:
        raise AssertionError("bad test data")
    return ObjInfo(name=name, num=num, hasNum=has_num)


# --- detect: spec examples -------------------------------------------------


def test_detect_numerical_inaccuracy():
    got = detect([gt("person", 4)], [gen("person", 3)])
    assert len(got) == 1
    v = got[0]
    assert v.kind == NUMERICAL_INACCURACY
    assert v.category == "person"
    assert v.expected_num == 4
    assert v.stated_num == 3


def test_detect_count_gated_off_without_explicit_number():
    assert detect([gt("person", 4)], [gen("person", 1, has_num=False)]) == []


def test_detect_single_unmatched_entry_reads_as_misclassification():
    got = detect([gt("dog", 1)], [gen("cat", 1)])
    assert len(got) == 1
    v = got[0]
    assert v.kind == MISCLASSIFICATION
    assert v.category == "dog"
    assert v.substitute == "cat"


def test_detect_exact_match_is_clean():
    s = [gt("dog", 2), gt("person", 1)]
    assert detect(s, list(s)) == []


def test_detect_extra_generated_objects_never_violate():
    s_gt = [gt("dog", 1)]
    s_gen = [gen("dog", 1), gen("tree", 1, has_num=False), gen("car", 2)]
    assert detect(s_gt, s_gen) == []


def test_detect_multiple_violations_in_one_pair():
    got = detect([gt("person", 4), gt("dog", 1)], [gen("cat", 1)])
    assert len(got) == 2
    assert {v.category for v in got} == {"person", "dog"}
    assert all(v.kind == MISCLASSIFICATION and v.substitute == "cat" for v in got)


def test_detect_first_matching_entry_wins_on_duplicates():
    s_gt = [gt("dog", 2)]
    assert detect(s_gt, [gen("dog", 1, has_num=False), gen("dog", 5)]) == []
    got = detect(s_gt, [gen("dog", 5), gen("dog", 1, has_num=False)])
    assert [v.kind for v in got] == [NUMERICAL_INACCURACY]
    assert got[0].stated_num == 5


# --- categorize ------------------------------------------------------------


def test_categorize_confusable_beats_ambiguity():
    table = ConfusionTable({"dog": ["cat"]})
    s_gt = [gt("dog", 1)]
    s_gen = [gen("bird", 1), gen("cat", 1)]
    v = categorize(s_gt[0], s_gt, s_gen, table)
    assert v.kind == MISCLASSIFICATION
    assert v.substitute == "cat"


def test_categorize_no_unmatched_entries_is_omission():
    v = categorize(gt("dog", 1), [gt("dog", 1), gt("person", 2)], [gen("person", 2)])
    assert v.kind == OMISSION
    assert v.category == "dog"
    assert v.substitute is None


def test_categorize_two_unmatched_nonconfusable_is_omission():
    s_gt = [gt("dog", 1)]
    v = categorize(s_gt[0], s_gt, [gen("bird", 1), gen("cat", 1)])
    assert v.kind == OMISSION


def test_categorize_rejects_mentioned_object():
    with pytest.raises(ValueError):
        categorize(gt("dog", 1), [gt("dog", 1)], [gen("dog", 1)])


def test_confusion_table_is_directional():
    table = ConfusionTable({"dog": ["cat"]})
    assert table.substitutes("dog", "cat")
    assert not table.substitutes("cat", "dog")
    assert not table.substitutes("dog", "bird")


def test_default_confusables_are_empty():
    table = load_confusables()
    assert table.to_json_obj() == {}
    assert not table.substitutes("dog", "cat")


# --- Violation type --------------------------------------------------------


def test_violation_invariants():
    with pytest.raises(ValueError):
        Violation(kind=NUMERICAL_INACCURACY, category="dog", expected_num=2, stated_num=2)
    with pytest.raises(ValueError):
        Violation(kind=NUMERICAL_INACCURACY, category="dog", expected_num=2)
    with pytest.raises(ValueError):
        Violation(kind=MISCLASSIFICATION, category="dog")
    with pytest.raises(ValueError):
        Violation(kind=OMISSION, category="dog", substitute="cat")
    with pytest.raises(ValueError):
        Violation(kind="Hallucination", category="dog")


def test_violation_json_round_trip():
    v = Violation(
        kind=NUMERICAL_INACCURACY,
        category="person",
        expected_num=4,
        stated_num=3,
        evidence="caption states 3 person, segmentation counts 4",
    )
    assert Violation.from_json_obj(v.to_json_obj()) == v


# --- properties ------------------------------------------------------------


def test_soundness_on_perfect_captions():
    rng = random.Random(4021)
    pool = ["person", "dog", "cat", "car", "tree", "bird", "boat", "bench"]
    for _ in range(500):
        names = rng.sample(pool, rng.randint(1, len(pool)))
        s_gt = [gt(n, rng.randint(1, 9)) for n in names]
        s_gen = [ObjInfo(o.name, o.num, True) for o in s_gt]
        rng.shuffle(s_gen)
        assert detect(s_gt, s_gen) == []


def _random_sets(rng, pool):
    gt_names = rng.sample(pool, rng.randint(1, 4))
    s_gt = [gt(n, rng.randint(1, 5)) for n in gt_names]
    s_gen = []
    for n in gt_names:
        if rng.random() < 0.7:
            if rng.random() < 0.5:
                s_gen.append(gen(n, rng.randint(1, 5)))
            else:
                s_gen.append(gen(n, 1, has_num=False))
    for n in rng.sample([p for p in pool if p not in gt_names], rng.randint(0, 3)):
        s_gen.append(gen(n, rng.randint(1, 3)))
    rng.shuffle(s_gen)
    return s_gt, s_gen


def test_monotonicity_removing_categories_only_adds_violations():
    rng = random.Random(515151)
    pool = ["person", "dog", "cat", "car", "tree", "bird", "boat", "bench"]
    for _ in range(300):
        s_gt, s_gen = _random_sets(rng, pool)
        gt_names = {o.name for o in s_gt}
        before = {v.category for v in detect(s_gt, s_gen)}
        for name in {g.name for g in s_gen}:
            reduced = [g for g in s_gen if g.name != name]
            after = {v.category for v in detect(s_gt, reduced)}
            expected = before | ({name} if name in gt_names else set())
            assert after == expected, (s_gt, s_gen, name)


def test_inclusion_literal_form():
    # detect() is empty exactly when every gt category is mentioned and
    # every explicitly stated count matches the segmentation count
    rng = random.Random(7272)
    pool = ["person", "dog", "cat", "car", "tree", "bird", "boat", "bench"]
    for _ in range(500):
        s_gt, s_gen = _random_sets(rng, pool)
        clean = True
        for o in s_gt:
            matches = [g for g in s_gen if g.name == o.name]
            if not matches:
                clean = False
            elif matches[0].hasNum and matches[0].num != o.num:
                clean = False
        assert (detect(s_gt, s_gen) == []) == clean


# --- evaluate_case ---------------------------------------------------------

SCENE_CATEGORIES = ("dog", "person", "tree")
CONFUSION = {"dog": "cat", "person": "horse", "tree": "boat"}


@pytest.fixture(scope="module")
def parser():
    return CaptionParser(mapper=SynonymMapper(default_palette()))


def make_case(record, caption, case_id="case0"):
    return SimpleNamespace(
        case_id=case_id,
        gt_captions=record.gt_captions,
        candidates=record.candidates,
        generated_caption=caption,
    )


def test_evaluate_case_fault_free_is_normal(parser):
    detector = Detector()
    rng = random.Random(11)
    for i in range(20):
        record = generate_scene(f"s{i}", rng, categories=SCENE_CATEGORIES)
        caption, records = caption_synthetic(record.semantic_map, FaultPolicy())
        assert records == []
        verdict = evaluate_case(make_case(record, caption), parser, detector)
        assert verdict.verdict == NORMAL
        assert not verdict.abnormal
        assert {o.name: o.num for o in verdict.s_gt} == dict(record.candidates.items())


@pytest.mark.parametrize(
    "kind,violation_kind",
    [("omit", OMISSION), ("misclassify", MISCLASSIFICATION), ("miscount", NUMERICAL_INACCURACY)],
)
def test_evaluate_case_flags_injected_fault(parser, kind, violation_kind):
    detector = Detector()
    policy = FaultPolicy(confusion_table=CONFUSION, rng_seed=5)
    rng = random.Random(23)
    seen = 0
    for i in range(30):
        record = generate_scene(f"f{i}", rng, categories=SCENE_CATEGORIES)
        caption, records = caption_synthetic(record.semantic_map, policy, forced_kind=kind)
        if not records:
            continue  # fault was not applicable to this scene
        seen += 1
        (fault,) = records
        verdict = evaluate_case(make_case(record, caption), parser, detector)
        assert verdict.verdict == ABNORMAL
        assert len(verdict.violations) == 1
        v = verdict.violations[0]
        assert v.kind == violation_kind
        assert v.category == fault.category
        if kind == "misclassify":
            assert v.substitute == fault.substitute
        if kind == "miscount":
            assert v.stated_num == fault.stated_count
            assert v.expected_num == fault.true_count
    assert seen >= 20


def test_evaluate_case_unions_multiple_gt_captions(parser):
    case = SimpleNamespace(
        case_id="multi",
        gt_captions=("a dog in a field", "a man and his dog"),
        candidates=CandidateSet({"dog": 1, "person": 1}),
        generated_caption="a picture of a dog and a person",
    )
    verdict = evaluate_case(case, parser, Detector())
    assert {o.name for o in verdict.s_gt} == {"dog", "person"}
    assert verdict.verdict == NORMAL


def test_evaluate_case_tags_failures_with_case_id(parser):
    case = SimpleNamespace(
        case_id="broken42",
        gt_captions=("a dog",),
        candidates=CandidateSet({"dog": 1}),
        generated_caption="",
    )
    with pytest.raises(CaseFailure) as err:
        evaluate_case(case, parser, Detector())
    assert "broken42" in str(err.value)
    assert err.value.case_id == "broken42"


def test_case_verdict_json_round_trip():
    verdict = CaseVerdict(
        case_id="c1",
        violations=(Violation(kind=OMISSION, category="dog", expected_num=1),),
        s_gt=(ObjInfo("dog", 1, True),),
        s_gen=(),
    )
    again = CaseVerdict.from_json_obj(verdict.to_json_obj())
    assert again == verdict
    assert again.verdict == ABNORMAL
