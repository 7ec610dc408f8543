"""Inclusion checking between ground-truth and generated object sets.

A generated caption is considered correct when its object set includes
every ground-truth object, with stated counts matching wherever the
caption committed to an explicit quantity. Each missing object is then
categorized: if an unmatched generated object plausibly stands in for it
(a configured confusable, or the only unmatched mention), the failure is
a misclassification, otherwise an omission. Extra generated objects on
their own are never violations, since captioners describe background
detail at different granularity.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Mapping, Optional, Sequence

from .errors import CaseFailure
from .parser import CaptionParser, ObjInfo

OMISSION = "Omission"
MISCLASSIFICATION = "Misclassification"
NUMERICAL_INACCURACY = "NumericalInaccuracy"
VIOLATION_KINDS = (OMISSION, MISCLASSIFICATION, NUMERICAL_INACCURACY)

NORMAL = "normal"
ABNORMAL = "abnormal"


@dataclass(frozen=True)
class Violation:
    kind: str
    category: str
    expected_num: Optional[int] = None
    stated_num: Optional[int] = None
    substitute: Optional[str] = None
    evidence: str = ""

    def __post_init__(self):
        if self.kind not in VIOLATION_KINDS:
            raise ValueError(f"unknown violation kind {self.kind!r}")
        if self.kind == NUMERICAL_INACCURACY:
            if self.expected_num is None or self.stated_num is None:
                raise ValueError("numerical inaccuracy requires both counts")
            if self.expected_num == self.stated_num:
                raise ValueError("numerical inaccuracy requires differing counts")
        if self.kind == MISCLASSIFICATION and self.substitute is None:
            raise ValueError("misclassification requires a substitute category")
        if self.kind != MISCLASSIFICATION and self.substitute is not None:
            raise ValueError(f"{self.kind} must not carry a substitute")

    def to_json_obj(self) -> dict:
        return {
            "kind": self.kind,
            "category": self.category,
            "expected_num": self.expected_num,
            "stated_num": self.stated_num,
            "substitute": self.substitute,
            "evidence": self.evidence,
        }

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "Violation":
        return cls(
            kind=obj["kind"],
            category=obj["category"],
            expected_num=obj.get("expected_num"),
            stated_num=obj.get("stated_num"),
            substitute=obj.get("substitute"),
            evidence=obj.get("evidence", ""),
        )


class ConfusionTable:
    """Directed confusable pairs: which seen category can stand in for a missing one."""

    def __init__(self, pairs: Optional[Mapping[str, Sequence[str]]] = None):
        self._pairs = {k: tuple(v) for k, v in (pairs or {}).items()}

    def substitutes(self, missing: str, seen: str) -> bool:
        return seen in self._pairs.get(missing, ())

    def to_json_obj(self) -> dict:
        return {k: list(v) for k, v in self._pairs.items()}


def load_confusables(path: Optional[str] = None) -> ConfusionTable:
    if path is None:
        source = resources.files("layoutmorph.data").joinpath("confusables.json")
        with source.open("r", encoding="utf-8") as fh:
            return ConfusionTable(json.load(fh))
    with open(path, "r", encoding="utf-8") as fh:
        return ConfusionTable(json.load(fh))


def categorize(
    missing: ObjInfo,
    s_gt: Sequence[ObjInfo],
    s_gen: Sequence[ObjInfo],
    confusables: Optional[ConfusionTable] = None,
) -> Violation:
    """Classify a ground-truth object with no same-category mention.

    An unmatched generated mention that is a configured confusable of the
    missing category, or the single unmatched mention when exactly one
    exists, reads as the object under a wrong name (misclassification).
    Anything more ambiguous falls back to omission.
    """
    if any(g.name == missing.name for g in s_gen):
        raise ValueError(f"{missing.name!r} is mentioned; categorize only handles missing objects")
    gt_names = {o.name for o in s_gt}
    unmatched = [g for g in s_gen if g.name not in gt_names]
    substitute = None
    if confusables is not None:
        for g in unmatched:
            if confusables.substitutes(missing.name, g.name):
                substitute = g.name
                break
    if substitute is None and len(unmatched) == 1:
        substitute = unmatched[0].name
    if substitute is not None:
        return Violation(
            kind=MISCLASSIFICATION,
            category=missing.name,
            expected_num=missing.num,
            substitute=substitute,
            evidence=f"no mention of {missing.name}; caption mentions {substitute} instead",
        )
    return Violation(
        kind=OMISSION,
        category=missing.name,
        expected_num=missing.num,
        evidence=f"no mention of {missing.name}",
    )


def detect(
    s_gt: Sequence[ObjInfo],
    s_gen: Sequence[ObjInfo],
    confusables: Optional[ConfusionTable] = None,
) -> list[Violation]:
    """Violations of the inclusion relation between gt and generated sets.

    Per ground-truth object: absent from the caption is a violation
    (categorized); present with an explicitly stated count that differs
    from the segmentation count is a numerical inaccuracy; present with
    no stated count is accepted as-is. Surplus caption objects alone
    never violate.
    """
    violations: list[Violation] = []
    for gt in s_gt:
        matches = [g for g in s_gen if g.name == gt.name]
        if not matches:
            violations.append(categorize(gt, s_gt, s_gen, confusables))
            continue
        first = matches[0]
        if first.hasNum and first.num != gt.num:
            violations.append(
                Violation(
                    kind=NUMERICAL_INACCURACY,
                    category=gt.name,
                    expected_num=gt.num,
                    stated_num=first.num,
                    evidence=(
                        f"caption states {first.num} {first.name}, "
                        f"segmentation counts {gt.num}"
                    ),
                )
            )
    return violations


class Detector:
    """detect() with a fixed confusion table, for pipeline injection."""

    def __init__(self, confusables: Optional[ConfusionTable] = None):
        self.confusables = confusables

    def detect(self, s_gt: Sequence[ObjInfo], s_gen: Sequence[ObjInfo]) -> list[Violation]:
        return detect(s_gt, s_gen, self.confusables)


@dataclass(frozen=True)
class CaseVerdict:
    case_id: str
    violations: tuple[Violation, ...]
    s_gt: tuple[ObjInfo, ...]
    s_gen: tuple[ObjInfo, ...]

    def __post_init__(self):
        object.__setattr__(self, "violations", tuple(self.violations))
        object.__setattr__(self, "s_gt", tuple(self.s_gt))
        object.__setattr__(self, "s_gen", tuple(self.s_gen))

    @property
    def verdict(self) -> str:
        return ABNORMAL if self.violations else NORMAL

    @property
    def abnormal(self) -> bool:
        return bool(self.violations)

    def to_json_obj(self) -> dict:
        return {
            "case_id": self.case_id,
            "verdict": self.verdict,
            "violations": [v.to_json_obj() for v in self.violations],
            "s_gt": [o.to_json_obj() for o in self.s_gt],
            "s_gen": [o.to_json_obj() for o in self.s_gen],
        }

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "CaseVerdict":
        return cls(
            case_id=obj["case_id"],
            violations=tuple(Violation.from_json_obj(v) for v in obj["violations"]),
            s_gt=tuple(ObjInfo.from_json_obj(o) for o in obj["s_gt"]),
            s_gen=tuple(ObjInfo.from_json_obj(o) for o in obj["s_gen"]),
        )


def evaluate_case(case, parser: CaptionParser, detector: Detector) -> CaseVerdict:
    """Parse a case's captions and check the inclusion relation.

    The case must expose case_id, gt_captions, candidates, and
    generated_caption; parse failures are re-raised tagged with the id.
    """
    try:
        s_gt = parser.parse_gt(case.gt_captions, case.candidates)
        s_gen = parser.parse_generated(case.generated_caption)
        violations = detector.detect(s_gt, s_gen)
    except CaseFailure:
        raise
    except Exception as exc:
        raise CaseFailure(case.case_id, str(exc)) from exc
    return CaseVerdict(
        case_id=case.case_id,
        violations=tuple(violations),
        s_gt=tuple(s_gt),
        s_gen=tuple(s_gen),
    )
