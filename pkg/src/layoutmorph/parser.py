"""Caption parsing: POS tagging, noun-phrase extraction, category mapping.

The pipeline turns a caption string into ``ObjInfo`` records (object name,
count, and whether the count was stated explicitly). Two parsing modes
exist: ground-truth captions resolve names against the segmentation's
candidate categories and take counts from the segmentation, while
generated captions keep every noun phrase with caption-derived counts.

Tagging and name mapping sit behind small interfaces so a statistical
tagger or a zero-shot classifier can be swapped in; the defaults are
deterministic lexicon lookups loaded from the package data files.
"""

from __future__ import annotations

import json
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, Optional, Sequence

from . import lang
from .core import CandidateSet, CategoryPalette
from .errors import MissingCandidates

POS_TAGS = ("NN", "ADJ", "NUM", "DET", "OTHER")

# parsing modes for objs_extract
GT = "gt"
GENERATED = "generated"
SOURCES = (GT, GENERATED)

# words, digits, and hyphenated compounds ("twenty-one"); punctuation splits
_TOKEN_RE = re.compile(r"[a-z0-9]+(?:-[a-z0-9]+)*")

_DATA_PACKAGE = "layoutmorph.data"


@dataclass(frozen=True)
class TaggedToken:
    text: str
    pos: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("token text must be non-empty")
        if self.pos not in POS_TAGS:
            raise ValueError(f"unknown POS tag {self.pos!r}")


@dataclass(frozen=True)
class NNPM:
    """A noun phrase: a maximal noun run with at most one leading modifier."""

    nouns: tuple[str, ...]
    modifier: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "nouns", tuple(self.nouns))
        if not self.nouns:
            raise ValueError("noun phrase needs at least one noun")

    @property
    def surface(self) -> str:
        parts = list(self.nouns)
        if self.modifier is not None:
            parts.insert(0, self.modifier)
        return " ".join(parts)


@dataclass(frozen=True)
class ObjInfo:
    """An object mention: name, count, and whether the count was explicit."""

    name: str
    num: int = 1
    hasNum: bool = False

    def __post_init__(self):
        if not self.name:
            raise ValueError("object name must be non-empty")
        if self.num < 1:
            raise ValueError(f"num must be >= 1, got {self.num}")
        if not self.hasNum and self.num != 1:
            raise ValueError("num defaults to 1 when no count was stated")

    def to_json_obj(self) -> dict:
        return {"name": self.name, "num": self.num, "hasNum": self.hasNum}

    @classmethod
    def from_json_obj(cls, obj: Mapping) -> "ObjInfo":
        return cls(name=obj["name"], num=int(obj["num"]), hasNum=bool(obj["hasNum"]))


def word2num(word: str) -> Optional[int]:
    """Count value of a token in determiner position, or None.

    Covers digit strings, cardinal words up to ninety-nine (hyphenated
    compounds included), and the articles a/an, which read as count 1.
    """
    if word in ("a", "an"):
        return 1
    value = lang.word_to_num(word)
    if value is not None and value >= 1:
        return value
    return None


def tokenize(caption: str) -> list[str]:
    if not caption or not caption.strip():
        raise ValueError("caption must be non-empty")
    return _TOKEN_RE.findall(caption.lower())


class TokenTagger(ABC):
    """Assigns one POS tag per token of a caption."""

    @abstractmethod
    def tag(self, caption: str) -> list[TaggedToken]:
        """Tokens of the caption in order, each with a tag from POS_TAGS."""


class LexiconTagger(TokenTagger):
    """Deterministic closed-lexicon tagger with suffix fallbacks.

    Per token, in order: exact lexicon entry, numeric check, suffix
    heuristics (-s plural to NN, -y/-ful to ADJ), and finally OTHER.
    Plural forms of every lexicon noun are derived automatically.
    """

    def __init__(self, lexicon: Mapping[str, Iterable[str]]):
        table: dict[str, str] = {}
        for pos, words in lexicon.items():
            if pos not in POS_TAGS:
                raise ValueError(f"unknown POS tag {pos!r} in lexicon")
            for word in words:
                table[word] = pos
        # derived plurals must not override explicit entries
        for word, pos in list(table.items()):
            if pos == "NN":
                table.setdefault(lang.pluralize(word), "NN")
        self._table = table

    def tag(self, caption: str) -> list[TaggedToken]:
        return [TaggedToken(w, self._tag_word(w)) for w in tokenize(caption)]

    def _tag_word(self, word: str) -> str:
        pos = self._table.get(word)
        if pos is not None:
            return pos
        if lang.word_to_num(word) is not None:
            return "NUM"
        if len(word) > 3 and word.endswith("s"):
            return "NN"
        if word.endswith("y") or word.endswith("ful"):
            return "ADJ"
        return "OTHER"


def _load_json_resource(name: str):
    with resources.files(_DATA_PACKAGE).joinpath(name).open("r", encoding="utf-8") as fh:
        return json.load(fh)


def load_tagger_lexicon(path: Optional[str] = None) -> dict[str, list[str]]:
    if path is None:
        return _load_json_resource("tagger_lexicon.json")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def load_synonyms(path: Optional[str] = None) -> dict[str, str]:
    if path is None:
        return _load_json_resource("synonyms.json")
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


@lru_cache(maxsize=1)
def default_tagger() -> LexiconTagger:
    return LexiconTagger(load_tagger_lexicon())


def extract_nnpms(tokens: Sequence[TaggedToken]) -> list[tuple[NNPM, int, bool]]:
    """Scan a tagged caption for noun phrases with their counts.

    A phrase starts at an ADJ immediately followed by an NN (the ADJ is
    the modifier) or at a bare NN, and extends over the maximal run of
    consecutive NN tokens. The token just before the phrase (before the
    modifier when one exists) supplies the count via word2num; no match
    means an implicit count of 1. Scanning resumes after the run.
    """
    found: list[tuple[NNPM, int, bool]] = []
    i, n = 0, len(tokens)
    while i < n:
        if tokens[i].pos == "ADJ" and i + 1 < n and tokens[i + 1].pos == "NN":
            modifier: Optional[str] = tokens[i].text
            start = i + 1
        elif tokens[i].pos == "NN":
            modifier = None
            start = i
        else:
            i += 1
            continue
        end = start
        while end + 1 < n and tokens[end + 1].pos == "NN":
            end += 1
        value = word2num(tokens[i - 1].text) if i > 0 else None
        num, has_num = (value, True) if value is not None else (1, False)
        nouns = tuple(t.text for t in tokens[start : end + 1])
        found.append((NNPM(nouns=nouns, modifier=modifier), num, has_num))
        i = end + 1
    return found


def pos_tag_extract(caption: str, tagger: Optional[TokenTagger] = None) -> list[ObjInfo]:
    """Noun phrases of a caption as ObjInfos, in surface order."""
    if tagger is None:
        tagger = default_tagger()
    return [
        ObjInfo(name=nnpm.surface, num=num, hasNum=has_num)
        for nnpm, num, has_num in extract_nnpms(tagger.tag(caption))
    ]


class CategoryMapper(ABC):
    """Maps a noun-phrase surface form to a palette category."""

    @abstractmethod
    def map(self, name: str, candidates: Optional[CandidateSet] = None) -> Optional[str]:
        """Category for the phrase, restricted to candidates when given."""


@lru_cache(maxsize=1)
def _singular_table() -> dict[str, str]:
    """plural -> singular over the known vocabulary (irregulars win)."""
    table = {plural: singular for singular, plural in lang.IRREGULAR_PLURALS.items()}
    for word in load_tagger_lexicon()["NN"]:
        table.setdefault(lang.pluralize(word), word)
    for word in load_synonyms():
        table.setdefault(lang.pluralize(word), word)
    return table


def singularize(word: str) -> str:
    """Singular form of a noun; suffix-stripping guesses for unknown words.

    Surface form alone cannot decide -es words ("buses" vs "horses"), so
    known vocabulary is inverted exactly and heuristics only serve as a
    fallback.
    """
    known = _singular_table().get(word)
    if known is not None:
        return known
    if word.endswith("ies") and len(word) > 3:
        return word[:-3] + "y"
    if word.endswith("es") and len(word) > 2:
        stem = word[:-2]
        if stem.endswith(("s", "x", "z", "ch", "sh")):
            return stem
        return word[:-1]
    if word.endswith("s") and len(word) > 1:
        return word[:-1]
    return word


class SynonymMapper(CategoryMapper):
    """Lexicon-backed mapper: palette names plus a synonym table.

    Tries progressively shorter tail phrases of the name, each both as-is
    and with the last word singularized, so a modifier or leading noun
    ("ski slope markers") never blocks a match on the head noun. The
    candidate restriction is applied per lookup: a phrase that maps to a
    non-candidate category keeps searching rather than failing outright.
    """

    def __init__(self, palette: CategoryPalette, synonyms: Optional[Mapping[str, str]] = None):
        if synonyms is None:
            synonyms = load_synonyms()
        self._palette = palette
        self._synonyms = {k.lower(): v.lower() for k, v in synonyms.items()}

    def map(self, name: str, candidates: Optional[CandidateSet] = None) -> Optional[str]:
        if not name or not name.strip():
            raise ValueError("name must be non-empty")
        words = name.lower().split()
        for start in range(len(words)):
            tail = words[start:]
            for phrase in self._variants(tail):
                category = self._lookup(phrase)
                if category is not None and (candidates is None or category in candidates):
                    return category
        return None

    def _variants(self, tail: list[str]):
        joined = " ".join(tail)
        yield joined
        singular = " ".join(tail[:-1] + [singularize(tail[-1])])
        if singular != joined:
            yield singular

    def _lookup(self, phrase: str) -> Optional[str]:
        if phrase in self._palette:
            return phrase
        category = self._synonyms.get(phrase)
        if category is not None and category in self._palette:
            return category
        return None


@dataclass(frozen=True)
class CaptionParser:
    """Tagger plus mapper bundled for pipeline use."""

    mapper: CategoryMapper
    tagger: Optional[TokenTagger] = None

    def parse_gt(self, captions: Sequence[str], candidates: CandidateSet) -> list[ObjInfo]:
        """Union of GT-path parses over all ground-truth captions."""
        union: dict[str, ObjInfo] = {}
        for caption in captions:
            for info in objs_extract(caption, candidates, GT, self.tagger, self.mapper):
                union.setdefault(info.name, info)
        return list(union.values())

    def parse_generated(self, caption: str) -> list[ObjInfo]:
        return objs_extract(caption, None, GENERATED, self.tagger, self.mapper)


def objs_extract(
    caption: str,
    candidates: Optional[CandidateSet],
    source: str,
    tagger: Optional[TokenTagger] = None,
    mapper: Optional[CategoryMapper] = None,
) -> list[ObjInfo]:
    """Object mentions of a caption, resolved per parsing mode.

    GT mode maps every noun phrase to a candidate category and takes the
    count from the segmentation (vague phrases like "a group of" resolve
    to the actual count); unmapped phrases drop out and duplicates
    collapse. GENERATED mode keeps every noun phrase with its
    caption-derived count, replacing the name by the mapped category only
    when mapping succeeds.
    """
    if source not in SOURCES:
        raise ValueError(f"source must be one of {SOURCES}, got {source!r}")
    raw = pos_tag_extract(caption, tagger)
    if source == GT:
        if candidates is None:
            raise MissingCandidates("ground-truth parsing requires segmentation candidates")
        if mapper is None:
            raise ValueError("ground-truth parsing requires a category mapper")
        seen: dict[str, ObjInfo] = {}
        for info in raw:
            category = mapper.map(info.name, candidates)
            if category is None or category not in candidates:
                continue
            if category not in seen:
                seen[category] = ObjInfo(name=category, num=candidates[category], hasNum=True)
        return list(seen.values())
    out = []
    for info in raw:
        category = mapper.map(info.name) if mapper is not None else None
        out.append(ObjInfo(name=category or info.name, num=info.num, hasNum=info.hasNum))
    return out
