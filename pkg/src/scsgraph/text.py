"""Attribute and review-term extraction from raw item contents and reviews.

Everything here is deterministic and dependency-free: a small lexicon tagger
feeds an ``(adjective)* (noun)+`` chunker, and review sentiment comes from
two opinion-word lists paired with the nearest noun phrase.
"""

from __future__ import annotations

import html
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Protocol, Sequence

__all__ = [
    "Attribute",
    "ReviewTerm",
    "SentimentLexicon",
    "LexiconTagger",
    "clean_text",
    "tokenize",
    "extract_noun_phrases",
    "extract_attributes",
    "extract_review_terms",
    "filter_review_terms",
    "load_lexicon",
    "default_lexicon",
]

MAX_PHRASE_TOKENS = 4

_TAG_RE = re.compile(r"<[^<>]*>")
_URL_TOKEN_RE = re.compile(r"\S*(?:https?:|http|www\.)\S*", re.IGNORECASE)
_DISALLOWED_RE = re.compile(r"[^\w\s.,!?'\-]|_")
_PUNCT_RUN_RE = re.compile(r"([.,!?'\-])\1+")
_SPACE_RE = re.compile(r"\s+")
_TOKEN_RE = re.compile(r"[^\W_]+(?:['\-][^\W_]+)*|[.,!?;:]")


def _clean_once(text: str) -> str:
    text = html.unescape(text)
    text = _TAG_RE.sub(" ", text)
    text = text.replace("<", " ").replace(">", " ")
    text = _URL_TOKEN_RE.sub(" ", text)
    text = _DISALLOWED_RE.sub(" ", text)
    text = _PUNCT_RUN_RE.sub(r"\1", text)
    text = text.lower()
    return _SPACE_RE.sub(" ", text).strip()


def clean_text(raw: str) -> str:
    """Strip HTML, URLs and special characters; lowercase; collapse whitespace.

    The single-pass rules can expose new matches (e.g. an escaped tag), so
    the pass is repeated until the text stops changing.

    >>> clean_text("Visit https://x.co NOW!!")
    'visit now!'
    """
    text = raw
    for _ in range(16):
        cleaned = _clean_once(text)
        if cleaned == text:
            break
        text = cleaned
    return text


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


# --------------------------------------------------------------------------
# tagger

DET, PRON, PREP, CONJ, AUX, ADV, VERB, ADJ, MOD, NOUN, NUM, PUNCT = (
    "DET", "PRON", "PREP", "CONJ", "AUX", "ADV", "VERB", "ADJ", "MOD", "NOUN", "NUM", "PUNCT",
)

_CLOSED = {
    DET: "a an the this that these those each every some any no all both either neither "
         "another such what which whose",
    PRON: "i you he she it we they me him her us them my your his its our their mine yours "
          "hers ours theirs myself yourself himself herself itself ourselves themselves "
          "everything something anything nothing everyone someone anyone everybody somebody "
          "anybody nobody who whom whoever whatever one ones",
    PREP: "in on at by for with about against between into through during before after "
          "above below to from up down of off over under again than as like near within "
          "without across along around behind beyond per via upon toward towards among "
          "inside outside onto",
    CONJ: "and or but nor so yet if because while although though whether unless since "
          "until when where how why",
    AUX: "is are was were be been being am have has had having do does did will would "
         "shall should can could may might must",
    ADV: "very really too also just only not never always often quite rather then there "
         "here now even still almost well much more most less least ever soon already "
         "again maybe perhaps",
    VERB: "keep keeps kept make makes made hold holds held store stores fit fits get gets "
          "got use uses buy buys bought love loves need needs want wants go goes went "
          "come comes came take takes took give gives gave put puts look looks see sees "
          "saw know knows knew think thinks feel feels felt try tries work works say says "
          "said let lets help helps find finds found arrive arrives arrived become becomes "
          "provide provides include includes allow allows enjoy enjoys recommend recommends "
          "order orders ordered seem seems",
    ADJ: "new old good great best better bad worse worst nice big small large little tiny "
         "huge long short tall high low easy hard soft light heavy dark bright clean "
         "cheap fresh hot cold warm cool wide narrow thick thin full empty ready perfect "
         "sturdy solid strong weak quick fast slow real true sure fine whole same other "
         "different extra main many few several own free safe tight loose broken "
         "red orange yellow green blue purple pink brown black white gray grey silver gold "
         "golden beige navy teal ivory tan crimson maroon olive cyan magenta vintage "
         "modern classic rustic elegant cozy tasty yummy delicious friendly quiet loud "
         "busy clear simple basic premium durable flimsy cute pretty ugly smooth rough "
         "sharp dull ideal lightweight compact waterproof weatherproof wireless stainless "
         "nonstick ergonomic portable handy",
}
_CLOSED_TAGS: dict[str, str] = {}
for _tag, _words in _CLOSED.items():
    for _w in _words.split():
        _CLOSED_TAGS.setdefault(_w, _tag)

_CONTRACTION_SUFFIXES = ("'re", "'ve", "'ll", "'d", "'m", "n't")
_PRONOUN_S = {"it's", "that's", "he's", "she's", "there's", "here's", "what's", "who's",
              "let's", "where's"}
_ADJ_SUFFIXES = ("ful", "ous", "ive", "able", "ible", "ic", "less", "ish", "ian", "ese",
                 "esque")
_NOT_ADJ = {"music", "magic", "fabric", "topic", "clinic", "logic", "picnic", "garlic",
            "comic", "traffic", "republic", "mechanic", "relic", "tunic", "plastics",
            "olive", "drive", "hive", "five", "archive", "table", "cable", "vegetable",
            "fish", "dish", "wish", "radish", "polish", "finish", "relish", "cherish",
            "technician", "musician", "guardian", "cheese", "knife", "detective",
            "motive", "adhesive", "explosive"}
_NOT_ADV = {"family", "assembly", "supply", "apply", "reply", "fly", "ally", "jelly", "belly",
            "bully", "rally", "italy", "lily", "holly", "july", "butterfly", "dragonfly",
            "anomaly", "monopoly", "only", "early", "daily", "weekly", "monthly", "yearly"}
_MOD_CONTEXT = {"START", DET, ADJ, MOD, PREP, CONJ, PUNCT, NUM, VERB}


class Tagger(Protocol):
    def tag(self, tokens: Sequence[str]) -> list[str]: ...


class LexiconTagger:
    """Closed-class word lists, adjective suffixes, and a default-noun fallback.

    ``extra_adjectives`` lets callers force words (e.g. opinion words) to
    be tagged as adjectives.
    """

    def __init__(self, extra_adjectives: Iterable[str] = ()):
        self.extra_adjectives = frozenset(extra_adjectives)

    def _word_tag(self, tok: str) -> str | None:
        if tok in self.extra_adjectives:
            return ADJ
        if tok in _CLOSED_TAGS:
            return _CLOSED_TAGS[tok]
        if not tok[0].isalnum():
            return PUNCT
        if tok.isdigit():
            return NUM
        if tok in _PRONOUN_S or tok.endswith(_CONTRACTION_SUFFIXES):
            return PRON
        if "-" in tok:
            parts = tok.split("-")
            if any(_CLOSED_TAGS.get(p) in (ADJ, PREP, CONJ, DET, ADV) or p.isdigit()
                   or self._suffix_adj(p) for p in parts):
                return ADJ
            return NOUN
        if self._suffix_adj(tok):
            return ADJ
        if len(tok) > 4 and tok.endswith("ly") and tok not in _NOT_ADV:
            return ADV
        return None

    @staticmethod
    def _suffix_adj(tok: str) -> bool:
        return len(tok) > 4 and tok.endswith(_ADJ_SUFFIXES) and tok not in _NOT_ADJ

    def tag(self, tokens: Sequence[str]) -> list[str]:
        tags: list[str] = []
        prev = "START"
        for tok in tokens:
            tag = self._word_tag(tok)
            if tag is None:
                if len(tok) > 4 and tok.endswith(("ing", "ed")):
                    tag = MOD if prev in _MOD_CONTEXT else VERB
                else:
                    tag = NOUN
            tags.append(tag)
            prev = tag
        return tags


_DEFAULT_TAGGER = LexiconTagger()


def _chunk_spans(tokens: Sequence[str], tags: Sequence[str]) -> list[tuple[int, int]]:
    """Half-open token spans of maximal ``(ADJ|MOD)* NOUN+`` chunks."""
    spans: list[tuple[int, int]] = []
    start = None  # first modifier/noun of the pending chunk
    in_nouns = False
    for i, tag in enumerate(list(tags) + [PUNCT]):
        if tag == NOUN:
            if start is None:
                start = i
            in_nouns = True
            continue
        if tag in (ADJ, MOD):
            if in_nouns:
                spans.append((start, i))
                start, in_nouns = i, False
            elif start is None:
                start = i
            continue
        if in_nouns:
            spans.append((start, i))
        start, in_nouns = None, False
    out = []
    for s, e in spans:
        if e - s > MAX_PHRASE_TOKENS:
            s = e - MAX_PHRASE_TOKENS
        if all(_CLOSED_TAGS.get(t) not in (None, ADJ) for t in tokens[s:e]):
            continue
        out.append((s, e))
    return out


def extract_noun_phrases(text: str, tagger: Tagger | None = None) -> list[str]:
    """Noun phrases of 1-4 tokens from already-cleaned text, left to right."""
    tokens = tokenize(text)
    tags = (tagger or _DEFAULT_TAGGER).tag(tokens)
    return [" ".join(tokens[s:e]) for s, e in _chunk_spans(tokens, tags)]


# --------------------------------------------------------------------------
# attributes


@dataclass(frozen=True)
class Attribute:
    text: str
    source_field: str


def _field_values(value) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [value]
    return [str(v) for v in value]


def extract_attributes(
    contents: Mapping[str, object],
    short_fields: Iterable[str],
    long_fields: Iterable[str] | None = None,
    tagger: Tagger | None = None,
) -> list[Attribute]:
    """Attributes of one item, deduplicated by text in first-seen order.

    Short fields are taken verbatim after cleaning; long fields go through
    noun-phrase extraction. With ``long_fields=None`` every non-short field
    is treated as long. An empty result is returned as-is; the corpus
    filter on minimum attribute count drops such items.
    """
    short = set(short_fields)
    long = None if long_fields is None else set(long_fields)
    seen: dict[str, Attribute] = {}
    for field, value in contents.items():
        if field in short:
            for v in _field_values(value):
                text = clean_text(v).strip(" .,!?'-")
                text = clean_text(text)
                if text and text not in seen:
                    seen[text] = Attribute(text, field)
        elif long is None or field in long:
            for v in _field_values(value):
                for phrase in extract_noun_phrases(clean_text(v), tagger):
                    if phrase not in seen:
                        seen[phrase] = Attribute(phrase, field)
    return list(seen.values())


# --------------------------------------------------------------------------
# review terms


@dataclass(frozen=True)
class SentimentLexicon:
    positive_words: frozenset[str]
    negative_words: frozenset[str]

    def __post_init__(self):
        overlap = self.positive_words & self.negative_words
        if overlap:
            raise ValueError(f"lexicon word lists overlap: {sorted(overlap)[:5]}")

    def polarity(self, word: str) -> int:
        if word in self.positive_words:
            return 1
        if word in self.negative_words:
            return -1
        return 0


def _read_words(lines: Iterable[str]) -> frozenset[str]:
    return frozenset(w.strip().lower() for w in lines if w.strip() and not w.startswith("#"))


def load_lexicon(positive_path: str | Path, negative_path: str | Path) -> SentimentLexicon:
    pos = _read_words(Path(positive_path).read_text(encoding="utf-8").splitlines())
    neg = _read_words(Path(negative_path).read_text(encoding="utf-8").splitlines())
    return SentimentLexicon(pos, neg)


def default_lexicon() -> SentimentLexicon:
    data = resources.files("scsgraph") / "data"
    pos = _read_words((data / "positive.txt").read_text(encoding="utf-8").splitlines())
    neg = _read_words((data / "negative.txt").read_text(encoding="utf-8").splitlines())
    return SentimentLexicon(pos, neg)


@dataclass(frozen=True)
class ReviewTerm:
    text: str
    polarity: int
    phrase: str


_NEGATORS = {"not", "never", "no", "hardly", "barely"}


def _negated(tokens: Sequence[str], i: int) -> bool:
    for tok in tokens[max(0, i - 3):i]:
        if tok in _NEGATORS or tok.endswith("n't"):
            return True
    return False


def extract_review_terms(review: str, lexicon: SentimentLexicon, window: int = 5) -> list[ReviewTerm]:
    """Pair each opinion word with the nearest noun phrase within ``window`` tokens.

    Opinion words are stripped out of the phrase itself, so "great pot" pairs
    "great" with "pot". A negator up to three tokens before the opinion word
    flips its polarity. Pairing never crosses clause punctuation, and
    equidistant phrases resolve to the one on the left.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    opinion = lexicon.positive_words | lexicon.negative_words
    tokens = tokenize(clean_text(review))
    tags = LexiconTagger(extra_adjectives=opinion).tag(tokens)
    clause = []
    c = 0
    for tag in tags:
        c += tag == PUNCT
        clause.append(c)
    phrases: list[tuple[int, int, str]] = []
    for s, e in _chunk_spans(tokens, tags):
        kept = [(j, t) for j, t in zip(range(s, e), tokens[s:e]) if t not in opinion]
        if kept:
            phrases.append((kept[0][0], kept[-1][0], " ".join(t for _, t in kept)))

    terms: list[ReviewTerm] = []
    for i, tok in enumerate(tokens):
        pol = lexicon.polarity(tok)
        if pol == 0:
            continue
        if _negated(tokens, i):
            pol = -pol
        best = None
        for lo, hi, phrase in phrases:
            if clause[lo] != clause[i]:
                continue
            dist = lo - i if i < lo else (i - hi if i > hi else 0)
            if dist <= window and (best is None or dist < best[0]):
                best = (dist, phrase)
        if best is not None:
            prefix = "good" if pol > 0 else "bad"
            terms.append(ReviewTerm(f"{prefix} {best[1]}", pol, best[1]))
    return terms


def filter_review_terms(
    term_doc_freq: Mapping[str, int],
    n_items: int,
    min_items: int = 5,
    max_item_frac: float = 0.5,
) -> set[str]:
    """Keep terms seen in at least ``min_items`` items and at most ``max_item_frac`` of them."""
    if not 0 < max_item_frac <= 1:
        raise ValueError("max_item_frac must be in (0, 1]")
    cap = max_item_frac * n_items
    return {t for t, c in term_doc_freq.items() if min_items <= c <= cap}
