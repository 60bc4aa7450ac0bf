"""Caption keywords, knowledge sentences, and token encoding.

The pipeline per caption: tokenize, keep nouns (lexicon lookup after
plural reduction), pull one-step neighbor triplets from the graph, select
at most ``m`` of them, and render the selection into a single knowledge
sentence through fixed relation templates.
"""
from __future__ import annotations

import random
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .kg import KnowledgeGraph, Triplet, one_step_neighbors

PAD_ID = 0
CLS_ID = 1
SEP_ID = 2
UNK_ID = 3
_RESERVED = ("[PAD]", "[CLS]", "[SEP]", "[UNK]")
_FIRST_FREE_ID = 4

# Relation name -> infix wording of the rendered sentence.
RELATION_TEMPLATES = {
    "UsedFor": "is used for",
    "ReceivesAction": "receives action",
    "HasA": "has a",
    "Causes": "causes",
    "HasProperty": "has a property",
    "CreatedBy": "is created by",
    "DefinedAs": "is defined as",
    "AtLocation": "is at location of",
    "HasSubEvent": "has",
    "MadeUpOf": "is made of",
    "HasPrerequisite": "has prerequisite to",
    "Desires": "desires",
    "NotDesires": "not desires",
    "IsA": "is a",
    "CapableOf": "is capable of",
    "shape": "shape is",
    "color": "color is",
    "width": "width is",
    "distribution": "distribution is",
    "height": "height is",
    "next_to": "next to",
    "stop_at": "stop at",
    "pass_through": "pass through",
    "intersect_at": "intersect at",
    "marked_on": "is marked on",
    "connected_to": "is connected to",
    "is_component_of": "is component of",
    "is_part_of": "is part of",
    "is_member_of": "is member of",
}

_WORD_RE = re.compile(r"[a-z0-9]+")


class InvalidM(ValueError):
    """Triplet budget m must be at least 1."""


@dataclass
class Vocabulary:
    """Token ids for the encoders plus the noun lexicon for keywords.

    Ids 0..3 are reserved (PAD, CLS, SEP, UNK); real tokens start at 4 in
    insertion order, which is also the line order of the on-disk format.
    """

    token_to_id: dict[str, int] = field(default_factory=dict)
    id_to_token: dict[int, str] = field(default_factory=dict)
    noun_lexicon: set[str] = field(default_factory=set)
    plural_exceptions: dict[str, str] = field(default_factory=dict)

    def __len__(self) -> int:
        return _FIRST_FREE_ID + len(self.token_to_id)

    def add_token(self, token: str) -> int:
        if token in self.token_to_id:
            return self.token_to_id[token]
        idx = _FIRST_FREE_ID + len(self.token_to_id)
        self.token_to_id[token] = idx
        self.id_to_token[idx] = token
        return idx

    def id_for(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def token_for(self, idx: int) -> str:
        if 0 <= idx < _FIRST_FREE_ID:
            return _RESERVED[idx]
        return self.id_to_token.get(idx, _RESERVED[UNK_ID])


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric tokens; punctuation acts as a separator."""
    return _WORD_RE.findall(text.lower())


def singularize(word: str, vocab: Vocabulary) -> str:
    """Reduce a plural noun to the lexicon's singular form.

    The exception table wins; after that suffix rules apply, each gated on
    the stem actually being a known noun so ordinary words pass unchanged.
    """
    if word in vocab.plural_exceptions:
        return vocab.plural_exceptions[word]
    if word.endswith("ies") and len(word) > 3:
        stem = word[:-3] + "y"
        if stem in vocab.noun_lexicon:
            return stem
    if word.endswith("sses"):
        stem = word[:-2]
        if stem in vocab.noun_lexicon:
            return stem
    if word.endswith("es"):
        stem = word[:-2]
        if stem in vocab.noun_lexicon:
            return stem
    if word.endswith("s"):
        stem = word[:-1]
        if stem in vocab.noun_lexicon:
            return stem
    return word


def extract_keywords(caption: str, vocab: Vocabulary) -> list[str]:
    """Singular nouns of the caption, deduplicated in first-occurrence order."""
    keywords: list[str] = []
    seen: set[str] = set()
    for token in tokenize(caption):
        word = singularize(token, vocab)
        if word in vocab.noun_lexicon and word not in seen:
            seen.add(word)
            keywords.append(word)
    return keywords


def retrieve_triplets(keywords: Sequence[str], graph: KnowledgeGraph) -> list[Triplet]:
    return one_step_neighbors(graph, keywords)


# -- selection strategies -----------------------------------------------------


@dataclass(frozen=True)
class RandomSelection:
    seed: int = 0


@dataclass(frozen=True)
class RelevanceSelection:
    """Keep the candidates farthest from the caption (lowest token overlap)."""


@dataclass(frozen=True)
class DiversitySelection:
    seed: int = 0


SelectionStrategy = RandomSelection | RelevanceSelection | DiversitySelection


def parse_strategy(name: str, seed: int = 0) -> SelectionStrategy:
    name = name.lower()
    if name == "random":
        return RandomSelection(seed)
    if name == "relevance":
        return RelevanceSelection()
    if name == "diversity":
        return DiversitySelection(seed)
    raise ValueError(f"unknown selection strategy {name!r}")


def _jaccard(a: set[str], b: set[str]) -> float:
    if not a and not b:
        return 0.0
    return len(a & b) / len(a | b)


def _rng_for(seed: int, sample_key: int) -> random.Random:
    return random.Random(seed * 1_000_003 + sample_key)


def select_triplets(
    candidates: Sequence[Triplet],
    m: int,
    strategy: SelectionStrategy,
    caption: str,
    sample_key: int = 0,
) -> list[Triplet]:
    """Reduce the retrieved triplets to at most ``m``.

    ``sample_key`` (typically the caption index, mixed with the epoch when
    resampling) makes the seeded strategies deterministic per caption.
    When there are at most ``m`` candidates they all pass through untouched.
    """
    if m < 1:
        raise InvalidM(f"m must be >= 1, got {m}")
    candidates = list(candidates)
    if len(candidates) <= m:
        return candidates

    if isinstance(strategy, RandomSelection):
        pool = list(candidates)
        _rng_for(strategy.seed, sample_key).shuffle(pool)
        return pool[:m]

    sentences = [set(tokenize(triplet_to_sentence(t))) for t in candidates]
    if isinstance(strategy, RelevanceSelection):
        caption_tokens = set(tokenize(caption))
        ranked = sorted(
            range(len(candidates)),
            key=lambda i: (_jaccard(caption_tokens, sentences[i]), i),
        )
        return [candidates[i] for i in ranked[:m]]

    if isinstance(strategy, DiversitySelection):
        first = _rng_for(strategy.seed, sample_key).randrange(len(candidates))
        rest = [i for i in range(len(candidates)) if i != first]
        ranked = sorted(rest, key=lambda i: (_jaccard(sentences[first], sentences[i]), i))
        return [candidates[first]] + [candidates[i] for i in ranked[: m - 1]]

    raise TypeError(f"unknown strategy {strategy!r}")


# -- sentence construction ----------------------------------------------------


def triplet_to_sentence(t: Triplet) -> str:
    """Render one triplet as ``head <template> tail``.

    Relations without a template fall back to the relation name with
    underscores spelled out, so unexpected domain relations still read.
    """
    infix = RELATION_TEMPLATES.get(t.relation, t.relation.replace("_", " "))
    return f"{t.head} {infix} {t.tail}"


def build_knowledge_sentence(triplets: Sequence[Triplet]) -> str:
    if not triplets:
        return ""
    return ". ".join(triplet_to_sentence(t) for t in triplets) + "."


# -- token encoding -----------------------------------------------------------


def encode_tokens(text: str, vocab: Vocabulary, max_len: int) -> list[int]:
    """[CLS] + token ids + [SEP], truncated and PAD-filled to exactly max_len."""
    if max_len < 2:
        raise ValueError("max_len must be >= 2")
    ids = [vocab.id_for(tok) for tok in tokenize(text)]
    ids = ids[: max_len - 2]
    ids = [CLS_ID] + ids + [SEP_ID]
    ids += [PAD_ID] * (max_len - len(ids))
    return ids


def merge_token_streams(caption_ids: Sequence[int], knowledge_ids: Sequence[int], max_len: int) -> list[int]:
    """Join two encoded streams as CLS body SEP body SEP for the joint encoder.

    The caption's closing SEP doubles as the separator; an empty knowledge
    stream leaves the caption stream as-is.
    """
    cap = [i for i in caption_ids if i != PAD_ID]
    kwl = [i for i in knowledge_ids if i not in (PAD_ID, CLS_ID)]
    if kwl == [SEP_ID]:
        merged = cap
    else:
        merged = cap + kwl
    merged = merged[: max_len - 1]
    if merged[-1] != SEP_ID:
        merged.append(SEP_ID)
    merged += [PAD_ID] * (max_len - len(merged))
    return merged


@dataclass
class TextSample:
    """A caption with its knowledge expansion and encoder-ready token ids."""

    caption: str
    keywords: list[str]
    triplets: list[Triplet]
    knowledge_sentence: str
    caption_ids: list[int]
    knowledge_ids: list[int]


def make_text_sample(
    caption: str,
    graph: KnowledgeGraph | None,
    vocab: Vocabulary,
    m: int,
    strategy: SelectionStrategy,
    max_len: int,
    sample_key: int = 0,
) -> TextSample:
    """Run the full per-caption pipeline; ``graph=None`` skips knowledge."""
    keywords = extract_keywords(caption, vocab)
    if graph is not None:
        candidates = retrieve_triplets(keywords, graph)
        triplets = select_triplets(candidates, m, strategy, caption, sample_key)
    else:
        triplets = []
    sentence = build_knowledge_sentence(triplets)
    return TextSample(
        caption=caption,
        keywords=keywords,
        triplets=triplets,
        knowledge_sentence=sentence,
        caption_ids=encode_tokens(caption, vocab, max_len),
        knowledge_ids=encode_tokens(sentence, vocab, max_len),
    )


# -- vocabulary construction and files ---------------------------------------


def build_vocabulary(
    texts: Iterable[str],
    noun_lexicon: Iterable[str] = (),
    plural_exceptions: dict[str, str] | None = None,
    graphs: Sequence[KnowledgeGraph] = (),
) -> Vocabulary:
    """Collect token ids from texts plus every renderable graph sentence.

    Including the rendered form of every graph triplet keeps the vocabulary
    independent of which triplets a particular run happens to select. Graph
    objects are folded into the noun lexicon.
    """
    vocab = Vocabulary(plural_exceptions=dict(plural_exceptions or {}))
    vocab.noun_lexicon.update(noun_lexicon)
    for g in graphs:
        vocab.noun_lexicon.update(g.objects)
    for text in texts:
        for tok in tokenize(text):
            vocab.add_token(tok)
    for g in graphs:
        for t in g.triplets:
            for tok in tokenize(triplet_to_sentence(t)):
                vocab.add_token(tok)
    return vocab


def save_vocab(vocab: Vocabulary, path) -> None:
    tokens = [vocab.id_to_token[i] for i in sorted(vocab.id_to_token)]
    Path(path).write_text("\n".join(tokens) + ("\n" if tokens else ""), encoding="utf-8")


def load_vocab_tokens(path) -> list[str]:
    return [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln]


def vocab_from_tokens(
    tokens: Iterable[str],
    noun_lexicon: Iterable[str] = (),
    plural_exceptions: dict[str, str] | None = None,
) -> Vocabulary:
    vocab = Vocabulary(plural_exceptions=dict(plural_exceptions or {}))
    vocab.noun_lexicon.update(noun_lexicon)
    for tok in tokens:
        vocab.add_token(tok)
    return vocab


def load_noun_lexicon(path) -> set[str]:
    return {ln.strip() for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()}


def load_plural_exceptions(path) -> dict[str, str]:
    table: dict[str, str] = {}
    for ln in Path(path).read_text(encoding="utf-8").splitlines():
        if not ln.strip():
            continue
        plural, singular = ln.split("\t")
        table[plural.strip()] = singular.strip()
    return table
