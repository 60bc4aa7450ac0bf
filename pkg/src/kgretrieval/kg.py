"""Knowledge graphs as immutable one-step-neighborhood triplet stores.

Graphs load from TSV snapshots (``head<TAB>relation<TAB>tail[<TAB>source]``),
keep triplets in file order, and answer neighbor queries through an
object -> triplet-index map. A domain graph and a commonsense graph can be
merged, keeping only commonsense triplets anchored to the domain vocabulary.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

SOURCE_RSKG = "RSKG"
SOURCE_CONCEPTNET = "ConceptNet"
VALID_SOURCES = frozenset({SOURCE_RSKG, SOURCE_CONCEPTNET})

# Commonsense relation whitelist used for the shipped ConceptNet snapshot.
# Callers may pass any other set to load_graph.
CONCEPTNET_RELATIONS = frozenset(
    {
        "UsedFor",
        "ReceivesAction",
        "HasA",
        "Causes",
        "HasProperty",
        "CreatedBy",
        "DefinedAs",
        "AtLocation",
        "HasSubEvent",
        "MadeUpOf",
        "HasPrerequisite",
        "Desires",
        "NotDesires",
        "IsA",
        "CapableOf",
    }
)

_TOKEN_RE = re.compile(r"[a-z0-9][a-z0-9 _]*$")


class MalformedLine(ValueError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no


class UnknownRelation(ValueError):
    def __init__(self, relation: str, line_no: int):
        super().__init__(f"line {line_no}: relation {relation!r} not allowed")
        self.relation = relation
        self.line_no = line_no


@dataclass(frozen=True)
class Triplet:
    head: str
    relation: str
    tail: str
    source: str = SOURCE_RSKG


class KnowledgeGraph:
    """Ordered triplet list with object/relation vocabularies and an index."""

    def __init__(self, triplets: Iterable[Triplet]):
        seen: set[Triplet] = set()
        self.triplets: list[Triplet] = []
        for t in triplets:
            if t in seen:
                continue
            seen.add(t)
            self.triplets.append(t)
        self.objects: set[str] = set()
        self.relations: set[str] = set()
        self.index: dict[str, list[int]] = {}
        for i, t in enumerate(self.triplets):
            self.relations.add(t.relation)
            for obj in (t.head, t.tail) if t.head != t.tail else (t.head,):
                self.objects.add(obj)
                self.index.setdefault(obj, []).append(i)

    def __len__(self) -> int:
        return len(self.triplets)


def normalize_object(raw: str) -> str:
    """Lowercase, underscores to spaces, collapsed whitespace."""
    return " ".join(raw.strip().lower().replace("_", " ").split())


def _is_clean_token(token: str) -> bool:
    return bool(token) and _TOKEN_RE.match(token) is not None


def load_graph(
    path,
    source: str,
    allowed_relations: set[str] | frozenset[str] | None = None,
    strict_relations: bool = False,
) -> KnowledgeGraph:
    """Parse a TSV snapshot into a graph.

    Rows whose relation is outside ``allowed_relations`` are skipped (or
    rejected when ``strict_relations``); rows whose head or tail contains
    anything but ASCII letters, digits, spaces or underscores after
    normalization are dropped as non-English.
    """
    if source not in VALID_SOURCES:
        raise ValueError(f"unknown source {source!r}")
    triplets: list[Triplet] = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) not in (3, 4):
                raise MalformedLine(line_no, f"expected 3 or 4 fields, got {len(fields)}")
            head, relation, tail = (f.strip() for f in fields[:3])
            row_source = source
            if len(fields) == 4:
                row_source = fields[3].strip()
                if row_source not in VALID_SOURCES:
                    raise MalformedLine(line_no, f"unknown source tag {row_source!r}")
            if not head or not tail or not relation:
                raise MalformedLine(line_no, "empty field")
            if allowed_relations is not None and relation not in allowed_relations:
                if strict_relations:
                    raise UnknownRelation(relation, line_no)
                continue
            head = normalize_object(head)
            tail = normalize_object(tail)
            if not (_is_clean_token(head) and _is_clean_token(tail)):
                continue
            triplets.append(Triplet(head, relation, tail, row_source))
    return KnowledgeGraph(triplets)


def save_graph(graph: KnowledgeGraph, path) -> None:
    """Write the graph back out in the TSV snapshot format."""
    lines = [f"{t.head}\t{t.relation}\t{t.tail}\t{t.source}" for t in graph.triplets]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def one_step_neighbors(graph: KnowledgeGraph, keywords: Sequence[str]) -> list[Triplet]:
    """All triplets whose head or tail is a keyword, in stable graph order."""
    wanted = set(keywords)
    hits: set[int] = set()
    for word in wanted:
        hits.update(graph.index.get(word, ()))
    return [graph.triplets[i] for i in sorted(hits)]


def combine_sources(rskg: KnowledgeGraph, conceptnet: KnowledgeGraph) -> KnowledgeGraph:
    """Domain graph plus commonsense triplets touching the domain vocabulary.

    A commonsense triplet survives only if its head or tail is already an
    object of the domain graph; everything else is considered off-domain.
    """
    kept = list(rskg.triplets)
    for t in conceptnet.triplets:
        if t.head in rskg.objects or t.tail in rskg.objects:
            kept.append(t)
    return KnowledgeGraph(kept)


def graph_stats(graph: KnowledgeGraph) -> tuple[int, int, int]:
    return len(graph.objects), len(graph.relations), len(graph.triplets)
