#!/usr/bin/env python3
"""Regenerate the shipped knowledge-graph snapshots.

Writes src/kgretrieval/data/rskg.tsv and conceptnet.tsv so that:
  - the domain graph loads to exactly 117 objects, 26 relations, 191 triplets
  - the commonsense snapshot loads to exactly 3855 objects, 15 relations,
    3343 triplets (a few non-ASCII rows are present and must be filtered)
  - combining keeps exactly 557 commonsense triplets (748 total) and all
    41 relations

Deterministic: rerunning produces byte-identical files.
"""
from __future__ import annotations

import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(ROOT / "src"))

from kgretrieval.kg import (  # noqa: E402
    CONCEPTNET_RELATIONS,
    SOURCE_CONCEPTNET,
    SOURCE_RSKG,
    combine_sources,
    graph_stats,
    load_graph,
)

DATA_DIR = ROOT / "src" / "kgretrieval" / "data"

RSKG_TARGET = (117, 26, 191)
CONCEPTNET_TARGET = (3855, 15, 3343)
COMBINED_TRIPLETS = 748
COMBINED_RELATIONS = 41
KEPT_ROWS = COMBINED_TRIPLETS - RSKG_TARGET[2]  # commonsense rows that survive combining

# 107 scene entities + 10 attribute values = 117 objects.
RSKG_OBJECTS = [
    "airplane", "airport", "apron", "barn", "baseball field", "basin", "bay",
    "beach", "boat", "bridge", "building", "bus",
    "cabin", "canal", "car", "cargo", "chimney", "church",
    "cloud", "coast", "container", "court", "crane", "crop", "crosswalk",
    "dam", "desert", "dock", "dune", "factory", "farmland",
    "fence", "field", "footbridge", "forest", "garden",
    "gas station", "grass", "grassland", "greenhouse", "hangar", "harbor",
    "hedge", "helicopter", "highway", "hill", "house", "intersection",
    "island", "jetty", "lake", "lane", "lawn", "lighthouse",
    "meadow", "mountain", "mobile home", "orchard", "overpass", "palm",
    "park", "parking lot", "path", "pier", "pipeline",
    "playground", "plaza", "pond", "pool", "port", "power plant",
    "railway", "ramp", "reservoir", "residential area", "river", "road",
    "rock", "roof", "roundabout", "runway", "sand", "school", "sea",
    "shadow", "ship", "shore", "sidewalk", "silo", "snow", "soil",
    "stadium", "storage tank", "street", "tarmac", "tennis court",
    "terminal", "tower", "tractor", "trail", "train", "tree", "truck",
    "viaduct", "warehouse", "water", "wharf",
    # attribute values
    "white", "red", "gray", "scattered", "dense", "rectangular", "circular",
    "narrow", "tall", "paved",
]

RSKG_RELATIONS = [
    # relations with a dedicated sentence template
    "shape", "color", "width", "distribution", "height", "next_to",
    "stop_at", "pass_through", "intersect_at", "marked_on", "connected_to",
    "is_component_of", "is_part_of", "is_member_of",
    # extra domain relations rendered through the fallback template
    "surrounded_by", "adjacent_to", "located_in", "covers", "crosses",
    "leads_to", "contains", "near", "parallel_to", "belongs_to", "faces",
    "supports",
]

RSKG_CURATED = [
    ("boat", "next_to", "dock"),
    ("boat", "located_in", "harbor"),
    ("ship", "located_in", "port"),
    ("dock", "connected_to", "shore"),
    ("pier", "adjacent_to", "sea"),
    ("beach", "next_to", "sea"),
    ("sand", "is_part_of", "beach"),
    ("palm", "located_in", "beach"),
    ("dune", "is_part_of", "desert"),
    ("lake", "surrounded_by", "tree"),
    ("lake", "contains", "water"),
    ("river", "leads_to", "sea"),
    ("river", "pass_through", "canal"),
    ("bridge", "crosses", "river"),
    ("footbridge", "crosses", "canal"),
    ("road", "intersect_at", "intersection"),
    ("road", "parallel_to", "railway"),
    ("street", "connected_to", "road"),
    ("crosswalk", "marked_on", "road"),
    ("lane", "is_component_of", "highway"),
    ("car", "stop_at", "intersection"),
    ("bus", "stop_at", "school"),
    ("truck", "near", "warehouse"),
    ("train", "stop_at", "terminal"),
    ("airplane", "located_in", "airport"),
    ("airplane", "next_to", "hangar"),
    ("runway", "is_part_of", "airport"),
    ("tarmac", "covers", "apron"),
    ("building", "color", "white"),
    ("roof", "color", "red"),
    ("roof", "is_component_of", "building"),
    ("chimney", "is_component_of", "factory"),
    ("shadow", "near", "tower"),
    ("grass", "covers", "meadow"),
    ("lawn", "adjacent_to", "house"),
    ("tree", "distribution", "scattered"),
    ("forest", "contains", "tree"),
    ("orchard", "contains", "tree"),
    ("crop", "covers", "farmland"),
    ("field", "shape", "rectangular"),
    ("pool", "shape", "rectangular"),
    ("court", "width", "narrow"),
    ("tower", "height", "tall"),
    ("tennis court", "is_part_of", "park"),
    ("playground", "belongs_to", "school"),
    ("church", "faces", "plaza"),
    ("fence", "supports", "hedge"),
    ("silo", "near", "barn"),
    ("storage tank", "located_in", "power plant"),
    ("mountain", "near", "hill"),
    ("snow", "covers", "mountain"),
    ("island", "surrounded_by", "sea"),
]

# Commonsense rows kept when combining (at least one endpoint in the domain
# vocabulary).
CONCEPTNET_CURATED_KEPT = [
    ("boat", "AtLocation", "water"),
    ("lake", "HasA", "water"),
    ("boat", "UsedFor", "sailing"),
    ("road", "UsedFor", "driving"),
    ("water", "CapableOf", "flowing"),
    ("tree", "IsA", "plant"),
    ("sand", "AtLocation", "beach"),
    ("ship", "CapableOf", "carrying cargo"),
    ("harbor", "DefinedAs", "sheltered anchorage"),
    ("bridge", "MadeUpOf", "steel"),
    ("garden", "HasProperty", "green"),
    ("cloud", "Causes", "rain"),
    ("farmland", "ReceivesAction", "irrigated"),
    ("airplane", "CapableOf", "flying"),
    ("swimming", "HasPrerequisite", "water"),
    ("park", "HasSubEvent", "picnic"),
    ("reservoir", "CreatedBy", "dam"),
    ("tourist", "Desires", "beach"),
    ("bird", "NotDesires", "airport"),
]

# Dropped when combining: both endpoints outside the domain vocabulary.
CONCEPTNET_CURATED_DROPPED = [
    ("computer", "AtLocation", "office"),
    ("keyboard", "UsedFor", "typing"),
    ("kitchen", "HasA", "stove"),
    ("book", "AtLocation", "library"),
    ("violin", "UsedFor", "playing music"),
]

# Rows that must vanish in the non-English filter.
NON_ASCII_ROWS = [
    ("café", "AtLocation", "parís"),
    ("montaña", "IsA", "relieve"),
    ("日本", "HasA", "山"),
]

CN_RELATIONS = sorted(CONCEPTNET_RELATIONS)

MODIFIERS = [
    "old", "new", "small", "large", "red", "blue", "green", "white", "dark",
    "bright", "wooden", "stone", "metal", "glass", "paper", "round",
    "square", "narrow", "wide", "tall", "short", "fast", "slow", "quiet",
    "busy", "empty", "full", "warm", "cold", "dry", "wet", "clean", "dusty",
    "ancient", "modern", "rural", "urban", "coastal", "inland", "northern",
    "southern", "eastern", "western", "central", "distant", "nearby",
    "public", "private", "open", "closed", "broken", "painted", "curved",
    "straight", "heavy", "light", "deep", "shallow", "steep", "flat",
]

BASES = [
    "market", "village", "office", "kitchen", "library", "bedroom", "museum",
    "theater", "bakery", "castle", "cottage", "workshop", "garage", "cellar",
    "attic", "balcony", "corridor", "courtyard", "staircase", "basement",
    "pantry", "studio", "gallery", "chapel", "monument", "windmill",
    "granary", "mill", "forge", "stable", "kennel", "aviary", "apiary",
    "observatory", "laboratory", "archive", "depot", "foundry", "shipyard",
    "cannery", "brewery", "distillery", "tannery", "quay", "esplanade",
    "promenade", "boulevard", "alley", "arcade", "atrium", "pavement",
    "terrace", "veranda", "portico", "rotunda", "gazebo", "bandstand",
    "kiosk", "newsstand", "tollbooth",
]


def fresh_concepts(count: int, taken: set[str]) -> list[str]:
    """Deterministic multi-word concepts, distinct from everything in `taken`."""
    out: list[str] = []
    i = 0
    while len(out) < count:
        mod = MODIFIERS[i % len(MODIFIERS)]
        base = BASES[(i // len(MODIFIERS)) % len(BASES)]
        suffix = i // (len(MODIFIERS) * len(BASES))
        name = f"{mod} {base}" if suffix == 0 else f"{mod} {base} {suffix}"
        i += 1
        if name in taken:
            continue
        taken.add(name)
        out.append(name)
    return out


def build_rskg() -> list[tuple[str, str, str]]:
    objects, relations = RSKG_OBJECTS, RSKG_RELATIONS
    assert len(objects) == len(set(objects)) == RSKG_TARGET[0], len(set(objects))
    assert len(relations) == len(set(relations)) == RSKG_TARGET[1]
    triplets: list[tuple[str, str, str]] = []
    seen: set[tuple[str, str, str]] = set()

    def push(h: str, r: str, t: str) -> None:
        row = (h, r, t)
        if row not in seen and h != t:
            seen.add(row)
            triplets.append(row)

    for h, r, t in RSKG_CURATED:
        assert h in objects and t in objects and r in relations, (h, r, t)
        push(h, r, t)

    # Cover every object, cycling the relation list.
    for i, obj in enumerate(objects):
        push(obj, relations[i % len(relations)], objects[(i + 1) % len(objects)])

    # Deterministic filler up to the triplet target.
    i = 0
    while len(triplets) < RSKG_TARGET[2]:
        h = objects[(i * 7 + 3) % len(objects)]
        r = relations[(i * 5 + 1) % len(relations)]
        t = objects[(i * 11 + 29) % len(objects)]
        i += 1
        push(h, r, t)
    return triplets


def build_conceptnet(rskg_objects: set[str]) -> list[tuple[str, str, str]]:
    taken = set(rskg_objects)
    triplets: list[tuple[str, str, str]] = []
    seen: set[tuple[str, str, str]] = set()

    def push(h: str, r: str, t: str) -> None:
        row = (h, r, t)
        assert row not in seen and h != t, row
        seen.add(row)
        triplets.append(row)

    for h, r, t in CONCEPTNET_CURATED_KEPT:
        assert h in rskg_objects or t in rskg_objects, (h, r, t)
        taken.add(h)
        taken.add(t)
        push(h, r, t)

    # Filler survivors: one domain anchor and one fresh concept each, so
    # every commonsense relation shows up among the kept rows.
    anchors = sorted(rskg_objects)
    fresh_for_kept = fresh_concepts(KEPT_ROWS - len(CONCEPTNET_CURATED_KEPT), taken)
    for i, fresh in enumerate(fresh_for_kept):
        anchor = anchors[i % len(anchors)]
        rel = CN_RELATIONS[i % len(CN_RELATIONS)]
        if i % 3 == 2:
            push(fresh, rel, anchor)
        else:
            push(anchor, rel, fresh)

    for h, r, t in CONCEPTNET_CURATED_DROPPED:
        assert h not in rskg_objects and t not in rskg_objects, (h, r, t)
        taken.add(h)
        taken.add(t)
        push(h, r, t)

    # Fresh off-domain concepts to reach the object target, then connect
    # them in a pair chain so each appears in at least one row.
    current_objects = {x for row in triplets for x in (row[0], row[2])}
    pool = fresh_concepts(CONCEPTNET_TARGET[0] - len(current_objects), taken)
    for i in range(0, len(pool) - 1, 2):
        push(pool[i], CN_RELATIONS[i % 15], pool[i + 1])
    if len(pool) % 2:
        push(pool[-1], "IsA", pool[0])

    # Off-domain filler rows up to the triplet target.
    i = 0
    while len(triplets) < CONCEPTNET_TARGET[2]:
        h = pool[(i * 13 + 5) % len(pool)]
        t = pool[(i * 17 + 41) % len(pool)]
        r = CN_RELATIONS[(i * 3 + 2) % 15]
        i += 1
        if h != t and (h, r, t) not in seen:
            push(h, r, t)
    return triplets


def write_tsv(path: Path, rows, header: str, extra=()) -> None:
    lines = [f"# {header}"]
    for h, r, t in rows:
        lines.append(f"{h.replace(' ', '_')}\t{r}\t{t.replace(' ', '_')}")
    for h, r, t in extra:
        lines.append(f"{h}\t{r}\t{t}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def main() -> None:
    rskg_rows = build_rskg()
    write_tsv(DATA_DIR / "rskg.tsv", rskg_rows, "domain knowledge graph snapshot")
    rskg = load_graph(DATA_DIR / "rskg.tsv", SOURCE_RSKG)
    assert graph_stats(rskg) == RSKG_TARGET, graph_stats(rskg)

    cn_rows = build_conceptnet(rskg.objects)
    write_tsv(
        DATA_DIR / "conceptnet.tsv",
        cn_rows,
        "commonsense knowledge snapshot (15 relations)",
        extra=NON_ASCII_ROWS,
    )
    conceptnet = load_graph(
        DATA_DIR / "conceptnet.tsv", SOURCE_CONCEPTNET, allowed_relations=CONCEPTNET_RELATIONS
    )
    assert graph_stats(conceptnet) == CONCEPTNET_TARGET, graph_stats(conceptnet)

    combined = combine_sources(rskg, conceptnet)
    stats = graph_stats(combined)
    assert stats[1] == COMBINED_RELATIONS and stats[2] == COMBINED_TRIPLETS, stats
    print(f"rskg:       {graph_stats(rskg)}")
    print(f"conceptnet: {graph_stats(conceptnet)}")
    print(f"combined:   {stats}")


if __name__ == "__main__":
    main()
