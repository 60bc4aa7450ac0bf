"""End-to-end training and evaluation pipelines.

Wires the pieces together: dataset + knowledge graph -> vocabulary ->
per-caption knowledge sentences -> batched contrastive/matching training
with momentum soft targets -> checkpoints, CSV log, and rank metrics.
"""
from __future__ import annotations

import csv
import json
import random
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Iterable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .checkpoint import load_tensors, save_tensors
from .evaluation import (
    RetrievalMetrics,
    compute_metrics,
    export_similarity_csv,
    final_scores,
    matching_scores,
    similarity_scores,
)
from .kg import (
    CONCEPTNET_RELATIONS,
    SOURCE_CONCEPTNET,
    SOURCE_RSKG,
    KnowledgeGraph,
    combine_sources,
    load_graph,
)
from .losses import LossConfig, contrastive_loss, itm_loss, sample_hard_negatives, total_loss
from .model import (
    FUSION_NO_KNOWLEDGE,
    EncoderConfig,
    encode_images,
    encode_multimodal_batch,
    init_params,
    match_head,
    momentum_update,
    tau,
    text_features,
)
from .optim import LrSchedule, OptimizerState, adamw_step, cosine_lr, zero_grads
from .synthdata import SENTENCES_PER_IMAGE, DatasetManifest, read_dataset
from .text import (
    RandomSelection,
    TextSample,
    Vocabulary,
    build_knowledge_sentence,
    build_vocabulary,
    encode_tokens,
    extract_keywords,
    load_noun_lexicon,
    load_plural_exceptions,
    load_vocab_tokens,
    parse_strategy,
    retrieve_triplets,
    save_vocab,
    select_triplets,
    vocab_from_tokens,
)

KNOWLEDGE_SOURCES = ("rskg", "conceptnet", "combined", "none")


class TrainingDiverged(RuntimeError):
    """The total loss stopped being finite."""


@dataclass
class RunConfig:
    data_dir: str = "dataset"
    out_dir: str = "run"
    kg_path: str | None = None  # domain graph TSV; defaults to the shipped one
    conceptnet_path: str | None = None  # commonsense TSV; defaults to the shipped one
    knowledge_source: str = "combined"
    m: int = 5
    strategy: str = "random"
    w1: float = 1.0
    w2: float = 1.0
    soft_label_mix: float = 0.4
    hard_negative: bool = True
    momentum_coefficient: float = 0.995
    epochs: int = 10
    batch_size: int = 16
    lr: float = 1e-3
    min_lr: float = 0.0
    weight_decay: float = 0.05
    seed: int = 0
    top_k: int = 0  # 0 = score every pair with the matching head
    export_sim: bool = False

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if self.knowledge_source not in KNOWLEDGE_SOURCES:
            raise ValueError(f"unknown knowledge source {self.knowledge_source!r}")
        if self.w2 > 0 and self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 when the matching loss is active")

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _coerce(field_type: str, raw: str):
    if raw == "None":
        return None
    if "bool" in field_type:
        return raw == "True"
    if "int" in field_type:
        return int(raw)
    if "float" in field_type:
        return float(raw)
    return raw


def run_config_from_dict(d: dict[str, str]) -> RunConfig:
    kwargs = {}
    for f in fields(RunConfig):
        if f.name in d:
            raw = d[f.name]
            kwargs[f.name] = _coerce(str(f.type), raw) if isinstance(raw, str) else raw
    return RunConfig(**kwargs)


def save_config(path, run: RunConfig, enc: EncoderConfig) -> None:
    lines = [f"{k}={v}" for k, v in run.to_dict().items()]
    lines += [f"{k}={v}" for k, v in enc.to_dict().items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_config(path) -> tuple[RunConfig, EncoderConfig]:
    raw: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        raw[key.strip()] = value.strip()
    enc_fields = {f.name for f in fields(EncoderConfig)}
    enc = EncoderConfig.from_dict({k: v for k, v in raw.items() if k in enc_fields})
    run = run_config_from_dict({k: v for k, v in raw.items() if k not in enc_fields})
    return run, enc


# -- packaged resources ---------------------------------------------------------


def packaged_data(name: str) -> Path:
    return Path(str(resources.files("kgretrieval").joinpath("data", name)))


def load_knowledge_graph(run: RunConfig) -> KnowledgeGraph | None:
    """Resolve the knowledge source to a loaded (possibly combined) graph."""
    if run.knowledge_source == "none":
        return None
    rskg_path = Path(run.kg_path) if run.kg_path else packaged_data("rskg.tsv")
    cn_path = Path(run.conceptnet_path) if run.conceptnet_path else packaged_data("conceptnet.tsv")
    if run.knowledge_source == "rskg":
        return load_graph(rskg_path, SOURCE_RSKG)
    if run.knowledge_source == "conceptnet":
        return load_graph(cn_path, SOURCE_CONCEPTNET, allowed_relations=CONCEPTNET_RELATIONS)
    rskg = load_graph(rskg_path, SOURCE_RSKG)
    conceptnet = load_graph(cn_path, SOURCE_CONCEPTNET, allowed_relations=CONCEPTNET_RELATIONS)
    return combine_sources(rskg, conceptnet)


def default_vocabulary(manifest: DatasetManifest, graph: KnowledgeGraph | None) -> Vocabulary:
    nouns = load_noun_lexicon(packaged_data("nouns.txt"))
    exceptions = load_plural_exceptions(packaged_data("plural_exceptions.tsv"))
    captions = [s for e in manifest.entries for s in e.sentences]
    return build_vocabulary(
        captions,
        noun_lexicon=nouns,
        plural_exceptions=exceptions,
        graphs=[graph] if graph is not None else [],
    )


# -- sample preparation -----------------------------------------------------------


@dataclass
class Corpus:
    """Eval/train view of one split: images plus per-caption samples."""

    image_names: list[str]
    pixels: np.ndarray  # (I, H, W, C)
    captions: list[str]  # len = I * SENTENCES_PER_IMAGE
    image_of_caption: np.ndarray  # (T,)


def split_corpus(manifest: DatasetManifest, images: dict[str, np.ndarray], split: str) -> Corpus:
    entries = [e for e in manifest.entries if e.split == split]
    names = [e.filename for e in entries]
    pixels = np.stack([images[n] for n in names]) if entries else np.zeros((0, 0, 0, 0))
    captions = [s for e in entries for s in e.sentences]
    image_of = np.repeat(np.arange(len(entries)), SENTENCES_PER_IMAGE)
    return Corpus(names, pixels, captions, image_of)


class KnowledgePipeline:
    """Caption -> keywords -> selected triplets -> token id streams.

    Selection is deterministic per (seed, caption key); passing an epoch
    resamples the random strategy once per epoch while leaving the other
    strategies frozen.
    """

    def __init__(self, graph: KnowledgeGraph | None, vocab: Vocabulary, run: RunConfig, cfg: EncoderConfig):
        self.graph = graph if cfg.fusion_mode != FUSION_NO_KNOWLEDGE else None
        self.vocab = vocab
        self.cfg = cfg
        self.m = run.m
        self.strategy = parse_strategy(run.strategy, run.seed)
        self._keyword_cache: dict[str, tuple[list[str], list] ] = {}

    def _candidates(self, caption: str):
        hit = self._keyword_cache.get(caption)
        if hit is None:
            keywords = extract_keywords(caption, self.vocab)
            cands = retrieve_triplets(keywords, self.graph) if self.graph is not None else []
            hit = (keywords, cands)
            self._keyword_cache[caption] = hit
        return hit

    def sample(self, caption: str, caption_key: int, epoch: int | None = None) -> TextSample:
        keywords, candidates = self._candidates(caption)
        key = caption_key
        if epoch is not None and isinstance(self.strategy, RandomSelection):
            key = caption_key * 7919 + epoch + 1
        triplets = select_triplets(candidates, self.m, self.strategy, caption, key)
        sentence = build_knowledge_sentence(triplets)
        return TextSample(
            caption=caption,
            keywords=keywords,
            triplets=triplets,
            knowledge_sentence=sentence,
            caption_ids=encode_tokens(caption, self.vocab, self.cfg.max_text_len),
            knowledge_ids=encode_tokens(sentence, self.vocab, self.cfg.max_text_len),
        )

    def id_arrays(self, captions: Iterable[str], keys: Iterable[int], epoch: int | None = None):
        samples = [self.sample(c, k, epoch) for c, k in zip(captions, keys)]
        cap = np.array([s.caption_ids for s in samples], dtype=np.intp)
        kwl = np.array([s.knowledge_ids for s in samples], dtype=np.intp)
        return cap, kwl


# -- training ----------------------------------------------------------------------


def train_run(run: RunConfig, cfg: EncoderConfig) -> dict:
    """Train on the corpus under ``run.data_dir`` and write run artifacts.

    Returns a summary dict with the log rows and output paths.
    """
    out_dir = Path(run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest, images = read_dataset(run.data_dir)
    graph = load_knowledge_graph(run)
    vocab = default_vocabulary(manifest, graph)
    pipeline = KnowledgePipeline(graph, vocab, run, cfg)
    loss_cfg = LossConfig(run.w1, run.w2, run.soft_label_mix, run.hard_negative)

    train_split = split_corpus(manifest, images, "train")
    n_images = len(train_split.image_names)
    if n_images < run.batch_size:
        raise ValueError("training split smaller than one batch")

    params, momentum = init_params(cfg, len(vocab), run.seed)
    opt = OptimizerState.for_params(params, weight_decay=run.weight_decay)
    steps_per_epoch = n_images // run.batch_size
    schedule = LrSchedule(run.lr, max(run.epochs * steps_per_epoch, 1), run.min_lr)
    rng = np.random.default_rng(run.seed)
    neg_rng = np.random.default_rng(run.seed + 1)

    log_rows: list[dict] = []
    step = 0
    log_path = out_dir / "train_log.csv"
    ckpt_path = out_dir / "checkpoint.ktir"
    with open(log_path, "w", newline="", encoding="utf-8") as log_file:
        writer = csv.DictWriter(log_file, fieldnames=["step", "lr", "L_con", "L_mat", "total", "tau"])
        writer.writeheader()
        for epoch in range(run.epochs):
            order = rng.permutation(n_images)
            caption_slot = rng.integers(0, SENTENCES_PER_IMAGE, size=n_images)
            for b in range(steps_per_epoch):
                idx = order[b * run.batch_size : (b + 1) * run.batch_size]
                cap_global = idx * SENTENCES_PER_IMAGE + caption_slot[idx]
                captions = [train_split.captions[g] for g in cap_global]
                cap_ids, kwl_ids = pipeline.id_arrays(captions, cap_global.tolist(), epoch=epoch)
                pixels = train_split.pixels[idx]

                lr_now = cosine_lr(schedule, step)
                f_img, img_tokens = encode_images(pixels, params, cfg)
                f_txt = text_features(cap_ids, kwl_ids, params, cfg)
                sims = ad.matmul(f_img, ad.transpose(f_txt, (1, 0)))
                with no_grad():
                    f_img_m, _ = encode_images(pixels, momentum, cfg)
                    f_txt_m = text_features(cap_ids, kwl_ids, momentum, cfg)
                    sims_m = f_img_m.data @ f_txt_m.data.T

                l_con = contrastive_loss(sims, sims_m, tau(params), loss_cfg.soft_label_mix)
                l_mat = None
                if loss_cfg.w2 > 0:
                    neg_text, neg_img = sample_hard_negatives(
                        sims.data, neg_rng, hard=loss_cfg.hard_negative
                    )
                    n = len(idx)
                    base = np.arange(n, dtype=np.intp)
                    text_order = np.concatenate([base, neg_text, base])
                    image_order = np.concatenate([base, base, neg_img])
                    f_multi = encode_multimodal_batch(
                        cap_ids[text_order],
                        kwl_ids[text_order],
                        ad.index_select(img_tokens, image_order, axis=0),
                        params,
                        cfg,
                    )
                    probs = match_head(f_multi, params)
                    l_mat = itm_loss(
                        ad.getitem(probs, slice(0, n)), ad.getitem(probs, slice(n, 3 * n))
                    )
                loss = total_loss(l_con, l_mat, loss_cfg)
                if not np.isfinite(loss.data):
                    raise TrainingDiverged(f"non-finite loss at step {step}")

                zero_grads(params)
                loss.backward()
                adamw_step(params, opt, lr_now)
                momentum_update(params, momentum, run.momentum_coefficient)

                step += 1
                row = {
                    "step": step,
                    "lr": f"{lr_now:.8g}",
                    "L_con": f"{float(l_con.data):.6f}",
                    "L_mat": "" if l_mat is None else f"{float(l_mat.data):.6f}",
                    "total": f"{float(loss.data):.6f}",
                    "tau": f"{float(tau(params).data):.6f}",
                }
                writer.writerow(row)
                log_rows.append(row)
            _save_checkpoint(ckpt_path, params, momentum)
    save_vocab(vocab, out_dir / "vocab.txt")
    save_config(out_dir / "config.cfg", run, cfg)
    return {
        "log": log_rows,
        "checkpoint": str(ckpt_path),
        "log_path": str(log_path),
        "steps": step,
    }


def _save_checkpoint(path, params: dict[str, Tensor], momentum: dict[str, Tensor]) -> None:
    named: dict[str, Tensor] = {f"online/{k}": v for k, v in params.items()}
    named.update({f"momentum/{k}": v for k, v in momentum.items()})
    save_tensors(path, named)


def load_checkpoint(path, cfg: EncoderConfig, vocab_size: int):
    """Rebuild (online, momentum) parameter dicts from a checkpoint file.

    Shapes are validated against a freshly constructed parameter set so a
    config/checkpoint mismatch fails loudly.
    """
    stored = load_tensors(path)
    params, momentum = init_params(cfg, vocab_size, seed=0)
    for name, p in params.items():
        arr = stored.get(f"online/{name}")
        if arr is None:
            raise KeyError(f"checkpoint missing tensor online/{name}")
        if arr.shape != p.data.shape:
            raise ad.ShapeMismatch(
                f"online/{name}: checkpoint has {arr.shape}, config needs {p.data.shape}"
            )
        p.data = arr
    for name, p in momentum.items():
        arr = stored.get(f"momentum/{name}")
        if arr is None:
            raise KeyError(f"checkpoint missing tensor momentum/{name}")
        if arr.shape != p.data.shape:
            raise ad.ShapeMismatch(
                f"momentum/{name}: checkpoint has {arr.shape}, config needs {p.data.shape}"
            )
        p.data = arr
    return params, momentum


# -- evaluation ---------------------------------------------------------------------


def evaluate_run(
    run: RunConfig,
    cfg: EncoderConfig,
    params: dict[str, Tensor],
    split: str = "test",
    graph: KnowledgeGraph | None = None,
    vocab: Vocabulary | None = None,
) -> dict:
    """Bidirectional retrieval over one split; returns metrics and matrices."""
    manifest, images = read_dataset(run.data_dir)
    if graph is None:
        graph = load_knowledge_graph(run)
    if vocab is None:
        vocab = default_vocabulary(manifest, graph)
    pipeline = KnowledgePipeline(graph, vocab, run, cfg)
    corpus = split_corpus(manifest, images, split)
    n_img = len(corpus.image_names)
    if n_img == 0:
        raise ValueError(f"split {split!r} is empty")

    cap_ids, kwl_ids = pipeline.id_arrays(corpus.captions, range(len(corpus.captions)))
    with no_grad():
        f_img, img_tokens = encode_images(corpus.pixels, params, cfg)
        f_txt = text_features(cap_ids, kwl_ids, params, cfg)
    s_sim = similarity_scores(f_txt.data, f_img.data)
    top_k = run.top_k if run.top_k > 0 else None
    s_mat = matching_scores(
        cap_ids, kwl_ids, img_tokens.data, params, cfg, top_k=top_k, sim=s_sim
    )
    scores = final_scores(s_sim, s_mat)

    t2i_truth = {t: {int(corpus.image_of_caption[t])} for t in range(len(corpus.captions))}
    i2t_truth = {
        i: set(range(i * SENTENCES_PER_IMAGE, (i + 1) * SENTENCES_PER_IMAGE)) for i in range(n_img)
    }
    metrics = compute_metrics(scores, t2i_truth, i2t_truth)
    return {
        "metrics": metrics,
        "scores": scores,
        "s_sim": s_sim,
        "s_mat": s_mat,
        "corpus": corpus,
    }


def export_eval_artifacts(result: dict, out_dir, run: RunConfig) -> list[str]:
    """Write metrics JSON (always) and similarity CSVs (when requested)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    metrics: RetrievalMetrics = result["metrics"]
    metrics_path = out_dir / "metrics.json"
    metrics_path.write_text(metrics.to_json() + "\n", encoding="utf-8")
    written.append(str(metrics_path))
    if run.export_sim:
        corpus: Corpus = result["corpus"]
        text_labels = [f"text_{i}" for i in range(len(corpus.captions))]
        sim_path = out_dir / "similarity.csv"
        export_similarity_csv(result["s_sim"], text_labels, corpus.image_names, sim_path)
        written.append(str(sim_path))
        pairs_path = out_dir / "similarity_pairs.csv"
        n = min(21, len(corpus.image_names))
        rows = [i * SENTENCES_PER_IMAGE for i in range(n)]
        sub = result["s_sim"][np.ix_(rows, range(n))]
        export_similarity_csv(
            sub, [text_labels[r] for r in rows], corpus.image_names[:n], pairs_path
        )
        written.append(str(pairs_path))
    return written


# -- knowledge extraction dump ---------------------------------------------------


def extract_corpus(run: RunConfig, cfg: EncoderConfig, out_path) -> int:
    """Write one JSONL record per caption with its knowledge expansion."""
    manifest, _ = read_dataset(run.data_dir)
    graph = load_knowledge_graph(run)
    vocab = default_vocabulary(manifest, graph)
    pipeline = KnowledgePipeline(graph, vocab, run, cfg)
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with open(out_path, "w", encoding="utf-8") as fh:
        key = 0
        for entry in manifest.entries:
            for slot, caption in enumerate(entry.sentences):
                sample = pipeline.sample(caption, key)
                record = {
                    "image": entry.filename,
                    "split": entry.split,
                    "caption_index": slot,
                    "caption": caption,
                    "keywords": sample.keywords,
                    "triplets": [[t.head, t.relation, t.tail, t.source] for t in sample.triplets],
                    "knowledge_sentence": sample.knowledge_sentence,
                }
                fh.write(json.dumps(record) + "\n")
                key += 1
                count += 1
    return count
