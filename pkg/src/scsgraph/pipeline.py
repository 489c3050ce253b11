"""In-memory pipeline stages shared by the CLI, scripts and acceptance tests."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field

import torch

from .config import ConfigError, PipelineConfig
from .corpus import (InteractionRecord, ItemRecord, LoadReport, SplitDataset, build_purchase_sequences,
                     build_scs_split, load_corpus)
from .graphs import BipartiteGraph, build_graph, build_review_graph
from .inference import Recommendation, embed_with_scs, recommend_all
from .metrics import CorrelationResult, EvalReport, correlation_report, evaluate_rankings
from .model import EmbeddingTable, PretrainModel
from .text import SentimentLexicon, default_lexicon, extract_attributes, extract_review_terms, \
    filter_review_terms, load_lexicon
from .text_encoder import TextEncoder, make_encoder
from .trainer import PretrainData, TrainResult, train

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    items: list[ItemRecord]
    interactions: list[InteractionRecord]
    attributes: dict[str, list[str]]
    split: SplitDataset
    review_terms: dict[str, list[list[str]]]
    kept_terms: list[str]
    load_report: LoadReport = field(default_factory=LoadReport)

    def interactions_of(self, rows) -> list[InteractionRecord]:
        return [self.interactions[r] for r in rows]


def lexicon_for(config: PipelineConfig) -> SentimentLexicon:
    p = config.paths
    if p.positive_lexicon or p.negative_lexicon:
        if not (p.positive_lexicon and p.negative_lexicon):
            raise ValueError("both positive_lexicon and negative_lexicon must be given")
        return load_lexicon(p.positive_lexicon, p.negative_lexicon)
    return default_lexicon()


def preprocess(config: PipelineConfig, lexicon: SentimentLexicon | None = None) -> Prepared:
    lexicon = lexicon or lexicon_for(config)
    items, inters, report = load_corpus(config.paths.items, config.paths.interactions, config.schema)
    ex = config.extraction
    attributes = {
        it.item_id: [a.text for a in extract_attributes(it.contents, ex.short_fields, ex.long_fields)]
        for it in items
    }
    sc = config.split
    split = build_scs_split(items, inters, lambda it: attributes[it.item_id],
                            min_user_inter=sc.min_user_inter, min_item_inter=sc.min_item_inter,
                            min_attrs=sc.min_attrs, split_ratio=sc.split_ratio, val_frac=sc.val_frac,
                            val_mode=sc.val_mode)

    review_terms: dict[str, list[list[str]]] = defaultdict(list)
    for r in split.train:
        x = inters[r]
        if x.review_text:
            terms = list(dict.fromkeys(t.text for t in extract_review_terms(x.review_text, lexicon,
                                                                            ex.review_window)))
            review_terms[x.item_id].append(terms)
    doc_freq: dict[str, int] = defaultdict(int)
    for terms_per_review in review_terms.values():
        for t in {t for terms in terms_per_review for t in terms}:
            doc_freq[t] += 1
    kept = filter_review_terms(doc_freq, len(split.train_items), ex.term_min_items, ex.term_max_item_frac)
    if not kept:
        log.warning("no review terms survive the frequency filter; the review task is disabled")
    train_set = set(split.train_items)
    attributes = {i: a for i, a in attributes.items() if i in train_set or i in set(split.val_items)
                  or i in set(split.test_items)}
    return Prepared(items, inters, attributes, split, dict(review_terms), sorted(kept), report)


def build_graphs(prep: Prepared, config: PipelineConfig):
    """Item-attribute graph, item-review-term graph (or ``None``) and purchase sequences."""
    train_items = prep.split.train_items
    graph1 = build_graph({i: prep.attributes[i] for i in train_items})
    graph3 = None
    if prep.kept_terms:
        graph3 = build_review_graph({i: prep.review_terms.get(i, []) for i in train_items},
                                    prep.kept_terms, config.extraction.reviews_per_item,
                                    seed=config.train.seed)
        if graph3.n_edges == 0:
            graph3 = None
    sequences = build_purchase_sequences(prep.interactions_of(prep.split.train), config.split.max_seq_len)
    return graph1, graph3, sequences


def pretrain_data(graph1, graph3, sequences, encoder: TextEncoder, config: PipelineConfig) -> PretrainData:
    return PretrainData.build(graph1, graph3, sequences, encoder, config.split.max_seq_len)


def pretrain(data: PretrainData, config: PipelineConfig, **kwargs) -> TrainResult:
    return train(data, config.train, config.model, **kwargs)


def untrained_model(config: PipelineConfig) -> PretrainModel:
    return PretrainModel.initialized(config.model, seed=config.train.seed)


def user_histories(prep: Prepared) -> dict[str, list[str]]:
    hist: dict[str, list[str]] = defaultdict(list)
    for x in prep.interactions_of(prep.split.train):
        hist[x.user_id].append(x.item_id)
    return dict(hist)


def test_relevance(prep: Prepared) -> dict[str, set[str]]:
    rel: dict[str, set[str]] = defaultdict(set)
    for x in prep.interactions_of(prep.split.test):
        rel[x.user_id].add(x.item_id)
    return dict(rel)


@torch.no_grad()
def scs_embeddings(model: PretrainModel, prep: Prepared, graph1: BipartiteGraph,
                   encoder: TextEncoder) -> tuple[BipartiteGraph, EmbeddingTable]:
    new = {i: prep.attributes[i] for i in prep.split.test_items}
    return embed_with_scs(graph1, new, model, encoder)


def evaluate(model: PretrainModel, prep: Prepared, graph1: BipartiteGraph, encoder: TextEncoder,
             ns=(5, 20, 40)) -> tuple[EvalReport, list[Recommendation]]:
    """Rank the test (SCS) items for every user with test interactions."""
    _, table = scs_embeddings(model, prep, graph1, encoder)
    rel = test_relevance(prep)
    hist = user_histories(prep)
    users = {u: hist[u] for u in rel if u in hist}
    candidates = table.subset(prep.split.test_items)
    recs = recommend_all(users, table, candidates, k=max(ns))
    report = evaluate_rankings({r.user_id: r.items for r in recs}, rel, ns)
    return report, recs


def analyze(model: PretrainModel, prep: Prepared, graph1: BipartiteGraph, encoder: TextEncoder,
            config: PipelineConfig, filters=("all", "scs-existing", "scs-scs")) -> list[CorrelationResult]:
    _, table = scs_embeddings(model, prep, graph1, encoder)
    attr_sets = {i: set(prep.attributes[i]) for i in list(graph1.left_ids) + list(prep.split.test_items)}
    ec = config.eval
    return [correlation_report(table, attr_sets, list(graph1.left_ids), list(prep.split.test_items), f,
                               ec.significance, ec.n_permutations, ec.max_pairs, seed=config.train.seed)
            for f in filters]


def encoder_for(config: PipelineConfig) -> TextEncoder:
    enc = make_encoder(config.encoder, config.model.d_text)
    dim = getattr(enc, "dim", config.model.d_text)
    if dim != config.model.d_text:
        raise ConfigError(f"encoder produces {dim}-dim vectors but model.d_text is {config.model.d_text}")
    return enc
