"""End-to-end wiring: corpus -> instances -> silver queries -> model -> report."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .baselines import FormulationConfig, formulate_baseline_query
from .corpus import Corpus, Instance, MiningResult, mine_instances, temporal_split, trim_item_outliers
from .evaluation import RunReport, evaluate_run
from .features import (
    CollectionStats, EncodedMessage, LexiconTagger, Tagger, Vocabulary, build_collection_stats, encode_message,
)
from .neural import (
    ModelConfig, PointwiseModel, TermRankingModel, TrainingConfig, TrainingPair,
    formulate_query_cnn, formulate_query_pointwise, train,
)
from .retrieval import Index, build_mailbox_index
from .silver import DEFAULT_K, SilverQuerySet, synthesize_all

log = logging.getLogger(__name__)


class Collection:
    """A parsed corpus plus everything derived from it that is reused across stages."""

    def __init__(self, corpus: Corpus, tagger: Tagger | None = None, trim_fraction: float = 0.05,
                 exclude_from_index: set[str] | None = None):
        self.corpus = corpus
        self.tagger = tagger or LexiconTagger()
        self.retained = trim_item_outliers(corpus, trim_fraction)
        self.mining: MiningResult = mine_instances(corpus, self.retained)
        self.instances: list[Instance] = self.mining.instances
        self.stats: CollectionStats = build_collection_stats(corpus)
        self.exclude_from_index = exclude_from_index or set()
        self._indices: dict[str, Index] = {}
        self._encoded: dict[tuple[str, str], EncodedMessage] = {}

    def index(self, user: str) -> Index:
        if user not in self._indices:
            self._indices[user] = build_mailbox_index(self.corpus, user, self.retained,
                                                      exclude=self.exclude_from_index)
        return self._indices[user]

    def index_for(self, instance: Instance) -> Index:
        return self.index(instance.replier)

    def encode(self, message_id: str, vocab: Vocabulary) -> EncodedMessage:
        key = (message_id, vocab.digest())
        if key not in self._encoded:
            self._encoded[key] = encode_message(self.corpus[message_id], self.stats, vocab, self.tagger)
        return self._encoded[key]

    def silver(self, instances: Sequence[Instance] | None = None, k: int = DEFAULT_K,
               seed: int = 0) -> list[SilverQuerySet]:
        return synthesize_all(self.corpus, list(instances or self.instances), self.index, k=k, seed=seed)


def training_pairs(coll: Collection, silver_sets: Sequence[SilverQuerySet],
                   vocab: Vocabulary) -> list[TrainingPair]:
    by_id = {i.instance_id: i for i in coll.instances}
    pairs = []
    for qs in silver_sets:
        enc = coll.encode(by_id[qs.instance_id].request, vocab)
        for j, q in enumerate(qs.queries):
            pairs.append(TrainingPair(f"{qs.instance_id}|{qs.item_id}|{j}", enc, q.terms, q.score))
    return pairs


def best_silver_scores(instances: Sequence[Instance], silver_sets: Sequence[SilverQuerySet]) -> dict[str, float]:
    """Best silver RR per instance (max over its items; 0 when nothing scored)."""
    best = {i.instance_id: 0.0 for i in instances}
    for qs in silver_sets:
        if qs.instance_id in best:
            best[qs.instance_id] = max(best[qs.instance_id], qs.best_score())
    return best


def cnn_formulator(model: TermRankingModel, coll: Collection, vocab: Vocabulary) -> Callable[[Instance], list[str]]:
    return lambda inst: formulate_query_cnn(model, coll.encode(inst.request, vocab))


def pointwise_formulator(model: PointwiseModel, coll: Collection, vocab: Vocabulary) -> Callable[[Instance], list[str]]:
    return lambda inst: formulate_query_pointwise(model, coll.encode(inst.request, vocab))


def baseline_formulator(config: FormulationConfig, coll: Collection) -> Callable[[Instance], list[str]]:
    return lambda inst: formulate_baseline_query(coll.corpus[inst.request], config, coll.stats,
                                                 instance_key=inst.instance_id)


def silver_formulator(silver_sets: Sequence[SilverQuerySet]) -> Callable[[Instance], list[str]]:
    """Oracle formulator returning the best retained silver query of the instance."""
    best: dict[str, tuple[float, list[str]]] = {}
    for qs in silver_sets:
        for q in qs.queries:
            cur = best.get(qs.instance_id)
            if cur is None or q.score > cur[0]:
                best[qs.instance_id] = (q.score, q.sorted_terms())
    return lambda inst: best.get(inst.instance_id, (0.0, []))[1]


@dataclass
class SplitData:
    train: list[Instance]
    validation: list[Instance]
    test: list[Instance]


def split_instances(instances: Sequence[Instance], test_fraction: float = 0.25,
                    validation_fraction: float = 0.05) -> SplitData:
    """Temporal split: earliest instances train, the latest are held out for testing.

    The training part is split again 95/5 in time for validation.
    """
    dev, test = temporal_split(list(instances), 1.0 - test_fraction)
    train_part, val = temporal_split(dev, 1.0 - validation_fraction)
    if not val and train_part:
        val = [train_part.pop()]
    return SplitData(train_part, val, test)


@dataclass
class ExperimentResult:
    report: RunReport
    model: TermRankingModel
    silver_sets: list[SilverQuerySet]
    split: SplitData
    mean_best_silver_rr: float
    test_best_silver_rr: float
    extras: dict = field(default_factory=dict)


def run_experiment(coll: Collection, model_config: ModelConfig, training_config: TrainingConfig,
                   k: int = DEFAULT_K, silver_seed: int = 0, test_fraction: float = 0.25,
                   baselines: Sequence[FormulationConfig] = (FormulationConfig("full", "both"),),
                   test_coll: Collection | None = None, vocab_size: int | None = None,
                   progress=None) -> ExperimentResult:
    """Silver synthesis, training and evaluation on one collection.

    With ``test_coll`` the model is trained on all of ``coll`` (split 95/5 in
    time for validation) and tested on every instance of ``test_coll``.
    """
    silver_sets = coll.silver(k=k, seed=silver_seed)
    best = best_silver_scores(coll.instances, silver_sets)
    if test_coll is None:
        split = split_instances(coll.instances, test_fraction)
        tcoll = coll
    else:
        train_part, val = temporal_split(coll.instances, 0.95)
        split = SplitData(train_part, val, list(test_coll.instances))
        tcoll = test_coll

    vocab = Vocabulary.from_stats(coll.stats) if vocab_size is None else Vocabulary.from_stats(coll.stats, vocab_size)
    mcfg = ModelConfig(**{**model_config.__dict__, "vocab_size": len(vocab)})
    ids_train = {i.instance_id for i in split.train}
    ids_val = {i.instance_id for i in split.validation}
    pairs_train = training_pairs(coll, [s for s in silver_sets if s.instance_id in ids_train], vocab)
    pairs_val = training_pairs(coll, [s for s in silver_sets if s.instance_id in ids_val], vocab)
    model = train(pairs_train, pairs_val, mcfg, training_config, vocab.terms, progress=progress)

    formulators = {"cnn": cnn_formulator(model, tcoll, vocab)}
    for cfg in baselines:
        formulators[cfg.name] = baseline_formulator(cfg, tcoll)
    report = evaluate_run(split.test, formulators, tcoll.index_for, reference="cnn")
    test_best = (float(np.mean([best[i.instance_id] for i in split.test]))
                 if test_coll is None and split.test else float("nan"))
    return ExperimentResult(
        report=report, model=model, silver_sets=silver_sets, split=split,
        mean_best_silver_rr=float(np.mean(list(best.values()))) if best else 0.0,
        test_best_silver_rr=test_best,
        extras={"n_train_pairs": len(pairs_train), "n_val_pairs": len(pairs_val)},
    )
