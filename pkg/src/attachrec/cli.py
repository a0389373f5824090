"""Command-line pipeline: ``attachrec <stage> --out DIR [--config FILE] [--seed N]``.

Stages read and write artifacts under ``--out``.  ``manifest.json`` records,
per stage, the hash of the configuration that produced it, the hashes of its
inputs and outputs, and a few counts.  A stage refuses to run until the
stages it depends on have been run.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import re
import sys
from pathlib import Path

from . import __version__
from .baselines import FormulationConfig
from .corpus import Instance, dump_corpus, load_corpus, mine_instances, trim_item_outliers
from .evaluation import ablation_run, evaluate_run, write_qrels, write_trec_run
from .features import Vocabulary
from .io import FormatError, dumps_json, read_jsonl, sha256_file, sha256_json, write_jsonl
from .neural import (
    ABLATIONS, ModelConfig, TrainingConfig, load_model, save_model, train, train_pointwise, with_ablation,
)
from .pipeline import (
    Collection, baseline_formulator, cnn_formulator, pointwise_formulator,
    SplitData, silver_formulator, split_instances, training_pairs,
)
from .retrieval import Index, build_mailbox_index
from .silver import SilverQuerySet
from .synthetic import SyntheticSpec, generate_synthetic_corpus

log = logging.getLogger("attachrec")

FORMAT_VERSION = 1

DEFAULT_CONFIG: dict = {
    "format_version": FORMAT_VERSION,
    "paths": {"corpus": None},
    "synth": {},
    "ingest": {"trim_fraction": 0.05},
    "silver": {"k": 10, "seed": 0},
    # test_workspace: another workspace (ingest, index and mine done) to test on;
    # when set, this corpus is used only for training and validation
    "split": {"test_fraction": 0.25, "test_workspace": None},
    "model": {"context_width": 3, "embedding_dim": 128, "hidden_dims": [512, 512], "dropout": 0.5},
    "training": {"learning_rate": 1e-5, "epochs": 30, "batch_size": 128, "reg_lambda": 0.1,
                 "reg_coef": None, "alpha_eor": 0.95, "seed": 0},
    "train": {"variants": ["cnn"], "vocab_size": 60_000},
    "formulate": {"methods": ["cnn", {"method": "full", "field": "both"}]},
    "evaluate": {"reference": "cnn"},
    "ablate": {"categories": ["message", "collection", "pos", "term", "context"]},
}

# stage -> stages that must have run before it
REQUIRES = {
    "synth": (),
    "ingest": (),
    "index": ("ingest",),
    "mine": ("ingest",),
    "silver": ("index", "mine"),
    "train": ("silver",),
    "formulate": ("index", "mine", "train"),
    "evaluate": ("index", "mine", "formulate"),
    "export-run": ("evaluate",),
    "ablate": ("silver",),
}
# config sections that determine a stage's output
SECTIONS = {
    "synth": ("synth",),
    "ingest": ("paths", "ingest"),
    "index": (),
    "mine": (),
    "silver": ("silver",),
    "train": ("split", "model", "training", "train"),
    "formulate": ("split", "formulate"),
    "evaluate": ("evaluate",),
    "export-run": (),
    "ablate": ("split", "model", "training", "train", "ablate"),
}


class ValidationError(Exception):
    """Bad configuration, missing upstream artifact or version mismatch (exit 1)."""


# ---------------------------------------------------------------------------
# configuration and manifest


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


def load_config(path: str | None, overrides: list[str] = ()) -> dict:
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        try:
            with open(path, encoding="utf-8") as fh:
                user = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(user, dict):
            raise ValidationError("config must be a JSON object")
        cfg = _merge(cfg, user)
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or "." not in key:
            raise ValidationError(f"--set expects section.key=value, got {item!r}")
        section, name = key.split(".", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        cfg.setdefault(section, {})[name] = value
    if cfg.get("format_version") != FORMAT_VERSION:
        raise ValidationError(
            f"config format version {cfg.get('format_version')} does not match {FORMAT_VERSION}")
    return cfg


class Workspace:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.manifest_path = self.root / "manifest.json"
        self.manifest = {"format_version": FORMAT_VERSION, "stages": {}}
        if self.manifest_path.exists():
            self.manifest = json.loads(self.manifest_path.read_text(encoding="utf-8"))
            if self.manifest.get("format_version") != FORMAT_VERSION:
                raise ValidationError(
                    f"artifacts in {self.root} have format version {self.manifest.get('format_version')}, "
                    f"expected {FORMAT_VERSION}")

    def path(self, name: str) -> Path:
        return self.root / name

    def require(self, stage: str) -> None:
        for dep in REQUIRES[stage]:
            if dep not in self.manifest["stages"]:
                raise ValidationError(f"run {dep} first")

    def config_hash(self, stage: str, cfg: dict) -> str:
        upstream = {dep: self.manifest["stages"][dep]["config_hash"] for dep in REQUIRES[stage]}
        return sha256_json({"stage": stage, "config": {s: cfg.get(s) for s in SECTIONS[stage]},
                            "upstream": upstream})

    def record(self, stage: str, cfg: dict, inputs: list[Path], outputs: list[Path], **extra) -> None:
        def hashes(paths):
            return {p.relative_to(self.root).as_posix() if p.is_relative_to(self.root) else str(p): sha256_file(p)
                    for p in sorted(paths)}
        self.manifest["stages"][stage] = {
            "config_hash": self.config_hash(stage, cfg),
            "inputs": hashes(inputs),
            "outputs": hashes(outputs),
            **extra,
        }
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest_path.write_text(dumps_json(self.manifest) + "\n", encoding="utf-8")


def _user_file(user: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", user) + ".idx"


# ---------------------------------------------------------------------------
# loading state written by earlier stages


def _load_collection(ws: Workspace, cfg: dict) -> Collection:
    corpus = load_corpus(ws.path("corpus.jsonl"))
    coll = Collection(corpus, trim_fraction=cfg["ingest"]["trim_fraction"])
    if "mine" in ws.manifest["stages"]:
        coll.instances = [Instance.from_record(r) for r in read_jsonl(ws.path("instances.jsonl"))]
    if "index" in ws.manifest["stages"]:
        users = json.loads(ws.path("index/users.json").read_text(encoding="utf-8"))
        coll._indices = {u: Index.load(ws.path("index") / f) for u, f in users.items()}
    return coll


def _split(coll: Collection, cfg: dict) -> SplitData:
    # with a separate test corpus nothing is held out here
    fraction = 0.0 if cfg["split"].get("test_workspace") else cfg["split"]["test_fraction"]
    return split_instances(coll.instances, fraction)


def _test_side(ws: Workspace, cfg: dict) -> tuple[Workspace, Collection]:
    """Workspace and collection holding the test instances."""
    other = cfg["split"].get("test_workspace")
    if not other:
        coll = _load_collection(ws, cfg)
        return ws, coll
    tws = Workspace(other)
    for dep in ("ingest", "index", "mine"):
        if dep not in tws.manifest["stages"]:
            raise ValidationError(f"test workspace {other}: run {dep} first")
    return tws, _load_collection(tws, cfg)


def _test_instances(cfg: dict, coll: Collection) -> list[Instance]:
    if cfg["split"].get("test_workspace"):
        return list(coll.instances)
    return split_instances(coll.instances, cfg["split"]["test_fraction"]).test


def _load_silver(ws: Workspace) -> list[SilverQuerySet]:
    return [SilverQuerySet.from_record(r) for r in read_jsonl(ws.path("silver.jsonl"))]


def _model_config(cfg: dict, vocab: Vocabulary) -> ModelConfig:
    m = dict(cfg["model"])
    m["hidden_dims"] = tuple(m["hidden_dims"])
    m["ablate"] = tuple(m.get("ablate", ()))
    return ModelConfig(**m, vocab_size=len(vocab))


def _training_config(cfg: dict, seed: int | None) -> TrainingConfig:
    t = dict(cfg["training"])
    if seed is not None:
        t["seed"] = seed
    return TrainingConfig(**t)


def _formulation_configs(methods) -> list:
    out = []
    for m in methods:
        if isinstance(m, str):
            if m not in ("cnn", "cnn-p", "silver"):
                raise ValidationError(f"unknown method {m!r}")
            out.append(m)
        else:
            try:
                out.append(FormulationConfig(**m))
            except (TypeError, ValueError) as exc:
                raise ValidationError(f"bad formulation config {m}: {exc}") from exc
    return out


# ---------------------------------------------------------------------------
# stages


def stage_synth(ws: Workspace, cfg: dict, args) -> None:
    seed = args.seed if args.seed is not None else cfg["synth"].get("seed", 0)
    spec_fields = {k: v for k, v in cfg["synth"].items() if k != "seed"}
    try:
        spec = SyntheticSpec.from_dict(spec_fields)
    except TypeError as exc:
        raise ValidationError(f"bad synth section: {exc}") from exc
    corpus = generate_synthetic_corpus(spec, seed)
    out = ws.path("synthetic.jsonl")
    dump_corpus(corpus, out)
    ws.record("synth", cfg, [], [out], messages=len(corpus.messages), seed=seed)


def stage_ingest(ws: Workspace, cfg: dict, args) -> None:
    src = args.corpus or cfg["paths"].get("corpus") or ws.path("synthetic.jsonl")
    src = Path(src)
    if not src.exists():
        raise ValidationError(f"corpus {src} not found (run synth first or pass --corpus)")
    corpus = load_corpus(src)
    fraction = cfg["ingest"]["trim_fraction"]
    retained = trim_item_outliers(corpus, fraction)
    freq = corpus.item_frequencies()
    out_corpus, out_items = ws.path("corpus.jsonl"), ws.path("items.jsonl")
    dump_corpus(corpus, out_corpus)
    write_jsonl(out_items, ({"item_id": iid, "kind": corpus.items[iid].kind, "frequency": freq.get(iid, 0),
                             "retained": iid in retained} for iid in sorted(corpus.items)))
    ws.record("ingest", cfg, [src], [out_corpus, out_items], messages=len(corpus.messages),
              items=len(corpus.items), retained_items=len(retained))


def stage_index(ws: Workspace, cfg: dict, args) -> None:
    corpus = load_corpus(ws.path("corpus.jsonl"))
    retained = {r["item_id"] for r in read_jsonl(ws.path("items.jsonl")) if r["retained"]}
    idx_dir = ws.path("index")
    idx_dir.mkdir(parents=True, exist_ok=True)
    users, outputs = {}, []
    for user in sorted(corpus.mailboxes):
        index = build_mailbox_index(corpus, user, retained)
        name = _user_file(user)
        index.save(idx_dir / name)
        users[user] = name
        outputs.append(idx_dir / name)
    (idx_dir / "users.json").write_text(dumps_json(users) + "\n", encoding="utf-8")
    outputs.append(idx_dir / "users.json")
    ws.record("index", cfg, [ws.path("corpus.jsonl"), ws.path("items.jsonl")], outputs, mailboxes=len(users))


def stage_mine(ws: Workspace, cfg: dict, args) -> None:
    corpus = load_corpus(ws.path("corpus.jsonl"))
    retained = {r["item_id"] for r in read_jsonl(ws.path("items.jsonl")) if r["retained"]}
    result = mine_instances(corpus, retained)
    out_inst, out_stats = ws.path("instances.jsonl"), ws.path("mining.json")
    write_jsonl(out_inst, (i.to_record() for i in result.instances))
    out_stats.write_text(dumps_json({"counts": result.counts()}) + "\n", encoding="utf-8")
    ws.record("mine", cfg, [ws.path("corpus.jsonl"), ws.path("items.jsonl")], [out_inst, out_stats],
              instances=len(result.instances))


def stage_silver(ws: Workspace, cfg: dict, args) -> None:
    k = args.k if getattr(args, "k", None) is not None else cfg["silver"]["k"]
    seed = args.seed if args.seed is not None else cfg["silver"]["seed"]
    cfg["silver"] = {**cfg["silver"], "k": k, "seed": seed}
    coll = _load_collection(ws, cfg)
    try:
        sets = coll.silver(k=k, seed=seed)
    except ValueError as exc:
        raise ValidationError(str(exc)) from exc
    out = ws.path("silver.jsonl")
    write_jsonl(out, (s.to_record() for s in sets))
    ws.record("silver", cfg, [ws.path("instances.jsonl")], [out], query_sets=len(sets),
              scored_candidates=sum(s.scored_candidates for s in sets),
              max_scored_candidates=max((s.scored_candidates for s in sets), default=0),
              retained_queries=sum(len(s.queries) for s in sets))


def _train_models(coll: Collection, silver: list[SilverQuerySet], cfg: dict, seed: int | None,
                  variants, ablate: tuple[str, ...] = ()):
    split = _split(coll, cfg)
    vocab = Vocabulary.from_stats(coll.stats, cfg["train"]["vocab_size"])
    mcfg = _model_config(cfg, vocab)
    for cat in ablate:
        mcfg = with_ablation(mcfg, cat)
    tcfg = _training_config(cfg, seed)
    ids_train = {i.instance_id for i in split.train}
    ids_val = {i.instance_id for i in split.validation}
    pairs_train = training_pairs(coll, [s for s in silver if s.instance_id in ids_train], vocab)
    pairs_val = training_pairs(coll, [s for s in silver if s.instance_id in ids_val], vocab)

    def progress(epoch, tr, va):
        log.info("epoch %d train %.5f val %.5f", epoch, tr, va)

    models = {}
    for variant in variants:
        fit = {"cnn": train, "cnn-p": train_pointwise}[variant]
        models[variant] = fit(pairs_train, pairs_val, mcfg, tcfg, vocab.terms, progress=progress)
    return models, vocab, split


def stage_train(ws: Workspace, cfg: dict, args) -> None:
    for flag, key in (("epochs", "epochs"), ("lr", "learning_rate"), ("reg_coef", "reg_coef")):
        if getattr(args, flag, None) is not None:
            cfg["training"][key] = getattr(args, flag)
    if args.seed is not None:
        cfg["training"]["seed"] = args.seed
    variants = cfg["train"]["variants"]
    bad = [v for v in variants if v not in ("cnn", "cnn-p")]
    if bad:
        raise ValidationError(f"unknown model variants {bad}")
    coll = _load_collection(ws, cfg)
    models, _, split = _train_models(coll, _load_silver(ws), cfg, None, variants)
    outputs = []
    config_hash = ws.config_hash("train", cfg)
    for variant, model in models.items():
        model.metadata["config_hash"] = config_hash
        path = ws.path(f"model-{variant}.ckpt")
        save_model(model, path)
        outputs.append(path)
    ws.record("train", cfg, [ws.path("silver.jsonl"), ws.path("corpus.jsonl")], outputs,
              train_instances=len(split.train), validation_instances=len(split.validation),
              best_epoch={v: m.metadata["best_epoch"] for v, m in models.items()})


def _formulators(ws: Workspace, tws: Workspace, coll: Collection, methods) -> dict:
    """Formulators for the test instances in ``coll``; models come from ``ws``,
    silver queries from the test workspace ``tws``."""
    vocab = None
    out = {}
    for m in methods:
        if isinstance(m, FormulationConfig):
            out[m.name] = baseline_formulator(m, coll)
        elif m == "silver":
            if "silver" not in tws.manifest["stages"]:
                raise ValidationError(f"no silver queries in {tws.root}; run silver there first")
            out["silver"] = silver_formulator(_load_silver(tws))
        else:
            path = ws.path(f"model-{m}.ckpt")
            if not path.exists():
                raise ValidationError(f"no {m} checkpoint; add it to train.variants and run train first")
            model = load_model(path)
            vocab = Vocabulary(model.vocab_terms)
            out[m] = (cnn_formulator if m == "cnn" else pointwise_formulator)(model, coll, vocab)
    return out


def stage_formulate(ws: Workspace, cfg: dict, args) -> None:
    methods = _formulation_configs(cfg["formulate"]["methods"])
    tws, coll = _test_side(ws, cfg)
    test = _test_instances(cfg, coll)
    formulators = _formulators(ws, tws, coll, methods)
    rows = []
    for inst in sorted(test, key=lambda i: i.instance_id):
        for name, formulate in formulators.items():
            rows.append({"instance_id": inst.instance_id, "method": name, "query": formulate(inst)})
    out = ws.path("queries.jsonl")
    write_jsonl(out, rows)
    inputs = [tws.path("instances.jsonl")] + sorted(ws.root.glob("model-*.ckpt"))
    ws.record("formulate", cfg, inputs, [out], test_instances=len(test), methods=list(formulators))


def _evaluate_queries(ws: Workspace, cfg: dict):
    _, coll = _test_side(ws, cfg)
    queries: dict[str, dict[str, list[str]]] = {}
    for r in read_jsonl(ws.path("queries.jsonl")):
        queries.setdefault(r["method"], {})[r["instance_id"]] = r["query"]
    by_id = {i.instance_id: i for i in coll.instances}
    instances = [by_id[iid] for iid in sorted({iid for q in queries.values() for iid in q})]
    formulators = {m: (lambda inst, q=q: q[inst.instance_id]) for m, q in queries.items()}
    reference = cfg["evaluate"].get("reference")
    if reference not in queries:
        reference = None
    rankings: dict = {}
    report = evaluate_run(instances, formulators, coll.index_for, reference=reference, rankings=rankings)
    report.config = {"config_hash": ws.config_hash("evaluate", cfg)}
    return report, rankings, instances


def _write_runs(ws: Workspace, rankings: dict, instances) -> list[Path]:
    run_dir = ws.path("runs")
    run_dir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for method, per_inst in sorted(rankings.items()):
        path = run_dir / f"{method}.trec"
        write_trec_run(path, per_inst, method)
        outputs.append(path)
    qrels = run_dir / "qrels.txt"
    write_qrels(qrels, instances)
    outputs.append(qrels)
    return outputs


def stage_evaluate(ws: Workspace, cfg: dict, args) -> None:
    report, rankings, instances = _evaluate_queries(ws, cfg)
    out_report = ws.path("report.jsonl")
    report.write(out_report)
    outputs = [out_report, *_write_runs(ws, rankings, instances)]
    if report.reference:
        lines = ["instance_id\tmethod\trr_delta"]
        for m in report.methods():
            if m == report.reference:
                continue
            ids = [r.instance_id for r in report.rows_for(m)]
            lines += [f"{iid}\t{m}\t{d!r}" for iid, d in zip(ids, report.rr_deltas(m))]
        ws.path("rr_deltas.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
        outputs.append(ws.path("rr_deltas.tsv"))
    lines = ["method\tquery_length\tcount"]
    for m in report.methods():
        lines += [f"{m}\t{n}\t{c}" for n, c in report.length_distribution(m).items()]
    ws.path("lengths.tsv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    outputs.append(ws.path("lengths.tsv"))
    ws.record("evaluate", cfg, [ws.path("queries.jsonl")], outputs,
              mrr={m: report.aggregates(m)["mrr"] for m in report.methods()})
    for m in report.methods():
        agg = report.aggregates(m)
        print(f"{m}\tMRR {agg['mrr']:.4f}\tNDCG {agg['ndcg']:.4f}\tP@5 {agg['p5']:.4f}\tn={agg['n']}")


def stage_export_run(ws: Workspace, cfg: dict, args) -> None:
    _, rankings, instances = _evaluate_queries(ws, cfg)
    outputs = _write_runs(ws, rankings, instances)
    ws.record("export-run", cfg, [ws.path("queries.jsonl")], outputs)


def stage_ablate(ws: Workspace, cfg: dict, args) -> None:
    categories = cfg["ablate"]["categories"]
    bad = [c for c in categories if c not in ABLATIONS]
    if bad:
        raise ValidationError(f"unknown ablation categories {bad}")
    coll = _load_collection(ws, cfg)
    tcoll = _test_side(ws, cfg)[1] if cfg["split"].get("test_workspace") else coll
    test = _test_instances(cfg, tcoll)
    silver = _load_silver(ws)
    seed = args.seed

    def run_mrr(ablate: tuple[str, ...]) -> float:
        models, vocab, _ = _train_models(coll, silver, cfg, seed, ["cnn"], ablate)
        report = evaluate_run(test, {"cnn": cnn_formulator(models["cnn"], tcoll, vocab)}, tcoll.index_for)
        mrr = report.aggregates("cnn")["mrr"]
        log.info("ablate %s: MRR %.4f", ablate or "none", mrr)
        return mrr

    deltas = ablation_run(categories, run_mrr)
    out = ws.path("ablation.json")
    out.write_text(dumps_json({"config_hash": ws.config_hash("ablate", cfg), "relative_mrr_delta": deltas}) + "\n",
                   encoding="utf-8")
    ws.record("ablate", cfg, [ws.path("silver.jsonl")], [out])
    for cat, d in deltas.items():
        print(f"{cat}\t{d:+.4f}")


STAGES = {
    "synth": stage_synth,
    "ingest": stage_ingest,
    "index": stage_index,
    "mine": stage_mine,
    "silver": stage_silver,
    "train": stage_train,
    "formulate": stage_formulate,
    "evaluate": stage_evaluate,
    "export-run": stage_export_run,
    "ablate": stage_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default="artifacts", help="artifact directory (default: %(default)s)")
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the stage seed")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="override one config value (JSON-decoded when possible)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="attachrec", description="Proactive attachment recommendation pipeline")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="stage", required=True)
    for name in STAGES:
        p = sub.add_parser(name, parents=[common])
        if name == "ingest":
            p.add_argument("--corpus", help="corpus JSONL to ingest")
        elif name == "silver":
            p.add_argument("--k", type=int, help="candidate term budget")
        elif name == "train":
            p.add_argument("--epochs", type=int)
            p.add_argument("--lr", type=float)
            p.add_argument("--reg-coef", type=float)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, args.set)
        ws = Workspace(args.out)
        ws.require(args.stage)
        ws.root.mkdir(parents=True, exist_ok=True)
        STAGES[args.stage](ws, cfg, args)
    except (ValidationError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("stage failed", exc_info=True)
        print(f"error: {args.stage} failed: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
