"""Experiment orchestration: train -> decode -> evaluate -> analyze -> report.

Every stage reads and writes plain files in the run's output directory:

``generations.jsonl``  one record per generation, sorted by (id, decoder, sample_index)
``metrics.jsonl``      one row per (scope, input_id, decoder, sample_index, metric)
``skipped.jsonl``      metrics that were undefined for a record or set
``analysis/``          CSV tables, JSON curves and ``manifest.json``
``report.md``          human-readable summary

Files are UTF-8, sorted by their primary keys and free of timestamps, so
reruns of the same configuration are byte-identical regardless of the worker
count.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Mapping

import yaml

from . import __version__
from .analysis import (
    GroupingSpec,
    RatingRecord,
    aggregate_ratings,
    ancestral_contrast,
    compare_to_best,
    pearson,
    quality_diversity_points,
    quality_probability_curve,
    rank_groups,
)
from .decoders import DecoderConfig, GenerationRecord, decode, default_decoders
from .errors import (
    ConfigError,
    DecodeKitError,
    InsufficientDataError,
    InvalidReferenceError,
    UndefinedCorrelationError,
    UndefinedMetricError,
    InvalidSetError,
)
from .metrics import (
    DIVERSITY_ORDERS,
    collect_metric_sets,
    concatenate,
    detect_repetition,
    dist_n,
    ent_n,
    length_errors,
    ngram_diversity,
    rouge_l,
    self_bleu,
    sentence_bleu,
)
from .rng import RNG_ALGORITHM, derive_rng, derive_seed
from .seqmodel import load_model, save_model, train_ngram

log = logging.getLogger(__name__)


# --- task presets ----------------------------------------------------------------


@dataclass(frozen=True)
class TaskPreset:
    name: str
    max_len: int
    conditioning: str  # "context" | "prefix" | "none"
    criteria: tuple

    @property
    def conditional(self) -> bool:
        return self.conditioning != "none"


TASK_PRESETS = {
    "mt": TaskPreset("mt", 256, "context", ()),
    "summarization": TaskPreset("summarization", 150, "context", ("quality", "accuracy")),
    "dialogue": TaskPreset("dialogue", 300, "prefix", ("adequacy", "naturalness")),
    "story": TaskPreset("story", 1024, "prefix", ("fluency", "naturalness")),
    "unconditional": TaskPreset("unconditional", 512, "none", ("fluency", "naturalness")),
}


def task_preset(name: str) -> TaskPreset:
    try:
        return TASK_PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown task {name!r}; choose from {sorted(TASK_PRESETS)}") from None


# --- configuration ----------------------------------------------------------------


@dataclass
class LMConfig:
    """Settings for ``train-lm``: a whitespace-tokenised text file, one sequence per line."""

    train_path: str | None = None
    order: int = 3
    smoothing_k: float = 0.1


@dataclass
class ExperimentConfig:
    task: str = "unconditional"
    model_path: str | None = None
    corpus_path: str | None = None
    ratings_path: str | None = None
    external_metrics_path: str | None = None
    decoders: list = field(default_factory=default_decoders)
    samples_per_input: int = 10
    seed: int = 0
    output_dir: str = "runs/default"
    max_len: int | None = None
    num_inputs: int | None = None
    workers: int = 1
    permutation_rounds: int = 10_000
    bins: int = 10
    grouping: dict | None = None
    lm: LMConfig = field(default_factory=LMConfig)

    # fields that do not influence any output byte
    _SCHEDULING = ("workers", "output_dir")

    def __post_init__(self):
        self.preset  # validates the task name
        self.decoders = [_as_decoder(d) for d in self.decoders]
        labels = [d.label for d in self.decoders]
        dupes = sorted({l for l in labels if labels.count(l) > 1})
        if dupes:
            raise ConfigError(f"duplicate decoder labels {dupes}; give one of them a 'name'")
        if self.samples_per_input < 1:
            raise ConfigError("samples_per_input must be >= 1")
        if self.max_len is not None and not 1 <= self.max_len <= self.preset.max_len:
            raise ConfigError(f"max_len {self.max_len} outside 1..{self.preset.max_len} for task {self.task!r}")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if isinstance(self.lm, Mapping):
            self.lm = _build(LMConfig, self.lm, "lm")

    @property
    def preset(self) -> TaskPreset:
        return task_preset(self.task)

    @property
    def budget(self) -> int:
        return self.max_len or self.preset.max_len

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    @property
    def decoder_kinds(self) -> dict:
        return {d.label: d.kind for d in self.decoders}

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ExperimentConfig":
        return _build(cls, doc, "config")

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        """Read a JSON or YAML file; relative paths resolve against its folder."""
        path = Path(path)
        try:
            doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(doc, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping")
        doc = dict(doc)
        for key in ("model_path", "corpus_path", "ratings_path", "external_metrics_path", "output_dir"):
            if doc.get(key):
                doc[key] = str(path.parent / doc[key])
        if isinstance(doc.get("lm"), Mapping) and doc["lm"].get("train_path"):
            doc["lm"] = {**doc["lm"], "train_path": str(path.parent / doc["lm"]["train_path"])}
        return cls.from_dict(doc)

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        overrides = {k: v for k, v in overrides.items() if v is not None}
        return replace(self, **overrides) if overrides else self

    def to_dict(self, include_scheduling: bool = True) -> dict:
        out = {}
        for f in fields(self):
            if not include_scheduling and f.name in self._SCHEDULING:
                continue
            value = getattr(self, f.name)
            if f.name == "decoders":
                value = [d.to_dict() for d in value]
            elif f.name == "lm":
                value = {g.name: getattr(value, g.name) for g in fields(value)}
            out[f.name] = value
        return out

    def echo(self) -> dict:
        """Configuration as echoed into outputs: everything that shapes results."""
        return self.to_dict(include_scheduling=False)


def _as_decoder(spec) -> DecoderConfig:
    if isinstance(spec, DecoderConfig):
        return spec
    if isinstance(spec, str):
        return DecoderConfig.parse(spec)
    if isinstance(spec, Mapping):
        section = {k: v for k, v in spec.items() if k != "label"}
        return DecoderConfig.from_dict(section)
    raise ConfigError(f"cannot interpret decoder entry {spec!r}")


def _build(cls, doc: Mapping, where: str):
    known = {f.name for f in fields(cls) if not f.name.startswith("_")}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"unknown {where} keys {unknown}")
    try:
        return cls(**doc)
    except TypeError as exc:
        raise ConfigError(f"bad {where}: {exc}") from None


# --- file formats ----------------------------------------------------------------


def read_jsonl(path) -> list:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if line.strip():
                try:
                    rows.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"{path}:{lineno}: {exc.msg}") from None
    return rows


def write_jsonl(path, rows: Iterable[Mapping]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def write_json(path, doc) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, ensure_ascii=False, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_csv(path, header: list, rows: Iterable) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow(["" if v is None else _fmt(v) for v in row])


def _fmt(v):
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return v


@dataclass(frozen=True)
class InputItem:
    id: str
    context: tuple = ()
    references: tuple = ()  # each a tuple of tokens


def read_corpus(path) -> list:
    """Inputs as JSON-lines ``{id, context?, reference?}``.

    ``reference`` may be a string or a list of strings (several references).
    """
    items = []
    seen = set()
    for row in read_jsonl(path):
        if "id" not in row:
            raise ConfigError(f"{path}: corpus row without 'id'")
        iid = str(row["id"])
        if iid in seen:
            raise ConfigError(f"{path}: duplicate input id {iid!r}")
        seen.add(iid)
        ref = row.get("reference")
        refs = () if ref is None else tuple(tuple(r.split()) for r in ([ref] if isinstance(ref, str) else ref))
        items.append(InputItem(iid, tuple(str(row.get("context") or "").split()), refs))
    return items


def load_inputs(config: ExperimentConfig) -> list:
    if config.corpus_path:
        items = read_corpus(config.corpus_path)
    elif not config.preset.conditional and config.num_inputs:
        items = [InputItem(f"u{i:05d}") for i in range(config.num_inputs)]
    else:
        raise ConfigError("no corpus_path given (unconditional runs may set num_inputs instead)")
    if config.preset.conditional and any(not it.context for it in items):
        raise ConfigError(f"task {config.task!r} needs a context for every input")
    return items


def read_generations(path) -> list:
    return [GenerationRecord.from_json(r) for r in read_jsonl(path)]


def read_ratings(path) -> list:
    try:
        return [RatingRecord.from_json(r) for r in read_jsonl(path)]
    except (KeyError, DecodeKitError) as exc:
        raise ConfigError(f"{path}: bad rating row ({exc})") from None


def _record_key(rec: GenerationRecord):
    return (rec.input_id, rec.decoder, rec.sample_index)


# --- train ----------------------------------------------------------------------


def run_train(config: ExperimentConfig) -> Path:
    if not config.lm.train_path:
        raise ConfigError("lm.train_path is required to train a model")
    if not config.model_path:
        raise ConfigError("model_path is required to save the trained model")
    with open(config.lm.train_path, encoding="utf-8") as fh:
        lines = [line.split() for line in fh if line.strip()]
    model = train_ngram(lines, config.lm.order, config.lm.smoothing_k)
    Path(config.model_path).parent.mkdir(parents=True, exist_ok=True)
    save_model(model, config.model_path)
    log.info("trained %d-gram model on %d sequences, |V|=%d", model.order, len(lines), len(model.vocab))
    return Path(config.model_path)


# --- decode ---------------------------------------------------------------------

_WORKER = {}


def _init_worker(model_path: str, config_doc: dict) -> None:
    _WORKER.clear()
    _WORKER["model"] = load_model(model_path)
    _WORKER["config"] = ExperimentConfig.from_dict(config_doc)
    _WORKER["cache"] = {}


def _decode_input(item: InputItem) -> list:
    model = _WORKER["model"]
    config: ExperimentConfig = _WORKER["config"]
    cache = _WORKER["cache"]
    vocab = model.vocab
    known = [t for t in item.context if t in vocab and t not in (vocab.bos, vocab.eos)]
    if len(known) < len(item.context):
        log.warning("input %s: dropped %d out-of-vocabulary context tokens", item.id, len(item.context) - len(known))
    context = vocab.encode(known)

    # MBR runs last so it can consider every other decoder's output as a candidate
    ordered = sorted(config.decoders, key=lambda d: d.kind == "mbr")
    records = []
    for dec in ordered:
        label = dec.label
        seed = config.seed if dec.seed is None else dec.seed

        def rng_for(i, _label=label, _seed=seed):
            return derive_rng(_seed, item.id, _label, i)

        if dec.deterministic and (context, label) in cache:
            out = [replace(r, input_id=item.id) for r in cache[(context, label)]]
        else:
            extra = [r for r in records if r.decoder != label] if dec.kind == "mbr" else ()
            out = decode(
                model, context, dec, config.budget, rng_for, config.samples_per_input, item.id, extra
            )
            if dec.deterministic:
                cache[(context, label)] = out
        records.extend(out)
    return records


def run_decode(config: ExperimentConfig) -> Path:
    """Decode every input with every configured decoder into generations.jsonl."""
    if not config.model_path or not Path(config.model_path).is_file():
        raise ConfigError(f"model file {config.model_path!r} not found")
    load_model(config.model_path)  # fail before any decoding
    items = load_inputs(config)
    doc = config.to_dict()
    records = []
    if config.workers == 1 or len(items) < 2:
        _init_worker(config.model_path, doc)
        for item in items:
            records.extend(_decode_input(item))
    else:
        with ProcessPoolExecutor(config.workers, initializer=_init_worker, initargs=(config.model_path, doc)) as ex:
            for recs in ex.map(_decode_input, items, chunksize=max(1, len(items) // (4 * config.workers))):
                records.extend(recs)
    records.sort(key=_record_key)
    out = config.out
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "generations.jsonl", (r.to_json() for r in records))
    write_json(
        out / "run.json",
        {"version": __version__, "rng": RNG_ALGORITHM, "config": config.echo(), "records": len(records)},
    )
    return out / "generations.jsonl"


def expected_record_count(config: ExperimentConfig, n_inputs: int) -> int:
    per_input = 0
    for d in config.decoders:
        if d.kind in ("greedy", "mbr"):
            per_input += 1
        elif d.kind in ("beam", "diverse_beam"):
            per_input += d.beam_k  # upper bound; small vocabularies may yield fewer
        else:
            per_input += config.samples_per_input
    return per_input * n_inputs


# --- evaluate -------------------------------------------------------------------

SEQUENCE_METRICS = ("bleu", "rouge_l", "repetition", "length", "ref_length", "norm_log_prob", "perplexity")
SET_METRICS = tuple(f"dist_{n}" for n in DIVERSITY_ORDERS) + tuple(
    f"ent_{n}" for n in DIVERSITY_ORDERS
) + ("ngram_diversity", "self_bleu")


def _row(scope, input_id, decoder, sample_index, metric, value) -> dict:
    return {
        "scope": scope,
        "input_id": input_id,
        "decoder": decoder,
        "sample_index": sample_index,
        "metric": metric,
        "value": value,
    }


def _row_key(row):
    si = -1 if row["sample_index"] is None else row["sample_index"]
    return (row["scope"], row["input_id"], row["decoder"], si, row["metric"])


def _safe(fn, skipped: list, where: dict, metric: str):
    try:
        return fn()
    except (UndefinedMetricError, InvalidReferenceError, InvalidSetError) as exc:
        skipped.append({**where, "metric": metric, "reason": str(exc)})
        return None


def sequence_metric_rows(rec: GenerationRecord, refs: tuple, skipped: list) -> list:
    where = {"scope": "sequence", "input_id": rec.input_id, "decoder": rec.decoder, "sample_index": rec.sample_index}
    values = {}
    if refs:
        values["bleu"] = _safe(lambda: sentence_bleu(rec.tokens, refs), skipped, where, "bleu")
        values["rouge_l"] = _safe(lambda: max(rouge_l(rec.tokens, r) for r in refs), skipped, where, "rouge_l")
        values["ref_length"] = float(len(refs[0]))
    values["repetition"] = 1.0 if detect_repetition(rec.tokens, eos=None)[0] else 0.0
    values["length"] = float(len(rec.tokens))
    values["norm_log_prob"] = rec.norm_log_prob
    values["perplexity"] = math.exp(-rec.norm_log_prob)
    return [
        _row("sequence", rec.input_id, rec.decoder, rec.sample_index, m, v) for m, v in values.items() if v is not None
    ]


def set_metric_rows(gset, skipped: list) -> list:
    where = {"scope": "set", "input_id": gset.input_id, "decoder": gset.decoder, "sample_index": None}
    joined = concatenate(gset.members)
    values = {}
    for n in DIVERSITY_ORDERS:
        values[f"dist_{n}"] = _safe(lambda n=n: dist_n(joined, n), skipped, where, f"dist_{n}")
        values[f"ent_{n}"] = _safe(lambda n=n: ent_n(joined, n), skipped, where, f"ent_{n}")
    values["ngram_diversity"] = _safe(lambda: ngram_diversity(joined), skipped, where, "ngram_diversity")
    values["self_bleu"] = _safe(lambda: self_bleu(gset.members), skipped, where, "self_bleu")
    return [_row("set", gset.input_id, gset.decoder, None, m, v) for m, v in values.items() if v is not None]


def _external_rows(path, records) -> list:
    """Sequence-level values computed by outside tools (e.g. trained metrics)."""
    known = {_record_key(r) for r in records}
    rows = []
    for doc in read_jsonl(path):
        try:
            key = (str(doc["input_id"]), str(doc["decoder"]), int(doc["sample_index"]))
            row = _row("sequence", *key, str(doc["metric"]), float(doc["value"]))
        except (KeyError, TypeError, ValueError):
            raise ConfigError(f"{path}: rows need input_id, decoder, sample_index, metric, value") from None
        if key not in known:
            raise ConfigError(f"{path}: no generation for {key}")
        if row["metric"] in SEQUENCE_METRICS:
            raise ConfigError(f"{path}: metric {row['metric']!r} is computed internally")
        rows.append(row)
    return rows


def run_evaluate(config: ExperimentConfig) -> Path:
    """Sequence and set metrics for generations.jsonl into metrics.jsonl."""
    out = config.out
    records = read_generations(out / "generations.jsonl")
    items = {it.id: it for it in load_inputs(config)} if config.corpus_path else {}
    if config.preset.conditional and not any(it.references for it in items.values()):
        raise ConfigError(f"task {config.task!r} needs references in the corpus")
    kinds = config.decoder_kinds
    unknown = sorted({r.decoder for r in records} - set(kinds))
    if unknown:
        raise ConfigError(f"generations contain decoders not in the config: {unknown}")

    rows, skipped = [], []
    for rec in records:
        item = items.get(rec.input_id)
        rows.extend(sequence_metric_rows(rec, item.references if item else (), skipped))

    if config.ratings_path:
        for agg in aggregate_ratings(read_ratings(config.ratings_path), config.task):
            rows.append(_row("sequence", agg.input_id, agg.decoder, 0, f"human_{agg.criterion}", agg.median_score))

    if config.external_metrics_path:
        rows.extend(_external_rows(config.external_metrics_path, records))

    set_rng = derive_rng(config.seed, "__sets__", "pool", 0).generator()
    task_kind = "conditional" if config.preset.conditional else "unconditional"
    for gset in collect_metric_sets(records, kinds, task_kind, config.samples_per_input, set_rng):
        rows.extend(set_metric_rows(gset, skipped))

    rows.sort(key=_row_key)
    skipped.sort(key=_row_key)
    write_jsonl(out / "metrics.jsonl", rows)
    write_jsonl(out / "skipped.jsonl", skipped)
    return out / "metrics.jsonl"


# --- analyze --------------------------------------------------------------------

SECTIONS = {
    "significance": "significance.csv",
    "correlations": ("correlations_sequence.csv", "correlations_set.csv"),
    "ancestral_contrast": "ancestral_contrast.csv",
    "rank_groups": "rank_groups.csv",
    "quality_probability": "quality_probability.json",
    "quality_diversity": "quality_diversity.json",
    "lengths": "lengths.csv",
    "repetition": "repetition.csv",
}
SUPPLEMENTARY = {"diversity": "diversity.csv"}
QUALITY_METRICS = ("bleu", "rouge_l")


def _section_files(name) -> tuple:
    spec = SECTIONS.get(name) or SUPPLEMENTARY[name]
    return (spec,) if isinstance(spec, str) else spec


class MetricTable:
    """In-memory view of metrics.jsonl keyed for the analyses."""

    def __init__(self, rows: list):
        self.seq = defaultdict(dict)  # metric -> (input, decoder, sample) -> value
        self.sets = defaultdict(dict)  # metric -> (set id, decoder) -> value
        for r in rows:
            if r["scope"] == "sequence":
                self.seq[r["metric"]][(r["input_id"], r["decoder"], r["sample_index"])] = r["value"]
            else:
                self.sets[r["metric"]][(r["input_id"], r["decoder"])] = r["value"]

    def human_metrics(self) -> list:
        return sorted(m for m in self.seq if m.startswith("human_"))

    def quality_source(self):
        """Human medians when present, else the first available reference metric."""
        human = self.human_metrics()
        if human:
            return "human", human
        for m in QUALITY_METRICS:
            if self.seq.get(m):
                return m, [m]
        return None, []

    def quality(self) -> dict:
        """(input, decoder, sample) -> quality, averaging human criteria."""
        source, metrics = self.quality_source()
        cells = defaultdict(list)
        for m in metrics:
            for key, v in self.seq[m].items():
                cells[key].append(v)
        return {k: math.fsum(v) / len(v) for k, v in cells.items()}

    def primary(self, metric: str) -> dict:
        """decoder -> {input: value} for each decoder's first output."""
        out = defaultdict(dict)
        for (inp, dec, si), v in self.seq.get(metric, {}).items():
            if si == 0:
                out[dec][inp] = v
        return dict(out)


def _pairwise_matrix(columns: Mapping[str, Mapping]) -> list:
    """Pearson over keys shared by each pair of metric columns (NaN if undefined)."""
    names = sorted(columns)
    rows = []
    for a in names:
        row = [a]
        for b in names:
            shared = sorted(set(columns[a]) & set(columns[b]), key=str)
            try:
                row.append(pearson([columns[a][k] for k in shared], [columns[b][k] for k in shared]))
            except (UndefinedCorrelationError, DecodeKitError, ValueError):
                row.append(float("nan"))
        rows.append(row)
    return [["metric"] + names] + rows


def _grouping(config: ExperimentConfig) -> GroupingSpec:
    kinds = config.decoder_kinds
    if config.grouping is None:
        return GroupingSpec.from_kinds(kinds)
    g = config.grouping
    unknown = sorted((set(g.get("deterministic", ())) | set(g.get("stochastic", ())) | set(g.get("excluded", ()))) - set(kinds))
    if unknown:
        raise ConfigError(f"grouping references unknown decoders {unknown}")
    spec = GroupingSpec(
        frozenset(g.get("deterministic", ())), frozenset(g.get("stochastic", ())), frozenset(g.get("excluded", ()))
    )
    if not spec.covers(kinds):
        spec = GroupingSpec(spec.deterministic, spec.stochastic, spec.excluded | (set(kinds) - spec.ranked - spec.excluded))
    return spec


def run_analyze(config: ExperimentConfig) -> Path:
    """Statistical analyses over metrics.jsonl into the analysis/ bundle."""
    out = config.out
    adir = out / "analysis"
    adir.mkdir(parents=True, exist_ok=True)
    table = MetricTable(read_jsonl(out / "metrics.jsonl"))
    records = read_generations(out / "generations.jsonl")
    kinds = config.decoder_kinds
    grouping = _grouping(config)
    decoders = sorted(kinds)

    # significance: best decoder vs every other, per quality metric
    tested = list(QUALITY_METRICS) + ["norm_log_prob"] + table.human_metrics()
    sig_rows = []
    for metric in tested:
        scores = table.primary(metric)
        if len(scores) < 2:
            continue
        seed = derive_seed(config.seed, "__significance__", metric, 0)
        try:
            results = compare_to_best(scores, config.permutation_rounds, seed)
        except DecodeKitError as exc:
            log.warning("significance for %s skipped: %s", metric, exc)
            continue
        n_worse = sum(r.significant for r in results)
        for r in results:
            sig_rows.append([metric, r.decoder_pair[0], r.decoder_pair[1], r.statistic, r.p_value, r.p_adjusted, int(r.significant), n_worse])
    write_csv(
        adir / "significance.csv",
        ["metric", "best", "other", "mean_difference", "p_value", "p_adjusted", "significant", "n_worse"],
        sig_rows,
    )

    # correlations at both granularities
    seq_cols = {m: v for m, v in table.seq.items() if m not in ("ref_length",)}
    write_csv(adir / "correlations_sequence.csv", *_split(_pairwise_matrix(seq_cols)))
    set_cols = dict(table.sets)
    quality = table.quality()
    for m in ("norm_log_prob",) + (("quality",) if quality else ()):
        source = quality if m == "quality" else table.seq.get(m, {})
        cells = defaultdict(list)
        for (inp, dec, _), v in source.items():
            cells[(inp, dec)].append(v)
        set_cols[f"mean_{m}"] = {k: math.fsum(v) / len(v) for k, v in cells.items() if (k in _set_keys(table))}
    write_csv(adir / "correlations_set.csv", *_split(_pairwise_matrix(set_cols)))

    # ancestral contrast, per decoder and sequence metric
    ancestral = [d for d in decoders if kinds[d] == "ancestral"]
    contrast_rows = []
    if ancestral:
        anc = ancestral[0]
        for metric in sorted(seq_cols):
            values = defaultdict(list)
            for (_, dec, _), v in sorted(seq_cols[metric].items()):
                values[dec].append(v)
            for dec in decoders:
                if dec == anc or not values.get(dec) or not values.get(anc):
                    continue
                try:
                    r = ancestral_contrast(values[dec], values[anc])
                except DecodeKitError:
                    r = float("nan")
                contrast_rows.append([metric, dec, anc, r])
    write_csv(adir / "ancestral_contrast.csv", ["metric", "decoder", "ancestral", "r"], contrast_rows)

    # group-best ranks over the primary quality score
    source, _ = table.quality_source()
    if source is None:
        source, scores_by = "norm_log_prob", table.primary("norm_log_prob")
    else:
        scores_by = defaultdict(dict)
        for (inp, dec, si), v in quality.items():
            if si == 0:
                scores_by[dec][inp] = v
    flat = {(inp, dec): v for dec, per in scores_by.items() for inp, v in per.items()}
    rank_rows = []
    if flat and grouping.ranked:
        summary = rank_groups(flat, grouping)
        for g in ("deterministic", "stochastic"):
            for rank, count in summary.histogram[g].items():
                rank_rows.append([source, g, rank, count, summary.mean[g]])
    write_csv(adir / "rank_groups.csv", ["source", "group", "best_rank", "count", "mean_best_rank"], rank_rows)

    # quality-probability curve
    nlp = table.seq.get("norm_log_prob", {})
    pairs = [(nlp[k], q) for k, q in sorted(quality.items()) if k in nlp]
    qp = {"source": table.quality_source()[0], "bins": config.bins, "points": []}
    try:
        qp["points"] = [
            {"mean_norm_log_prob": x, "mean_quality": q, "count": c}
            for x, q, c in quality_probability_curve(pairs, config.bins)
        ]
    except InsufficientDataError as exc:
        qp["note"] = str(exc)
    write_json(adir / "quality_probability.json", qp)

    # quality-diversity scatter over sets whose members have quality scores
    set_quality = set_cols.get("mean_quality", {})
    div = {k: v for k, v in table.sets.get("ngram_diversity", {}).items() if k in set_quality}
    points = quality_diversity_points(div, {k: set_quality[k] for k in div})
    write_json(
        adir / "quality_diversity.json",
        {
            "source": table.quality_source()[0],
            "points": [{"input_id": i, "decoder": d, "ngram_diversity": x, "quality": q} for x, q, d, i in points],
        },
    )

    # length errors against the first reference
    length_rows = []
    lengths = table.seq.get("length", {})
    ref_lengths = table.seq.get("ref_length", {})
    for dec in decoders:
        keys = sorted(k for k in lengths if k[1] == dec)
        if not keys:
            continue
        mean_len = math.fsum(lengths[k] for k in keys) / len(keys)
        paired = [k for k in keys if ref_lengths.get(k, 0) > 0]
        mape = mpe = None
        if paired:
            mape, mpe = length_errors([lengths[k] for k in paired], [ref_lengths[k] for k in paired])
        length_rows.append([dec, len(keys), mean_len, mape, mpe])
    write_csv(adir / "lengths.csv", ["decoder", "n", "mean_length", "mape", "mpe"], length_rows)

    # fraction of generations degenerating into repetition
    rep_rows = []
    rep = table.seq.get("repetition", {})
    for dec in decoders:
        vals = [v for k, v in rep.items() if k[1] == dec]
        if vals:
            hits = int(sum(vals))
            rep_rows.append([dec, len(vals), hits, hits / len(vals)])
    write_csv(adir / "repetition.csv", ["decoder", "n", "repetitive", "fraction"], rep_rows)

    # per-decoder means of the per-set diversity values
    div_rows = []
    for metric in sorted(table.sets):
        by_dec = defaultdict(list)
        for (_, dec), v in table.sets[metric].items():
            by_dec[dec].append(v)
        for dec in sorted(by_dec):
            div_rows.append([metric, dec, len(by_dec[dec]), math.fsum(by_dec[dec]) / len(by_dec[dec])])
    write_csv(adir / "diversity.csv", ["metric", "decoder", "n_sets", "mean_over_sets"], div_rows)

    manifest = {
        "version": __version__,
        "records": len(records),
        "sections": {name: list(_section_files(name)) for name in list(SECTIONS) + list(SUPPLEMENTARY)},
    }
    write_json(adir / "manifest.json", manifest)
    return adir


def _set_keys(table: MetricTable) -> set:
    keys = set()
    for per in table.sets.values():
        keys.update(per)
    return keys


def _split(matrix: list):
    return matrix[0], matrix[1:]


# --- report ---------------------------------------------------------------------


class IncompleteBundleError(DecodeKitError):
    def __init__(self, missing):
        self.missing = list(missing)
        super().__init__("analysis bundle is missing: " + ", ".join(self.missing))


def _csv_to_markdown(text: str) -> str:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return "_empty_\n"
    lines = ["| " + " | ".join(rows[0]) + " |", "|" + "---|" * len(rows[0])]
    lines += ["| " + " | ".join(r) + " |" for r in rows[1:]]
    if len(rows) == 1:
        lines.append("| " + " | ".join("" for _ in rows[0]) + " |")
    return "\n".join(lines) + "\n"


def run_report(config: ExperimentConfig) -> Path:
    """Assemble report.md from the analysis bundle; fail listing any gaps."""
    out = config.out
    adir = out / "analysis"
    missing = [
        f"{name} ({fname})"
        for name in SECTIONS
        for fname in _section_files(name)
        if not (adir / fname).is_file()
    ]
    if missing:
        raise IncompleteBundleError(missing)
    parts = [
        "# Decoding experiment report\n",
        f"decodekit {__version__}; random streams: {RNG_ALGORITHM}\n",
        "## Configuration\n",
        "```json\n" + json.dumps(config.echo(), indent=2, sort_keys=True, ensure_ascii=False) + "\n```\n",
    ]
    for name in list(SECTIONS) + [n for n in SUPPLEMENTARY if (adir / SUPPLEMENTARY[n]).is_file()]:
        parts.append(f"## {name.replace('_', ' ').capitalize()}\n")
        for fname in _section_files(name):
            text = (adir / fname).read_text(encoding="utf-8")
            parts.append(f"### {fname}\n")
            if fname.endswith(".csv"):
                parts.append(_csv_to_markdown(text))
            else:
                parts.append("```json\n" + text.rstrip("\n") + "\n```\n")
    report = out / "report.md"
    report.write_text("\n".join(parts), encoding="utf-8")
    return report


def run_all(config: ExperimentConfig) -> Path:
    run_decode(config)
    run_evaluate(config)
    run_analyze(config)
    return run_report(config)
