"""End-to-end experiment: embed, build the graph, cross-validate six views, vote, report."""

from __future__ import annotations

import dataclasses
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import __version__
from .core import VIEWS, Cohort, ParameterError, validate_cohort
from .data_io import hash_config
from .ensemble import Metrics, classification_metrics, kfold_split, summarize_runs, vote_matrix
from .gnn import MODEL_KINDS, TrainConfig, encode_phenotypes, preset, raw_features, train_fold
from .popgraph import DEFAULT_CATEGORICAL_SOFTNESS, build_population_graph, graph_metrics, reference_graph
from .spectral import DEFAULT_K, embed_many
from .triad import RULES, audit_cohort

# reference densities for the comparison graphs; the similarity graph itself
# is near-complete, so matching its density would make the references trivial
RANDOM_REFERENCE_DENSITY = 0.512
LATTICE_REFERENCE_DENSITY = 0.0608


@dataclass(frozen=True)
class ExperimentConfig:
    models: tuple[str, ...] = ("gnn2", "nn1", "nn2")
    k: int = DEFAULT_K
    skip_trivial: bool = False
    folds: int = 10
    repeats: int = 10
    seed: int = 0
    stratify: bool = True
    categorical_softness: float = DEFAULT_CATEGORICAL_SOFTNESS
    include_scanner: bool = True
    graph_references: bool = True
    audit: bool = True
    audit_rule: str = "dominance"
    audit_depth: int = 2
    # per-kind overrides on top of the presets, e.g. {"gnn2": {"epochs": 100}}
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "models", tuple(self.models))
        unknown = [m for m in self.models if m not in MODEL_KINDS]
        if unknown or not self.models:
            raise ParameterError(f"unknown model kinds {unknown}")
        if self.repeats < 1:
            raise ParameterError("repeats must be >= 1")
        if self.folds < 2:
            raise ParameterError("folds must be >= 2")
        if self.audit_rule not in RULES:
            raise ParameterError(f"unknown triad rule {self.audit_rule!r}")

    def train_config(self, kind: str) -> TrainConfig:
        return preset(kind, folds=self.folds, **self.overrides.get(kind, {}))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["models"] = list(self.models)
        d["train_configs"] = {m: self.train_config(m).to_dict() for m in self.models}
        return d


@dataclass
class CVResult:
    """Out-of-fold predictions for every subject, one array pair per view."""
    predicted: dict[str, np.ndarray]
    scores: dict[str, np.ndarray]
    folds: list[np.ndarray]


def _seed(*parts: int) -> int:
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def model_features(cohort: Cohort, kind: str, config: TrainConfig, embeddings: dict, phenotypes: np.ndarray):
    """Per-view input matrices for a model kind."""
    out = {}
    for view in VIEWS:
        if kind == "nn1" and config.nn1_input == "raw":
            out[view.value] = raw_features(cohort.matrices(view))
        elif kind == "nn2":
            out[view.value] = np.hstack([embeddings[view.value], phenotypes])
        else:
            out[view.value] = embeddings[view.value]
    return out


def cross_validate(features: dict, labels: np.ndarray, W: np.ndarray | None, config: TrainConfig,
                   folds: list[np.ndarray], seed: int, workers: int = 1) -> CVResult:
    n = len(labels)
    jobs = [(vi, view, fi, held) for vi, view in enumerate(features) for fi, held in enumerate(folds)]

    def run(job):
        vi, view, fi, held = job
        _, fp = train_fold(features[view], labels, W, config, held, fold=fi, seed=_seed(seed, vi, fi))
        return view, fp

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    predicted = {v: np.full(n, -1, dtype=np.int64) for v in features}
    scores = {v: np.full(n, np.nan) for v in features}
    for view, fp in results:
        predicted[view][fp.indices] = fp.predicted
        scores[view][fp.indices] = fp.scores
    return CVResult(predicted, scores, folds)


def ensemble_predictions(cv: CVResult) -> tuple[np.ndarray, np.ndarray]:
    """Majority vote over the six views; scores are the mean positive-class probability."""
    votes = np.column_stack([cv.predicted[v.value] for v in VIEWS])
    scores = np.mean(np.column_stack([cv.scores[v.value] for v in VIEWS]), axis=1)
    return vote_matrix(votes), scores


def _estimates(runs: list[Metrics]) -> dict:
    return {k: e.as_dict() for k, e in summarize_runs(runs).items()}


def run_experiment(cohort: Cohort, config: ExperimentConfig, workers: int = 1,
                   record_timings: bool = False, progress=None) -> dict:
    """Run every requested model over ``config.repeats`` reseeded 10-fold CVs.

    Returns the report document (a plain dict ready for ``write_report``).
    """
    problems = validate_cohort(cohort)
    if problems:
        raise ParameterError(f"cohort failed validation: {problems[0]}")
    timings = {}
    t0 = time.perf_counter()
    labels = cohort.labels
    graph = population_graph(cohort, config.categorical_softness, config.include_scanner)
    embeddings = {v.value: embed_many(cohort.matrices(v), config.k, config.skip_trivial) for v in VIEWS}
    phenotypes = encode_phenotypes(cohort)
    timings["features_s"] = time.perf_counter() - t0

    # one partition per repeat, shared by every model so comparisons are paired
    partitions = []
    for r in range(config.repeats):
        split = kfold_split(range(len(labels)), config.folds, _seed(config.seed, r),
                            labels if config.stratify else None)
        partitions.append([np.array(sorted(f), dtype=np.int64) for f in split])

    per_model: dict[str, dict] = {}
    for kind in config.models:
        t1 = time.perf_counter()
        tc = config.train_config(kind)
        feats = model_features(cohort, kind, tc, embeddings, phenotypes)
        W = graph.weights if kind == "gnn2" else None
        view_runs = {v.value: [] for v in VIEWS}
        ens_runs = []
        for r in range(config.repeats):
            seed = _seed(config.seed, r)
            cv = cross_validate(feats, labels, W, tc, partitions[r], seed, workers)
            for v in VIEWS:
                view_runs[v.value].append(classification_metrics(cv.predicted[v.value], cv.scores[v.value], labels))
            if kind == "gnn2":
                pred, score = ensemble_predictions(cv)
                ens_runs.append(classification_metrics(pred, score, labels))
            if progress:
                progress(kind, r)
        block = {
            "train_config": tc.to_dict(),
            "config_hash": tc.hash(),
            "per_view": {v: _estimates(runs) for v, runs in view_runs.items()},
            "per_view_runs": {v: [dataclasses.asdict(m) for m in runs] for v, runs in view_runs.items()},
            "mean_view_accuracy": float(np.mean([np.mean([m.overall_accuracy for m in runs])
                                                 for runs in view_runs.values()])),
        }
        if ens_runs:
            block["ensemble"] = _estimates(ens_runs)
            block["ensemble_runs"] = [dataclasses.asdict(m) for m in ens_runs]
        per_model[kind] = block
        timings[f"{kind}_s"] = time.perf_counter() - t1

    cfg_dict = config.to_dict()
    doc = {
        "version": __version__,
        "config": cfg_dict,
        "config_hash": hash_config(cfg_dict),
        "cohort": _cohort_summary(cohort),
        "seeds": [_seed(config.seed, r) for r in range(config.repeats)],
        "folds": [[f.tolist() for f in part] for part in partitions],
        "models": per_model,
        "graph": graph_report(graph, config.seed, config.graph_references),
    }
    if config.audit:
        t2 = time.perf_counter()
        doc["audit"] = audit_cohort(cohort, graph.weights, config.audit_rule, config.audit_depth,
                                    row_normalize=True, workers=workers).as_dict()
        timings["audit_s"] = time.perf_counter() - t2
    if "gnn2" not in config.models:
        doc["notes"] = ["ensemble omitted: majority voting needs the six per-view GNN models"]
    if record_timings:
        timings["total_s"] = time.perf_counter() - t0
        doc["timings"] = timings
    return doc


def population_graph(cohort: Cohort, categorical_softness: float = DEFAULT_CATEGORICAL_SOFTNESS,
                     include_scanner: bool = True):
    schema = cohort.schema if include_scanner else cohort.schema.without("scanner_field")
    return build_population_graph(Cohort(cohort.subjects, schema), categorical_softness)


@dataclass(frozen=True)
class AuditConfig:
    rule: str = "dominance"
    depth: int = 2
    row_normalize: bool = True
    categorical_softness: float = DEFAULT_CATEGORICAL_SOFTNESS
    include_scanner: bool = True

    def __post_init__(self):
        if self.rule not in RULES:
            raise ParameterError(f"unknown triad rule {self.rule!r}")
        if self.depth < 0:
            raise ParameterError("depth must be >= 0")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def run_audit(cohort: Cohort, config: AuditConfig, workers: int | None = None,
              record_timings: bool = False) -> dict:
    """Standalone triad audit report."""
    problems = validate_cohort(cohort)
    if problems:
        raise ParameterError(f"cohort failed validation: {problems[0]}")
    t0 = time.perf_counter()
    graph = population_graph(cohort, config.categorical_softness, config.include_scanner)
    audit = audit_cohort(cohort, graph.weights, config.rule, config.depth, config.row_normalize, workers=workers)
    cfg = config.to_dict()
    doc = {"version": __version__, "config": cfg, "config_hash": hash_config(cfg),
           "cohort": _cohort_summary(cohort), "audit": audit.as_dict()}
    if record_timings:
        doc["timings"] = {"total_s": time.perf_counter() - t0}
    return doc


def run_graph_metrics(cohort: Cohort, categorical_softness: float = DEFAULT_CATEGORICAL_SOFTNESS,
                      include_scanner: bool = True, seed: int = 0, references: bool = True) -> dict:
    graph = population_graph(cohort, categorical_softness, include_scanner)
    cfg = {"categorical_softness": categorical_softness, "include_scanner": include_scanner,
           "seed": seed, "references": references,
           "random_density": RANDOM_REFERENCE_DENSITY, "lattice_density": LATTICE_REFERENCE_DENSITY}
    return {"version": __version__, "config": cfg, "config_hash": hash_config(cfg),
            "cohort": _cohort_summary(cohort), "graph": graph_report(graph, seed, references)}


def _cohort_summary(cohort: Cohort) -> dict:
    return {"n_subjects": len(cohort), "n_roi": cohort.n_roi, "n_improvers": int(cohort.labels.sum())}


def graph_report(graph, seed: int = 0, references: bool = True,
                 random_density: float = RANDOM_REFERENCE_DENSITY,
                 lattice_density: float = LATTICE_REFERENCE_DENSITY) -> dict:
    """Similarity-graph metrics plus random and lattice references.

    An undefined average shortest path (no connected pair) is reported as
    None, with a note.
    """
    out = {"similarity": _metrics_dict(graph_metrics(graph))}
    if references:
        n = graph.n
        out["random"] = _metrics_dict(graph_metrics(reference_graph("random", n, random_density, seed)))
        # at least one neighbor per side, so tiny cohorts still get a ring
        lattice_density = min(1.0, max(lattice_density, 2.0 / (n - 1)))
        out["lattice"] = _metrics_dict(graph_metrics(reference_graph("lattice", n, lattice_density, seed)))
    return out


def _metrics_dict(m) -> dict:
    d = m.as_dict()
    if not np.isfinite(d["average_shortest_path"]):
        d["average_shortest_path"] = None
        d["note"] = "no connected pair: average shortest path undefined"
    return d
