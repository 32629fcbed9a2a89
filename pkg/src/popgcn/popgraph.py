"""Phenotype-similarity population graph and graph-structure metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.csgraph import shortest_path

from .core import (CATEGORICAL, QUANTITATIVE, Cohort, ParameterError, PhenotypeRecord,
                   PhenotypeSchema, SchemaError)

# factor applied per categorical mismatch; 0 would split the cohort into
# disjoint cliques of identical category tuples
DEFAULT_CATEGORICAL_SOFTNESS = 0.5


@dataclass(frozen=True)
class PopulationGraph:
    weights: np.ndarray
    threshold: float = 0.0

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def adjacency(self) -> np.ndarray:
        """Boolean edge matrix (weight > threshold), no self-loops."""
        A = self.weights > self.threshold
        np.fill_diagonal(A, False)
        return A


@dataclass(frozen=True)
class GraphMetrics:
    average_shortest_path: float
    local_efficiency: float
    global_efficiency: float
    average_clustering: float
    density: float

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def resolve_norms(cohort: Cohort) -> PhenotypeSchema:
    """Fill unset quantitative normalizers with the cohort-wide range.

    A phenotype constant across the cohort gets normalizer 1 (every factor
    is 1 there anyway).
    """
    norms = {}
    for spec in cohort.schema.quantitative:
        if spec.norm is not None:
            continue
        vals = np.array([s.phenotypes.value(spec) for s in cohort.subjects], dtype=float)
        span = float(vals.max() - vals.min()) if len(vals) else 0.0
        norms[spec.name] = span if span > 0 else 1.0
    return cohort.schema.with_norms(norms)


def pair_similarity(a: PhenotypeRecord, b: PhenotypeRecord, schema: PhenotypeSchema,
                    categorical_softness: float = DEFAULT_CATEGORICAL_SOFTNESS) -> float:
    """Product over phenotypes of per-phenotype similarity factors in [0, 1]."""
    w = 1.0
    for spec in schema.phenotypes:
        fa, fb = a.value(spec), b.value(spec)
        if spec.kind == QUANTITATIVE:
            if spec.norm is None:
                raise SchemaError(f"phenotype {spec.name!r} has no normalizer; call resolve_norms")
            factor = 1.0 - abs(fa - fb) / spec.norm
        else:
            factor = 1.0 if fa == fb else categorical_softness
        w *= min(1.0, max(0.0, factor))
    return w


def build_population_graph(cohort: Cohort, categorical_softness: float = DEFAULT_CATEGORICAL_SOFTNESS,
                           threshold: float = 0.0) -> PopulationGraph:
    if not 0.0 <= categorical_softness <= 1.0:
        raise ParameterError("categorical_softness must lie in [0, 1]")
    schema = resolve_norms(cohort)
    n = len(cohort)
    W = np.ones((n, n))
    for spec in schema.phenotypes:
        vals = [s.phenotypes.value(spec) for s in cohort.subjects]
        if spec.kind == QUANTITATIVE:
            x = np.asarray(vals, dtype=float)
            factor = 1.0 - np.abs(x[:, None] - x[None, :]) / spec.norm
        else:
            x = np.asarray(vals, dtype=object)
            factor = np.where(x[:, None] == x[None, :], 1.0, categorical_softness)
        W *= np.clip(factor.astype(float), 0.0, 1.0)
    # mirror the upper triangle so W is exactly symmetric
    iu = np.triu_indices(n, 1)
    W[(iu[1], iu[0])] = W[iu]
    np.fill_diagonal(W, 1.0)
    return PopulationGraph(W, threshold)


def _efficiency(dist: np.ndarray) -> float:
    n = dist.shape[0]
    if n < 2:
        return 0.0
    off = ~np.eye(n, dtype=bool)
    d = dist[off]
    inv = np.zeros_like(d)
    finite = np.isfinite(d)
    inv[finite] = 1.0 / d[finite]
    return float(inv.mean())


def graph_metrics(graph: PopulationGraph) -> GraphMetrics:
    n = graph.n
    if n < 2:
        raise ParameterError("graph metrics need at least 2 nodes")
    A = graph.adjacency()
    dist = shortest_path(A.astype(float), method="D", unweighted=True, directed=False)
    off = ~np.eye(n, dtype=bool)
    d = dist[off]
    connected = np.isfinite(d)
    asp = float(d[connected].mean()) if connected.any() else float("nan")
    glob = _efficiency(dist)

    deg = A.sum(axis=1)
    Af = A.astype(float)
    triangles = np.einsum("ij,jk,ki->i", Af, Af, Af) / 2.0
    pairs = deg * (deg - 1) / 2.0
    clustering = np.divide(triangles, pairs, out=np.zeros(n), where=pairs > 0)

    local = np.zeros(n)
    for i in range(n):
        nbrs = np.flatnonzero(A[i])
        if len(nbrs) < 2:
            continue
        sub = A[np.ix_(nbrs, nbrs)].astype(float)
        local[i] = _efficiency(shortest_path(sub, method="D", unweighted=True, directed=False))

    edges = int(A.sum()) // 2
    return GraphMetrics(
        average_shortest_path=asp,
        local_efficiency=float(local.mean()),
        global_efficiency=glob,
        average_clustering=float(clustering.mean()),
        density=2.0 * edges / (n * (n - 1)),
    )


def reference_graph(kind: str, n: int, density_target: float, seed: int = 0) -> PopulationGraph:
    """Random (independent edges) or ring-lattice reference with unit weights."""
    if n < 2:
        raise ParameterError("reference graphs need n >= 2")
    if not 0.0 < density_target <= 1.0:
        raise ParameterError("density_target must lie in (0, 1]")
    W = np.zeros((n, n))
    if kind == "random":
        rng = np.random.default_rng(seed)
        iu = np.triu_indices(n, 1)
        W[iu] = (rng.random(len(iu[0])) < density_target).astype(float)
        W = W + W.T
    elif kind == "lattice":
        per_side = int(np.floor(density_target * (n - 1) / 2.0))
        if per_side < 1:
            raise ParameterError(f"lattice with density {density_target} on {n} nodes has no neighbors")
        idx = np.arange(n)
        for step in range(1, per_side + 1):
            W[idx, (idx + step) % n] = 1.0
            W[(idx + step) % n, idx] = 1.0
    else:
        raise ParameterError(f"unknown reference graph kind {kind!r}")
    np.fill_diagonal(W, 1.0)
    return PopulationGraph(W, 0.0)
