"""Shared domain types: trial views, phenotype schema, subjects and cohorts."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

SYMMETRY_TOL = 1e-12
ABS_RANGE_TOL = 1e-9
DEFAULT_N_ROI = 264


class PopGCNError(Exception):
    """Base class for every error raised by this package."""


class ParameterError(PopGCNError, ValueError):
    pass


class SchemaError(PopGCNError, ValueError):
    pass


class InvariantError(PopGCNError, ValueError):
    pass


class ShapeError(PopGCNError, ValueError):
    pass


class NumericalError(PopGCNError, ArithmeticError):
    pass


class DegenerateVarianceError(NumericalError):
    pass


class TrialView(str, enum.Enum):
    CUE_A = "CueA"
    CUE_B = "CueB"
    PROBE_AX = "ProbeAX"
    PROBE_AY = "ProbeAY"
    PROBE_BX = "ProbeBX"
    PROBE_BY = "ProbeBY"

    @classmethod
    def parse(cls, token: str) -> "TrialView":
        try:
            return cls(token)
        except ValueError:
            raise SchemaError(f"unknown trial view {token!r}") from None


VIEWS: tuple[TrialView, ...] = tuple(TrialView)


class Label(enum.IntEnum):
    NON_IMPROVER = 0
    IMPROVER = 1

    @classmethod
    def parse(cls, token: str | int) -> "Label":
        if isinstance(token, (int, np.integer)):
            return cls(int(token))
        t = str(token).strip()
        lookup = {"1": cls.IMPROVER, "improver": cls.IMPROVER,
                  "0": cls.NON_IMPROVER, "nonimprover": cls.NON_IMPROVER,
                  "non_improver": cls.NON_IMPROVER, "non-improver": cls.NON_IMPROVER}
        try:
            return lookup[t.lower()]
        except KeyError:
            raise SchemaError(f"unknown label {token!r}") from None

    @property
    def token(self) -> str:
        return "Improver" if self is Label.IMPROVER else "NonImprover"


QUANTITATIVE = "quantitative"
CATEGORICAL = "categorical"


@dataclass(frozen=True)
class PhenotypeSpec:
    name: str
    kind: str
    # normalizer C(p); None means "cohort range, recomputed at graph build"
    norm: float | None = None

    def __post_init__(self):
        if self.kind not in (QUANTITATIVE, CATEGORICAL):
            raise SchemaError(f"phenotype {self.name!r}: unknown kind {self.kind!r}")
        if self.norm is not None and not (self.norm > 0):
            raise SchemaError(f"phenotype {self.name!r}: normalizer must be > 0")


@dataclass(frozen=True)
class PhenotypeSchema:
    phenotypes: tuple[PhenotypeSpec, ...]

    def __post_init__(self):
        names = [p.name for p in self.phenotypes]
        if len(set(names)) != len(names):
            raise SchemaError("duplicate phenotype names in schema")

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.phenotypes]

    @property
    def quantitative(self) -> list[PhenotypeSpec]:
        return [p for p in self.phenotypes if p.kind == QUANTITATIVE]

    @property
    def categorical(self) -> list[PhenotypeSpec]:
        return [p for p in self.phenotypes if p.kind == CATEGORICAL]

    def without(self, *names: str) -> "PhenotypeSchema":
        return PhenotypeSchema(tuple(p for p in self.phenotypes if p.name not in names))

    def with_norms(self, norms: Mapping[str, float]) -> "PhenotypeSchema":
        return PhenotypeSchema(tuple(
            PhenotypeSpec(p.name, p.kind, norms.get(p.name, p.norm)) for p in self.phenotypes))


def default_schema(include_scanner: bool = True) -> PhenotypeSchema:
    """Phenotypes of the clinical cohort: five quantitative, five categorical."""
    specs = [
        PhenotypeSpec("education_years", QUANTITATIVE),
        PhenotypeSpec("education_loss_years", QUANTITATIVE),
        PhenotypeSpec("crime_per_thousand", QUANTITATIVE),
        PhenotypeSpec("baseline_bprs", QUANTITATIVE),
        PhenotypeSpec("age_years", QUANTITATIVE),
        PhenotypeSpec("sex", CATEGORICAL),
        PhenotypeSpec("handedness", CATEGORICAL),
        PhenotypeSpec("diagnosis", CATEGORICAL),
        PhenotypeSpec("race", CATEGORICAL),
    ]
    if include_scanner:
        specs.append(PhenotypeSpec("scanner_field", CATEGORICAL))
    return PhenotypeSchema(tuple(specs))


@dataclass(frozen=True)
class PhenotypeRecord:
    quantitative: Mapping[str, float]
    categorical: Mapping[str, str]

    def __post_init__(self):
        object.__setattr__(self, "quantitative",
                           MappingProxyType({k: float(v) for k, v in self.quantitative.items()}))
        object.__setattr__(self, "categorical",
                           MappingProxyType({k: str(v) for k, v in self.categorical.items()}))

    def value(self, spec: PhenotypeSpec) -> float | str:
        source = self.quantitative if spec.kind == QUANTITATIVE else self.categorical
        try:
            return source[spec.name]
        except KeyError:
            raise SchemaError(f"missing phenotype {spec.name!r}") from None

    def __eq__(self, other):
        if not isinstance(other, PhenotypeRecord):
            return NotImplemented
        return dict(self.quantitative) == dict(other.quantitative) and \
            dict(self.categorical) == dict(other.categorical)

    def __hash__(self):
        return hash((tuple(sorted(self.quantitative.items())),
                     tuple(sorted(self.categorical.items()))))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SubjectRecord:
    id: str
    phenotypes: PhenotypeRecord
    label: Label
    matrices: Mapping[TrialView, np.ndarray] = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "label", Label.parse(self.label))
        object.__setattr__(self, "matrices", MappingProxyType(
            {TrialView(v): _frozen(m) for v, m in self.matrices.items()}))

    @property
    def n_roi(self) -> int:
        return next(iter(self.matrices.values())).shape[0]

    def __eq__(self, other):
        if not isinstance(other, SubjectRecord):
            return NotImplemented
        return (self.id == other.id and self.label == other.label
                and self.phenotypes == other.phenotypes
                and set(self.matrices) == set(other.matrices)
                and all(np.array_equal(self.matrices[v], other.matrices[v]) for v in self.matrices))


@dataclass(frozen=True, eq=False)
class Cohort:
    subjects: tuple[SubjectRecord, ...]
    schema: PhenotypeSchema

    def __post_init__(self):
        object.__setattr__(self, "subjects", tuple(self.subjects))

    def __len__(self):
        return len(self.subjects)

    def __eq__(self, other):
        if not isinstance(other, Cohort):
            return NotImplemented
        return self.schema == other.schema and self.subjects == other.subjects

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.subjects]

    @property
    def labels(self) -> np.ndarray:
        return np.array([int(s.label) for s in self.subjects], dtype=np.int64)

    @property
    def n_roi(self) -> int:
        return self.subjects[0].n_roi

    def matrices(self, view: TrialView) -> list[np.ndarray]:
        return [s.matrices[TrialView(view)] for s in self.subjects]

    def subset(self, indices: Sequence[int]) -> "Cohort":
        return Cohort(tuple(self.subjects[i] for i in indices), self.schema)


@dataclass(frozen=True)
class Violation:
    subject: str | None
    view: str | None
    rule: str
    detail: str = ""

    def __str__(self):
        where = "/".join(x for x in (self.subject, self.view) if x) or "cohort"
        return f"{where}: {self.rule}" + (f" ({self.detail})" if self.detail else "")


def matrix_violations(m: np.ndarray) -> list[tuple[str, str]]:
    """Failed CorrelationMatrix rules as (rule, detail) pairs."""
    m = np.asarray(m)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] < 1:
        return [("shape", f"expected square matrix, got {m.shape}")]
    out = []
    if not np.all(np.isfinite(m)):
        return [("finite", "non-finite entries")]
    asym = float(np.max(np.abs(m - m.T)))
    if asym > SYMMETRY_TOL:
        out.append(("symmetry", f"max |C - C^T| = {asym:.3g}"))
    lo, hi = float(m.min()), float(m.max())
    if lo < 0.0 or hi > 1.0:
        out.append(("range", f"entries span [{lo:.3g}, {hi:.3g}], expected [0, 1]"))
    if not np.all(np.diag(m) == 1.0):
        out.append(("unit-diagonal", "diagonal entries must equal 1"))
    return out


def validate_cohort(cohort: Cohort) -> list[Violation]:
    """Check every type invariant; returns diagnostics instead of raising."""
    found: list[Violation] = []
    seen: set[str] = set()
    n_roi = None
    for s in cohort.subjects:
        if s.id in seen:
            found.append(Violation(s.id, None, "unique-id", "duplicate subject id"))
        seen.add(s.id)
        for spec in cohort.schema.phenotypes:
            try:
                value = s.phenotypes.value(spec)
            except SchemaError:
                found.append(Violation(s.id, None, "phenotype-present", spec.name))
                continue
            if spec.kind == QUANTITATIVE and not math.isfinite(value):
                found.append(Violation(s.id, None, "phenotype-finite", spec.name))
        for view in VIEWS:
            if view not in s.matrices:
                found.append(Violation(s.id, view.value, "view-present"))
                continue
            m = s.matrices[view]
            for rule, detail in matrix_violations(m):
                found.append(Violation(s.id, view.value, rule, detail))
            if m.ndim == 2:
                if n_roi is None:
                    n_roi = m.shape[0]
                elif m.shape[0] != n_roi:
                    found.append(Violation(s.id, view.value, "shared-n_roi",
                                           f"{m.shape[0]} != {n_roi}"))
    return found


def absolutize(matrix: np.ndarray) -> np.ndarray:
    """Element-wise |C| with the diagonal forced to 1."""
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"expected square matrix, got {m.shape}")
    if np.any(~np.isfinite(m)) or np.any(np.abs(m) > 1.0 + ABS_RANGE_TOL):
        raise InvariantError("correlation entries must lie in [-1, 1]")
    out = np.minimum(np.abs(m), 1.0)
    np.fill_diagonal(out, 1.0)
    return out
