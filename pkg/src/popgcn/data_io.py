"""Synthetic cohorts, cohort persistence and canonical report emission.

On-disk layout written by :func:`save_cohort`::

    <dir>/phenotypes.csv          id,label,<phenotype columns in schema order>
    <dir>/schema.json             [{"name", "kind", "norm"}, ...]
    <dir>/matrices/<id>/<View>.bin

Matrix files start with the 8-byte tag ``POPGCNM1`` and a little-endian
uint32 ROI count, followed by n_roi * n_roi little-endian float64 values in
row-major order. A plain comma-separated text file (``<View>.csv``) is also
accepted on load.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (CATEGORICAL, QUANTITATIVE, VIEWS, Cohort, Label, ParameterError, PhenotypeRecord,
                   PhenotypeSchema, PhenotypeSpec, PopGCNError, SubjectRecord, TrialView, absolutize,
                   default_schema, validate_cohort)

MATRIX_MAGIC = b"POPGCNM1"


class LoadError(PopGCNError):
    pass


# Table 1 calibration: (mean, SD, clip low, clip high); direction of the community tilt
QUANT_CALIBRATION = {
    "education_years": (12.8, 1.78, 0.0, 25.0, +1.0),
    "education_loss_years": (1.63, 2.87, -10.0, 20.0, -1.0),
    "crime_per_thousand": (4.19, 2.68, 0.0, 40.0, -1.0),
    "baseline_bprs": (42.7, 9.63, 5.0, 144.0, +1.0),
    "age_years": (21.0, 3.18, 12.0, 45.0, -1.0),
}
# majority category, its share, then the minority categories with relative weights
CAT_CALIBRATION = {
    "sex": ("male", 59 / 82, {"female": 1.0}, +1.0),
    "handedness": ("right", 75 / 82, {"left": 1.0}, -1.0),
    "diagnosis": ("schizophrenia", 65 / 82, {"bipolar_i": 1.0}, +1.0),
    "race": ("white", 59 / 82, {"black": 9.0, "asian": 10.0, "pacific_islander": 2.0,
                                "native_american": 1.0, "multiracial": 1.0}, -1.0),
    "scanner_field": ("3T", 0.5, {"1.5T": 1.0}, +1.0),
}


@dataclass(frozen=True)
class SyntheticConfig:
    n_subjects: int = 82
    n_roi: int = 264
    n_communities: int = 2
    n_modules: int = 2
    within_block_mean: float = 0.7
    within_block_sd: float = 0.05
    across_block_mean: float = 0.05
    across_block_sd: float = 0.02
    noise_sd: float = 0.25
    community_roi_fraction: float = 0.1
    community_coupling: float = 0.6
    community_expression: float = 0.5
    phenotype_label_informativeness: float = 0.5
    phenotype_tilt_sd: float = 1.5
    label_positive_count: int = 47
    include_scanner: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 2:
            raise ParameterError("n_subjects must be >= 2")
        if self.n_roi < 3:
            raise ParameterError("n_roi must be >= 3")
        if self.n_communities < 2:
            raise ParameterError("n_communities must be >= 2")
        if not 1 <= self.n_modules <= self.n_roi:
            raise ParameterError("n_modules must lie in [1, n_roi]")
        if not 0.0 <= self.across_block_mean < self.within_block_mean <= 1.0:
            raise ParameterError("need 0 <= across_block_mean < within_block_mean <= 1")
        if min(self.within_block_sd, self.across_block_sd, self.noise_sd) < 0:
            raise ParameterError("standard deviations must be >= 0")
        if not 0.0 <= self.phenotype_label_informativeness <= 1.0:
            raise ParameterError("phenotype_label_informativeness must lie in [0, 1]")
        if not 0.0 <= self.community_roi_fraction <= 1.0:
            raise ParameterError("community_roi_fraction must lie in [0, 1]")
        if not 0.0 <= self.community_coupling <= 1.0:
            raise ParameterError("community_coupling must lie in [0, 1]")
        if not 0.0 <= self.community_expression <= 1.0:
            raise ParameterError("community_expression must lie in [0, 1]")
        if not 0 <= self.label_positive_count <= self.n_subjects:
            raise ParameterError("label_positive_count must lie in [0, n_subjects]")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _module_layout(cfg: SyntheticConfig) -> np.ndarray:
    """ROI -> module assignment shared by all subjects.

    Module sizes grow from 1 to 2 (relative) so the low Laplacian
    eigenvalues separate and eigenvector signs are stable across subjects.
    """
    weights = np.linspace(1.0, 2.0, cfg.n_modules) if cfg.n_modules > 1 else np.ones(1)
    sizes = np.floor(weights / weights.sum() * cfg.n_roi).astype(int)
    sizes[-1] += cfg.n_roi - sizes.sum()
    return np.repeat(np.arange(cfg.n_modules), sizes)


def _community_rois(cfg: SyntheticConfig, rng: np.random.Generator) -> np.ndarray:
    """Boolean n_communities x n_roi mask of ROIs each community decouples."""
    n_weak = int(round(cfg.community_roi_fraction * cfg.n_roi))
    mask = np.zeros((cfg.n_communities, cfg.n_roi), dtype=bool)
    for c in range(cfg.n_communities):
        mask[c, rng.choice(cfg.n_roi, n_weak, replace=False)] = True
    return mask


def _correlation_matrix(layout: np.ndarray, coupling: np.ndarray, cfg: SyntheticConfig,
                        rng: np.random.Generator) -> np.ndarray:
    n = cfg.n_roi
    within = float(np.clip(rng.normal(cfg.within_block_mean, cfg.within_block_sd), 0.0, 1.0))
    across = float(np.clip(rng.normal(cfg.across_block_mean, cfg.across_block_sd), 0.0, within))
    same = layout[:, None] == layout[None, :]
    S = np.where(same, within * np.sqrt(np.outer(coupling, coupling)), across)
    noise = rng.normal(0.0, cfg.noise_sd, (n, n))
    noise = np.triu(noise, 1)
    M = np.clip(S + noise + noise.T, -1.0, 1.0)
    return absolutize(M)


def _side_probability(cfg: SyntheticConfig) -> float:
    """P(community side = 1) marginalized over labels."""
    pi = cfg.label_positive_count / cfg.n_subjects
    agree = (1.0 + cfg.phenotype_label_informativeness) / 2.0
    return pi * agree + (1.0 - pi) * (1.0 - agree)


def _phenotypes(side: int, cfg: SyntheticConfig, q: float, rng: np.random.Generator) -> PhenotypeRecord:
    inf = cfg.phenotype_label_informativeness
    # offsets centred so the cohort-level expectation matches the calibration
    centred = (1.0 - q) if side == 1 else -q
    quant = {}
    for name, (mean, sd, lo, hi, direction) in QUANT_CALIBRATION.items():
        shift = direction * 2.0 * cfg.phenotype_tilt_sd * inf * centred
        quant[name] = float(np.clip(mean + sd * (rng.standard_normal() + shift), lo, hi))
    cat = {}
    for name, (major, base, minors, direction) in CAT_CALIBRATION.items():
        if name == "scanner_field" and not cfg.include_scanner:
            continue
        room = min((1.0 - base) / max(1.0 - q, 1e-12), base / max(q, 1e-12)) if direction > 0 else \
            min(base / max(1.0 - q, 1e-12), (1.0 - base) / max(q, 1e-12))
        p_major = base + direction * inf * room * centred
        u = rng.random()
        if u < p_major:
            cat[name] = major
        else:
            keys = list(minors)
            w = np.array([minors[k] for k in keys])
            cat[name] = keys[int(rng.choice(len(keys), p=w / w.sum()))]
    return PhenotypeRecord(quant, cat)


def generate_synthetic_cohort(config: SyntheticConfig | None = None) -> Cohort:
    """Block-structured cohort whose labels, phenotypes and matrices share latent communities.

    Each subject's community agrees with its label with probability
    (1 + informativeness) / 2; phenotypes are tilted by community side.
    Every matrix shares one ROI-module layout; each community weakens the
    within-module coupling of its own ROI subset, and each subject expresses
    that weakening on a random part of the subset. Views share the subject's
    community and expression but draw independent noise. Per-subject streams
    are seeded by (seed, index).
    """
    cfg = config or SyntheticConfig()
    root = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x5EED]))
    layout = _module_layout(cfg)
    weak = _community_rois(cfg, root)
    labels = np.zeros(cfg.n_subjects, dtype=np.int64)
    labels[root.choice(cfg.n_subjects, cfg.label_positive_count, replace=False)] = 1
    q = _side_probability(cfg)
    agree = (1.0 + cfg.phenotype_label_informativeness) / 2.0
    schema = default_schema(cfg.include_scanner)
    subjects = []
    for i in range(cfg.n_subjects):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, i]))
        side = int(labels[i]) if rng.random() < agree else 1 - int(labels[i])
        sides = np.arange(cfg.n_communities)
        community = int(rng.choice(sides[sides % 2 == side]))
        phen = _phenotypes(side, cfg, q, rng)
        # each subject expresses only part of its community's decoupling
        expressed = weak[community] & (rng.random(cfg.n_roi) < cfg.community_expression)
        coupling = np.where(expressed, cfg.community_coupling, 1.0)
        mats = {v: _correlation_matrix(layout, coupling, cfg, rng) for v in VIEWS}
        subjects.append(SubjectRecord(f"S{i:03d}", phen, Label(int(labels[i])), mats))
    return Cohort(tuple(subjects), schema)


# --- matrices on disk -----------------------------------------------------

def write_matrix(path: Path, M: np.ndarray) -> None:
    M = np.ascontiguousarray(M, dtype="<f8")
    with open(path, "wb") as fh:
        fh.write(MATRIX_MAGIC)
        fh.write(struct.pack("<I", M.shape[0]))
        fh.write(M.tobytes(order="C"))


def read_matrix(path: Path) -> np.ndarray:
    path = Path(path)
    if path.suffix == ".csv":
        rows = []
        with open(path, newline="") as fh:
            for lineno, row in enumerate(csv.reader(fh), 1):
                if not row or all(not c.strip() for c in row):
                    continue
                try:
                    rows.append([float(c) for c in row])
                except ValueError:
                    raise LoadError(f"{path}:{lineno}: non-numeric matrix entry") from None
        if not rows or any(len(r) != len(rows) for r in rows):
            raise LoadError(f"{path}: matrix is not square")
        return np.array(rows, dtype=np.float64)
    data = path.read_bytes()
    if len(data) < 12 or data[:8] != MATRIX_MAGIC:
        raise LoadError(f"{path}: offset 0: bad magic tag")
    (n,) = struct.unpack("<I", data[8:12])
    expected = 12 + 8 * n * n
    if len(data) != expected:
        raise LoadError(f"{path}: offset {len(data)}: expected {expected} bytes for n_roi={n}")
    return np.frombuffer(data, dtype="<f8", offset=12).reshape(n, n).astype(np.float64)


def _schema_json(schema: PhenotypeSchema) -> list[dict]:
    return [{"name": p.name, "kind": p.kind, "norm": p.norm} for p in schema.phenotypes]


def save_cohort(cohort: Cohort, directory: str | Path, force: bool = False) -> list[Path]:
    """Write the cohort; refuses a non-empty target unless ``force``."""
    d = Path(directory)
    if d.exists() and any(d.iterdir()) and not force:
        raise FileExistsError(f"{d} is not empty; pass force=True to overwrite")
    d.mkdir(parents=True, exist_ok=True)
    written = []
    schema_path = d / "schema.json"
    schema_path.write_text(json.dumps(_schema_json(cohort.schema), indent=2) + "\n")
    written.append(schema_path)
    pheno_path = d / "phenotypes.csv"
    with open(pheno_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "label"] + cohort.schema.names)
        for s in cohort.subjects:
            w.writerow([s.id, s.label.token] + [repr(v) if isinstance(v, float) else v
                                                 for v in (s.phenotypes.value(p) for p in cohort.schema.phenotypes)])
    written.append(pheno_path)
    for s in cohort.subjects:
        sd = d / "matrices" / s.id
        sd.mkdir(parents=True, exist_ok=True)
        for view in VIEWS:
            p = sd / f"{view.value}.bin"
            write_matrix(p, s.matrices[view])
            written.append(p)
    return written


def load_schema(path: Path) -> PhenotypeSchema:
    try:
        items = json.loads(Path(path).read_text())
        return PhenotypeSchema(tuple(PhenotypeSpec(i["name"], i["kind"], i.get("norm")) for i in items))
    except (ValueError, KeyError, TypeError) as exc:
        raise LoadError(f"{path}: invalid schema: {exc}") from exc


def load_cohort(phenotype_path: str | Path, matrix_dir: str | Path | None = None,
                schema: PhenotypeSchema | None = None) -> Cohort:
    """Read a cohort and validate it; any problem raises LoadError naming the file."""
    phenotype_path = Path(phenotype_path)
    if phenotype_path.is_dir():
        phenotype_path = phenotype_path / "phenotypes.csv"
    if not phenotype_path.exists():
        raise LoadError(f"{phenotype_path}: no such file")
    root = phenotype_path.parent
    matrix_dir = Path(matrix_dir) if matrix_dir is not None else root / "matrices"
    if schema is None:
        schema_file = root / "schema.json"
        schema = load_schema(schema_file) if schema_file.exists() else default_schema()
    subjects = []
    with open(phenotype_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:2] != ["id", "label"]:
            raise LoadError(f"{phenotype_path}:1: header must start with id,label")
        missing = [n for n in schema.names if n not in header]
        if missing:
            raise LoadError(f"{phenotype_path}:1: missing phenotype columns {missing}")
        col = {name: header.index(name) for name in schema.names}
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != len(header):
                raise LoadError(f"{phenotype_path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            quant, cat = {}, {}
            for spec in schema.phenotypes:
                raw = row[col[spec.name]]
                if spec.kind == QUANTITATIVE:
                    try:
                        value = float(raw)
                    except ValueError:
                        raise LoadError(f"{phenotype_path}:{lineno}: {spec.name} is not numeric: {raw!r}") from None
                    if not math.isfinite(value):
                        raise LoadError(f"{phenotype_path}:{lineno}: {spec.name} is not finite")
                    quant[spec.name] = value
                else:
                    cat[spec.name] = raw
            try:
                label = Label.parse(row[1])
            except PopGCNError as exc:
                raise LoadError(f"{phenotype_path}:{lineno}: {exc}") from None
            sid = row[0]
            mats = {}
            for view in VIEWS:
                candidates = [matrix_dir / sid / f"{view.value}.bin", matrix_dir / sid / f"{view.value}.csv"]
                found = next((c for c in candidates if c.exists()), None)
                if found is None:
                    raise LoadError(f"{matrix_dir / sid}: subject {sid} is missing view {view.value}")
                mats[view] = read_matrix(found)
            subjects.append(SubjectRecord(sid, PhenotypeRecord(quant, cat), label, mats))
    if not subjects:
        raise LoadError(f"{phenotype_path}: no subjects")
    cohort = Cohort(tuple(subjects), schema)
    problems = validate_cohort(cohort)
    if problems:
        listed = "; ".join(str(p) for p in problems[:5])
        raise LoadError(f"{phenotype_path}: {len(problems)} invariant violation(s): {listed}")
    return cohort


# --- reports --------------------------------------------------------------

def _canonical(obj, path: str, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = []
        for k in sorted(obj, key=str):
            items.append(f"{pad}{json.dumps(str(k))}: {_canonical(obj[k], f'{path}.{k}', indent, level + 1)}")
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        seq = list(obj)
        if not seq:
            return "[]"
        items = [_canonical(v, f"{path}[{i}]", indent, level + 1) for i, v in enumerate(seq)]
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in seq):
            return "[" + ", ".join(items) + "]"
        return "[\n" + ",\n".join(pad + i for i in items) + "\n" + end + "]"
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if not math.isfinite(x):
            raise ValueError(f"non-finite number at {path or '$'}")
        return format(x, ".17g")
    if isinstance(obj, str):
        return json.dumps(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__} at {path or '$'}")


def canonical_json(document) -> str:
    """Sorted keys, 17-significant-digit floats; rejects NaN/inf with the field path."""
    return _canonical(document, "$", 2, 0) + "\n"


def hash_config(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()


def write_report(document: dict, path: str | Path) -> Path:
    text = canonical_json(document)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path
