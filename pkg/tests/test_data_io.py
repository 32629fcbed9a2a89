import hashlib
import json

import numpy as np
import pytest
from scipy import optimize

from popgcn.core import VIEWS, ParameterError, TrialView, validate_cohort
from popgcn.data_io import (CAT_CALIBRATION, QUANT_CALIBRATION, LoadError, SyntheticConfig, canonical_json,
                            generate_synthetic_cohort, hash_config, load_cohort, read_matrix, save_cohort,
                            write_matrix, write_report)
from popgcn.gnn import encode_phenotypes


def tiny(**kw):
    base = dict(n_subjects=6, n_roi=5, label_positive_count=3, seed=2)
    return SyntheticConfig(**{**base, **kw})


def test_default_config_matches_cohort_size():
    cfg = SyntheticConfig()
    assert (cfg.n_subjects, cfg.label_positive_count, cfg.n_roi) == (82, 47, 264)


def test_default_cohort_counts(default_cohort):
    assert len(default_cohort) == 82
    assert int(default_cohort.labels.sum()) == 47
    assert default_cohort.n_roi == 264
    assert validate_cohort(default_cohort) == []


def test_same_seed_bit_identical():
    a = generate_synthetic_cohort(tiny(seed=5))
    b = generate_synthetic_cohort(tiny(seed=5))
    assert a == b
    assert a != generate_synthetic_cohort(tiny(seed=6))


@pytest.mark.parametrize("bad", [dict(label_positive_count=7), dict(n_subjects=1), dict(n_roi=2),
                                 dict(across_block_mean=0.8), dict(phenotype_label_informativeness=1.5),
                                 dict(noise_sd=-0.1), dict(n_communities=1)])
def test_config_validation(bad):
    with pytest.raises(ParameterError):
        tiny(**bad)


def _quant_matrix(cohort):
    names = list(QUANT_CALIBRATION)
    return np.array([[s.phenotypes.quantitative[n] for n in names] for s in cohort.subjects])


def test_uninformative_phenotypes_are_uncorrelated_with_labels():
    rs = []
    for seed in range(50):
        c = generate_synthetic_cohort(SyntheticConfig(n_roi=4, n_modules=1, seed=seed,
                                                      phenotype_label_informativeness=0.0))
        Q = _quant_matrix(c)
        rs.append(np.mean([np.corrcoef(Q[:, j], c.labels)[0, 1] for j in range(Q.shape[1])]))
    assert abs(np.mean(rs)) <= 0.1


def test_fully_informative_phenotypes_are_linearly_separable():
    c = generate_synthetic_cohort(SyntheticConfig(n_roi=4, n_modules=1, seed=13,
                                                  phenotype_label_informativeness=1.0))
    X = encode_phenotypes(c)
    X = np.hstack([X, np.ones((len(c), 1))])
    y = c.labels * 2 - 1

    def loss(w):
        z = y * (X @ w)
        return np.sum(np.logaddexp(0, -z)) + 1e-3 * w @ w

    w = optimize.minimize(loss, np.zeros(X.shape[1]), method="BFGS").x
    assert np.mean(np.sign(X @ w) == y) >= 0.95


def test_marginals_track_calibration():
    # pool many uninformative cohorts; means and majority shares should sit on the calibration
    rows, cats = [], {k: [] for k in CAT_CALIBRATION}
    for seed in range(20):
        c = generate_synthetic_cohort(SyntheticConfig(n_roi=4, n_modules=1, seed=seed,
                                                      phenotype_label_informativeness=0.0))
        rows.append(_quant_matrix(c))
        for k in cats:
            cats[k] += [s.phenotypes.categorical[k] for s in c.subjects]
    Q = np.vstack(rows)
    for j, (name, (mean, sd, lo, hi, _)) in enumerate(QUANT_CALIBRATION.items()):
        if lo <= mean - 3 * sd:  # unclipped fields only: clipping shifts the mean
            assert abs(Q[:, j].mean() - mean) < 4 * sd / np.sqrt(len(Q)), name
    assert abs(np.mean(np.array(cats["sex"]) == "male") - 59 / 82) < 0.05
    assert abs(np.mean(np.array(cats["handedness"]) == "right") - 75 / 82) < 0.05
    assert abs(np.mean(np.array(cats["diagnosis"]) == "schizophrenia") - 65 / 82) < 0.05
    assert abs(np.mean(np.array(cats["race"]) == "white") - 59 / 82) < 0.05


def test_clip_ranges_hold(default_cohort):
    Q = _quant_matrix(default_cohort)
    for j, (name, (_, _, lo, hi, _)) in enumerate(QUANT_CALIBRATION.items()):
        assert Q[:, j].min() >= lo and Q[:, j].max() <= hi, name
    assert Q[:, list(QUANT_CALIBRATION).index("age_years")].min() >= 12
    assert Q[:, list(QUANT_CALIBRATION).index("baseline_bprs")].min() >= 5


def test_round_trip(tmp_path):
    c = generate_synthetic_cohort(tiny())
    target = tmp_path / "new" / "cohort"
    written = save_cohort(c, target)
    assert target.is_dir() and len(written) == 2 + 6 * len(c)
    assert load_cohort(target) == c
    assert load_cohort(target / "phenotypes.csv", target / "matrices") == c


def test_overwrite_needs_force(tmp_path):
    c = generate_synthetic_cohort(tiny())
    save_cohort(c, tmp_path)
    with pytest.raises(FileExistsError):
        save_cohort(c, tmp_path)
    save_cohort(c, tmp_path, force=True)


def test_missing_view_names_subject_and_view(tmp_path):
    c = generate_synthetic_cohort(tiny())
    save_cohort(c, tmp_path)
    (tmp_path / "matrices" / "S003" / "ProbeBY.bin").unlink()
    with pytest.raises(LoadError, match="S003.*ProbeBY"):
        load_cohort(tmp_path)


def test_malformed_row_cites_line(tmp_path):
    c = generate_synthetic_cohort(tiny())
    save_cohort(c, tmp_path)
    p = tmp_path / "phenotypes.csv"
    lines = p.read_text().splitlines()
    header = lines[0].split(",")
    row = lines[3].split(",")
    row[header.index("age_years")] = "twenty"
    lines[3] = ",".join(row)
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(LoadError, match=r"phenotypes.csv:4: age_years"):
        load_cohort(tmp_path)


def test_invalid_matrix_rejected_on_load(tmp_path):
    c = generate_synthetic_cohort(tiny())
    save_cohort(c, tmp_path)
    path = tmp_path / "matrices" / "S000" / "CueA.bin"
    M = read_matrix(path)
    M[0, 1] = 0.99
    write_matrix(path, M)
    with pytest.raises(LoadError, match="S000/CueA: symmetry"):
        load_cohort(tmp_path)


def test_text_matrices_accepted(tmp_path):
    c = generate_synthetic_cohort(tiny())
    save_cohort(c, tmp_path)
    d = tmp_path / "matrices" / "S001"
    M = read_matrix(d / "CueB.bin")
    (d / "CueB.bin").unlink()
    (d / "CueB.csv").write_text("\n".join(",".join(repr(float(x)) for x in row) for row in M) + "\n")
    back = load_cohort(tmp_path)
    np.testing.assert_array_equal(back.subjects[1].matrices[TrialView.CUE_B], M)


def test_matrix_file_errors(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTMAGIC" + b"\0" * 8)
    with pytest.raises(LoadError, match="offset 0"):
        read_matrix(bad)
    good = tmp_path / "m.bin"
    write_matrix(good, np.eye(3))
    good.write_bytes(good.read_bytes()[:-8])
    with pytest.raises(LoadError, match="offset"):
        read_matrix(good)
    txt = tmp_path / "m.csv"
    txt.write_text("1,0\n0,x\n")
    with pytest.raises(LoadError, match="m.csv:2"):
        read_matrix(txt)


def test_matrix_binary_layout(tmp_path):
    p = tmp_path / "m.bin"
    M = np.array([[1.0, 0.25], [0.25, 1.0]])
    write_matrix(p, M)
    raw = p.read_bytes()
    assert raw[:8] == b"POPGCNM1" and int.from_bytes(raw[8:12], "little") == 2
    np.testing.assert_array_equal(np.frombuffer(raw[12:], "<f8"), M.ravel())


def test_canonical_json_sorted_and_exact():
    text = canonical_json({"b": 0.1, "a": [1, 2.5], "c": {"z": True, "y": None}})
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert "0.10000000000000001" in text
    assert json.loads(text) == {"b": 0.1, "a": [1, 2.5], "c": {"z": True, "y": None}}


def test_canonical_json_rejects_nan_with_path():
    with pytest.raises(ValueError, match=r"\$\.models\.gnn2\[1\]"):
        canonical_json({"models": {"gnn2": [0.5, float("nan")]}})


def test_report_hash_matches_independent_rehash(tmp_path):
    cfg = {"seed": 3, "k": 10, "models": ["gnn2"]}
    doc = {"config": cfg, "config_hash": hash_config(cfg)}
    p = write_report(doc, tmp_path / "r.json")
    loaded = json.loads(p.read_text())
    assert loaded["config_hash"] == hashlib.sha256(canonical_json(loaded["config"]).encode()).hexdigest()
    write_report(doc, tmp_path / "r2.json")
    assert p.read_bytes() == (tmp_path / "r2.json").read_bytes()


def test_views_share_community_but_not_noise():
    c = generate_synthetic_cohort(tiny(n_roi=12))
    s = c.subjects[0]
    a, b = s.matrices[VIEWS[0]], s.matrices[VIEWS[1]]
    assert not np.array_equal(a, b)
