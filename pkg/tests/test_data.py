import numpy as np
import pytest

from clinic import data as cd
from clinic import infotheory as it


def small_cfg(**kw):
    defaults = dict(num_classes=2, num_sensitive=2, rho=0.5, dim=4, n=2000, seed=3)
    defaults.update(kw)
    return cd.SynthConfig(**defaults)


def test_rho_zero_gives_independent_labels():
    ds = cd.generate(small_cfg(rho=0.0, n=100_000))
    counts = np.zeros((2, 2))
    np.add.at(counts, (ds.y, ds.s), 1.0)
    assert it.mi_from_table(counts / counts.sum()) < 0.001


def test_rho_one_binary_ties_s_to_y():
    ds = cd.generate(small_cfg(rho=1.0, n=5000))
    np.testing.assert_array_equal(ds.s, ds.y)


def test_rho_half_matches_exact_mi_oracle():
    cfg = small_cfg(rho=0.5, n=100_000)
    joint = cd.ys_joint(cfg)
    np.testing.assert_allclose(joint, [[0.375, 0.125], [0.125, 0.375]], atol=1e-15)
    expected = it.mi_from_table(joint)
    assert expected == pytest.approx(0.1308, abs=2e-4)
    ds = cd.generate(cfg)
    counts = np.zeros((2, 2))
    np.add.at(counts, (ds.y, ds.s), 1.0)
    observed = it.mi_from_table(counts / counts.sum())
    assert observed == pytest.approx(expected, abs=0.005)


def test_degenerate_sigma_rejected():
    with pytest.raises(ValueError, match="noise_sigma"):
        small_cfg(noise_sigma=0.0)


def test_generation_is_bit_reproducible():
    a = cd.generate(small_cfg(seed=11))
    b = cd.generate(small_cfg(seed=11))
    np.testing.assert_array_equal(a.features, b.features)
    np.testing.assert_array_equal(a.y, b.y)
    np.testing.assert_array_equal(a.s, b.s)


def test_y_marginals_uniform_within_3_sigma():
    cfg = small_cfg(n=40_000)
    ds = cd.generate(cfg)
    counts = np.bincount(ds.y, minlength=2)
    sigma = np.sqrt(cfg.n * 0.5 * 0.5)
    assert abs(counts[0] - cfg.n / 2) < 3 * sigma


def test_splits_disjoint_and_sized():
    ds = cd.generate(small_cfg(n=1000))
    tr, dv, te = (ds.indices(name) for name in cd.SPLIT_NAMES)
    assert len(tr) == 800 and len(dv) == 100 and len(te) == 100
    assert len(np.intersect1d(tr, dv)) == 0
    assert len(np.intersect1d(tr, te)) == 0


def test_csv_round_trip_is_exact(tmp_path):
    ds = cd.generate(small_cfg(n=500))
    path = tmp_path / "data.csv"
    cd.write_csv(ds, path)
    back = cd.load_csv(path)
    np.testing.assert_allclose(back.features, ds.features, atol=1e-12)
    np.testing.assert_array_equal(back.y, ds.y)
    np.testing.assert_array_equal(back.s, ds.s)


def test_load_csv_two_rows(tmp_path):
    path = tmp_path / "tiny.csv"
    path.write_text("f0,f1,y,s\n0.5,-1.25,0,1\n2.0,3.0,1,0\n")
    ds = cd.load_csv(path)
    assert ds.dim == 2 and len(ds.y) == 2
    np.testing.assert_allclose(ds.features[0], [0.5, -1.25])


def test_load_csv_missing_y_column(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("f0,f1,s\n0.5,1.0,1\n")
    with pytest.raises(cd.CsvFormatError, match="y"):
        cd.load_csv(path)


def test_load_csv_ragged_row_names_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("f0,y,s\n1.0,0,1\n1.0,0\n")
    with pytest.raises(cd.CsvFormatError, match="line 3"):
        cd.load_csv(path)


def test_load_csv_non_numeric_cell_names_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("f0,y,s\nabc,0,1\n")
    with pytest.raises(cd.CsvFormatError, match="line 2"):
        cd.load_csv(path)


def test_sample_batch_full_split_is_permutation():
    ds = cd.generate(small_cfg(n=100))
    rng = np.random.default_rng(0)
    batch = cd.sample_batch(ds, 80, rng)
    assert sorted(batch.indices.tolist()) == ds.indices("train").tolist()


def test_sample_batch_deterministic_given_seed():
    ds = cd.generate(small_cfg(n=400))
    seqs = []
    for _ in range(2):
        rng = np.random.default_rng(9)
        seqs.append([cd.sample_batch(ds, 32, rng).indices for _ in range(5)])
    for a, b in zip(*seqs):
        np.testing.assert_array_equal(a, b)


def test_sample_batch_too_large_errors():
    ds = cd.generate(small_cfg(n=100))
    with pytest.raises(ValueError, match="exceeds"):
        cd.sample_batch(ds, 81, np.random.default_rng(0))


def test_default_batch_size_matches_protocol():
    from clinic.train import TrainConfig

    assert TrainConfig().batch_size == 256
