import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stanet.synthgen import (CLASS_BAND, CohortSpec, band_power, generate_cohort, load_cohort,
                             region_mask, save_cohort)

SMALL = dict(n_patients=4, n_controls=3, timepoints=20, voxels=49, n_true_sources=3)


def test_default_counts_match_cohort_sizes():
    scans, truth = generate_cohort(CohortSpec(seed=7))
    assert len(scans) == 72
    assert sum(s.label for s in scans) == 51
    assert all(s.data.shape == (95, 400) for s in scans)
    assert truth.sources.shape == (8, 400)


def test_patients_come_first_with_stable_ids():
    scans, _ = generate_cohort(CohortSpec(**SMALL))
    assert [s.label for s in scans] == [1] * 4 + [0] * 3
    assert scans[0].subject_id == "sub-001" and scans[-1].subject_id == "sub-007"


def test_same_spec_is_bit_identical():
    a, _ = generate_cohort(CohortSpec(seed=7, **SMALL))
    b, _ = generate_cohort(CohortSpec(seed=7, **SMALL))
    assert all(x.data.tobytes() == y.data.tobytes() for x, y in zip(a, b))


def test_different_seed_differs():
    a, _ = generate_cohort(CohortSpec(seed=1, **SMALL))
    b, _ = generate_cohort(CohortSpec(seed=2, **SMALL))
    assert not np.array_equal(a[0].data, b[0].data)


@pytest.mark.parametrize("field,value", [
    ("n_patients", 0), ("n_controls", 0), ("timepoints", 12), ("voxels", 2),
    ("noise_sigma", -0.1), ("class_effect", "colour"), ("n_true_sources", 0),
])
def test_invalid_spec_names_field(field, value):
    with pytest.raises(ValueError, match=f"CohortSpec.{field}"):
        CohortSpec(**{**SMALL, field: value})


def test_identity_single_source_noiseless():
    spec = CohortSpec(n_patients=1, n_controls=1, timepoints=15, voxels=36, n_true_sources=1,
                      noise_sigma=0.0, mixing="identity", class_effect="temporal-spectrum")
    scans, truth = generate_cohort(spec)
    for s in scans:
        np.testing.assert_array_equal(s.data[0], truth.sources[0])
        np.testing.assert_array_equal(s.data[1:], 0.0)


def test_sources_nearly_uncorrelated():
    _, truth = generate_cohort(CohortSpec(seed=3))
    C = np.corrcoef(truth.sources)
    off = np.abs(C[~np.eye(len(C), dtype=bool)])
    assert off.max() < 0.2


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31), n=st.integers(1, 4))
def test_noiseless_rank_bounded_by_sources(seed, n):
    spec = CohortSpec(n_patients=2, n_controls=2, timepoints=20, voxels=49, n_true_sources=n,
                      noise_sigma=0.0, seed=seed)
    scans, _ = generate_cohort(spec)
    for s in scans:
        assert np.linalg.matrix_rank(s.data) <= n


def test_class_band_power_higher_in_patients():
    spec = CohortSpec(noise_sigma=0.0, seed=5)
    scans, truth = generate_cohort(spec)
    pat = [band_power(A) for A, s in zip(truth.mixings, scans) if s.label == 1]
    con = [band_power(A) for A, s in zip(truth.mixings, scans) if s.label == 0]
    assert np.mean(pat) > np.mean(con)


def test_class_band_is_upper_third():
    assert CLASS_BAND == pytest.approx((1 / 3, 0.5))


def test_spatial_effect_amplifies_block_only():
    base = dict(SMALL, noise_sigma=0.0, mixing="identity", effect_size=1.0)
    scans, truth = generate_cohort(CohortSpec(class_effect="spatial-amplitude", **base))
    mask = region_mask(49)
    pat, con = scans[0].data[0], scans[-1].data[0]
    np.testing.assert_allclose(pat[mask], 2.0 * truth.sources[0][mask])
    np.testing.assert_array_equal(pat[~mask], con[~mask])


def test_cohort_directory_round_trip(tmp_path):
    spec = CohortSpec(seed=4, **SMALL)
    scans, _ = generate_cohort(spec)
    save_cohort(tmp_path / "c", scans, spec)
    back, spec2 = load_cohort(tmp_path / "c")
    assert spec2 == spec
    assert [s.subject_id for s in back] == [s.subject_id for s in scans]
    assert all(a.data.tobytes() == b.data.tobytes() and a.label == b.label for a, b in zip(scans, back))


def test_cohort_files_are_little_endian_float64(tmp_path):
    spec = CohortSpec(seed=4, **SMALL)
    scans, _ = generate_cohort(spec)
    save_cohort(tmp_path / "c", scans, spec)
    raw = np.fromfile(tmp_path / "c" / "sub-001.f64", dtype="<f8").reshape(20, 49)
    np.testing.assert_array_equal(raw, scans[0].data)
