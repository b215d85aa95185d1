"""Planted-latent-domain generator: style linearity, determinism, structure."""
import json

import numpy as np
import pytest

from mssda.data import load_dataset, save_dataset
from mssda.errors import InputError
from mssda.synthetic import SyntheticSpec, generate_synthetic


def test_single_domain_no_noise_identical_channel_stats():
    spec = SyntheticSpec(n_subjects=4, samples_per_subject=5, n_latent_domains=1,
                         noise_sigma=0.0, seed=0)
    ds, _ = generate_synthetic(spec)
    ref = None
    for rec in ds.subjects:
        for s in rec.samples:
            stats = np.stack([s.values.mean(axis=0), s.values.std(axis=0)])
            if ref is None:
                ref = stats
            assert np.allclose(stats, ref, atol=1e-12)


def test_gain_three_to_one_scales_std_exactly():
    gains = ((1.0,) * 4, (3.0,) * 4)
    offsets = ((0.0,) * 4, (0.0,) * 4)
    spec = SyntheticSpec(n_subjects=4, samples_per_subject=6, n_latent_domains=2,
                         channels=4, noise_sigma=0.0, domain_gains=gains,
                         domain_offsets=offsets, seed=1)
    ds, truth = generate_synthetic(spec)
    by_domain = {0: [], 1: []}
    for rec in ds.subjects:
        for s in rec.samples:
            by_domain[truth[rec.subject_id]].append(s.values)
    std0 = np.concatenate(by_domain[0]).std(axis=0)
    std1 = np.concatenate(by_domain[1]).std(axis=0)
    assert np.allclose(std1, 3.0 * std0, rtol=1e-12)


def test_offsets_shift_means_exactly():
    gains = ((1.0,) * 3, (1.0,) * 3)
    offsets = ((0.0,) * 3, (7.0,) * 3)
    spec = SyntheticSpec(n_subjects=4, samples_per_subject=4, n_latent_domains=2,
                         channels=3, noise_sigma=0.0, domain_gains=gains,
                         domain_offsets=offsets, seed=2)
    ds, truth = generate_synthetic(spec)
    m = {0: [], 1: []}
    for rec in ds.subjects:
        for s in rec.samples:
            m[truth[rec.subject_id]].append(s.values.mean(axis=0))
    assert np.allclose(np.mean(m[1], axis=0) - np.mean(m[0], axis=0), 7.0, atol=1e-12)


def test_every_domain_contains_both_classes():
    ds, truth = generate_synthetic(SyntheticSpec(seed=3))
    classes_per_domain = {}
    for rec in ds.subjects:
        classes_per_domain.setdefault(truth[rec.subject_id], set()).add(rec.class_label)
    assert len(classes_per_domain) == 3
    assert all(v == {0, 1} for v in classes_per_domain.values())


def test_ground_truth_covers_all_subjects():
    ds, truth = generate_synthetic(SyntheticSpec(n_subjects=8, n_latent_domains=2, seed=4))
    assert set(truth) == set(ds.subject_ids())
    assert set(truth.values()) == {0, 1}


def test_generator_deterministic_bytes(tmp_path):
    for sub in ("a", "b"):
        ds, truth = generate_synthetic(SyntheticSpec(n_subjects=6, samples_per_subject=3,
                                                     seed=9))
        save_dataset(ds, tmp_path / sub, ground_truth=truth)
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    truth_file = json.loads((tmp_path / "a" / "ground_truth.json").read_text())
    assert len(truth_file) == 6


def test_round_trip_loadable(tmp_path):
    ds, truth = generate_synthetic(SyntheticSpec(n_subjects=6, samples_per_subject=2, seed=5))
    save_dataset(ds, tmp_path / "d", ground_truth=truth)
    back = load_dataset(tmp_path / "d")
    assert back.n_samples == 12
    assert back.time_len == 64 and back.channels == 6


def test_class_signal_distinguishes_labels():
    # same subject position, different labels -> different waveforms
    spec = SyntheticSpec(n_subjects=6, samples_per_subject=2, n_latent_domains=3,
                         noise_sigma=0.0, seed=6)
    ds, truth = generate_synthetic(spec)
    d0 = [rec for rec in ds.subjects if truth[rec.subject_id] == 0]
    a, b = d0[0], d0[1]
    assert a.class_label != b.class_label
    assert not np.allclose(a.samples[0].values, b.samples[0].values)


def test_spec_validation():
    with pytest.raises(InputError):
        SyntheticSpec(n_latent_domains=0)
    with pytest.raises(InputError):
        SyntheticSpec(n_subjects=4, n_latent_domains=3)  # a domain would be single-class
    with pytest.raises(InputError):
        SyntheticSpec(domain_gains=((1.0,) * 6, (-1.0,) * 6), n_latent_domains=2,
                      n_subjects=4)


def test_samples_vary_within_subject():
    # Even with zero noise, phase jitter gives a subject more than one
    # distinct waveform (individual pairs may legitimately share a phase).
    ds, _ = generate_synthetic(SyntheticSpec(n_subjects=4, samples_per_subject=5,
                                             n_latent_domains=2, noise_sigma=0.0, seed=7))
    rec = ds.subjects[0]
    distinct = {s.values.tobytes() for s in rec.samples}
    assert len(distinct) >= 2
