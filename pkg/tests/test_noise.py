import numpy as np
import pytest

from mslc import noise
from mslc.errors import ConfigError


def test_zero_ratio_identity_matrix():
    spec = noise.NoiseSpec(kind="symmetric", ratio=0.0)
    assert np.array_equal(noise.build_transition(spec, 5), np.eye(5))


def test_symmetric_exclude_self_closed_form():
    t = noise.build_transition(noise.NoiseSpec(ratio=0.4, include_self=False), 10)
    assert np.allclose(np.diag(t), 0.6)
    off = t[~np.eye(10, dtype=bool)]
    assert np.allclose(off, 0.4 / 9)


def test_symmetric_include_self_closed_form():
    t = noise.build_transition(noise.NoiseSpec(ratio=0.4, include_self=True), 10)
    assert np.allclose(np.diag(t), 1.0 - 0.4 + 0.04)
    off = t[~np.eye(10, dtype=bool)]
    assert np.allclose(off, 0.04)


def test_cifar10_style_pair_row():
    spec = noise.NoiseSpec(kind="asymmetric", ratio=0.4, pair_map=noise.CIFAR10_PAIR_MAP)
    t = noise.build_transition(spec, 10)
    truck, automobile = 9, 1
    assert t[truck, truck] == pytest.approx(0.6)
    assert t[truck, automobile] == pytest.approx(0.4)
    assert t[0, 0] == 1.0  # airplane is a fixed point


def test_rows_stochastic():
    for spec in (noise.NoiseSpec(ratio=0.37, include_self=True),
                 noise.NoiseSpec(ratio=0.37, include_self=False),
                 noise.NoiseSpec(kind="asymmetric", ratio=0.25)):
        t = noise.build_transition(spec, 7)
        assert np.abs(t.sum(axis=1) - 1.0).max() <= 1e-12
        assert t.min() >= 0.0 and t.max() <= 1.0


def test_ratio_out_of_range_rejected():
    with pytest.raises(ConfigError):
        noise.build_transition(noise.NoiseSpec(ratio=1.2), 4)


def test_inject_zero_ratio_noop():
    labels = np.array([0, 1, 2, 3, 2, 1])
    noisy, mask = noise.inject(labels, noise.NoiseSpec(ratio=0.0), 4)
    assert np.array_equal(noisy, labels)
    assert not mask.any()


def test_inject_corruption_rate_within_3_sigma():
    rng = np.random.default_rng(5)
    labels = rng.integers(0, 10, 50_000)
    noisy, mask = noise.inject(labels, noise.NoiseSpec(ratio=0.4, include_self=False, seed=2), 10)
    sigma = np.sqrt(0.4 * 0.6 / 50_000)
    assert abs(mask.mean() - 0.4) <= 3 * sigma
    assert np.array_equal(mask, noisy != labels)


def test_inject_asymmetric_flips_only_along_pairs():
    rng = np.random.default_rng(6)
    labels = rng.integers(0, 10, 20_000)
    pair_map = noise.CIFAR10_PAIR_MAP
    spec = noise.NoiseSpec(kind="asymmetric", ratio=0.4, pair_map=pair_map, seed=4)
    noisy, mask = noise.inject(labels, spec, 10)
    flipped = np.flatnonzero(mask)
    for i in flipped:
        assert int(noisy[i]) == pair_map[int(labels[i])]
    fixed_points = ~np.isin(labels, list(pair_map))
    assert not mask[fixed_points].any()


def test_inject_deterministic():
    labels = np.arange(1000) % 4
    spec = noise.NoiseSpec(ratio=0.3, seed=9)
    a = noise.inject(labels, spec, 4)
    b = noise.inject(labels, spec, 4)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_empirical_identity_when_uncorrupted():
    labels = np.arange(300) % 3
    est, flags = noise.empirical_transition(labels, labels, 3)
    assert np.array_equal(est, np.eye(3))
    assert not flags.any()


def test_empirical_matches_build_at_large_n():
    rng = np.random.default_rng(7)
    labels = rng.integers(0, 10, 50_000)
    for spec in (noise.NoiseSpec(ratio=0.4, include_self=False, seed=1),
                 noise.NoiseSpec(ratio=0.4, include_self=True, seed=1),
                 noise.NoiseSpec(kind="asymmetric", ratio=0.4, seed=1)):
        noisy, _ = noise.inject(labels, spec, 10)
        est, _ = noise.empirical_transition(labels, noisy, 10)
        assert np.abs(est - noise.build_transition(spec, 10)).max() <= 0.02


def test_empirical_degenerate_support_flagged():
    est, flags = noise.empirical_transition(np.zeros(10, dtype=int), np.zeros(10, dtype=int), 3)
    assert est[0].tolist() == [1.0, 0.0, 0.0]
    assert np.allclose(est[1], 1.0 / 3.0) and np.allclose(est[2], 1.0 / 3.0)
    assert flags.tolist() == [False, True, True]


def test_superclass_pair_map_blocks():
    # classes 0-2 in superclass 0, classes 3-4 in superclass 1
    pm = noise.superclass_pair_map([0, 0, 0, 1, 1])
    assert pm == {0: 1, 1: 2, 2: 0, 3: 4, 4: 3}
