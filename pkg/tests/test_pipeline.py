import json

import numpy as np
import pytest

from ghap.evaluation import SynthSpec, synth_mixture
from ghap.gmr import ctd_to
from ghap.kdtree import build_partition
from ghap.pipeline import (BlockReductionError, CompactionConfig, block_target, compact,
                           hash_block_seed, transfer_appearance)

from conftest import random_mixture


def reference_splitmix64(x):
    mask = (1 << 64) - 1
    x = (x + 0x9E3779B97F4A7C15) & mask
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & mask
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & mask
    return z ^ (z >> 31)


def test_hash_matches_reference_mixer():
    # published first output of splitmix64 seeded with 0
    assert reference_splitmix64(0) == 0xE220A8397B1DCDAF
    mask = (1 << 64) - 1
    for seed, k in [(0, 0), (1, 5), (2**63, 77), (123456789, 10**6)]:
        expect = reference_splitmix64((reference_splitmix64(seed) + k * 0x9E3779B97F4A7C15) & mask)
        assert hash_block_seed(seed, k) == expect


def test_hash_no_collisions_over_a_million_blocks():
    seeds = {hash_block_seed(42, k) for k in range(10**6)}
    assert len(seeds) == 10**6


def test_hash_avalanche():
    rng = np.random.default_rng(0)
    flips = []
    for _ in range(10**4):
        seed = int(rng.integers(0, 2**63))
        bit = int(rng.integers(0, 64))
        a = hash_block_seed(seed, 3)
        b = hash_block_seed(seed ^ (1 << bit), 3)
        flips.append(bin(a ^ b).count("1"))
    assert abs(np.mean(flips) - 32) < 0.5
    assert min(flips) >= 1


def test_block_target_rounding():
    assert block_target(250, 0.05) == 13
    assert block_target(10, 0.01) == 1
    assert block_target(7, 1.0) == 7
    assert block_target(30, 0.05) == 2


def test_config_validation():
    with pytest.raises(ValueError):
        CompactionConfig(retention_ratio=0)
    with pytest.raises(ValueError):
        CompactionConfig(retention_ratio=1.5)
    with pytest.raises(ValueError):
        CompactionConfig(retention_ratio=0.5, block_capacity=0)
    with pytest.raises(ValueError):
        CompactionConfig(retention_ratio=0.5, nn_mode="approx")


def test_full_retention_is_lossless(rng):
    mix = random_mixture(rng, 300, with_appearance=True)
    out, report = compact(mix, CompactionConfig(retention_ratio=1.0, block_capacity=64))
    assert report.output_count == 300 and report.total_ctd == 0.0
    assert ctd_to(mix, out) == 0.0
    # each reduced component is an original one and keeps its own appearance
    order = np.lexsort(out.means.T)
    ref = np.lexsort(mix.means.T)
    np.testing.assert_array_equal(out.means[order], mix.means[ref])
    np.testing.assert_array_equal(out.weights[order], mix.weights[ref])
    np.testing.assert_array_equal(out.appearance.sh_rest[order], mix.appearance.sh_rest[ref])


def test_thousand_component_block_counts():
    mix = synth_mixture(SynthSpec(dim=2, components=1000, seed=0))
    out, report = compact(mix, CompactionConfig(retention_ratio=0.05, block_capacity=250))
    assert report.depth == 2 and len(report.blocks) == 4
    assert {b.m for b in report.blocks} <= {12, 13}
    assert 48 <= report.output_count <= 52
    assert abs(report.output_count - round(0.05 * 1000)) <= len(report.blocks)
    assert out.appearance is None


def test_output_count_and_report_invariants(rng):
    mix = random_mixture(rng, 2000, dim=3)
    out, report = compact(mix, CompactionConfig(retention_ratio=0.1, block_capacity=300))
    assert report.output_count == sum(b.m for b in report.blocks) == len(out)
    assert report.output_count >= len(report.blocks)
    assert abs(report.output_count - round(0.1 * 2000)) <= len(report.blocks)
    assert report.total_ctd == pytest.approx(sum(b.ctd_final for b in report.blocks))
    assert report.cost_evaluations == sum(b.cost_evaluations for b in report.blocks)
    for b in report.blocks:
        assert b.reduced_mass == pytest.approx(b.input_mass, rel=1e-9)
    part = build_partition(mix.means, 300)
    for b, members in zip(report.blocks, part.blocks):
        assert b.input_mass == pytest.approx(mix.weights[members].sum(), rel=1e-12)


def test_per_iteration_evaluations_bound(rng):
    mix = random_mixture(rng, 5000, dim=3)
    _, report = compact(mix, CompactionConfig(retention_ratio=0.05, block_capacity=200))
    sizes = np.array([b.size for b in report.blocks])
    assert report.evaluations_per_iteration == int(np.dot(sizes, [b.m for b in report.blocks]))
    assert report.evaluations_per_iteration <= 1.2 * 0.05 * np.sum(sizes.astype(float) ** 2)


def test_output_grouped_by_block_and_stable(rng):
    mix = random_mixture(rng, 800, dim=3, with_appearance=True)
    config = CompactionConfig(retention_ratio=0.1, block_capacity=100)
    out1, rep1 = compact(mix, config)
    out2, rep2 = compact(mix, config)
    np.testing.assert_array_equal(out1.means, out2.means)
    assert rep1.to_json(include_timing=False) == rep2.to_json(include_timing=False)
    # every reduced mean lies inside the bounding box of its own block
    part = build_partition(mix.means, 100)
    start = 0
    for b, members in zip(rep1.blocks, part.blocks):
        chunk = out1.means[start:start + b.m]
        lo, hi = mix.means[members].min(axis=0), mix.means[members].max(axis=0)
        assert (chunk >= lo - 1e-12).all() and (chunk <= hi + 1e-12).all()
        start += b.m


@pytest.mark.parametrize("workers", [2, 8])
def test_parallelism_invariance(rng, workers):
    mix = random_mixture(rng, 3000, dim=3, with_appearance=True)
    base, rep = compact(mix, CompactionConfig(retention_ratio=0.05, block_capacity=200, seed=9))
    par, rep_p = compact(mix, CompactionConfig(retention_ratio=0.05, block_capacity=200, seed=9,
                                               parallelism=workers))
    assert base.means.tobytes() == par.means.tobytes()
    assert base.covariances.tobytes() == par.covariances.tobytes()
    assert base.weights.tobytes() == par.weights.tobytes()
    assert base.appearance.sh_rest.tobytes() == par.appearance.sh_rest.tobytes()
    assert rep.to_json(include_timing=False) == rep_p.to_json(include_timing=False)


def test_seed_changes_result(rng):
    mix = random_mixture(rng, 1000, dim=3)
    a, _ = compact(mix, CompactionConfig(retention_ratio=0.05, block_capacity=250, seed=1))
    b, _ = compact(mix, CompactionConfig(retention_ratio=0.05, block_capacity=250, seed=2))
    assert not np.array_equal(a.means, b.means)


def test_transfer_identity(rng):
    mix = random_mixture(rng, 50, with_appearance=True)
    out = transfer_appearance(mix, mix.replace(appearance=None), nn_mode="global-exact")
    np.testing.assert_array_equal(out.weights, mix.weights)
    np.testing.assert_array_equal(out.appearance.opacity_logit, mix.appearance.opacity_logit)
    np.testing.assert_array_equal(out.appearance.normal, mix.appearance.normal)


def test_transfer_freezes_geometry(rng):
    mix = random_mixture(rng, 200, with_appearance=True)
    reduced = random_mixture(rng, 20)
    before_m, before_c = reduced.means.copy(), reduced.covariances.copy()
    out = transfer_appearance(mix, reduced, nn_mode="global-exact")
    np.testing.assert_array_equal(out.means, before_m)
    np.testing.assert_array_equal(out.covariances, before_c)
    np.testing.assert_array_equal(reduced.means, before_m)


def test_transfer_two_clusters():
    rng = np.random.default_rng(4)
    a = random_mixture(rng, 30, spread=1.0, with_appearance=True)
    b = random_mixture(rng, 30, spread=1.0, with_appearance=True)
    b = b.replace(means=b.means + 100.0)
    from ghap.mixture import GaussianMixture, Appearance
    mix = GaussianMixture(np.concatenate([a.means, b.means]),
                          np.concatenate([a.covariances, b.covariances]),
                          np.concatenate([a.weights, b.weights]),
                          Appearance.concat([a.appearance, b.appearance]))
    part = build_partition(mix.means, 30)
    assert sorted(part.blocks[0].tolist() + part.blocks[1].tolist()) == list(range(60))
    block_a = 0 if part.blocks[0].max() < 30 else 1
    target = a.means[:10].mean(axis=0)
    reduced = GaussianMixture(target[None], np.eye(3)[None] * 0.01, [1.0])
    expected = int(np.argmin(((a.means - target) ** 2).sum(axis=1)))
    for mode in ("within-block", "global-exact"):
        _, donors = transfer_appearance(mix, reduced, part, mode, np.array([block_a]),
                                        return_donors=True)
        assert donors.tolist() == [expected]


def test_transfer_tie_goes_to_lowest_index():
    from ghap.mixture import GaussianMixture, Appearance
    means = np.array([[1.0, 0, 0], [-1.0, 0, 0], [1.0, 0, 0]])
    mix = GaussianMixture(means, np.stack([np.eye(3)] * 3), [0.2, 0.3, 0.4],
                          Appearance.blank(np.zeros(3)))
    reduced = GaussianMixture(np.zeros((1, 3)), np.eye(3)[None], [1.0])
    _, donors = transfer_appearance(mix, reduced, nn_mode="global-exact", return_donors=True)
    assert donors.tolist() == [0]


def test_within_block_agrees_with_global():
    rng = np.random.default_rng(11)
    total = agree = 0
    for _ in range(50):
        n = int(rng.integers(50, 501))
        mix = random_mixture(rng, n, with_appearance=True)
        config = CompactionConfig(retention_ratio=0.1, block_capacity=int(rng.integers(20, 120)))
        reduced, report = compact(mix.replace(appearance=None), config)
        part = build_partition(mix.means, config.block_capacity)
        blocks = np.repeat(np.arange(len(report.blocks)), [b.m for b in report.blocks])
        _, local = transfer_appearance(mix, reduced, part, "within-block", blocks,
                                       return_donors=True)
        _, glob = transfer_appearance(mix, reduced, nn_mode="global-exact", return_donors=True)
        total += len(local)
        agree += int((local == glob).sum())
    assert agree / total >= 0.99


def test_transfer_requires_appearance(rng):
    with pytest.raises(ValueError):
        transfer_appearance(random_mixture(rng, 5), random_mixture(rng, 2), nn_mode="global-exact")


def test_report_json_schema(rng):
    _, report = compact(random_mixture(rng, 500), CompactionConfig(0.1, block_capacity=100))
    doc = json.loads(report.to_json())
    for key in ("input_count", "output_count", "depth", "total_ctd", "blocks", "wall_time"):
        assert key in doc
    assert {"size", "m", "iterations", "ctd_final", "cost_evaluations"} <= set(doc["blocks"][0])
    assert "wall_time" not in json.loads(report.to_json(include_timing=False))


def test_block_errors_carry_index(rng, monkeypatch):
    import ghap.pipeline as pipeline

    def boom(block, config, centers=None):
        raise FloatingPointError("overflow")

    monkeypatch.setattr(pipeline, "reduce", boom)
    with pytest.raises(BlockReductionError) as info:
        compact(random_mixture(rng, 100), CompactionConfig(0.1, block_capacity=50))
    assert info.value.block == 0
    assert isinstance(info.value.cause, FloatingPointError)


def test_empty_mixture_rejected():
    from ghap.mixture import GaussianMixture
    with pytest.raises(ValueError):
        compact(GaussianMixture.empty(3), CompactionConfig(0.5))
