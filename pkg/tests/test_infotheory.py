import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clinic import data as cd
from clinic import infotheory as it


def random_joint(rng, shape=(4, 2, 2)):
    probs = rng.random(shape) + 1e-3
    names = ("z", "s", "y")[: len(shape)] if len(shape) == 3 else ("a", "b")
    return it.DiscreteJoint(names, probs / probs.sum())


def entropy(p):
    p = p.reshape(-1)
    p = p[p > 0]
    return float(-(p * np.log(p)).sum())


def conditional_mi_via_entropies(joint):
    """Oracle: I(Z;S|Y) = H(Z,Y) + H(S,Y) - H(Z,S,Y) - H(Y)."""
    p = joint.marginal("z", "s", "y").probs
    return (
        entropy(p.sum(axis=1))
        + entropy(p.sum(axis=0))
        - entropy(p)
        - entropy(p.sum(axis=(0, 1)))
    )


def test_exact_mi_uniform_independent_is_zero():
    joint = it.DiscreteJoint(("a", "b"), np.full((2, 2), 0.25))
    assert it.exact_mi(joint) == pytest.approx(0.0, abs=1e-15)


def test_exact_mi_diagonal_is_ln2():
    joint = it.DiscreteJoint(("a", "b"), np.array([[0.5, 0.0], [0.0, 0.5]]))
    assert it.exact_mi(joint) == pytest.approx(math.log(2.0), abs=1e-15)


def test_exact_mi_hand_case():
    # 0.8 ln 1.6 + 0.2 ln 0.4 by direct summation
    expected = 0.8 * math.log(1.6) + 0.2 * math.log(0.4)
    joint = it.DiscreteJoint(("a", "b"), np.array([[0.4, 0.1], [0.1, 0.4]]))
    assert expected == pytest.approx(0.192745, abs=1e-6)
    assert it.exact_mi(joint) == pytest.approx(expected, abs=1e-14)


def test_invalid_joint_rejected():
    with pytest.raises(ValueError, match="sums to"):
        it.DiscreteJoint(("a", "b"), np.array([[0.5, 0.1], [0.1, 0.1]]))
    with pytest.raises(ValueError, match="negative"):
        it.DiscreteJoint(("a", "b"), np.array([[1.1, -0.1], [0.0, 0.0]]))


def test_conditional_mi_zero_when_conditionally_independent():
    rng = np.random.default_rng(0)
    pz_y = rng.random((4, 2)) + 0.1
    pz_y /= pz_y.sum(axis=0, keepdims=True)
    ps_y = rng.random((2, 2)) + 0.1
    ps_y /= ps_y.sum(axis=0, keepdims=True)
    py = np.array([0.4, 0.6])
    probs = np.einsum("zy,sy,y->zsy", pz_y, ps_y, py)
    joint = it.DiscreteJoint(("z", "s", "y"), probs)
    assert it.conditional_mi(joint) == pytest.approx(0.0, abs=1e-14)


def test_conditional_mi_degenerate_conditioning_equals_marginal_mi():
    rng = np.random.default_rng(1)
    probs = rng.random((4, 2, 1))
    joint = it.DiscreteJoint(("z", "s", "y"), probs / probs.sum())
    assert it.conditional_mi(joint) == pytest.approx(it.exact_mi(joint, "z", "s"), abs=1e-14)


def test_tied_binary_interaction_is_ln2():
    probs = np.zeros((2, 2, 2))
    probs[0, 0, 0] = 0.5
    probs[1, 1, 1] = 0.5
    joint = it.DiscreteJoint(("z", "s", "y"), probs)
    assert it.exact_mi(joint, "z", "s") == pytest.approx(math.log(2.0), abs=1e-15)
    assert it.conditional_mi(joint) == pytest.approx(0.0, abs=1e-15)
    assert it.interaction_info(joint) == pytest.approx(math.log(2.0), abs=1e-15)


def test_chain_identity_on_random_joints():
    rng = np.random.default_rng(42)
    for _ in range(200):
        joint = random_joint(rng)
        lhs = it.exact_mi(joint, "z", "s")
        rhs = it.conditional_mi(joint) + it.interaction_info(joint)
        assert abs(lhs - rhs) < 1e-12
        assert it.conditional_mi(joint) == pytest.approx(
            conditional_mi_via_entropies(joint), abs=1e-11
        )


def test_mi_nonnegative_and_zero_iff_product_form():
    rng = np.random.default_rng(5)
    for _ in range(50):
        joint = random_joint(rng, (3, 4))
        assert it.exact_mi(joint) >= 0.0
    pa = rng.random(3) + 0.1
    pb = rng.random(4) + 0.1
    pa, pb = pa / pa.sum(), pb / pb.sum()
    product = it.DiscreteJoint(("a", "b"), np.outer(pa, pb))
    assert it.exact_mi(product) == pytest.approx(0.0, abs=1e-14)


@given(st.integers(0, 10_000))
@settings(max_examples=25)
def test_mi_invariant_under_axis_relabeling(seed):
    rng = np.random.default_rng(seed)
    probs = rng.random((4, 3))
    probs /= probs.sum()
    base = it.mi_from_table(probs)
    perm_a = rng.permutation(4)
    perm_b = rng.permutation(3)
    assert it.mi_from_table(probs[perm_a][:, perm_b]) == pytest.approx(base, abs=1e-12)


def test_merging_bins_never_increases_mi():
    rng = np.random.default_rng(17)
    for _ in range(20):
        probs = rng.random((6, 3))
        probs /= probs.sum()
        merged = np.vstack([probs[0] + probs[1], probs[2:]])
        assert it.mi_from_table(merged) <= it.mi_from_table(probs) + 1e-12


def test_discretize_constant_column_single_bin():
    z = np.hstack([np.full((50, 1), 3.0), np.zeros((50, 1))])
    ids = it.discretize_latents(z, bins_per_dim=4, dims_used=1)
    assert len(np.unique(ids)) == 1


def test_discretize_two_bins_split_at_median():
    rng = np.random.default_rng(2)
    z = rng.normal(size=(1000, 1))
    ids = it.discretize_latents(z, bins_per_dim=2, dims_used=1)
    assert np.abs(np.mean(ids == 0) - 0.5) < 0.01


def test_discretize_rejects_single_bin():
    with pytest.raises(ValueError, match="bins_per_dim"):
        it.discretize_latents(np.zeros((4, 2)), bins_per_dim=1, dims_used=1)


def test_empirical_joint_point_mass_and_hand_count():
    joint = it.empirical_joint([0], [1], [0], num_bins=2, num_s=2, num_y=2)
    assert joint.probs[0, 1, 0] == 1.0
    zbin = [0, 0, 1, 1, 1, 0]
    s = [0, 1, 0, 0, 1, 0]
    y = [0, 0, 1, 1, 1, 0]
    joint = it.empirical_joint(zbin, s, y)
    assert joint.probs[0, 0, 0] == pytest.approx(2 / 6)
    assert joint.probs[1, 0, 1] == pytest.approx(2 / 6)
    assert joint.probs[0, 1, 0] == pytest.approx(1 / 6)
    assert joint.probs[1, 1, 1] == pytest.approx(1 / 6)


def test_empirical_conditional_mi_matches_analytic_joint():
    cfg = cd.SynthConfig(
        num_classes=2, num_sensitive=2, rho=0.6, dim=2, n=50_000, seed=21,
        means={(0, 0): [-1.0, -1.0], (0, 1): [-1.0, 1.0],
               (1, 0): [1.0, -1.0], (1, 1): [1.0, 1.0]},
        noise_sigma=1.0,
    )
    ds = cd.generate(cfg)
    analytic = it.analytic_bin_joint(cfg, bins_per_dim=4, dims_used=2)
    expected = it.conditional_mi(analytic)
    assert expected > 0.05  # the fixture carries real conditional signal
    ids = it.discretize_latents(ds.features, bins_per_dim=4, dims_used=2)
    empirical = it.empirical_joint(ids, ds.s, ds.y, num_bins=16, num_s=2, num_y=2)
    assert it.conditional_mi(empirical) == pytest.approx(expected, abs=0.02)


def test_theorem_rhs_arithmetic():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(4, 3))
    report = it.theorem1_check(z, [0, 0, 1, 1], [0, 1, 0, 1], reg_value=0.0)
    assert report.rhs == pytest.approx(4.0 * math.log(2.0), abs=1e-12)
    assert report.p0 == 0.5 and report.p1 == 0.5


def test_theorem_bound_trivially_holds_for_huge_reg():
    rng = np.random.default_rng(0)
    z = rng.normal(size=(8, 3))
    y = np.array([0, 0, 0, 0, 1, 1, 1, 1])
    s = np.array([0, 1, 0, 1, 0, 1, 0, 1])
    report = it.theorem1_check(z, y, s, reg_value=1e9)
    assert report.holds


def test_theorem_check_requires_both_classes():
    z = np.zeros((4, 2))
    with pytest.raises(ValueError, match="both classes"):
        it.theorem1_check(z, [0, 0, 0, 0], [0, 1, 0, 1], reg_value=0.0)
    with pytest.raises(ValueError, match="binary"):
        it.theorem1_check(z, [0, 1, 2, 0], [0, 1, 0, 1], reg_value=0.0)


def test_joint_json_round_trip():
    rng = np.random.default_rng(3)
    joint = random_joint(rng)
    back = it.DiscreteJoint.from_dict(joint.to_dict())
    assert back.names == joint.names
    np.testing.assert_allclose(back.probs, joint.probs, atol=0)
