#!/usr/bin/env python3
"""Tests des analyses du dictionnaire : incohérence, indépendance robuste, oracle, borne."""
import math
import os
import sys
from dataclasses import replace

import numpy as np
import pytest

# Add parent dir to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from analysis import (OracleGrid, RhoGrid, box_rli_constants, estimate_rho, gram_spectrum, oracle_distance,
                      oracle_grid, pair_cancellation, registration_error_bound, rli_falsify)
from dictionary import DictionaryConfig, MotherFunction
from errors import EmptyGridError, GridTooLargeError, InvalidArgumentError
from fixtures import (R3_ANGLE, bar_patterns, box_atoms, five_squares, near_isotropic_patterns, r3_family,
                      square_patterns)
from geometry import GroupKind, TransformParams, angle_difference, params_close
from registration import register
from sparse import SparseApprox, transform_approx

SMALL_GRID = RhoGrid(translation_radius=3.0, rotation_step=math.pi / 8, gamma_limit=100, gamma_radius=6.0,
                     eta_prime_limit=2)


def test_box_rli_constants():
    alpha, eps_max = box_rli_constants(1, 0.5)
    assert alpha == pytest.approx(0.5 * math.sqrt(2.0)) and eps_max == pytest.approx(1.0)
    _, eps_max = box_rli_constants(2, 0.1)
    assert eps_max == pytest.approx(math.sqrt(3.0 / 15.0))
    alpha, _ = box_rli_constants(1, 1.0 - 1e-9)
    assert alpha == pytest.approx(math.sqrt(2.0), rel=1e-6)
    with pytest.raises(InvalidArgumentError):
        box_rli_constants(2, 0.5)
    with pytest.raises(InvalidArgumentError):
        box_rli_constants(0, 0.1)
    print("✅ box RLI constants")


def test_pair_cancellation_and_spectrum():
    gram = np.eye(3)
    assert pair_cancellation(gram, np.array([1.0, -1.0, 0.0])) == pytest.approx(math.sqrt(2.0))
    assert pair_cancellation(gram, np.array([1.0, 0.0, 0.0])) == math.inf
    atoms = r3_family("v_prime")
    assert gram_spectrum(atoms) == pytest.approx(1.0 - math.cos(R3_ANGLE), abs=1e-9)
    assert gram_spectrum(r3_family("v")[:2]) == pytest.approx(1.0)


def test_rli_on_r3_families():
    ok = rli_falsify(r3_family("v"), K=3, epsilon=0.2, alpha=0.2, trials=50, seed=1)
    assert ok.premise_hits > 0 and not ok.violated
    assert ok.alpha_found == pytest.approx(2.0 * math.sin(R3_ANGLE / 2.0), abs=1e-6)

    bad = rli_falsify(r3_family("v_prime"), K=3, epsilon=0.2, alpha=0.5, trials=50, seed=1)
    assert bad.violated
    assert abs(bad.alpha_found - 0.777) < 0.01
    assert len(bad.witness_coeffs) == 3
    assert np.linalg.norm(bad.witness_coeffs) == pytest.approx(1.0)
    print("✅ RLI falsification on the R^3 families")


def test_rli_five_squares_violated():
    report = rli_falsify(five_squares(), K=5, epsilon=0.5, alpha=0.9, trials=20, seed=0)
    assert report.premise_hits > 0
    assert report.violated and report.alpha_found > 0.9


def test_rli_is_reproducible_and_validates():
    atoms = r3_family("v_prime")
    a = rli_falsify(atoms, 2, 0.3, 0.5, trials=30, seed=4)
    b = rli_falsify(atoms, 2, 0.3, 0.5, trials=30, seed=4)
    assert a == b
    with pytest.raises(InvalidArgumentError):
        rli_falsify(atoms, 1, 0.3, 0.5)
    with pytest.raises(InvalidArgumentError):
        rli_falsify(atoms, 4, 0.3, 0.5)


def test_rho_translation_is_one():
    cfg = DictionaryConfig(kind=GroupKind.TRANSLATION, mother=MotherFunction(nu=2.0), width=31, height=31)
    est = estimate_rho(cfg, grid=SMALL_GRID)
    assert 1.0 - 1e-9 <= est.rho <= 1.05
    print(f"✅ translation rho = {est.rho:.4f}")


def test_rho_grows_near_isotropy():
    def rho(nu):
        cfg = DictionaryConfig(kind=GroupKind.SE2, mother=MotherFunction(nu=nu), width=31, height=31)
        return estimate_rho(cfg, grid=SMALL_GRID, refine_local=False).rho

    near, far = rho(1.1), rho(2.0)
    assert near > far > 1.0
    assert near > 5.0
    print(f"✅ rho(1.1) = {near:.3g} > rho(2) = {far:.3g}")


def test_rho_rejects_empty_grid():
    cfg = DictionaryConfig(kind=GroupKind.TRANSLATION, mother=MotherFunction(nu=2.0), width=31, height=31)
    with pytest.raises(EmptyGridError):
        estimate_rho(cfg, grid=RhoGrid(translation_radius=0.0))


def test_oracle_recovers_exact_transform():
    cfg = DictionaryConfig(kind=GroupKind.SE2, mother=MotherFunction(nu=4.0), width=75, height=75)
    p = SparseApprox((1.0, 0.7, 1.3), (TransformParams(30.0, 35.0), TransformParams(42.0, 38.0, 1.0, 1.0),
                                       TransformParams(36.0, 45.0, 1.0, 2.0)), cfg)
    eta0 = TransformParams(2.3, -1.7, 1.0, 0.45)
    d, eta = oracle_distance(p, transform_approx(p, eta0))
    assert d < 1e-4
    assert params_close(eta, eta0, 1e-3)


def test_oracle_grid_budget():
    p, q = square_patterns()
    with pytest.raises(GridTooLargeError) as e:
        oracle_grid(p, q, OracleGrid(translation_step=0.1, max_points=1000))
    assert e.value.points > 1000


def test_oracle_beats_candidates_on_inconsistent_patterns():
    p, q = square_patterns()
    d, _ = oracle_distance(p, q)
    assert d < 0.6 * register(p, q).d_a

    p, q = bar_patterns()
    d, eta0 = oracle_distance(p, q)
    assert math.hypot(eta0.bx, eta0.by) < 0.5
    assert angle_difference(eta0.theta, 0.0) < 0.1
    assert register(p, q).d_a > 2.0 * d
    print("✅ oracle finds the near-identity alignment")


@pytest.mark.parametrize("patterns", [near_isotropic_patterns, bar_patterns])
def test_bound_holds(patterns):
    p, q = patterns()
    d, eta0 = oracle_distance(p, q)
    report = registration_error_bound(p, q, d, eta0)
    assert report.error >= -1e-6
    assert report.holds, (report.error, report.bound)
    assert report.bound > 0.0 and report.rho_hat >= 0.0


def test_bound_on_exact_transform():
    cfg = DictionaryConfig(kind=GroupKind.SE2, mother=MotherFunction(nu=4.0), width=75, height=75)
    p = SparseApprox((1.0, 0.5), (TransformParams(30.0, 30.0), TransformParams(40.0, 42.0, 1.0, 0.5)), cfg)
    eta0 = TransformParams(1.0, 2.0, 1.0, 0.3)
    report = registration_error_bound(p, transform_approx(p, eta0), 0.0, eta0)
    assert report.alpha_hat < 1e-6
    assert report.holds


def test_oracle_never_above_candidate_distance():
    for patterns in (square_patterns, near_isotropic_patterns, bar_patterns):
        p, q = patterns()
        d, _ = oracle_distance(p, q)
        assert d <= register(p, q).d_a + 1e-9


def test_oracle_distance_is_symmetric():
    p, q = near_isotropic_patterns()
    d_pq, _ = oracle_distance(p, q)
    d_qp, _ = oracle_distance(q, p)
    assert d_pq == pytest.approx(d_qp, rel=1e-3, abs=1e-6)


def test_rho_grows_under_grid_refinement():
    cfg = DictionaryConfig(kind=GroupKind.SE2, mother=MotherFunction(nu=2.0), width=41, height=41)
    coarse = replace(SMALL_GRID, translation_step=1.0, rotation_step=math.pi / 8)
    fine = replace(SMALL_GRID, translation_step=0.5, rotation_step=math.pi / 16)
    rho_coarse = estimate_rho(cfg, grid=coarse, refine_local=False).rho
    rho_fine = estimate_rho(cfg, grid=fine, refine_local=False).rho
    assert rho_fine >= rho_coarse - 1e-9


@pytest.mark.parametrize("atoms", [r3_family("v"), box_atoms(8)], ids=["r3", "boxes"])
def test_restricted_isometry_implies_independence(atoms):
    # lambda_min of every subset is at least the one of the whole family
    epsilon = 0.9 * math.sqrt(gram_spectrum(atoms))
    for K in (2, 3):
        report = rli_falsify(atoms, K, epsilon, alpha=1e-3, trials=200, seed=K)
        assert report.premise_hits == 0 and not report.violated


def test_bound_with_dictionary_rho():
    p, q = near_isotropic_patterns()
    d, eta0 = oracle_distance(p, q)
    plain = registration_error_bound(p, q, d, eta0)
    assert plain.bound_dictionary is None and plain.holds_dictionary is None

    rho = estimate_rho(p.cfg, grid=SMALL_GRID, refine_local=False).rho
    report = registration_error_bound(p, q, d, eta0, rho_dictionary=rho)
    assert report.bound == pytest.approx(plain.bound) and report.rho_hat == pytest.approx(plain.rho_hat)
    assert report.bound_dictionary == pytest.approx(report.alpha_hat * rho * min(p.l1, q.l1))
    assert report.holds_dictionary == (report.error <= report.bound_dictionary + 1e-6)
    print("✅ bound with the dictionary-wide rho")


@pytest.mark.slow
@pytest.mark.parametrize("K", [2, 3, 4])
def test_box_dictionaries_satisfy_rli(K):
    _, eps_max = box_rli_constants(K, 0.1)
    epsilon = 0.5 * eps_max
    alpha, _ = box_rli_constants(K, epsilon)
    report = rli_falsify(box_atoms(8), K, epsilon, alpha, trials=10_000, seed=K)
    assert not report.violated, report.alpha_found


@pytest.mark.slow
def test_rho_is_u_shaped_in_anisotropy():
    nus = (1.5, 2.0, 4.0, 8.0, 16.0)
    grid = RhoGrid(gamma_limit=200)
    rhos = [estimate_rho(DictionaryConfig(kind=GroupKind.SE2, mother=MotherFunction(nu=nu), width=101, height=101),
                         grid=grid).rho for nu in nus]
    best = int(np.argmin(rhos))
    assert 0 < best < len(nus) - 1, rhos


@pytest.mark.slow
def test_bound_on_random_instances():
    cfg = DictionaryConfig(kind=GroupKind.SE2, mother=MotherFunction(nu=4.0), width=75, height=75)
    rng = np.random.default_rng(0)
    violations = []
    for n in range(50):
        def pattern():
            k = int(rng.integers(1, 4))
            supports = tuple(TransformParams(*rng.uniform(28.0, 46.0, 2), 1.0, rng.integers(0, 8) * math.pi / 8)
                             for _ in range(k))
            return SparseApprox(tuple(rng.uniform(0.5, 2.0, k)), supports, cfg)
        p, q = pattern(), pattern()
        d, eta0 = oracle_distance(p, q)
        report = registration_error_bound(p, q, d, eta0)
        if not report.holds:
            violations.append((n, report))
    assert not violations


if __name__ == "__main__":
    print("=" * 60)
    print("ANALYSIS")
    print("=" * 60)
    test_box_rli_constants()
    test_pair_cancellation_and_spectrum()
    test_rli_on_r3_families()
    test_rli_five_squares_violated()
    test_rli_is_reproducible_and_validates()
    test_rho_translation_is_one()
    test_rho_grows_near_isotropy()
    test_rho_rejects_empty_grid()
    test_oracle_recovers_exact_transform()
    test_oracle_grid_budget()
    test_oracle_beats_candidates_on_inconsistent_patterns()
    test_bound_holds(near_isotropic_patterns)
    test_bound_holds(bar_patterns)
    test_bound_on_exact_transform()
    test_oracle_never_above_candidate_distance()
    test_oracle_distance_is_symmetric()
    test_rho_grows_under_grid_refinement()
    test_restricted_isometry_implies_independence(r3_family("v"))
    test_restricted_isometry_implies_independence(box_atoms(8))
    test_bound_with_dictionary_rho()
    print("=" * 60)
