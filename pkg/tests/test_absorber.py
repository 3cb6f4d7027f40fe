"""Absorber construction: purification, unitary, joint Kraus identities."""

import numpy as np
import pytest

from conftest import THETA_REF
from qmcpatterns.absorber import (
    build_absorber,
    joint_kraus,
    joint_parametric,
    joint_primitivity_report,
    purify,
    recovery_kraus,
    _fixed_rows,
)
from qmcpatterns.core import (
    completeness_defect,
    dagger,
    kraus_derivatives,
    spectral_gap_ops,
    stationary_state,
)
from qmcpatterns.errors import AbsorberMismatch, RankDeficient
from qmcpatterns.fisher import localize_joint, total_intensity
from qmcpatterns.models import amplitude_damping


def test_purify_maximally_mixed():
    pur = purify(np.eye(2) / 2)
    assert np.allclose(pur.chi, np.array([1, 0, 0, 1]) / np.sqrt(2), atol=1e-12)


def test_purify_diagonal():
    pur = purify(np.diag([0.9, 0.1]).astype(complex))
    assert np.allclose(pur.chi, [np.sqrt(0.9), 0, 0, np.sqrt(0.1)], atol=1e-12)
    assert pur.eigenvalues[0] >= pur.eigenvalues[1]


def test_purify_roundtrip(model):
    rho = stationary_state(model.kraus_at(THETA_REF))
    pur = purify(rho)
    assert np.linalg.norm(pur.reduced_system_state() - rho) < 1e-10
    assert abs(np.linalg.norm(pur.chi) - 1) < 1e-12


def test_purify_rank_deficient():
    with pytest.raises(RankDeficient):
        purify(stationary_state(amplitude_damping(0.5)))


@pytest.mark.parametrize("completion", ["gram-schmidt", "polar"])
def test_absorber_rows_orthonormal_and_unitary(model, completion):
    kraus = model.kraus_at(THETA_REF)
    pur = purify(stationary_state(kraus))
    rows = _fixed_rows(kraus, pur)
    gram = np.array([[np.vdot(a, b) for b in rows] for a in rows])
    assert np.linalg.norm(gram - np.eye(2)) < 1e-10
    v = build_absorber(kraus, pur, completion).v
    assert np.linalg.norm(dagger(v) @ v - np.eye(4), ord=2) < 1e-10


def test_gap_optimized_unitary(model, gap_rotation):
    kraus = model.kraus_at(THETA_REF)
    pur = purify(stationary_state(kraus))
    v = build_absorber(kraus, pur, gap_rotation).v
    assert np.linalg.norm(dagger(v) @ v - np.eye(4), ord=2) < 1e-10


def test_recovery_channel_blocks(model):
    # outcome-0 blocks are the transposed recovery Kraus operators in the
    # stationary eigenbasis; the recovery channel preserves the state
    kraus = model.kraus_at(THETA_REF)
    rho = stationary_state(kraus)
    pur = purify(rho)
    absorber = build_absorber(kraus, pur, "polar")
    rec = recovery_kraus(kraus, rho)
    assert completeness_defect(rec) < 1e-9
    out = sum(k @ rho @ dagger(k) for k in rec)
    assert np.linalg.norm(out - rho) < 1e-9
    p = pur.basis
    for l in range(2):
        expected = (dagger(p) @ rec[l] @ p).T
        assert np.linalg.norm(absorber.block(0, l) - expected) < 1e-9


@pytest.mark.parametrize("fixture", ["joint_gs", "joint_polar", "joint_gap"])
def test_joint_identities(fixture, request):
    jp = request.getfixturevalue(fixture)
    kt0, kt1 = jp.matched.ops
    chi = jp.chi
    assert np.linalg.norm(kt0 @ chi - chi) < 1e-9
    assert np.linalg.norm(kt1 @ chi) < 1e-9
    assert np.linalg.norm(dagger(kt0) @ chi - chi) < 1e-9
    assert completeness_defect((kt0, kt1)) < 1e-10


def test_joint_mismatch_detected(model):
    kraus = model.kraus_at(THETA_REF)
    other = model.kraus_at(0.35)
    pur_other = purify(stationary_state(other))
    absorber = build_absorber(other, pur_other, "polar")
    with pytest.raises(AbsorberMismatch):
        joint_kraus(absorber, kraus, pur_other, THETA_REF)


def test_joint_gauge_property(local_gap):
    # lifted gauge condition: the matched derivative has no component along
    # the pure stationary vector
    overlap = abs(np.vdot(local_gap.chi, local_gap.dkt[0] @ local_gap.chi))
    assert overlap < 1e-8


def test_joint_primitive_at_matched_point(joint_gap, joint_gs):
    for jp in (joint_gap, joint_gs):
        ok, gap = joint_primitivity_report(jp)
        assert ok and 0 < gap < 1
    # the joint gap never exceeds the system gap; the optimized completion
    # attains it
    assert spectral_gap_ops(joint_gap.matched.ops) == pytest.approx(
        0.39589103645678, abs=1e-6
    )


def test_joint_small_offset_first_order(model, joint_gap):
    # |Kt_1(theta_abs + eps) chi| grows linearly with slope |dKt_1 chi|
    eps = 1e-3
    local = localize_joint(joint_gap)
    slope = np.linalg.norm(local.dkt[1] @ local.chi)
    _, kt1 = joint_gap.kraus_at(THETA_REF + eps)
    drift = np.linalg.norm(kt1 @ joint_gap.chi)
    assert drift == pytest.approx(slope * eps, rel=0.02)


def test_completion_invariance_of_total_intensity(local_gs, local_polar, local_gap):
    values = [total_intensity(loc).value for loc in (local_gs, local_polar, local_gap)]
    assert max(values) - min(values) < 1e-8


def test_gram_schmidt_candidate_orders_agree(model):
    kraus = model.kraus_at(THETA_REF)
    pur = purify(stationary_state(kraus))
    a = build_absorber(kraus, pur, "gram-schmidt")
    b = build_absorber(kraus, pur, "gram-schmidt", candidate_order=[3, 2, 1, 0])
    ja = joint_parametric(model, THETA_REF, "gram-schmidt")
    jb = joint_parametric(model, THETA_REF, "gram-schmidt",
                          candidate_order=[3, 2, 1, 0])
    la = total_intensity(localize_joint(ja)).value
    lb = total_intensity(localize_joint(jb)).value
    assert abs(la - lb) < 1e-8
    assert np.linalg.norm(a.v - b.v) > 1e-3  # genuinely different absorbers


def test_vacuum_output_for_all_completions(model, gap_rotation):
    from qmcpatterns.trajectory import exact_distribution
    for completion in ("gram-schmidt", "polar", gap_rotation):
        jp = joint_parametric(model, THETA_REF, completion)
        probs = exact_distribution(
            jp.matched.ops, np.outer(jp.chi, jp.chi.conj()), 6
        )
        assert probs[0] == pytest.approx(1.0, abs=1e-10)
        assert probs[1:].max() < 1e-10
