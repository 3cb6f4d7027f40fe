"""Information rate, mode amplitudes and intensities."""

import numpy as np
import pytest

from conftest import FAST_THETA, THETA_REF
from qmcpatterns.absorber import joint_parametric
from qmcpatterns.core import spectral_gap_ops
from qmcpatterns.errors import BadTruncation, GaugeViolation, InternalInconsistency
from qmcpatterns.fisher import (
    JointLocalModel,
    fisher_from_intensity,
    localize_joint,
    mode_amplitude,
    mode_amplitude_superop,
    mode_table,
    patterns_up_to,
    poisson_product_probability,
    qfi_rate,
    total_intensity,
)
from qmcpatterns.models import (
    amplitude_damping,
    constant_model,
    paper_qubit_model,
    phase_rotated,
)

PATTERNS_SHORT = ["1", "11", "101", "111"]


def test_patterns_enumeration():
    assert patterns_up_to(3) == ["1", "11", "101", "111"]
    for max_len in (1, 2, 5, 8):
        expected = 1 + sum(2 ** (k - 2) for k in range(2, max_len + 1))
        assert len(patterns_up_to(max_len)) == expected
    with pytest.raises(BadTruncation):
        patterns_up_to(0)


def test_qfi_theta_independent_zero():
    model = constant_model(amplitude_damping(0.4))
    assert qfi_rate(model, 0.0) == pytest.approx(0.0, abs=1e-8)


def test_qfi_paper_value(model):
    assert qfi_rate(model, THETA_REF) == pytest.approx(13.5, abs=0.1)


def test_qfi_matches_finite_size_slope(model):
    # independent oracle: QFI of the exact chain state grows linearly; the
    # increment per step converges to the rate
    def chain_state(theta, n):
        kraus = model.kraus_at(theta)
        m = np.array([[1.0], [0.0]], dtype=complex)
        for _ in range(n):
            m = np.concatenate([kraus.k0 @ m, kraus.k1 @ m], axis=1)
        return m.ravel()

    h = 1e-4

    def chain_qfi(n):
        psi = chain_state(THETA_REF, n)
        dpsi = (chain_state(THETA_REF + h, n) - chain_state(THETA_REF - h, n)) / (2 * h)
        return 4 * (np.vdot(dpsi, dpsi).real - abs(np.vdot(psi, dpsi)) ** 2)

    slope = (chain_qfi(16) - chain_qfi(14)) / 2
    assert slope == pytest.approx(qfi_rate(model, THETA_REF), rel=0.01)


def test_gauge_phase_invariance(model, gap_rotation):
    rotated = phase_rotated(model, rate=0.7, pivot=THETA_REF)
    assert qfi_rate(rotated, THETA_REF) == pytest.approx(
        qfi_rate(model, THETA_REF), abs=1e-8
    )
    base_local = localize_joint(joint_parametric(model, THETA_REF, gap_rotation))
    rot_local = localize_joint(joint_parametric(rotated, THETA_REF, gap_rotation))
    assert total_intensity(rot_local).value == pytest.approx(
        total_intensity(base_local).value, abs=1e-8
    )
    for pattern in patterns_up_to(4):
        assert mode_amplitude(rot_local, pattern) == pytest.approx(
            mode_amplitude(base_local, pattern), abs=1e-8
        )


def test_mode_amplitude_superoperator_route(local_gap, local_gs):
    for local in (local_gap, local_gs):
        for pattern in patterns_up_to(5):
            a = mode_amplitude(local, pattern)
            b = mode_amplitude_superop(local, pattern)
            assert abs(a - b) < 1e-8


def test_mode_amplitude_theta_independent():
    # frozen copy of a faithful chain: no parameter dependence, no modes
    frozen = constant_model(paper_qubit_model().kraus_at(0.3), domain=(-1.0, 1.0))
    local = localize_joint(joint_parametric(frozen, 0.0, "polar"))
    for pattern in PATTERNS_SHORT:
        assert abs(mode_amplitude(local, pattern)) < 1e-8
    ti = total_intensity(local)
    assert ti.norm_form == pytest.approx(0.0, abs=1e-8)
    assert ti.curvature_form == pytest.approx(0.0, abs=1e-6)


def test_mode_table_structure(local_gap):
    table = mode_table(local_gap, 3)
    assert [e.pattern for e in table.entries] == ["1", "11", "101", "111"]
    for e in table.entries:
        assert e.intensity == pytest.approx(abs(e.amplitude) ** 2, abs=1e-14)
        assert e.intensity >= 0
        assert mode_amplitude(local_gap, e.pattern) == pytest.approx(
            e.amplitude, abs=1e-12
        )
    partials = [mode_table(local_gap, L).partial_sum() for L in range(1, 8)]
    assert all(b >= a for a, b in zip(partials, partials[1:]))


def test_mode_table_geometric_tail(local_gap, joint_gap):
    lam_tot = total_intensity(local_gap).value
    tail_a = lam_tot - mode_table(local_gap, 8).partial_sum()
    tail_b = lam_tot - mode_table(local_gap, 12).partial_sum()
    assert 0 < tail_b < tail_a
    fitted_ratio = (tail_b / tail_a) ** 0.25
    bound = 1.0 - spectral_gap_ops(joint_gap.matched.ops)
    assert fitted_ratio <= bound + 0.05


def test_mode_table_captures_intensity(local_gap):
    # with the gap-optimized absorber the truncated table captures nearly
    # all of the total intensity by length 12
    lam_tot = total_intensity(local_gap).value
    assert mode_table(local_gap, 12).partial_sum() / lam_tot >= 0.999


def test_total_intensity_identities(model, local_gap, local_gs, local_polar):
    f = qfi_rate(model, THETA_REF)
    for local in (local_gap, local_gs, local_polar):
        ti = total_intensity(local)
        assert abs(ti.norm_form - ti.curvature_form) < 1e-6
        assert abs(4 * ti.value - f) < 1e-5
        assert fisher_from_intensity(local) == pytest.approx(f, abs=1e-5)


def test_gauge_violation_detected(local_gap):
    chi = local_gap.chi
    corrupted = JointLocalModel(
        local_gap.theta_ref,
        local_gap.kt,
        (local_gap.dkt[0] + 0.1 * np.outer(chi, chi.conj()), local_gap.dkt[1]),
        local_gap.ddkt0,
        chi,
        local_gap.restricted_inverse,
        local_gap.gauge_rate,
    )
    with pytest.raises(GaugeViolation):
        mode_amplitude(corrupted, "1")


def test_poisson_product_probability(local_gap):
    table = mode_table(local_gap, 3)
    lam_tot = total_intensity(local_gap).value
    u = 1.3
    empty = poisson_product_probability(table, lam_tot, u, {})
    assert empty == pytest.approx(np.exp(-lam_tot * u * u), rel=1e-12)
    lam1 = table.intensity("1") * u * u
    single = poisson_product_probability(table, lam_tot, u, {"1": 2})
    assert single == pytest.approx(empty * lam1**2 / 2, rel=1e-12)


def test_mu_matches_exact_number_expectation(fast_model, fast_local):
    # |mu_1|^2 against the exact finite-size mode occupation, extrapolated
    # in 1/n over n in {10, 13, 16} (rapidly mixing chain)
    from qmcpatterns.tim import exact_mode_expectations

    u = 0.5
    lam1 = abs(mode_amplitude(fast_local, "1")) ** 2
    jp = joint_parametric(fast_model, FAST_THETA, "gram-schmidt")
    sizes = np.array([10, 13, 16])
    vals = []
    for n in sizes:
        ops = jp.kraus_at(FAST_THETA + u / np.sqrt(n))
        mean_n, _, _ = exact_mode_expectations(ops, u, int(n), "1")
        vals.append(mean_n / u**2)
    vals = np.array(vals)
    # fit a + b/n and compare the extrapolated value
    coeffs = np.polyfit(1.0 / sizes, vals, 1)
    extrapolated = coeffs[1]
    assert extrapolated == pytest.approx(lam1, rel=0.15)
    assert abs(extrapolated - lam1) < abs(vals[-1] - lam1)
