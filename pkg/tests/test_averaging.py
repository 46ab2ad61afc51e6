import numpy as np
import pytest

import starstab._linalg as la
from starstab.algebra import AlgebraShape, HaarSampler
from starstab.averaging import (NUMERIC_FLOOR, GroupMap, average_once,
                                measure_group_map, restrict_to_unitaries,
                                schedule, stabilize)
from starstab.errors import PreconditionError
from starstab.factory import (EmbeddingSpec, exact_homomorphism, near_identity,
                              perturb_additive, perturb_conjugate)
from starstab.probes import unitary_pairs

SHAPE2 = AlgebraShape([2])


def embedding8():
    return exact_homomorphism(EmbeddingSpec(SHAPE2, (4,), 0))


def test_schedule_base_values():
    sched = schedule(2.0 ** -10, 6)
    assert sched.deltas[0] == 2.0 ** -10
    assert sched.kappas[0] == 2.0
    assert sched.deltas[1] == pytest.approx(2.0 ** -17)
    assert sched.kappas[1] == pytest.approx(2.0 / (1.0 - 2.0 ** -8))


def test_schedule_claims_hold():
    for eps1 in (2.0 ** -10, 2.0 ** -12, 2.0 ** -16):
        sched = schedule(eps1, 20)
        for n, (k, d) in enumerate(sched.levels):
            assert k < 4.0
            assert d <= 2.0 ** (5 * (1 - 2.0 ** n)) * eps1
            if n + 1 < len(sched.kappas):
                assert sched.kappas[n + 1] - k < 2.0 ** -n
        assert sched.movement_budget() < 8.0 * eps1
        # the recurrences hold exactly
        for n in range(len(sched.deltas) - 1):
            k, d = sched.kappas[n], sched.deltas[n]
            assert sched.deltas[n + 1] == 2.0 * k * k * d * d
            assert sched.kappas[n + 1] == k / (1.0 - k * k * d)


def test_schedule_refuses_large_eps1():
    with pytest.raises(PreconditionError):
        schedule(2.0 ** -9, 5)
    with pytest.raises(PreconditionError):
        schedule(0.0, 5)


def test_multiplicative_fixed_point_any_samples():
    # conjugate perturbations are exactly multiplicative: every averaging
    # term equals rho(u), so one pass reproduces the map pointwise
    phi = perturb_conjugate(embedding8(), near_identity(8, 0.01, seed=1))
    rho = restrict_to_unitaries(phi, seed=2)
    pairs = unitary_pairs(SHAPE2, 6, 3)
    out, rec = average_once(rho, 64, probe_pairs=pairs)
    for u, v in pairs:
        assert la.op_norm(out(u) - rho(u)) < 1e-12
    assert rec.after.closeness < 1e-12
    assert rec.contraction_ok and rec.closeness_ok and rec.kappa_ok


def test_average_once_acceptance_bounds():
    # one pass on a conjugate-perturbed instance obeys the quadratic bound
    # and the closeness bound up to reported Monte-Carlo error + float floor
    phi = perturb_conjugate(embedding8(), near_identity(8, 1e-2, seed=7))
    rho = restrict_to_unitaries(phi, seed=8)
    pairs = unitary_pairs(SHAPE2, 8, 9)
    out, rec = average_once(rho, 256, probe_pairs=pairs)
    assert rec.before.kappa <= 2.1
    assert rec.after.delta <= 2 * rec.before.kappa ** 2 * rec.before.delta ** 2 \
        + rec.after.mc + NUMERIC_FLOOR * 2
    assert rec.after.closeness <= rec.before.kappa * rec.before.delta \
        + rec.after.closeness_mc + rec.after.mc + NUMERIC_FLOOR * 2


def test_average_once_contracts_additive():
    phi = perturb_additive(embedding8(), 2e-4, seed=4)
    rho = restrict_to_unitaries(phi, seed=5)
    pairs = unitary_pairs(SHAPE2, 6, 6)
    before = measure_group_map(rho, pairs)
    out, rec = average_once(rho, 192, probe_pairs=pairs)
    assert rec.contraction_ok and rec.closeness_ok and rec.kappa_ok
    assert rec.after.delta < before.delta


def test_average_once_rejects_bad_hypothesis():
    # defect >= kappa^-2 violates the averaging hypothesis
    def fn(u):
        return 0.4 * np.eye(3, dtype=complex)
    rho = GroupMap(AlgebraShape([3]), 3, fn, seed=1)
    with pytest.raises(PreconditionError):
        average_once(rho, 16)


def test_translation_invariance_of_estimator():
    phi = perturb_additive(embedding8(), 2e-4, seed=10)
    rho = restrict_to_unitaries(phi, seed=11)
    pairs = unitary_pairs(SHAPE2, 4, 12)
    g = HaarSampler(SHAPE2, 99).unitary()
    out_a, rec_a = average_once(rho, 192, probe_pairs=pairs)
    out_b, rec_b = average_once(rho, 192, probe_pairs=pairs, translate_by=g)
    budget = rec_a.after.closeness_mc + rec_b.after.closeness_mc \
        + rec_a.after.mc + rec_b.after.mc + NUMERIC_FLOOR
    for u, v in pairs:
        for w in (u, v, u * v):
            assert la.op_norm(out_a(w) - out_b(w)) <= budget


def test_stabilize_exact_is_level_zero():
    rho = restrict_to_unitaries(embedding8(), seed=1)
    res = stabilize(rho, eps1=2.0 ** -10, tol=1e-8, width=64)
    assert res.final is rho
    assert res.levels == []
    assert res.movement == 0.0


def test_stabilize_strict_regime():
    phi = perturb_additive(embedding8(), 2e-4, seed=13)
    rho = restrict_to_unitaries(phi, seed=14)
    pairs = unitary_pairs(SHAPE2, 6, 15)
    # tol above the schedule's delta_1 stops after one pass (schedule rule)
    res = stabilize(rho, eps1=2.0 ** -10, tol=1e-5, width=192,
                    max_levels=3, probe_pairs=pairs)
    assert res.strict
    assert res.stopped_by in ("schedule", "tolerance")
    assert res.movement <= res.movement_bound
    # schedule consistency: measured per-level values under scheduled + mc
    sched = schedule(2.0 ** -10, len(res.levels) + 1)
    for n, p in enumerate(res.levels, start=1):
        assert p.after.delta <= sched.deltas[n] + p.after.mc + NUMERIC_FLOOR
        assert p.after.kappa <= sched.kappas[n] + p.after.mc + NUMERIC_FLOOR


def test_stabilize_two_levels_movement():
    phi = perturb_additive(embedding8(), 2e-4, seed=21)
    rho = restrict_to_unitaries(phi, seed=22)
    pairs = unitary_pairs(SHAPE2, 4, 23)
    res = stabilize(rho, eps1=2.0 ** -10, tol=1e-9, width=64,
                    max_levels=2, probe_pairs=pairs)
    assert len(res.levels) == 2
    for p in res.levels:
        assert p.contraction_ok
    assert res.movement <= 8.0 * 2.0 ** -10 + \
        sum(p.after.closeness_mc + p.after.mc for p in res.levels) + NUMERIC_FLOOR


def test_stabilize_rejects_large_initial_defect():
    phi = perturb_additive(embedding8(), 5e-3, seed=16)
    rho = restrict_to_unitaries(phi, seed=17)
    with pytest.raises(PreconditionError):
        stabilize(rho, eps1=2.0 ** -12, tol=1e-9, width=64)


def test_quadratic_contraction_sweep():
    # conjugate-perturbed instances are fixed points: the measured defect
    # after one pass stays below the quadratic bound (floor-dominated)
    for i in range(20):
        phi = perturb_conjugate(embedding8(), near_identity(8, 1e-2, seed=100 + i))
        rho = restrict_to_unitaries(phi, seed=i)
        pairs = unitary_pairs(SHAPE2, 4, 200 + i)
        _, rec = average_once(rho, 64, probe_pairs=pairs)
        assert rec.after.delta <= 2 * rec.before.kappa ** 2 * rec.before.delta ** 2 \
            + rec.after.mc + NUMERIC_FLOOR * 2


def test_trace_csv_shape():
    phi = perturb_additive(embedding8(), 2e-4, seed=18)
    rho = restrict_to_unitaries(phi, seed=19)
    res = stabilize(rho, eps1=2.0 ** -10, tol=1e-9, width=48,
                    max_levels=2, probe_pairs=unitary_pairs(SHAPE2, 3, 20))
    text = res.trace_csv()
    lines = text.strip().split("\n")
    assert lines[0] == "level,kappa,delta,mc,movement"
    assert len(lines) == len(res.levels) + 2
    assert "\r" not in text
