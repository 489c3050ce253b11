import math

import numpy as np
import pytest
import torch
from hypothesis import given, strategies as st
from scipy.stats import special_ortho_group

from scsgraph.losses import (TaskBatch, active_weights, alignment, task_losses, task_losses_infonce_ce,
                             total_loss, uniformity)

T = lambda a: torch.tensor(a, dtype=torch.float64)


def unit_rows(n, d, seed):
    x = np.random.default_rng(seed).normal(size=(n, d))
    return torch.from_numpy(x / np.linalg.norm(x, axis=1, keepdims=True))


def uniformity_oracle(rows):
    """Double loop over ordered distinct pairs."""
    rows = np.asarray(rows)
    vals = [math.exp(-2 * np.sum((rows[i] - rows[j]) ** 2))
            for i in range(len(rows)) for j in range(len(rows)) if i != j]
    return 0.5 * math.log(sum(vals) / len(vals))


class TestAlignment:
    def test_identical(self):
        assert float(alignment(T([[1.0, 0.0]]), T([[1.0, 0.0]]))) == 0.0

    def test_orthogonal(self):
        assert float(alignment(T([[1.0, 0.0]]), T([[0.0, 1.0]]))) == pytest.approx(2.0)

    def test_antipodal(self):
        assert float(alignment(T([[1.0, 0.0]]), T([[-1.0, 0.0]]))) == pytest.approx(4.0)

    def test_empty_and_mismatch(self):
        with pytest.raises(ValueError):
            alignment(torch.zeros(0, 2), torch.zeros(0, 2))
        with pytest.raises(ValueError):
            alignment(torch.zeros(2, 2), torch.zeros(3, 2))


class TestUniformity:
    def test_identical_rows(self):
        assert float(uniformity(T([[0.0, 1.0]] * 4))) == pytest.approx(0.0, abs=1e-12)

    def test_antipodal(self):
        assert float(uniformity(T([[1.0, 0.0], [-1.0, 0.0]]))) == pytest.approx(-4.0)

    def test_orthogonal(self):
        assert float(uniformity(T([[1.0, 0.0], [0.0, 1.0]]))) == pytest.approx(-2.0)

    def test_single_row_contributes_zero(self, caplog):
        assert float(uniformity(T([[1.0, 0.0]]))) == 0.0
        assert "contributes 0" in caplog.text

    @given(st.integers(2, 9), st.integers(2, 6), st.integers(0, 10_000))
    def test_matches_pairwise_oracle(self, n, d, seed):
        rows = unit_rows(n, d, seed)
        assert float(uniformity(rows)) == pytest.approx(uniformity_oracle(rows.numpy()), abs=1e-9)


@given(st.integers(2, 12), st.integers(2, 8), st.integers(0, 10_000))
def test_signs(n, d, seed):
    x, y = unit_rows(n, d, seed), unit_rows(n, d, seed + 1)
    assert float(alignment(x, y)) >= 0
    assert float(uniformity(x)) <= 1e-12


@given(st.integers(2, 10), st.integers(2, 6), st.integers(0, 10_000))
def test_rotation_invariance(n, d, seed):
    x, y = unit_rows(n, d, seed), unit_rows(n, d, seed + 1)
    R = torch.from_numpy(special_ortho_group.rvs(d, random_state=seed))
    assert abs(float(alignment(x @ R, y @ R) - alignment(x, y))) < 1e-6
    assert abs(float(uniformity(x @ R) - uniformity(x))) < 1e-6


def batch_from(item, attr, seq=None, term=None):
    b = TaskBatch(t1_item=item, t1_attr=attr, t1_items=torch.unique(item, dim=0), t1_attrs=torch.unique(attr, dim=0))
    if seq is not None:
        b.t2_target, b.t2_pred, b.t2_items = seq[0], seq[1], torch.unique(seq[0], dim=0)
    if term is not None:
        b.t3_item, b.t3_term = term
        b.t3_items, b.t3_terms = torch.unique(term[0], dim=0), torch.unique(term[1], dim=0)
    return b


class TestTaskLosses:
    def test_lambda_zero_is_alignment(self):
        x, y = unit_rows(6, 4, 0), unit_rows(6, 4, 1)
        L1, L2, L3 = task_losses(batch_from(x, y, (x, y), (y, x)), 0.0)
        a = float(alignment(x, y))
        assert float(L1) == pytest.approx(a) and float(L2) == pytest.approx(a) and float(L3) == pytest.approx(a)

    def test_aligned_antipodal_batch(self):
        # two item-attribute pairs, each collapsed, the two points antipodal
        item = T([[1.0, 0.0], [-1.0, 0.0]])
        for lam in (0.1, 0.6, 2.0):
            L1, _, _ = task_losses(batch_from(item, item.clone()), lam)
            assert float(L1) == pytest.approx(-8 * lam)

    def test_absent_tasks_are_zero(self):
        x = unit_rows(3, 4, 0)
        L1, L2, L3 = task_losses(batch_from(x, x), 0.6)
        assert float(L2) == 0.0 and float(L3) == 0.0

    @given(st.integers(2, 8), st.integers(0, 1000), st.floats(0.01, 5.0))
    def test_always_finite(self, n, seed, lam):
        x, y = unit_rows(n, 3, seed), unit_rows(n, 3, seed + 7)
        assert all(math.isfinite(float(L)) for L in task_losses(batch_from(x, y, (x, y), (x, y)), lam))

    def test_formula(self):
        x, y = unit_rows(5, 4, 2), unit_rows(5, 4, 3)
        L1, L2, L3 = task_losses(batch_from(x, y, (y, x), (x, y)), 0.6)
        ux, uy = uniformity_oracle(np.unique(x.numpy(), axis=0)), uniformity_oracle(np.unique(y.numpy(), axis=0))
        a = float(alignment(x, y))
        assert float(L1) == pytest.approx(a + 0.6 * (ux + uy))
        assert float(L2) == pytest.approx(a + 0.6 * uy)
        assert float(L3) == pytest.approx(float(L1))

    def test_infonce_mode_runs(self):
        x, y = unit_rows(4, 3, 0) * 3, unit_rows(4, 3, 1)
        b = batch_from(x, y, (x, y), (x, y))
        b.t2_candidates, b.t2_target_index = x, torch.arange(4)
        ls = task_losses_infonce_ce(b, 0.6, tau=0.5)
        assert all(math.isfinite(float(L)) and float(L) > 0 for L in ls)


class TestTotal:
    def test_arithmetic(self):
        assert float(total_loss([T(1.0), T(2.0), T(3.0)], [0.6, 0.2, 0.2])) == pytest.approx(1.6)

    def test_near_single_task_limit(self):
        ls = [T(1.3), T(-2.0), T(5.0)]
        assert float(total_loss(ls, [1.0, 1e-9, 1e-9])) == pytest.approx(1.3, abs=1e-7)

    def test_non_positive_weight_rejected(self):
        with pytest.raises(ValueError):
            total_loss([T(1.0)] * 3, [1.0, 0.0, 0.0])

    @given(st.floats(0.01, 100.0))
    def test_linear_in_weights(self, c):
        ls, w = [T(1.5), T(-0.5), T(2.0)], [0.6, 0.2, 0.2]
        assert float(total_loss(ls, [c * wi for wi in w])) == pytest.approx(c * float(total_loss(ls, w)))

    def test_active_weights_renormalise(self):
        w = active_weights([0.6, 0.2, 0.2], [True, True, False])
        assert w == pytest.approx([0.75, 0.25, 0.0]) and sum(w) == pytest.approx(1.0)
        with pytest.raises(ValueError):
            active_weights([0.6, 0.2, 0.2], [False] * 3)


@given(st.integers(2, 8), st.integers(0, 1000))
def test_objective_floor_holds(n, seed):
    from scsgraph.losses import objective_floor
    x, y = unit_rows(n, 3, seed), unit_rows(n, 3, seed + 1)
    w = [0.6, 0.2, 0.2]
    total = total_loss(task_losses(batch_from(x, y, (x, y), (y, x)), 0.6), w)
    assert float(total) >= objective_floor("unified", w, 0.6)


def test_objective_floor_attained_by_antipodal_pairs():
    from scsgraph.losses import objective_floor
    item = T([[1.0, 0.0], [-1.0, 0.0]])
    b = batch_from(item, item.clone(), (item, item.clone()), (item, item.clone()))
    w = [0.6, 0.2, 0.2]
    assert float(total_loss(task_losses(b, 0.6), w)) == pytest.approx(objective_floor("unified", w, 0.6))
