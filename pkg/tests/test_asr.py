import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from commest.ar import rough_pass
from commest.asr import (
    asr_case,
    asr_sub,
    block_partition,
    one_step_error,
    plan_frames,
    reduction_chain,
    run_asr,
)
from commest.core import BudgetError, ProtocolConfig, SampleMatrix, SharedRandomness, make_instance, sample
from commest.harness import budget_audit


def level_truth(truth, level_k, size):
    """Aggregate ``truth`` onto the alphabet of a refinement step (symbols merged ``size**j`` at a time)."""
    k = truth.size
    for j in range(k):
        factor = size**j
        if -(-k // factor) == level_k:
            return np.bincount(np.arange(k) // factor, weights=truth, minlength=level_k)
    raise AssertionError("no aggregation matches the level alphabet")


def _run(k, n, l, m, family="zipf(1)", seed=0, uniform_alloc=False):
    cfg = ProtocolConfig(m, n, k, l, protocol="asr")
    root = SharedRandomness(seed)
    truth = make_instance(family, k, seed)
    samples = sample(truth, m, n, root.stream("samples"))
    trace = []
    est, transcript = run_asr(cfg, samples, root.derive("protocol"), uniform_alloc=uniform_alloc, trace=trace)
    return cfg, truth, est, transcript, trace


class TestPartition:
    def test_three_blocks(self):
        part = block_partition(7, 2)
        assert part.t == 3
        assert [list(b) for b in part.blocks] == [[0, 1, 2], [3, 4, 5], [6]]

    @pytest.mark.parametrize("k, l0", [(3, 2), (1, 1)])
    def test_single_block(self, k, l0):
        assert block_partition(k, l0).t == 1

    def test_invalid(self):
        with pytest.raises(ValueError):
            block_partition(4, 0)


class TestChain:
    def test_worked_chain(self):
        assert reduction_chain(100, 2, 2) == [100, 34, 12, 4]

    def test_cases(self):
        assert asr_case(3, 4, 3) == 1
        assert asr_case(7, 4, 3) == 2
        assert math.ceil(math.log2(7 / 4 + 1)) == 2 and block_partition(7, 2).t == 3
        assert asr_case(100, 2, 2) == 3

    def test_chain_needs_two_bits(self):
        with pytest.raises(ValueError):
            reduction_chain(10, 1, 1)


class TestSubStep:
    def test_frame_plan_worked_values(self):
        samples = SampleMatrix(np.zeros((10, 5), dtype=np.int64), 6)
        sub = asr_sub(samples, block_partition(6, 2), [0.5, 0.5], 4)
        assert sub.plan.n0 == 2
        assert sub.plan.quota[0] == 10 and sub.plan.cap[0] == 1
        assert sub.plan.per_encoder()[:, 0].max() <= 1
        sub.plan.check()

    def test_empty_block_falls_back_to_uniform(self):
        samples = SampleMatrix(np.zeros((12, 4), dtype=np.int64), 6)
        sub = asr_sub(samples, block_partition(6, 2), [0.7, 0.3], 4)
        assert sub.nonempty[1] == 0
        np.testing.assert_allclose(sub.estimate[3:], [0.1, 0.1, 0.1])

    def test_point_mass_exact(self):
        samples = SampleMatrix(np.full((8, 3), 4, dtype=np.int64), 6)
        sub = asr_sub(samples, block_partition(6, 2), [0.0, 1.0], 4)
        assert sub.nonempty[1] > 0 and sub.estimate[4] == 1.0

    def test_errors(self):
        samples = SampleMatrix(np.zeros((4, 2), dtype=np.int64), 6)
        with pytest.raises(ValueError):
            asr_sub(samples, block_partition(6, 3), [1.0], 2)
        with pytest.raises(ValueError):
            asr_sub(samples, block_partition(6, 2), [1.0], 4)

    @given(st.integers(1, 30), st.integers(1, 6), st.lists(st.floats(0, 1), min_size=1, max_size=8))
    def test_plan_invariants(self, encoders, n0, weights):
        ratios = np.asarray(weights) / max(1.0, sum(weights))
        plan = plan_frames(encoders, n0, ratios)
        plan.check()
        assert plan.quota.sum() <= encoders * n0


@pytest.mark.filterwarnings("ignore:ASR case")
@pytest.mark.parametrize(
    "k, n, l, m",
    [(3, 8, 3, 64), (7, 4, 3, 96), (20, 4, 3, 128), (100, 2, 4, 256), (100, 2, 2, 512)],
)
def test_runs_within_budget(k, n, l, m):
    cfg, truth, est, transcript, trace = _run(k, n, l, m)
    assert est.shape == (k,) and np.all((est >= 0) & (est <= 1))
    assert budget_audit(transcript, cfg)
    for sub in trace:
        sub.plan.check()
        sums = np.bincount(sub.partition.block_of, weights=sub.conditional)
        np.testing.assert_allclose(sums, 1.0)


def test_small_alphabet_is_rough_pass():
    k, n, l, m = 3, 8, 3, 40
    cfg = ProtocolConfig(m, n, k, l, protocol="asr")
    root = SharedRandomness(4)
    samples = sample(make_instance("zipf(1)", k), m, n, root.stream("samples"))
    est, _ = run_asr(cfg, samples, root.derive("p"))
    expected, _ = rough_pass(samples, l, root.derive("p").derive("case1"))
    np.testing.assert_array_equal(est, expected)


@pytest.mark.filterwarnings("ignore:ASR case")
def test_recursion_too_deep():
    cfg = ProtocolConfig(4, 1, 200, 2, protocol="asr")
    samples = sample(make_instance("uniform", 200), 4, 1, SharedRandomness(0).stream("s"))
    with pytest.raises(BudgetError, match="insufficient encoders for recursion depth"):
        run_asr(cfg, samples, SharedRandomness(0))


def test_uniform_allocation_is_feedback_free():
    *_, trace = _run(20, 4, 3, 128, uniform_alloc=True)
    for sub in trace:
        assert np.ptp(sub.plan.quota) <= 1 or sub.plan.quota.size == 1


@pytest.mark.parametrize("p", [2.0, 3.0, 4.0])
@pytest.mark.parametrize("seed", range(3))
def test_one_step_bound_on_live_runs(p, seed):
    _, truth, _, _, trace = _run(100, 2, 4, 512, seed=seed)
    assert len(trace) >= 2
    for sub in trace:
        part = sub.partition
        lhs, rhs = one_step_error(level_truth(truth.probs, part.k, 2**4 - 1), sub.block_estimate, sub.conditional, part.block_of, p)
        assert lhs <= rhs * (1 + 1e-12) + 1e-15


def _random_tuple(draw, sizes):
    def simplex(size):
        w = np.asarray(draw(st.lists(st.floats(0, 1), min_size=size, max_size=size))) + 1e-9
        return w / w.sum()

    truth = simplex(int(sum(sizes)))
    block_est = simplex(len(sizes)) * draw(st.floats(0.3, 1.0))
    cond = np.concatenate([simplex(s) for s in sizes])
    block_of = np.repeat(np.arange(len(sizes)), sizes)
    return truth, block_est, cond, block_of


@given(st.data(), st.lists(st.integers(1, 4), min_size=1, max_size=4), st.sampled_from([1.0, 2.0, 3.0, 4.0]))
def test_one_step_bound_random(data, sizes, p):
    truth, block_est, cond, block_of = _random_tuple(data.draw, sizes)
    lhs, rhs = one_step_error(truth, block_est, cond, block_of, p)
    assert lhs <= rhs * (1 + 1e-12) + 1e-15


@given(st.data(), st.lists(st.integers(1, 4), min_size=1, max_size=4))
def test_one_step_bound_tv(data, sizes):
    truth, block_est, cond, block_of = _random_tuple(data.draw, sizes)
    lhs, rhs = one_step_error(truth, block_est, cond, block_of, 1.0, tv=True)
    assert lhs <= rhs + 1e-12
