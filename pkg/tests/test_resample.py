from collections import Counter

import numpy as np
import pytest

from iqa_rl.errors import DegenerateStages, OutOfRange
from iqa_rl.resample import bin_scores, default_edges, sample_epoch, stage_weights


def records_from(mos):
    return [(f"r{i}", float(m)) for i, m in enumerate(mos)]


class TestBins:
    def test_edges(self):
        np.testing.assert_allclose(default_edges(4), [1, 2, 3, 4, 5])

    def test_half_open_and_closed_last(self):
        bins = bin_scores(records_from([1.0, 1.999, 2.0, 5.0, 4.99]), default_edges(4))
        assert bins.assignment.tolist() == [0, 0, 1, 3, 3]
        assert bins.counts.tolist() == [2, 1, 0, 2]

    @pytest.mark.parametrize("mos", [0.99, 5.01, float("nan")])
    def test_out_of_range(self, mos):
        with pytest.raises(OutOfRange):
            bin_scores(records_from([3.0, mos]), default_edges(4))


class TestStageWeights:
    def test_midpoint_exact(self):
        bins = bin_scores(records_from([1.5] * 90 + [4.5] * 10), default_edges(2))
        plan = stage_weights(bins, 1, 2)
        np.testing.assert_allclose(plan.weights, [0.75, 0.25], atol=1e-15)

    def test_empty_bin_zero(self):
        bins = bin_scores(records_from([1.5, 1.6, 4.5]), default_edges(4))
        for s in range(4):
            assert stage_weights(bins, s, 3).weights[1] == 0.0

    def test_zero_stages(self):
        bins = bin_scores(records_from([1.5, 4.5]), default_edges(2))
        np.testing.assert_allclose(stage_weights(bins, 0, 0).weights, [0.5, 0.5])
        with pytest.raises(DegenerateStages):
            stage_weights(bins, 1, 0)

    def test_stage_out_of_range(self):
        bins = bin_scores(records_from([1.5, 4.5]), default_edges(2))
        with pytest.raises(ValueError):
            stage_weights(bins, 4, 3)

    def test_report(self):
        bins = bin_scores(records_from([1.5, 4.5]), default_edges(2))
        rep = stage_weights(bins, 1, 3).report(bins)
        assert rep["counts"] == [1, 1] and rep["stage"] == 1 and len(rep["edges"]) == 3


class TestSampling:
    def setup_method(self):
        rng = np.random.default_rng(0)
        self.records = records_from(np.clip(1 + 4 * rng.beta(5, 2, 400), 1, 5))
        self.bins = bin_scores(self.records, default_edges(10))

    def test_deterministic(self):
        plan = stage_weights(self.bins, 2, 3)
        a = sample_epoch(self.records, self.bins, plan, 200, seed=7, epoch=3)
        b = sample_epoch(self.records, self.bins, plan, 200, seed=7, epoch=3)
        c = sample_epoch(self.records, self.bins, plan, 200, seed=7, epoch=4)
        assert a == b and a != c

    def test_tail_share_grows(self):
        ids = {rid: i for i, (rid, _) in enumerate(self.records)}
        small = int(np.argmin(np.where(self.bins.counts > 0, self.bins.counts, np.inf)))
        shares = []
        for s in (0, 3):
            plan = stage_weights(self.bins, s, 3)
            drawn = sample_epoch(self.records, self.bins, plan, 4000, seed=1)
            hits = Counter(self.bins.assignment[ids[r]] for r in drawn)
            shares.append(hits[small] / 4000)
        assert shares[1] > shares[0]
