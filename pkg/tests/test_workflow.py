"""
dperm integration tests: the train -> estimate -> interval pipeline.
"""

import logging
import math
from unittest.mock import patch

import numpy as np
import pytest

from dperm.core import ApproxDP, BudgetSplit, IntervalMethod, Mechanism, PrivacyBudget
from dperm.erm import TrainConfig, effective_epsilon, solve_erm
from dperm.errors import BudgetTooSmall
from dperm.intervals import CISpec, estimate_pieces
from dperm.losses import LossModel
from dperm.mechanisms import RngStream
from dperm.workflows import PrivateIntervalWorkflow, TrainingMechanism, train_private
from dperm.workflows.private_intervals import ESTIMATE_STREAM, default_method

pytestmark = pytest.mark.integration

LOGISTIC = LossModel.logistic()
HUBER = LossModel.huber(1.0)
DP_SPLIT = BudgetSplit.of("dp", 0.5, 0.25, 0.25)
ZCDP_SPLIT = BudgetSplit.of("zcdp", 0.125, 0.03125, 0.03125)


def workflow(split=DP_SPLIT, mechanism="obj", loss=LOGISTIC, **kwargs):
    return PrivateIntervalWorkflow(
        loss=loss, train=TrainConfig(c=0.001), split=split, mechanism=mechanism, ci=CISpec(m=500), **kwargs
    )


class TestTrainPrivate:
    def test_zcdp_objective_runs_at_matching_epsilon(self, lr_data):
        fit = train_private(lr_data, LOGISTIC, TrainConfig(c=0.001), PrivacyBudget.zcdp(0.125), "obj", RngStream(0))
        assert fit.mechanism is Mechanism.OBJECTIVE
        assert fit.eps_prime == pytest.approx(effective_epsilon(LOGISTIC, lr_data.n, 0.001, 0.5), abs=1e-12)

    @pytest.mark.parametrize(
        "phi,expected", [(PrivacyBudget.pure(0.5), Mechanism.OUTPUT_DP), (PrivacyBudget.zcdp(0.125), Mechanism.OUTPUT_ZCDP)]
    )
    def test_output_variant_follows_budget_kind(self, lr_data, phi, expected):
        fit = train_private(lr_data, HUBER, TrainConfig(c=0.001), phi, TrainingMechanism.OUTPUT, RngStream(0))
        assert fit.mechanism is expected

    @pytest.mark.parametrize(
        "mechanism,method",
        [
            (Mechanism.OBJECTIVE, IntervalMethod.MONTE_CARLO),
            (Mechanism.OUTPUT_DP, IntervalMethod.MONTE_CARLO),
            (Mechanism.OUTPUT_ZCDP, IntervalMethod.CLOSED_FORM_ZCDP),
        ],
    )
    def test_default_method(self, mechanism, method):
        assert default_method(mechanism) is method


class TestPipeline:
    @pytest.mark.parametrize(
        "split,mechanism,method",
        [
            (DP_SPLIT, "obj", IntervalMethod.MONTE_CARLO),
            (DP_SPLIT, "output", IntervalMethod.MONTE_CARLO),
            (ZCDP_SPLIT, "obj", IntervalMethod.MONTE_CARLO),
            (ZCDP_SPLIT, "output", IntervalMethod.CLOSED_FORM_ZCDP),
        ],
    )
    def test_runs_every_configuration(self, lr_data, split, mechanism, method):
        result = workflow(split, mechanism).run(lr_data, RngStream(3))
        assert result.intervals.method is method
        assert result.intervals.lo.shape == (lr_data.dim,)
        assert np.all(result.intervals.lengths > 0)
        assert result.pieces.n == lr_data.n

    def test_method_override(self, lr_data):
        result = workflow(ZCDP_SPLIT, "output", method="monte-carlo").run(lr_data, RngStream(3))
        assert result.intervals.method is IntervalMethod.MONTE_CARLO

    def test_deterministic(self, lr_data):
        a = workflow(mechanism="obj", loss=HUBER).run(lr_data, RngStream(8))
        b = workflow(mechanism="obj", loss=HUBER).run(lr_data, RngStream(8))
        assert a.fit.theta_tilde.tobytes() == b.fit.theta_tilde.tobytes()
        assert a.intervals.lo.tobytes() == b.intervals.lo.tobytes()
        assert a.intervals.hi.tobytes() == b.intervals.hi.tobytes()

    def test_steps_use_separate_streams(self, lr_data):
        root = RngStream(4)
        with patch("dperm.workflows.private_intervals.estimate_pieces", wraps=estimate_pieces) as estimate:
            workflow().run(lr_data, root)
        assert estimate.call_args.args[-1] == root.child(ESTIMATE_STREAM)

    def test_zero_noise_collapses_around_erm(self, lr_data, zero_noise):
        result = workflow(mechanism="obj").run(lr_data, RngStream(0))
        theta_hat = solve_erm(lr_data, LOGISTIC, TrainConfig(c=0.001))
        np.testing.assert_allclose(result.fit.theta_tilde, theta_hat, atol=1e-12)
        assert result.intervals.lengths.tolist() == [0.0] * lr_data.dim

    def test_budget_too_small_propagates(self, lr_data):
        wf = PrivateIntervalWorkflow(loss=LOGISTIC, train=TrainConfig(c=1e-9), split=DP_SPLIT)
        with pytest.raises(BudgetTooSmall):
            wf.run(lr_data, RngStream(0))

    def test_logs_each_step(self, lr_data, caplog):
        with caplog.at_level(logging.INFO, logger="dperm.workflows.private_intervals"):
            workflow().run(lr_data, RngStream(0))
        messages = " ".join(r.getMessage() for r in caplog.records)
        assert all(step in messages for step in ("Step 1", "Step 2", "Step 3"))


class TestPrivacyCost:
    def test_pure_total(self):
        assert workflow(DP_SPLIT).privacy_cost() == PrivacyBudget.pure(1.0)

    def test_zcdp_total(self):
        assert workflow(ZCDP_SPLIT).privacy_cost() == PrivacyBudget.zcdp(0.1875)

    def test_zcdp_as_approximate_dp(self):
        cost = workflow(ZCDP_SPLIT).privacy_cost(delta=1e-6)
        assert isinstance(cost, ApproxDP)
        assert cost.epsilon == pytest.approx(0.1875 + 2 * math.sqrt(0.1875 * math.log(1e6)), abs=1e-12)

    def test_pure_as_approximate_dp_keeps_epsilon(self):
        cost = workflow(DP_SPLIT).privacy_cost(delta=1e-6)
        assert (cost.epsilon, cost.delta) == (1.0, 1e-6)
