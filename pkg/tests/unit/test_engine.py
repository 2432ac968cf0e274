import numpy as np
import pytest

from stockbot.engine import Action, backtest, baseline_buy_and_hold, decide
from stockbot.errors import DimensionError, DomainError, InsufficientDataError

BUY, SELL, HOLD = Action.BUY, Action.SELL, Action.HOLD


def oracle(prices):
    """Local extrema with +inf before the first day and -inf after the last."""
    c = [np.inf] + list(prices) + [-np.inf]
    out = []
    for i in range(1, len(c) - 1):
        if c[i - 1] > c[i] < c[i + 1]:
            out.append(BUY)
        elif c[i - 1] < c[i] > c[i + 1]:
            out.append(SELL)
        else:
            out.append(HOLD)
    return out


def random_walk(rng, n):
    return 100.0 * np.exp(np.cumsum(rng.normal(0.0, 0.03, n)))


class TestDecide:

    def test_single_dip(self):
        trace = decide([5.0, 3.0, 4.0, 6.0, 2.0])
        assert trace.decisions == [HOLD, BUY, HOLD, SELL, HOLD]
        np.testing.assert_array_equal(trace.deltas, [-1, 1, 1, -1])
        np.testing.assert_array_equal(trace.curvatures, [2, 0, -2])

    def test_strictly_increasing_buys_first_and_sells_last(self):
        assert decide([1.0, 2.0, 3.0, 4.0]).decisions == [BUY, HOLD, HOLD, SELL]

    def test_strictly_decreasing_never_trades(self):
        assert decide([4.0, 3.0, 2.0, 1.0]).decisions == [HOLD] * 4

    def test_constant_never_trades(self):
        assert decide([2.0] * 6).decisions == [HOLD] * 6

    def test_plateaus_are_not_extrema(self):
        trace = decide([3.0, 2.0, 2.0, 3.0])
        # no trough inside the plateau; the rising last step is a boundary sell
        assert trace.decisions == [HOLD, HOLD, HOLD, SELL]
        ledger = backtest([3.0, 2.0, 2.0, 3.0], trace)
        assert ledger.actions == [HOLD] * 4
        assert ledger.final_multiple == 1.0

    def test_needs_three_prices(self):
        with pytest.raises(InsufficientDataError):
            decide([1.0, 2.0])

    def test_matches_local_extrema_oracle(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            n = int(rng.integers(3, 51))
            prices = random_walk(rng, n)
            assert len(set(prices)) == n
            assert decide(prices).decisions == oracle(prices)

    def test_buys_and_sells_alternate(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            trades = [a for a in decide(random_walk(rng, 40)).decisions if a is not HOLD]
            assert trades == [BUY, SELL] * (len(trades) // 2)


class TestBacktest:

    def test_all_in_all_out(self):
        ledger = backtest([10.0, 8.0, 12.0, 6.0], [HOLD, BUY, SELL, HOLD])
        assert ledger.final_value == pytest.approx(1.5)
        assert ledger.trade_count == 2
        np.testing.assert_allclose(ledger.values, [1.0, 1.0, 1.5, 1.5])
        np.testing.assert_allclose(ledger.shares, [0.0, 1.0 / 8.0, 0.0, 0.0])

    def test_infeasible_actions_become_holds(self):
        ledger = backtest([1.0, 2.0, 3.0, 4.0], [SELL, BUY, BUY, HOLD])
        assert ledger.actions == [HOLD, BUY, HOLD, HOLD]
        assert ledger.trade_count == 1
        assert ledger.final_value == pytest.approx(2.0)

    def test_accepts_strings(self):
        assert backtest([1.0, 2.0], ["buy", "sell"]).final_multiple == pytest.approx(2.0)

    def test_initial_cash(self):
        ledger = backtest([2.0, 4.0], [BUY, HOLD], initial_cash=100.0)
        assert ledger.final_value == pytest.approx(200.0)
        assert ledger.final_multiple == pytest.approx(2.0)

    def test_length_mismatch(self):
        with pytest.raises(DimensionError):
            backtest([1.0, 2.0], [HOLD])

    def test_non_positive_prices(self):
        with pytest.raises(DomainError):
            backtest([1.0, 0.0], [HOLD, HOLD])

    def test_constant_forecast_never_trades(self):
        ledger = backtest([3.0, 5.0, 4.0, 6.0], decide([7.0, 7.0, 7.0, 7.0]))
        assert ledger.trade_count == 0
        assert ledger.final_multiple == 1.0

    def test_buy_and_hold(self):
        ledger = baseline_buy_and_hold([4.0, 2.0, 6.0])
        assert ledger.final_multiple == pytest.approx(1.5)
        assert ledger.trade_count == 1

    def test_ledger_frame(self):
        ledger = backtest([1.0, 2.0, 3.0], [BUY, HOLD, SELL])
        frame = ledger.to_frame(["2020-01-01", "2020-01-02", "2020-01-03"])
        assert list(frame.columns) == ["date", "action", "price", "shares", "cash", "value"]
        assert frame["action"].tolist() == ["buy", "hold", "sell"]
        with pytest.raises(DimensionError):
            ledger.to_frame(["2020-01-01"])


class TestPerfectForesight:

    def test_dominates_buy_and_hold(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            prices = random_walk(rng, int(rng.integers(3, 51)))
            bot = backtest(prices, decide(prices)).final_multiple
            hold = baseline_buy_and_hold(prices).final_multiple
            assert bot >= hold
            if np.any(np.diff(prices) < 0):
                assert bot > hold

    def test_captures_every_rising_run(self):
        prices = np.array([5.0, 4.0, 6.0, 3.0, 9.0, 8.0])
        expected = (6.0 / 4.0) * (9.0 / 3.0)
        assert backtest(prices, decide(prices)).final_multiple == pytest.approx(expected)
