import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

import oracles
from trafficgame.dynamics import ActionPair, VehicleState, rollout, rollout_arrays
from trafficgame.utility import (
    AgentUtilitySpec,
    PeriodContext,
    UtilityError,
    UtilityParams,
    UtilityWeights,
    cumulative_utility,
    cumulative_utility_batch,
    feature_stack,
    period_features,
    period_utility,
    phi1_forward,
    phi2_accel_smooth,
    phi3_steer_smooth,
    phi4_hard_accel,
    phi5_lane_departure,
    phi6_out_of_road,
    phi7_crash,
    phi8_collision,
)

SPEC = AgentUtilitySpec()
DT = 0.2
finite = dict(allow_nan=False, allow_infinity=False)


class TestClosedForms:
    def test_forward_reward(self):
        assert phi1_forward(SPEC, 31.0) == 1.0
        assert phi1_forward(SPEC, 0.0) == 0.0
        assert phi1_forward(SPEC, 15.5) == 0.75

    def test_roughness(self):
        assert phi2_accel_smooth(2, 0) == 4
        assert phi3_steer_smooth(0.3, 0.3) == 0
        assert phi2_accel_smooth(-1, 2) == 9

    def test_hard_accel(self):
        assert phi4_hard_accel(SPEC, 4.0) == pytest.approx(math.log(2), abs=1e-12)
        assert phi4_hard_accel(SPEC, 0.0) < 1e-25
        assert phi4_hard_accel(SPEC, 5.0) == pytest.approx(15 + math.exp(-15), abs=1e-9)

    def test_lane_departure(self):
        assert phi5_lane_departure(SPEC, 1.85) == 0
        assert phi5_lane_departure(SPEC, -1.85) == 0
        assert abs(phi5_lane_departure(SPEC, 0.0) - 1 / 12) < 1e-12
        assert phi5_lane_departure(SPEC, 5.0) == 1.0

    def test_out_of_road(self):
        assert phi6_out_of_road(SPEC, 4.7) == 0.5
        assert phi6_out_of_road(SPEC, -4.7) == 0.5
        assert phi6_out_of_road(SPEC, 0.0) == pytest.approx(oracles.sig(-14.1), rel=1e-12)
        assert phi6_out_of_road(SPEC, 0.0) == pytest.approx(7.5e-7, rel=0.01)
        assert phi6_out_of_road(SPEC, 1e6) == 1.0

    def test_crash(self):
        assert phi7_crash(SPEC, -5.0, 1.0) == 0.25
        assert phi7_crash(SPEC, 0.0, 0.0) == pytest.approx(oracles.sig(10) * oracles.sig(20), rel=1e-12)
        assert phi7_crash(SPEC, 0.0, 0.0) == pytest.approx(0.99995, abs=1e-5)
        assert phi7_crash(SPEC, -100.0, -1.85) < 1e-12

    def test_crash_follows_barrier_position(self):
        moved = SPEC.with_params(barrier_x=50.0)
        assert phi7_crash(moved, 45.0, 1.0) == 0.25

    def test_collision(self):
        want = 2 * (oracles.sig(5) - 0.5) * 2 * (oracles.sig(18) - 0.5)
        assert phi8_collision(SPEC, 0.0, 0.0) == pytest.approx(want, abs=1e-12)
        assert abs(phi8_collision(SPEC, 0.0, 0.0) - 0.986614) < 1e-5
        assert phi8_collision(SPEC, 100.0, 0.0) < 1e-15

    def test_overflow_safety(self):
        assert np.isfinite(phi4_hard_accel(SPEC, 1e6))
        assert np.isfinite(phi4_hard_accel(SPEC, -1e6))


class TestPeriodUtility:
    def test_lone_vehicle_at_speed_limit(self):
        ctx = PeriodContext(VehicleState(-200, 1.85, 0, 31))
        # the out-of-road tail at a lane center is 24 * S(-8.55), about 4.6e-3
        want = oracles.period_utility(-200, 1.85, 31, 0, 0, 0, 0)
        assert period_utility(SPEC, ctx) == pytest.approx(want, abs=1e-12)
        assert period_utility(SPEC, ctx) == pytest.approx(1.0 - 24 * oracles.sig(-8.55), abs=1e-9)

    def test_only_forward_weight(self):
        spec = AgentUtilitySpec(weights=UtilityWeights(1, 0, 0, 0, 0, 0, 0, 0))
        ctx = PeriodContext(VehicleState(0, 0.3, 0, 20), ActionPair(1, 0.1), ActionPair(-1, 0))
        assert period_utility(spec, ctx) == phi1_forward(spec, 20)

    def test_coincident_vehicles_pay_collision(self):
        s = VehicleState(-200, 1.85, 0, 31)
        alone = period_utility(SPEC, PeriodContext(s))
        paired = period_utility(SPEC, PeriodContext(s, others=(s,)))
        assert paired - alone == pytest.approx(-14 * 0.986614, abs=1e-4)

    def test_collision_sums_over_others(self):
        s = VehicleState(0, 0, 0, 31)
        o1, o2 = VehicleState(3, 0.5, 0, 31), VehicleState(-4, -0.2, 0, 31)
        f = period_features(SPEC, PeriodContext(s, others=(o1, o2)))
        assert f[7] == pytest.approx(phi8_collision(SPEC, -3, -0.5) + phi8_collision(SPEC, 4, 0.2), rel=1e-14)

    @given(st.floats(-300, 50), st.floats(-6, 6), st.floats(0, 45), st.floats(-8, 8), st.floats(-0.5, 0.5),
           st.floats(-8, 8), st.floats(-0.5, 0.5), st.floats(-30, 30), st.floats(-5, 5))
    def test_matches_scalar_oracle(self, x, y, v, a, d, ap, dp, ox, oy):
        ctx = PeriodContext(VehicleState(x, y, 0, v), ActionPair(a, d), ActionPair(ap, dp),
                            (VehicleState(x + ox, y + oy, 0, 30),))
        want = oracles.period_utility(x, y, v, a, d, ap, dp, [(x + ox, y + oy)])
        assert period_utility(SPEC, ctx) == pytest.approx(want, rel=1e-9, abs=1e-9)


class TestValidation:
    def test_params(self):
        with pytest.raises(UtilityError):
            UtilityParams(accel_min=1.0)
        with pytest.raises(UtilityError):
            UtilityParams(kappa8x=0)
        with pytest.raises(UtilityError):
            UtilityParams(speed_limit=float("inf"))

    def test_weights(self):
        with pytest.raises(UtilityError):
            UtilityWeights(w3=0.5)
        with pytest.raises(UtilityError):
            UtilityWeights(w1=-1)


class TestFeatureInvariants:
    @given(st.floats(0, 100, **finite))
    def test_forward_at_most_one(self, v):
        f = phi1_forward(SPEC, v)
        assert f <= 1 and (f == 1) == (v == 31)

    @given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
    def test_roughness_nonnegative(self, a, b):
        assert phi2_accel_smooth(a, b) >= 0 and phi3_steer_smooth(a, b) >= 0

    @given(st.floats(-30, 30))
    def test_hard_accel_positive(self, a):
        assert phi4_hard_accel(SPEC, a) > 0

    # sampling ranges stop where a double can no longer tell S(z) from 0 or 1
    @given(st.floats(-12, 12))
    def test_lateral_features_even_and_bounded(self, y):
        assert 0 <= phi5_lane_departure(SPEC, y) <= 1
        assert phi5_lane_departure(SPEC, y) == phi5_lane_departure(SPEC, -y)
        assert phi6_out_of_road(SPEC, y) == phi6_out_of_road(SPEC, -y)
        assert 0 < phi6_out_of_road(SPEC, y) < 1

    @given(st.floats(-20, 5), st.floats(-0.5, 1.5))
    def test_crash_in_open_interval(self, x, y):
        assert 0 < phi7_crash(SPEC, x, y) < 1

    @given(st.floats(-50, 50), st.floats(-10, 10))
    def test_collision_range_and_symmetry(self, dx, dy):
        f = phi8_collision(SPEC, dx, dy)
        assert 0 < f < 1
        assert f == pytest.approx(phi8_collision(SPEC, -dx, -dy), rel=1e-12, abs=0)

    @given(st.floats(0, 49.9), st.floats(1e-3, 0.1), st.floats(-10, 10))
    def test_collision_decreasing_in_longitudinal_gap(self, dx, h, dy):
        assume(dx + h <= 50)
        assert phi8_collision(SPEC, dx + h, dy) < phi8_collision(SPEC, dx, dy)
        assert phi8_collision(SPEC, -dx - h, dy) < phi8_collision(SPEC, -dx, dy)

    @given(st.floats(0, 9.9), st.floats(1e-3, 0.1), st.floats(-50, 50))
    def test_collision_decreasing_in_lateral_gap(self, dy, h, dx):
        assume(dy + h <= 10)
        assert phi8_collision(SPEC, dx, dy + h) < phi8_collision(SPEC, dx, dy)

    def test_feature_stack_broadcasts(self):
        f = feature_stack(SPEC, np.zeros(3), np.zeros(3), 31.0, 0.0, 0.0, 0.0, 0.0)
        assert f.shape == (8, 3)


def _two_agent_case(seed, T=12, steer_sd=0.03):
    rng = np.random.default_rng(seed)
    s0 = VehicleState(-60, -1.85, 0.0, 30.0)
    acts = np.c_[rng.normal(0, 1.5, T), rng.normal(0, steer_sd, T)]
    other = [(-62 + 6 * t, 1.85 - 0.2 * t) for t in range(T)]
    return s0, acts, other


class TestCumulative:
    @pytest.mark.parametrize("seed", range(5))
    def test_matches_scalar_oracle(self, seed):
        s0, acts, other = _two_agent_case(seed)
        oxy = [(np.array([p[0] for p in other]), np.array([p[1] for p in other]))]
        got = cumulative_utility_batch(SPEC, s0, acts[:, 0], acts[:, 1], oxy, DT)
        want = oracles.cumulative_utility(s0.as_tuple(), acts.tolist(), [other], DT)
        assert got == pytest.approx(want, rel=1e-11, abs=1e-11)

    def test_single_period_equals_period_utility(self):
        s0 = VehicleState(-10, 0.4, 0.02, 28)
        other = rollout(SPEC.geometry, VehicleState(-14, 1.85, 0, 31), [ActionPair()], DT)
        a = ActionPair(0.7, -0.01)
        ctx = PeriodContext(s0, a, ActionPair(), (other.states[0],))
        assert cumulative_utility(SPEC, s0, [a], [other], DT) == pytest.approx(period_utility(SPEC, ctx), rel=1e-14)

    def test_length_mismatch_is_rejected(self):
        other = rollout(SPEC.geometry, VehicleState(0, 1.85, 0, 31), [ActionPair()] * 2, DT)
        with pytest.raises(UtilityError):
            cumulative_utility(SPEC, VehicleState(0, -1.85, 0, 31), [ActionPair()] * 3, [other], DT)

    @given(st.integers(0, 10_000), st.floats(0.1, 5))
    def test_linear_in_weights(self, seed, factor):
        s0, acts, other = _two_agent_case(seed, T=6)
        oxy = [(np.array([p[0] for p in other]), np.array([p[1] for p in other]))]
        scaled = AgentUtilitySpec(weights=SPEC.weights.scaled(factor))
        base = cumulative_utility_batch(SPEC, s0, acts[:, 0], acts[:, 1], oxy, DT)
        assert cumulative_utility_batch(scaled, s0, acts[:, 0], acts[:, 1], oxy, DT) == pytest.approx(
            factor * base, rel=1e-10, abs=1e-10)

    @given(st.integers(0, 10_000), st.integers(0, 11), st.integers(0, 1))
    def test_central_differences_converge_at_second_order(self, seed, t, coord):
        # gentle steering keeps the path off the lane-departure cap at |y| ~ 3.9 m, where
        # the utility has a kink and no difference scheme can be second order
        s0, acts, other = _two_agent_case(seed, steer_sd=0.004)
        oxy = [(np.array([p[0] for p in other]), np.array([p[1] for p in other]))]
        y = rollout_arrays(SPEC.geometry, s0.as_tuple(), acts[:, 0], acts[:, 1], DT)[1]
        assume(np.all(np.abs(y) < 3.5) and np.all(y < -0.1))
        # steering at early ticks moves every later position through the heading, so its
        # steps must be small before the Taylor expansion dominates
        scale = 1.0 if coord == 0 else 0.005

        def cd(h):
            h = h * scale
            plus, minus = acts.copy(), acts.copy()
            plus[t, coord] += h
            minus[t, coord] -= h
            both = np.stack([plus, minus])
            up, down = cumulative_utility_batch(SPEC, s0, both[..., 0], both[..., 1], oxy, DT)
            return (up - down) / (2 * h)

        # Richardson: the error of a second-order difference shrinks 4x when h halves
        d1, d2, d3 = cd(1e-2), cd(5e-3), cd(2.5e-3)
        # skip flat directions where round-off swamps the difference of differences
        assume(abs(d2 - d3) > 1e-7 * max(1.0, abs(d3)))
        ratio = (d1 - d2) / (d2 - d3)
        assert ratio == pytest.approx(4.0, rel=0.2)
        assert abs(cd(1e-4) - d3) <= abs(d1 - d3) + 1e-8
