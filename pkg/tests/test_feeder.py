import datetime

import numpy as np
import pytest

from privflow.feeder import (
    AdmittanceMatrix,
    Bus,
    BusState,
    FeederModel,
    Line,
    LoadProfile,
    PowerFlowError,
    build_admittance,
    generate_profiles,
    inject_measurement_noise,
    power_injections,
    random_radial_feeder,
    read_feeder_file,
    read_profile_csv,
    read_voltage_csv,
    solve_power_flow,
    write_feeder_file,
    write_profile_csv,
    write_voltage_csv,
)

# Frozen two-bus oracle: grid-zoom mismatch minimization, residual ~6e-17.
# Slack 1.0 at angle 0, line 0.01+0.01j, load P=0.1 Q=0.0329.
TWOBUS_V2 = 0.998669003026497035802044877073
TWOBUS_TH2 = -0.000671894339819079089437536822516


def two_bus_model():
    return FeederModel([Bus(1, "slack"), Bus(2, "pq")], [Line(1, 2, 0.01, 0.01)])


def constant_profile(bus_ids, p, q, T=1):
    n = len(bus_ids)
    return LoadProfile(bus_ids, np.full((n, T), p), np.full((n, T), q), 15)


class TestModelValidation:
    def test_duplicate_bus_ids(self):
        with pytest.raises(ValueError, match="duplicate bus ids"):
            FeederModel([Bus(1, "slack"), Bus(1, "pq")], [])

    def test_slack_count(self):
        with pytest.raises(ValueError, match="slack"):
            FeederModel([Bus(1, "pq"), Bus(2, "pq")], [Line(1, 2, 0.01, 0.01)])
        with pytest.raises(ValueError, match="slack"):
            FeederModel([Bus(1, "slack"), Bus(2, "slack")], [Line(1, 2, 0.01, 0.01)])

    def test_line_impedance_rules(self):
        buses = [Bus(1, "slack"), Bus(2, "pq")]
        with pytest.raises(ValueError):
            FeederModel(buses, [Line(1, 2, -0.01, 0.01)])
        with pytest.raises(ValueError):
            FeederModel(buses, [Line(1, 2, 0.01, 0.0)])

    def test_duplicate_line_rejected(self):
        buses = [Bus(1, "slack"), Bus(2, "pq")]
        with pytest.raises(ValueError, match="duplicate line"):
            FeederModel(buses, [Line(1, 2, 0.01, 0.01), Line(2, 1, 0.02, 0.02)])

    def test_disconnected_rejected(self):
        buses = [Bus(1, "slack"), Bus(2, "pq"), Bus(3, "pq")]
        with pytest.raises(ValueError, match="connected"):
            FeederModel(buses, [Line(1, 2, 0.01, 0.01)])

    def test_empty_line_set_rejected(self):
        with pytest.raises(ValueError, match="connected"):
            FeederModel([Bus(1, "slack"), Bus(2, "pq")], [])


class TestAdmittance:
    def test_single_line_stamp(self):
        Y = build_admittance(two_bus_model())
        y = 1.0 / complex(0.01, 0.01)
        assert Y.matrix[0, 1] == -y
        assert Y.matrix[1, 0] == -y
        assert Y.matrix[0, 0] == y
        assert Y.matrix[1, 1] == y

    def test_three_bus_matches_stamp_oracle(self):
        model = FeederModel(
            [Bus(1, "slack"), Bus(2, "pq"), Bus(3, "pq")],
            [Line(1, 2, 0.01, 0.012), Line(2, 3, 0.02, 0.009)])
        Y = build_admittance(model)
        # independent route: accumulate explicit per-line 2x2 stamps
        oracle = np.zeros((3, 3), dtype=complex)
        for (i, j, r, x) in [(0, 1, 0.01, 0.012), (1, 2, 0.02, 0.009)]:
            y = 1.0 / complex(r, x)
            stamp = np.zeros((3, 3), dtype=complex)
            stamp[i, i] = stamp[j, j] = y
            stamp[i, j] = stamp[j, i] = -y
            oracle += stamp
        assert np.allclose(Y.matrix, oracle, rtol=0, atol=0)

    def test_symmetry_random_feeders(self):
        for seed in range(20):
            model = random_radial_feeder(int(3 + seed % 10), seed=seed)
            Y = build_admittance(model).matrix
            assert np.array_equal(Y, Y.T)

    def test_offdiag_row_sums_cancel_diagonal(self):
        Y = build_admittance(random_radial_feeder(12, seed=3)).matrix
        assert np.allclose(Y.sum(axis=1), 0.0, atol=1e-12)


class TestPowerFlow:
    def test_flat_no_load(self):
        model = random_radial_feeder(8, seed=0)
        Y = build_admittance(model)
        loads = constant_profile(model.pq_ids, 0.0, 0.0, T=3)
        state = solve_power_flow(Y, loads)
        assert np.array_equal(state.v, np.ones_like(state.v))
        assert np.array_equal(state.theta, np.zeros_like(state.theta))

    def test_two_bus_frozen_oracle(self):
        Y = build_admittance(two_bus_model())
        state = solve_power_flow(Y, constant_profile([2], 0.1, 0.0329))
        assert abs(state.v[1, 0] - TWOBUS_V2) < 1e-8
        assert abs(state.theta[1, 0] - TWOBUS_TH2) < 1e-8
        assert state.v[0, 0] == 1.0 and state.theta[0, 0] == 0.0

    def test_self_consistency_desk_feeder(self):
        model = random_radial_feeder(15, seed=1)
        Y = build_admittance(model)
        loads = generate_profiles(14, T=40, seed=7, season="winter")
        state = solve_power_flow(Y, loads, tol=1e-8)
        pq = [Y.index_of(b) for b in model.pq_ids]
        rows = {bid: k for k, bid in enumerate(loads.bus_ids)}
        for t in range(loads.samples):
            P, Q = power_injections(Y, state.v[:, t], state.theta[:, t])
            for bid in model.pq_ids:
                i = Y.index_of(bid)
                assert abs(P[i] + loads.p[rows[bid], t]) < 1e-8
                assert abs(Q[i] + loads.q[rows[bid], t]) < 1e-8
        assert np.all(state.v[pq] > 0)

    def test_slack_pinned_every_step(self):
        model = random_radial_feeder(10, seed=5)
        Y = build_admittance(model)
        loads = generate_profiles(9, T=12, seed=9)
        state = solve_power_flow(Y, loads)
        s = Y.index_of(model.slack_id)
        assert np.array_equal(state.v[s], np.ones(12))
        assert np.array_equal(state.theta[s], np.zeros(12))

    def test_monotone_loading_radial(self):
        # shrinking every load never drops any voltage magnitude
        rng = np.random.default_rng(42)
        for trial in range(100):
            model = random_radial_feeder(int(rng.integers(3, 13)), seed=trial + 1000)
            Y = build_admittance(model)
            p = rng.uniform(0.01, 0.08)
            base = constant_profile(model.pq_ids, p, p * 0.33)
            k = rng.uniform(0.05, 1.0)
            scaled = constant_profile(model.pq_ids, k * p, k * p * 0.33)
            v_full = solve_power_flow(Y, base).v[:, 0]
            v_light = solve_power_flow(Y, scaled).v[:, 0]
            assert np.all(v_light >= v_full - 1e-12)

    def test_divergence_reports_trace(self):
        Y = build_admittance(two_bus_model())
        with pytest.raises(PowerFlowError) as err:
            solve_power_flow(Y, constant_profile([2], 60.0, 20.0))
        assert err.value.step == 0
        assert len(err.value.trace) > 0

    def test_bad_tolerance_rejected(self):
        Y = build_admittance(two_bus_model())
        with pytest.raises(ValueError):
            solve_power_flow(Y, constant_profile([2], 0.01, 0.003), tol=0)


class TestProfiles:
    def test_deterministic(self):
        a = generate_profiles(5, T=200, seed=3, season="summer")
        b = generate_profiles(5, T=200, seed=3, season="summer")
        assert np.array_equal(a.p, b.p) and np.array_equal(a.q, b.q)

    def test_month_shape(self):
        prof = generate_profiles(14, T=2880, resolution=15, seed=0)
        assert prof.samples == 2880
        stamps = prof.timestamps()
        assert stamps[-1] - stamps[0] == datetime.timedelta(minutes=15 * 2879)
        assert (stamps[-1] - stamps[0]).days == 29  # 30 days of samples

    def test_power_factor_relation(self):
        prof = generate_profiles(4, T=50, seed=2)
        assert np.allclose(prof.q, prof.p * np.tan(np.arccos(0.95)), rtol=1e-12)

    def test_loads_positive(self):
        prof = generate_profiles(8, T=500, seed=11, season="winter")
        assert np.all(prof.p > 0) and np.all(prof.q > 0)

    def test_seasons_change_level(self):
        sm = generate_profiles(6, T=960, seed=4, season="summer")
        wn = generate_profiles(6, T=960, seed=4, season="winter")
        assert wn.p.mean() > 1.2 * sm.p.mean()

    def test_unknown_season_rejected(self):
        with pytest.raises(ValueError):
            generate_profiles(3, T=10, season="monsoon")


class TestNoise:
    def make_state(self, n=10, T=20000):
        v = np.full((n, T), 0.98)
        return BusState(list(range(1, n + 1)), v, np.zeros((n, T)))

    def test_zero_noise_identity(self):
        state = self.make_state(3, 50)
        out = inject_measurement_noise(state, 0.0, seed=1)
        assert np.array_equal(out.v, state.v)
        assert out.v is not state.v  # still a copy

    def test_sigma_calibration(self):
        state = self.make_state()
        out = inject_measurement_noise(state, 1.0, seed=5)
        err = out.v - state.v
        sigma = err.std()
        assert abs(sigma - 0.01 / 3) / (0.01 / 3) < 0.05
        assert abs(err.mean()) < 3 * sigma / np.sqrt(err.size)

    def test_angles_untouched(self):
        state = self.make_state(4, 100)
        out = inject_measurement_noise(state, 0.5, seed=2)
        assert np.array_equal(out.theta, state.theta)

    def test_deterministic(self):
        state = self.make_state(4, 100)
        a = inject_measurement_noise(state, 0.2, seed=9)
        b = inject_measurement_noise(state, 0.2, seed=9)
        assert np.array_equal(a.v, b.v)

    def test_negative_pct_rejected(self):
        with pytest.raises(ValueError):
            inject_measurement_noise(self.make_state(2, 5), -0.1)


class TestFileFormats:
    def test_feeder_round_trip(self, tmp_path):
        model = random_radial_feeder(9, seed=17)
        path = tmp_path / "feeder.txt"
        write_feeder_file(model, path)
        back = read_feeder_file(path)
        assert back.buses == model.buses
        assert back.lines == model.lines
        assert back.base_voltage == model.base_voltage

    def test_feeder_file_comments_and_errors(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("# comment\nbus 1 slack\nbus 2 pq\nfrobnicate 3\n")
        with pytest.raises(ValueError, match="unknown record"):
            read_feeder_file(path)

    def test_profile_csv_round_trip(self, tmp_path):
        prof = generate_profiles(3, T=8, seed=1)
        path = tmp_path / "loads.csv"
        write_profile_csv(prof, path)
        header = path.read_text().splitlines()[0]
        assert header == "bus_id,timestamp,p_pu,q_pu"
        back = read_profile_csv(path)
        assert back.bus_ids == prof.bus_ids
        assert np.array_equal(back.p, prof.p)
        assert np.array_equal(back.q, prof.q)
        assert back.transformed is False

    def test_transformed_flag_round_trip(self, tmp_path):
        prof = generate_profiles(2, T=4, seed=1)
        prof.transformed = True
        path = tmp_path / "t.csv"
        write_profile_csv(prof, path)
        first = path.read_text().splitlines()[0]
        assert first.startswith("#") and "transformed=true" in first
        assert read_profile_csv(path).transformed is True

    def test_voltage_csv_round_trip(self, tmp_path):
        model = random_radial_feeder(5, seed=2)
        Y = build_admittance(model)
        loads = generate_profiles(4, T=6, seed=3)
        state = solve_power_flow(Y, loads)
        path = tmp_path / "volts.csv"
        write_voltage_csv(state, path)
        header = path.read_text().splitlines()[0]
        assert header == "bus_id,timestamp,v_pu,theta_rad"
        back = read_voltage_csv(path)
        assert back.bus_ids == sorted(state.bus_ids)
        order = [state.bus_ids.index(b) for b in back.bus_ids]
        assert np.array_equal(back.v, state.v[order])
        assert np.array_equal(back.theta, state.theta[order])

    def test_missing_samples_rejected(self, tmp_path):
        path = tmp_path / "gap.csv"
        path.write_text("bus_id,timestamp,p_pu,q_pu\n"
                        "2,2024-01-01T00:00,0.1,0.03\n"
                        "2,2024-01-01T00:15,0.1,0.03\n"
                        "3,2024-01-01T00:00,0.1,0.03\n")
        with pytest.raises(ValueError, match="missing samples"):
            read_profile_csv(path)
