"""Gain certification, game-side value, saddle policies, closed loop."""

import numpy as np
import pytest

from stealthpath import attack as A
from stealthpath import engine as E
from stealthpath import mitigation as M


def scalar_system(lam=2.0, a=1.0):
    """g = h = R = 1: xi = 1, gamma = alpha = lam / (lam - 1)."""
    dyn = E.ControlAffineDynamics(
        state_dim=1, control_dim=1, noise_dim=1,
        drift=lambda t, x: np.zeros_like(x),
        control_gain=lambda t, x: np.array([[1.0]]),
        noise_gain=lambda t, x: np.array([[1.0]]),
    )
    cost = E.CostModel(
        state_cost=lambda t, x: a * x[..., 0],
        control_weight=lambda t, x: np.eye(1),
        horizon=1.0,
    )
    return dyn, cost


def planar_system(c=0.5, lam=1.0):
    """g = I2, h = c I2, R = I2: xi = c^2, full-rank bracket."""
    dyn = E.ControlAffineDynamics(
        state_dim=2, control_dim=2, noise_dim=2,
        drift=lambda t, x: np.zeros_like(x),
        control_gain=lambda t, x: np.eye(2),
        noise_gain=lambda t, x: c * np.eye(2),
    )
    cost = E.CostModel(
        state_cost=lambda t, x: x[..., 0] + x[..., 1],
        control_weight=lambda t, x: np.eye(2),
        horizon=1.0,
    )
    return dyn, cost


def z_ensemble(dyn, cost, N=20000, dt=0.01, T=1.0, seed=42, x0=None):
    grid = E.TimeGrid.from_horizon(0.0, T, dt)
    if x0 is None:
        x0 = np.zeros(dyn.state_dim)
    return E.rollout_batch(dyn, cost, grid, x0, None, None, N, E.SeedSpec(seed))


POINTS = [(0.0, np.zeros(1)), (0.5, np.array([1.0])), (1.0, np.array([-2.0]))]


class TestGainSolvers:
    def test_scalar_xi_exact(self):
        dyn, cost = scalar_system()
        xi, res = M.solve_xi(dyn, cost, POINTS, lam=2.0)
        assert xi == 1.0
        assert res == 0.0

    def test_selector_rows_xi_exact(self):
        # actuated subspace (rows 2, 3), noise gain = 0.1 * control gain
        g = np.zeros((4, 2))
        g[2, 0] = g[3, 1] = 1.0
        dyn = E.ControlAffineDynamics(
            state_dim=4, control_dim=2, noise_dim=2,
            drift=lambda t, x: np.zeros_like(x),
            control_gain=lambda t, x: g,
            noise_gain=lambda t, x: 0.1 * g,
        )
        cost = E.CostModel(lambda t, x: x[..., 0], lambda t, x: np.eye(2), 5.0)
        pts = [(0.0, np.zeros(4)), (2.5, np.ones(4))]
        xi, _ = M.solve_xi(dyn, cost, pts, lam=0.1)
        assert xi == pytest.approx(0.01, rel=1e-12)
        alpha, _ = M.solve_alpha(dyn, cost, pts, lam=0.1)
        assert alpha == pytest.approx(1.0 / 90.0, rel=1e-12)

    def test_anisotropic_noise_names_worst_point(self):
        dyn = E.ControlAffineDynamics(
            state_dim=2, control_dim=2, noise_dim=2,
            drift=lambda t, x: np.zeros_like(x),
            control_gain=lambda t, x: np.eye(2),
            noise_gain=lambda t, x: np.diag([1.0, 2.0]),
        )
        cost = E.CostModel(lambda t, x: x[..., 0], lambda t, x: np.eye(2), 1.0)
        pts = [(0.0, np.zeros(2)), (0.7, np.array([3.0, -1.0]))]
        with pytest.raises(E.AssumptionViolatedError) as exc:
            M.solve_xi(dyn, cost, pts, lam=5.0)
        assert "sample point #" in str(exc.value)
        assert exc.value.residual > 0

    def test_xi_outside_bracket(self):
        dyn, cost = scalar_system()
        with pytest.raises(E.AssumptionViolatedError):
            M.solve_xi(dyn, cost, POINTS, lam=0.5)  # fitted xi = 1 > lam

    def test_alpha_wrong_sign(self):
        dyn, cost = scalar_system()
        with pytest.raises(E.AssumptionViolatedError) as exc:
            M.solve_alpha(dyn, cost, POINTS, lam=0.5)  # bracket = 1 - 2 < 0
        assert "sign" in str(exc.value)

    def test_gamma_algebra(self):
        assert M.gamma_from_xi(1.0, 2.0) == 2.0
        assert M.gamma_from_xi(0.01, 0.1) == pytest.approx(1.0 / 90.0, rel=1e-15)
        assert M.gamma_from_xi(0.02, 1.5) == pytest.approx(0.03 / 1.48, rel=1e-15)
        for xi, lam in [(0.0, 1.0), (1.0, 1.0), (2.0, 1.0), (-0.1, 1.0)]:
            with pytest.raises(ValueError):
                M.gamma_from_xi(xi, lam)


class TestCertify:
    def test_valid_certificate_closes_the_loop(self):
        dyn, cost = scalar_system()
        cert = M.certify(dyn, cost, POINTS, lam=2.0)
        assert cert.valid
        assert cert.xi == 1.0 and cert.gamma == 2.0 and cert.alpha == 2.0
        assert cert.notes == ()
        assert abs(cert.alpha - cert.gamma) <= 1e-9 * max(1.0, cert.gamma)

    def test_never_raises_and_encodes_failure(self):
        dyn = E.ControlAffineDynamics(
            state_dim=2, control_dim=2, noise_dim=2,
            drift=lambda t, x: np.zeros_like(x),
            control_gain=lambda t, x: np.eye(2),
            noise_gain=lambda t, x: np.diag([1.0, 2.0]),
        )
        cost = E.CostModel(lambda t, x: x[..., 0], lambda t, x: np.eye(2), 1.0)
        cert = M.certify(dyn, cost, [(0.0, np.zeros(2))], lam=5.0)
        assert not cert.valid
        assert np.isnan(cert.xi) and np.isnan(cert.alpha)
        assert len(cert.notes) == 2

    def test_report_round_trips_keys(self):
        dyn, cost = scalar_system()
        cert = M.certify(dyn, cost, POINTS, lam=2.0)
        text = M.certificate_report(cert)
        got = dict(line.split("=", 1) for line in text.strip().split("\n"))
        assert float(got["xi"]) == 1.0
        assert float(got["gamma"]) == 2.0
        assert got["valid"] == "true"


class TestGameValue:
    def test_constant_cost_is_exact(self):
        dyn, _ = scalar_system()
        c0, T = 0.9, 0.5
        cost = E.CostModel(lambda t, x: np.full(x.shape[:-1], c0), lambda t, x: np.eye(1), T)
        ens = z_ensemble(dyn, cost, N=400, T=T)
        assert abs(M.estimate_game_value(ens, alpha=0.7) - c0 * T) <= 1e-12

    def test_linear_cost_matches_gaussian_oracle(self):
        # V = a x (T-t) - a^2 (T-t)^3 / (6 alpha) -> -1/6 at a=alpha=1, x=0
        dyn, cost = scalar_system(a=1.0)
        ens = z_ensemble(dyn, cost, N=20000)
        V = M.estimate_game_value(ens, alpha=1.0)
        assert abs(V - (-1.0 / 6.0)) <= 0.075 * (1.0 / 6.0)

    def test_requires_uncontrolled_measure(self):
        dyn, cost = scalar_system()
        grid = E.TimeGrid.from_horizon(0.0, 0.2, 0.01)
        ens = E.rollout_batch(
            dyn, cost, grid, [0.0],
            lambda t, x: np.zeros(x.shape[:-1] + (1,)), None, 16, E.SeedSpec(3),
        )
        assert ens.measure_tag == E.MEASURE_Q
        with pytest.raises(ValueError):
            M.estimate_game_value(ens, 1.0)

    def test_risk_sensitive_alias_is_the_same_function(self):
        assert M.risk_sensitive_value is M.estimate_game_value


class TestSaddlePoint:
    def test_constant_cost_gives_zero_policies(self):
        dyn, _ = scalar_system()
        cost = E.CostModel(lambda t, x: np.ones(x.shape[:-1]), lambda t, x: np.eye(1), 1.0)
        ens = z_ensemble(dyn, cost, N=20000)
        cert = M.certify(dyn, cost, POINTS, lam=2.0)
        est = M.estimate_saddle_point(ens, cert, dyn, cost, [0.0], 0.0)
        bound = 3.0 * 2.0 / np.sqrt(ens.count * ens.dt)  # |H| <= 2 here
        assert abs(est.u_star[0]) <= bound
        assert abs(est.theta_star[0]) <= bound

    def test_scalar_policy_ratio_is_exact(self):
        dyn, cost = scalar_system()
        ens = z_ensemble(dyn, cost, N=4000)
        cert = M.certify(dyn, cost, POINTS, lam=2.0)
        est = M.estimate_saddle_point(ens, cert, dyn, cost, [0.0], 0.0)
        assert est.theta_star[0] / est.u_star[0] == -0.5
        assert est.bracket_rank == 1

    def test_policies_match_analytic_gradient(self):
        # dV/dx = a (T-t): u* = -a(T-t), theta* = +a(T-t)/lam at xi=1
        dyn, cost = scalar_system(lam=2.0, a=1.0)
        ens = z_ensemble(dyn, cost, N=200000, seed=7)
        cert = M.certify(dyn, cost, POINTS, lam=2.0)
        est = M.estimate_saddle_point(ens, cert, dyn, cost, [0.0], 0.0)
        assert est.u_star[0] == pytest.approx(-1.0, abs=0.1)
        assert est.theta_star[0] == pytest.approx(0.5, abs=0.05)
        assert est.u_star[0] < 0.0 < est.theta_star[0]

    def test_policy_linear_relation(self):
        # theta* = H_theta pinv(H_u) u* by construction of the shared W
        dyn, cost = planar_system(c=0.5)
        ens = z_ensemble(dyn, cost, N=5000)
        pts = [(0.0, np.zeros(2)), (0.5, np.ones(2))]
        cert = M.certify(dyn, cost, pts, lam=1.0)
        assert cert.valid and cert.xi == pytest.approx(0.25, rel=1e-12)
        est = M.estimate_saddle_point(ens, cert, dyn, cost, [0.0, 0.0], 0.0)
        g = np.eye(2)
        h = 0.5 * np.eye(2)
        B = g @ g.T - (h @ h.T) / cert.lam
        B_pinv = np.linalg.pinv(B)
        H_u = g.T @ B_pinv
        H_t = -(h.T @ B_pinv) / cert.lam
        predicted = H_t @ np.linalg.pinv(H_u) @ est.u_star
        assert np.max(np.abs(predicted - est.theta_star)) <= 1e-10 * max(
            1.0, float(np.max(np.abs(est.theta_star)))
        )
        assert est.bracket_rank == 2

    def test_baseline_shift_invariance(self):
        dyn, _ = scalar_system()
        shift, seed, lam = 2.5, 31, 2.0

        def make(offset):
            cost = E.CostModel(
                lambda t, x: x[..., 0] + offset, lambda t, x: np.eye(1), 1.0
            )
            return cost, z_ensemble(dyn, cost, N=8000, seed=seed)

        cost0, ens0 = make(0.0)
        cost1, ens1 = make(shift)
        cert = M.certify(dyn, cost0, POINTS, lam=lam)
        e0 = M.estimate_saddle_point(ens0, cert, dyn, cost0, [0.0], 0.0)
        e1 = M.estimate_saddle_point(ens1, cert, dyn, cost1, [0.0], 0.0)
        assert abs(e1.u_star[0] - e0.u_star[0]) <= 1e-8
        assert abs(e1.theta_star[0] - e0.theta_star[0]) <= 1e-8
        assert abs((e1.value - e0.value) - shift * 1.0) <= 1e-9 * max(1.0, abs(e1.value))

    def test_invalid_certificate_refused(self):
        dyn, cost = scalar_system()
        ens = z_ensemble(dyn, cost, N=100)
        bad = M.certify(dyn, cost, POINTS, lam=0.5)
        assert not bad.valid
        with pytest.raises(E.AssumptionViolatedError):
            M.estimate_saddle_point(ens, bad, dyn, cost, [0.0], 0.0)


class TestClosedLoopGame:
    def setup_method(self):
        self.dyn, self.cost = scalar_system()
        self.cert = M.certify(self.dyn, self.cost, POINTS, lam=2.0)
        self.grid = E.TimeGrid.from_horizon(0.0, 0.3, 0.01)
        self.cfg = A.AttackConfig(lam=2.0, rollouts_per_decision=64, replan_every=10)

    def test_determinism(self):
        r1 = M.run_closed_loop_game(
            self.dyn, self.cost, self.grid, [0.0], self.cert, self.cfg, E.SeedSpec(10)
        )
        r2 = M.run_closed_loop_game(
            self.dyn, self.cost, self.grid, [0.0], self.cert, self.cfg, E.SeedSpec(10)
        )
        assert np.array_equal(r1.states, r2.states)
        assert np.array_equal(r1.controls, r2.controls)
        assert r1.kl_cost == r2.kl_cost

    def test_mode_gates_each_player(self):
        runs = {
            mode: M.run_closed_loop_game(
                self.dyn, self.cost, self.grid, [0.0], self.cert, self.cfg,
                E.SeedSpec(10), mode=mode,
            )
            for mode in M.GAME_MODES
        }
        assert np.all(runs["controller_only"].bias_history == 0.0)
        assert np.any(runs["controller_only"].controls != 0.0)
        assert runs["controller_only"].kl_cost == 0.0
        assert np.all(runs["attacker_only"].controls == 0.0)
        assert runs["attacker_only"].kl_cost > 0.0
        assert np.any(runs["both_play"].controls != 0.0)
        assert np.any(runs["both_play"].bias_history != 0.0)
        assert runs["both_play"].mode == "both_play"

    def test_replan_schedule_and_shapes(self):
        rec = M.run_closed_loop_game(
            self.dyn, self.cost, self.grid, [0.0], self.cert, self.cfg, E.SeedSpec(4)
        )
        K = self.grid.steps
        assert rec.states.shape == (K + 1, 1)
        assert rec.controls.shape == (K, 1)
        assert rec.cumulative_cost.shape == (K,)
        assert [k for k, _, _ in rec.ess_history] == [0, 10, 20]
        for start in range(0, K, 10):
            block = rec.controls[start:start + 10]
            assert np.all(block == block[0])

    def test_rejects_inconsistent_inputs(self):
        with pytest.raises(ValueError):
            M.run_closed_loop_game(
                self.dyn, self.cost, self.grid, [0.0], self.cert, self.cfg,
                E.SeedSpec(1), mode="nobody_plays",
            )
        other = A.AttackConfig(lam=1.0, rollouts_per_decision=64, replan_every=10)
        with pytest.raises(ValueError):
            M.run_closed_loop_game(
                self.dyn, self.cost, self.grid, [0.0], self.cert, other, E.SeedSpec(1)
            )
        bad = M.certify(self.dyn, self.cost, POINTS, lam=0.5)
        bad_cfg = A.AttackConfig(lam=0.5, rollouts_per_decision=64, replan_every=10)
        with pytest.raises(E.AssumptionViolatedError):
            M.run_closed_loop_game(
                self.dyn, self.cost, self.grid, [0.0], bad, bad_cfg, E.SeedSpec(1)
            )

    def test_csv_export_with_crash_flag(self, tmp_path):
        rec = M.run_closed_loop_game(
            self.dyn, self.cost, self.grid, [0.0], self.cert, self.cfg, E.SeedSpec(4)
        )
        p = tmp_path / "game.csv"
        M.write_game_csv(rec, p, unsafe=lambda X: X[:, 0] > -np.inf)
        lines = p.read_text().strip().split("\n")
        assert lines[0] == "step,t,x0,u0,theta0,cumulative_cost,crash_flag"
        assert len(lines) == 1 + self.grid.steps
        assert all(line.split(",")[-1] == "1" for line in lines[1:])
