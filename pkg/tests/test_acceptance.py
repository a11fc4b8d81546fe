"""Acceptance criteria A1-A10. Each test prints one PASS/FAIL line with its measurements."""
import io
import json
import math
import time

import numpy as np
import pytest

from barron_icl import features as feat
from barron_icl import harness
from barron_icl import kernels
from barron_icl import lasso
from barron_icl import transformer as tr

from conftest import DEFAULT_CONFIG, emulation_instance, four_atom_spec


@pytest.fixture
def report(capsys):
    def emit(tag, ok, detail):
        with capsys.disabled():
            print(f"\n{tag} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, f"{tag}: {detail}"

    return emit


def test_a1_relu_identities(report):
    t0 = time.perf_counter()
    z = np.linspace(-5.0, 5.0, 10_000)
    kappas = np.linspace(0.0, 2.0, 10_000)
    reference = np.array([lasso.soft_threshold(a, k) for a, k in zip(z, kappas)])
    st_err = np.max(np.abs(feat.relu(z - kappas) - feat.relu(-z - kappas) - reference))
    ramp_err = np.max(np.abs(feat.ramp(z) - (feat.relu(z + 0.5) - feat.relu(z - 0.5))))
    # the same identity through the constructed feed-forward weights, 17 x 589 rho values
    weights, H0, eta, lam = emulation_instance(1e6, L=3)
    lay, layer = weights.layout, weights.layers[1]
    vals = np.linspace(-0.05, 0.05, 17 * 589).reshape(17, 589)
    H = np.zeros((lay.D, 589))
    H[lay.rho] = vals
    H[lay.lam] = lam
    ff_err = np.max(np.abs(tr.ff_layer(H, layer.U, layer.W)[lay.rho] - lasso.soft_threshold(vals, eta * lam)))
    dt = time.perf_counter() - t0
    ok = max(st_err, ramp_err, ff_err) <= 1e-14 and dt < 1.0
    report("A1", ok, f"ST err {st_err:.1e}, ramp err {ramp_err:.1e}, FF1 err {ff_err:.1e}, {dt:.2f}s")


def test_a2_logistic_linearization(report):
    t0 = time.perf_counter()
    x = np.linspace(-1e3, 1e3, 10_001)
    worst = -np.inf
    for tau in (1e4, 1e5, 1e6):
        lhs = np.abs(x - 4 * tau * (kernels.logistic(x / tau) - 0.5))
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(x != 0, lhs / (2 * x**2 / tau), np.where(lhs == 0, 0.0, np.inf))
        worst = max(worst, float(ratio.max()))
    dt = time.perf_counter() - t0
    report("A2", worst <= 1.0 and dt < 1.0, f"max |err| / (2x^2/tau) = {worst:.3e}, {dt:.2f}s")


def _emulation(tau):
    weights, H0, eta, lam = emulation_instance(tau)
    H_L, trace = tr.forward(weights, H0, trace=True)
    problem = tr.problem_from_state(trace[2], eta, lam)
    return H_L, trace, tr.emulation_gap(trace, problem, eta, lam, tau)


def test_a3_transformer_runs_ista(report):
    t0 = time.perf_counter()
    H_L, _, rep6 = _emulation(1e6)
    _, _, rep5 = _emulation(1e5)
    # one ulp of the coefficients: below this the residuals are rounding, not linearization
    floor = np.finfo(float).eps * float(np.abs(tr.extract_state(H_L)[0]).max())
    dt = time.perf_counter() - t0
    within = all(s.e_inf <= s.e_bound for s in rep6.steps)
    ratio = rep5.max_e / rep6.max_e if rep6.max_e > 0 else math.inf
    ok = within and rep6.max_e <= 1e-3 and 5 <= ratio <= 20 and dt < 10
    report(
        "A3",
        ok,
        f"max e_t {rep6.max_e:.2e} (tau=1e6, bound {min(s.e_bound for s in rep6.steps):.2e}), "
        f"ratio tau=1e5/1e6 {ratio:.2f} (max e_t {rep5.max_e:.2e} / {rep6.max_e:.2e}, one ulp of rho {floor:.1e}), "
        f"{dt:.2f}s",
    )


def test_a4_ista_descent_and_rate(report):
    t0 = time.perf_counter()
    weights, H0, eta, _ = emulation_instance(1e6, L=3)
    _, trace = tr.forward(weights, H0, trace=True)
    problem = tr.problem_from_state(trace[2], eta, 0.003)
    assert problem.eta == 1 / (2 * problem.p)
    best = lasso.lasso_objective(problem, lasso.oracle_solve(problem, tol=1e-8))
    traj = lasso.run_ista(problem, 512)
    monotone = bool(np.all(np.diff(traj.objectives) <= 1e-12))
    Ts = 2 ** np.arange(3, 10)
    slope = float(np.polyfit(np.log(Ts), np.log(traj.objectives[Ts] - best), 1)[0])
    dt = time.perf_counter() - t0
    ok = monotone and -1.3 <= slope <= -0.7 and dt < 30
    report("A4", ok, f"monotone={monotone}, log-log slope {slope:.3f} over T=8..512, {dt:.2f}s")


def test_a5_kkt_certificates(report):
    t0 = time.perf_counter()
    spec = four_atom_spec()
    worst = 0.0
    for seed in range(20):
        bank = feat.make_feature_bank(spec, 32, 100.0, seed)
        _, (X, y), _ = harness.generate_task(spec, seed, 64, 4, 0.1, seed)
        lam = [0.003, 0.03, 0.3][seed % 3]
        problem = lasso.LassoProblem(feat.feature_matrix(bank, X), y, lam)
        worst = max(worst, lasso.kkt_residual(problem, lasso.oracle_solve(problem, tol=1e-8)))
    dt = time.perf_counter() - t0
    report("A5", worst <= 1e-6 and dt < 60, f"max kkt residual {worst:.2e} over 20 instances, {dt:.2f}s")


def test_a6_feature_approximation(report):
    t0 = time.perf_counter()
    spec = feat.finite_spectrum([[1.0, 0.0, 0.0, 0.0]], [1.0])
    f = feat.FunctionInstance(spec, {"alpha": [1.0], "theta": [0.0], "b": 0.0})
    grid = feat.ball_grid(4, 1000)
    cap = 4 * feat.barron_parameter(spec)
    errs = {256: [], 4096: []}
    budget_ok = True
    for seed in range(5):
        for n in errs:
            bank = feat.make_feature_bank(spec, n, 1e3, seed)
            oc = feat.oracle_coefficients(f, bank, grid)
            errs[n].append(oc.certified_error)
            budget_ok &= oc.l1_budget() < cap
    ratio = float(np.median(errs[4096]) / np.median(errs[256]))
    dt = time.perf_counter() - t0
    ok = ratio <= 0.5 and budget_ok and dt < 120
    report("A6", ok, f"median error n=4096 / n=256 = {ratio:.3f}, budget below 4 C_F on all seeds={budget_ok}, {dt:.1f}s")


def test_a7_risk_scalings(report):
    t0 = time.perf_counter()
    cfg = harness.load_config(DEFAULT_CONFIG)
    small = np.median(harness.risk_samples(cfg.replace(N=32)))
    large = np.median(harness.risk_samples(cfg.replace(N=512)))
    by_depth = {L: np.array(harness.risk_samples(cfg.replace(L=L))) for L in (5, 21, 81)}
    # one-sided sign test per adjacent pair: 9 or more increases out of 10 rejects at 5%
    ups = [int(np.sum(by_depth[b] > by_depth[a])) for a, b in ((5, 21), (21, 81))]
    dt = time.perf_counter() - t0
    ok = large <= 0.6 * small and max(ups) <= 8 and dt < 600
    report(
        "A7",
        ok,
        f"median MSE N=32 {small:.4f}, N=512 {large:.4f} (ratio {large / small:.3f}); "
        f"increases L 5->21 {ups[0]}/10, 21->81 {ups[1]}/10; {dt:.1f}s",
    )


def test_a8_barron_parameters(report):
    t0 = time.perf_counter()
    linear_ok = feat.barron_parameter(feat.linear_class(3, 2.0, 1.0)) == 3.0
    worst = 0.0
    specs = (four_atom_spec(), feat.finite_spectrum([[2.0, 0.0], [0.0, 0.5], [1.0, 1.0]], [0.5, 1.0, 0.2], b_max=0.3))
    for spec in specs:
        cf = feat.barron_parameter(spec)
        for seed in range(100):
            worst = max(worst, feat.member_barron_value(feat.sample_member(spec, seed)) / cf)
    dt = time.perf_counter() - t0
    ok = linear_ok and worst <= 1.0 and dt < 5
    report("A8", ok, f"linear exact={linear_ok}, max member value / C_F = {worst:.3f} over 200 members, {dt:.2f}s")


def test_a9_readout_contract(report):
    checked, ok = 0, True
    for tau in (1e5, 1e6):
        H_L, _, _ = _emulation(tau)
        ok &= tr.readout(H_L) == H_L.matrix[-1, -1] and bool(np.all(H_L.y_hat == tr.readout(H_L)))
        ok &= tr.readout_check(H_L, tau)[3]
        checked += 1
    cfg = harness.load_config(DEFAULT_CONFIG)
    worst = 0.0
    for seed in cfg.seeds:
        rep = harness.run_episode(cfg, data_seed=seed)
        allowance = 2 * (cfg.n + 3) * np.finfo(float).eps * rep.l1_of_rho_L
        ok &= rep.readout_consistency_gap <= 2 * rep.l1_of_rho_L**2 / cfg.tau + allowance
        ok &= rep.emulation_bounds_ok
        worst = max(worst, rep.readout_consistency_gap)
        checked += 1
    report("A9", bool(ok), f"{checked} episodes, max |y_hat - phi.rho| {worst:.2e}")


def test_a10_determinism_and_round_trips(report):
    t0 = time.perf_counter()
    cfg = harness.ExperimentConfig(spec=four_atom_spec(), d=4, n=8, N=16, L=5, seeds=(0, 1), test_points=8)
    grid = {"N": [16, 24]}
    a, b = io.StringIO(), io.StringIO()
    harness.sweep(cfg, grid, stream=a)
    harness.sweep(harness.ExperimentConfig.from_dict(json.loads(cfg.to_json())), grid, stream=b)
    same_csv = a.getvalue() == b.getvalue()

    spec = cfg.spec
    f = feat.sample_member(spec, 2)
    bank = feat.make_feature_bank(spec, 8, 100.0, 1)
    weights = tr.build_icl_transformer(bank, 5, 0.1, 1e6, 1 / 18, 16)
    episode = harness.run_episode(cfg)
    objects = [
        (spec, feat.ClassSpec),
        (f, feat.FunctionInstance),
        (bank, feat.FeatureBank),
        (feat.oracle_coefficients(f, bank), feat.OracleCoefficients),
        (lasso.LassoProblem(np.ones((2, 3)), [1.0, 2.0], 0.1), lasso.LassoProblem),
        (weights, tr.TransformerWeights),
        (cfg, harness.ExperimentConfig),
        (episode, harness.EpisodeReport),
    ]
    round_trip = all(
        json.dumps(kind.from_dict(json.loads(json.dumps(obj.to_dict()))).to_dict(), sort_keys=True)
        == json.dumps(obj.to_dict(), sort_keys=True)
        for obj, kind in objects
    )
    # corrupted payloads are rejected on the way back in
    bad_bank = bank.to_dict()
    bad_bank["tau"] = 2.0
    bad_cfg = cfg.to_dict()
    bad_cfg["L"] = 6
    rejected = 0
    for kind, data in ((feat.FeatureBank, bad_bank), (harness.ExperimentConfig, bad_cfg)):
        try:
            kind.from_dict(data)
        except ValueError:
            rejected += 1
    dt = time.perf_counter() - t0
    ok = same_csv and round_trip and rejected == 2 and dt < 5
    report("A10", ok, f"bit-identical CSV={same_csv}, {len(objects)} types round-trip={round_trip}, "
                      f"invalid payloads rejected {rejected}/2, {dt:.2f}s")
