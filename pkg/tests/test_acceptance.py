"""End-to-end acceptance checks for the policy-comparison engine.

One test per headline requirement; each prints a single PASS/FAIL line
(kept visible under ``pytest -v`` via capsys.disabled()) before asserting,
so a red run still reports the status of every criterion.

The heavyweight shared computation -- the four-policy comparison at 10^4
paths and 2000 steps -- runs once in a module fixture and is reused.
"""

import math
import time

import numpy as np
import pytest

from permitsim import (
    AllocationView,
    FirmControls,
    PathEnsemble,
    TimeGrid,
    best_response_frictionless,
    best_response_frictions,
    check_gamma_optimality,
    closing_martingale,
    coarsen_noise,
    compare_policies,
    cost_functional,
    custom_martingale_policy,
    ell,
    equilibrium_frictionless,
    equilibrium_frictions,
    estimate_eta_from_qv,
    foc_residuals,
    generate_noise,
    martingale_drift_stat,
    msr_policy,
    optimal_dynamic_policy,
    simulate_policy_paths,
    static_policy,
    static_price_paths,
    tax_policy,
    tracking_gamma,
)
from permitsim.stochastic import left_integral

import oracles
from conftest import N_FIRMS, make_firms, make_market

FULL_PATHS = 10_000
FULL_STEPS = 2_000
FULL_SEED = 2020
TARGET_TONS = 16e9


def _emit(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, f"criterion {number}: {detail}"


@pytest.fixture(scope="module")
def full_compare(base_market):
    policies = [
        optimal_dynamic_policy(base_market),
        static_policy(base_market),
        tax_policy(base_market),
        msr_policy(base_market, 0.1),
    ]
    grid = TimeGrid(base_market.horizon, FULL_STEPS)
    ensemble = PathEnsemble(FULL_SEED, grid, base_market.firms, FULL_PATHS)
    t0 = time.perf_counter()
    result = compare_policies(base_market, policies, ensemble)
    return result, time.perf_counter() - t0


def test_criterion_1_emission_cap_reproduction(base_market, full_compare, capsys):
    result, elapsed = full_compare
    target = base_market.rho * base_market.horizon * N_FIRMS * base_market.agg.mu_bar
    exact = target == TARGET_TONS
    zs = {
        r.kind.value: (r.expected_total_emissions - target) / r.emissions_stderr
        for r in result.reports
    }
    within = all(abs(z) <= 3.0 for z in zs.values())
    fast = elapsed < 60.0
    worst = max(zs, key=lambda k: abs(zs[k]))
    _emit(
        capsys, 1, exact and within and fast,
        f"cap rho*T*N*mu = 16 Gt {'exactly' if exact else 'NOT exact'}; "
        f"all four policies hit it within 3 s.e. at {FULL_PATHS} paths "
        f"(worst z = {zs[worst]:+.2f}, {worst}); comparison took {elapsed:.1f} s",
    )


def test_criterion_2_static_allocation_level(base_market, capsys):
    stat = static_policy(base_market)
    total_gt = N_FIRMS * stat.x_bar0 / 1e9
    ok = abs(total_gt - 15.90) <= 0.1
    _emit(
        capsys, 2, ok,
        f"static lump-sum totals N*x0 = {total_gt:.4f} Gt (target 15.90 +- 0.10)",
    )


def test_criterion_3_constant_price_under_optimal_policy(base_market, capsys):
    opt = optimal_dynamic_policy(base_market)
    p0_formula = (
        base_market.agg.H_bar + (1.0 - base_market.rho) * base_market.agg.mu_bar
    ) / base_market.agg.eta_bar
    grid = TimeGrid(base_market.horizon, FULL_STEPS)
    ensemble = PathEnsemble(FULL_SEED, grid, base_market.firms, FULL_PATHS)
    max_dev = 0.0
    max_qv = 0.0
    for noise in ensemble.chunks():
        sample = simulate_policy_paths(opt, base_market, noise)
        max_dev = max(max_dev, float(np.abs(sample.price - opt.p0).max()))
        max_qv = max(max_qv, float(sample.price_qv.max()))
    tau = tax_policy(base_market).tau
    ok = (
        opt.p0 == p0_formula
        and abs(opt.p0 - oracles.P0) < 1e-12
        and max_dev <= 1e-9 * opt.p0
        and max_qv <= 1e-12 * opt.p0**2
        and tau == opt.p0
    )
    _emit(
        capsys, 3, ok,
        f"price constant at {opt.p0:.3f} euros/ton over {FULL_PATHS} paths "
        f"(max deviation {max_dev:.1e}, max relative QV {max_qv / opt.p0**2:.1e}); "
        f"tax rate equals it to machine precision",
    )


def test_criterion_4_closed_form_monte_carlo_consistency(base_market, full_compare, capsys):
    result, _ = full_compare
    opt_r = result.report("optimal_dynamic")
    stat_r = result.report("static")
    # the optimal-policy cost is pathwise deterministic, so its MC stderr is
    # pure float noise; the roundoff floor (1e-9 relative) already encoded in
    # the consistency flag is the meaningful yardstick there
    opt_gap = abs(opt_r.mc_estimate - opt_r.closed_form)
    opt_ok = opt_r.consistent and opt_gap <= 4 * opt_r.mc_stderr + 1e-9 * abs(opt_r.closed_form)
    stat_ok = stat_r.consistent and stat_r.gap_in_se() <= 4.0
    opt_c = optimal_dynamic_policy(base_market)
    stat_c = static_policy(base_market)
    identity_gap = abs((stat_c.cost - opt_c.cost) - stat_c.delta_stat)
    identity_ok = identity_gap <= 1e-12 * abs(stat_c.cost)
    _emit(
        capsys, 4, opt_ok and stat_ok and identity_ok,
        f"MC vs closed form at {FULL_PATHS} paths: optimal gap {opt_gap:.1e} euros "
        f"(roundoff floor {1e-9 * abs(opt_r.closed_form):.1e}), static gap "
        f"{stat_r.gap_in_se():.2f} s.e.; identity C_stat - C_opt = delta_stat "
        f"holds to {identity_gap / abs(stat_c.cost):.1e} relative",
    )


def test_criterion_5_quadratic_variation_law_round_trip(base_market, capsys):
    stat = static_policy(base_market)
    agg = base_market.agg
    lam = base_market.penalty
    noise = generate_noise(77, TimeGrid(10.0, 200), base_market.firms, n_paths=FULL_PATHS)
    price = static_price_paths(base_market, noise, method="exact")
    qv = np.sum(np.diff(price, axis=-1) ** 2, axis=-1)
    z = (qv.mean() - stat.qv_T) / (qv.std(ddof=1) / math.sqrt(qv.size))
    eta_exact = estimate_eta_from_qv(stat.qv_T, agg.sigma_sq, lam, 10.0)
    eta_mc = estimate_eta_from_qv(float(qv.mean()), agg.sigma_sq, lam, 10.0)
    mc_rel = abs(eta_mc - 6e8) / 6e8
    ok = abs(z) <= 3.0 and abs(eta_exact - 6e8) <= 1e-6 and mc_rel <= 0.10
    _emit(
        capsys, 5, ok,
        f"realized QV matches the law within {z:+.2f} s.e. at {FULL_PATHS} paths; "
        f"eta recovered exactly from the closed-form QV and within "
        f"{mc_rel:.1%} from the MC QV",
    )


def test_criterion_6_policy_ordering_across_flexibility(capsys):
    grid = TimeGrid(10.0, 300)
    ordering_ok = True
    details = []
    low_gap = None
    for eta in np.logspace(6, 9, 7):
        mkt = make_market(make_firms(eta=float(eta)))
        opt = optimal_dynamic_policy(mkt)
        stat = static_policy(mkt)
        tax = tax_policy(mkt)
        msr = msr_policy(mkt, 0.1)
        ensemble = PathEnsemble(606, grid, mkt.firms, 2000, chunk_size=1000)
        costs = np.concatenate(
            [simulate_policy_paths(msr, mkt, nb).cost for nb in ensemble.chunks()]
        )
        mc = float(costs.mean())
        se = float(costs.std(ddof=1) / math.sqrt(costs.size))
        point_ok = (
            opt.cost - 4 * se <= mc <= stat.cost + 4 * se and stat.cost < tax.cost
        )
        oracle = oracles.MSR_COST_BY_ETA.get(float(eta))
        if oracle is not None:
            point_ok = point_ok and abs(mc - oracle) <= 4 * se
        ordering_ok = ordering_ok and point_ok
        if eta == 1e6:
            low_gap = (stat.cost - opt.cost) / opt.cost
    gaps = []
    for eta in np.logspace(6, 9, 20):
        mkt = make_market(make_firms(eta=float(eta)))
        gaps.append(
            (static_policy(mkt).cost - optimal_dynamic_policy(mkt).cost)
            / optimal_dynamic_policy(mkt).cost
        )
    monotone = bool(np.all(np.diff(gaps) < 0.0))
    gap_ok = 0.10 <= low_gap <= 0.30
    _emit(
        capsys, 6, ordering_ok and monotone and gap_ok,
        f"C_opt <= C_msr <= C_stat < C_tax at all 7 sweep points within 4 s.e. "
        f"(MSR cross-checked against an independent ODE integration); relative "
        f"static excess falls monotonically with eta and reaches {low_gap:.1%} "
        f"at eta = 1e6 (required 10%-30%)",
    )


def test_criterion_7_headline_substitutes(base_market, capsys):
    opt = optimal_dynamic_policy(base_market)
    tax = tax_policy(base_market)
    ratio = tax.cost / opt.cost
    thr = tax.break_even_lambda
    diffs = []
    for lam in (thr * (1 - 1e-6), thr * (1 + 1e-6)):
        m = make_market(penalty=lam)
        diffs.append(tax_policy(m).cost - optimal_dynamic_policy(m).cost)
    flips = diffs[0] < 0.0 < diffs[1]
    ok = ratio >= 4.0 and flips
    _emit(
        capsys, 7, ok,
        f"tax costs {ratio:.2f}x the optimal policy (required >= 4); the "
        f"tax-vs-optimal cost difference changes sign across the break-even "
        f"penalty within +-1e-6 ({diffs[0]:+.2e} -> {diffs[1]:+.2e} euros)",
    )


def _constant_vol_price(noise, p0=25.0, vol=0.3):
    common = np.concatenate(
        [np.zeros((noise.n_paths, 1)), noise.d_tilde[:, 0, :].cumsum(axis=-1)],
        axis=-1,
    )
    return p0 + vol * common


def _tracking_view(noise, firm, m0=1e9, firm_index=0):
    w = np.concatenate(
        [np.zeros((noise.n_paths, 1)), noise.d_firm[:, firm_index, :].cumsum(axis=-1)],
        axis=-1,
    )
    m = m0 + firm.sigma * w
    return AllocationView(expected_total=m, realized=m)


def _ramp_view(noise, firm, m0=1e9, firm_index=0):
    """Allocation loading grows linearly from 0 to the firm's sigma at T, so
    the abatement response stays smooth through the terminal layer where the
    feedback gain peaks."""
    t = noise.grid.knots
    load = firm.sigma * t[:-1] / noise.grid.horizon
    m = np.empty((noise.n_paths, t.size))
    m[:, 0] = m0
    np.cumsum(load * noise.d_firm[:, firm_index, :], axis=-1, out=m[:, 1:])
    m[:, 1:] += m0
    return AllocationView(expected_total=m, realized=m)


def test_criterion_8_first_order_conditions_and_convexity(capsys):
    firms = make_firms()
    firm = firms[0]
    frictionless = make_market(firms)
    frictions = make_market(firms, depth=1e6)

    fine = generate_noise(314, TimeGrid(10.0, 1600), firms, n_paths=4)
    levels = [coarsen_noise(fine, 4), coarsen_noise(fine, 2), fine]
    gaps0, gaps1 = [], []
    for nz in levels:
        price = _constant_vol_price(nz)
        v0 = _tracking_view(nz, firm)
        c0 = best_response_frictionless(
            firm, frictionless, price, v0, nz, price_is_martingale=True
        )
        ra, rb = foc_residuals(firm, frictionless, c0, price, v0, nz)
        gaps0.append(max(np.abs(ra).max(), np.abs(rb).max()))
        v1 = _ramp_view(nz, firm)
        c1 = best_response_frictions(
            firm, frictions, price, v1, nz, price_is_martingale=True
        )
        ra, rb = foc_residuals(firm, frictions, c1, price, v1, nz)
        gaps1.append(max(np.abs(ra).max(), np.abs(rb).max()))
    orders0 = [math.log2(gaps0[i] / gaps0[i + 1]) for i in range(2)]
    orders1 = [math.log2(gaps1[i] / gaps1[i + 1]) for i in range(2)]
    order_ok = min(orders0 + orders1) >= 0.9

    # convexity: 100 adapted perturbations of the optimal controls must never
    # lower the expected cost by a statistically significant margin
    nz = generate_noise(2718, TimeGrid(10.0, 200), firms, n_paths=64)
    price = _constant_vol_price(nz)
    view = _ramp_view(nz, firm)
    ctl = best_response_frictions(
        firm, frictions, price, view, nz, price_is_martingale=True
    )
    base = cost_functional(firm, frictions, ctl, price, nz)
    w = np.concatenate(
        [np.zeros((nz.n_paths, 1)), nz.d_firm[:, 0, :].cumsum(axis=-1)], axis=-1
    )
    rng = np.random.default_rng(12345)
    a_scale = 0.01 * float(np.abs(ctl.abatement).mean())
    b_scale = 0.01 * float(np.abs(ctl.trade_rate).mean())
    flags = 0
    worst_z = math.inf
    for j in range(100):
        u = a_scale * rng.standard_normal(nz.grid.n_steps + 1)
        v = b_scale * rng.standard_normal(nz.grid.n_steps + 1) if j % 2 else 0.0
        alpha_p = ctl.abatement + u
        beta_p = ctl.trade_rate + v
        bank_p = view.realized + left_integral(alpha_p + beta_p, nz.grid)
        bank_p = bank_p - firm.sigma * w
        pert = FirmControls(abatement=alpha_p, trade_rate=beta_p, bank=bank_p)
        delta = cost_functional(firm, frictions, pert, price, nz) - base
        mean = float(delta.mean())
        se = float(delta.std(ddof=1) / math.sqrt(delta.size))
        z = mean / se if se > 0 else math.inf
        worst_z = min(worst_z, z)
        if mean < -4.0 * se:
            flags += 1
    convex_ok = flags == 0
    _emit(
        capsys, 8, order_ok and convex_ok,
        f"max FOC residual halves with dt: orders "
        f"{', '.join(f'{o:.2f}' for o in orders0)} (frictionless) and "
        f"{', '.join(f'{o:.2f}' for o in orders1)} (finite depth), all >= 0.9; "
        f"0/100 perturbations lowered the cost significantly (worst z = {worst_z:+.2f})",
    )


def test_criterion_9_structural_invariants(base_market, capsys):
    firms = base_market.firms
    frictions = make_market(firms, depth=1e6)
    noise = generate_noise(501, TimeGrid(10.0, 100), firms, n_paths=FULL_PATHS)
    w = noise.firm_paths()
    views = []
    for i, f in enumerate(firms):
        m = 1e9 + 0.5 * f.sigma * w[:, i, :]
        views.append(AllocationView(expected_total=m, realized=m))
    eq = equilibrium_frictions(frictions, views, noise)

    drift_ok = (
        martingale_drift_stat(eq.price).passed()
        and martingale_drift_stat(eq.abatement[:, 0, :]).passed()
        and martingale_drift_stat(views[0].expected_total).passed()
    )

    marginal = sum(f.h + eq.abatement[:, i, :] / f.eta for i, f in enumerate(firms))
    clearing_frictions = float(
        np.abs(marginal - len(firms) * eq.price).max()
        / (len(firms) * np.abs(eq.price).max())
    )
    eq0 = equilibrium_frictionless(base_market, views, noise)
    gross = float(np.abs(eq0.total_trade).sum(axis=1).max())
    clearing_frictionless = float(np.abs(eq0.total_trade.sum(axis=1)).max() / gross)
    clearing_ok = clearing_frictions <= 1e-9 and clearing_frictionless <= 1e-9

    # finite-difference identity dM = (T - t) dalpha for the closing
    # martingale of the abatement: exact at the right knot, first order at
    # the left knot
    grid = noise.grid
    alpha = eq.abatement[:, 0, :]
    m_alpha = closing_martingale(alpha, grid)
    dm = np.diff(m_alpha, axis=-1)
    da = np.diff(alpha, axis=-1)
    right = (grid.horizon - grid.knots[1:]) * da
    left = (grid.horizon - grid.knots[:-1]) * da
    scale = float(np.abs(right).max())
    exact_gap = float(np.abs(dm - right).max()) / scale
    left_gap = float(np.abs(dm - left).max())
    identity_ok = exact_gap <= 1e-12 and left_gap <= 1.5 * grid.dt * float(np.abs(da).max())

    firm_list = list(firms)
    g_track = tracking_gamma(firm_list)
    g_perm = g_track[::-1].copy()
    g_shift = g_track.copy()
    g_shift[0, 3] += 1e7
    g_shift[1, 3] -= 1e7
    g_bad = g_track.copy()
    g_bad[0, 3] += 1e-3
    gamma_ok = (
        check_gamma_optimality(g_track, firm_list)[0]
        and check_gamma_optimality(g_perm, firm_list)[0]
        and check_gamma_optimality(g_shift, firm_list)[0]
        and not check_gamma_optimality(g_bad, firm_list)[0]
    )

    level = ell(base_market)
    m0_b = np.full(N_FIRMS, level) + np.linspace(-3e8, 3e8, N_FIRMS)
    pol_a = custom_martingale_policy(base_market, np.full(N_FIRMS, level), g_track)
    pol_b = custom_martingale_policy(base_market, m0_b, g_perm)
    nz = generate_noise(909, TimeGrid(10.0, 400), firms, n_paths=2000)
    cost_a = simulate_policy_paths(pol_a, base_market, nz).cost
    cost_b = simulate_policy_paths(pol_b, base_market, nz).cost
    diff = cost_a - cost_b
    se = float(diff.std(ddof=1) / math.sqrt(diff.size))
    # both costs are pathwise deterministic here, so the comparison needs the
    # same quadrature-roundoff floor the cost reports use
    floor = 1e-9 * float(np.abs(cost_a).mean())
    nonunique_ok = abs(float(diff.mean())) <= 4.0 * se + floor

    ok = drift_ok and clearing_ok and identity_ok and gamma_ok and nonunique_ok
    _emit(
        capsys, 9, ok,
        f"drift diagnostics pass for price, abatement, and allocation views at "
        f"{FULL_PATHS} paths; clearing residuals {clearing_frictions:.1e} / "
        f"{clearing_frictionless:.1e} (<= 1e-9); closing-martingale increment "
        f"identity exact at the right knot ({exact_gap:.1e} relative); loading "
        f"checks accept exactly the column-sum solutions; two admissible "
        f"allocation profiles differ by {abs(float(diff.mean())):.1e} euros "
        f"(within 4 s.e. + roundoff floor {floor:.1e})",
    )


def test_msr_monte_carlo_agrees_with_independent_integration(full_compare, capsys):
    """Cross-check outside the numbered list: the full-size MSR Monte Carlo
    cost must agree with a separately derived ODE value for the base market."""
    result, _ = full_compare
    rep = result.report("msr")
    oracle = oracles.MSR_COST_BY_ETA[6e8]
    gap_se = abs(rep.mc_estimate - oracle) / rep.mc_stderr
    with capsys.disabled():
        print(
            f"\nINFO msr cross-check: MC {rep.mc_estimate:.6e} vs ODE {oracle:.6e} "
            f"({gap_se:.2f} s.e.)"
        )
    assert gap_se <= 4.0
