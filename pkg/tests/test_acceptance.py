"""One test per acceptance criterion; each records a PASS/FAIL line shown in the terminal summary."""
import logging
import time

import numpy as np
import pytest
from conftest import generic_scenario

from doaloc import example_data as ed
from doaloc.frames import (FrameTransform, angles_from_vector, apply_transform, doa_unit_vector,
                           geodesic_distance, invert_transform, is_rotation, random_rotation)
from doaloc.linear_system import assemble, rank_diagnostics, solve_noiseless, split_psi
from doaloc.pipeline import BearingObjective, RefineOptions, estimate_sdp_o, refine_mle
from doaloc.procrustes import nearest_rotation
from doaloc.sdp import build_constraints, build_problem, default_scale, lift, solve_relaxed
from doaloc.sim import (CampaignSpec, TrajectoryConfig, random_scenario, run_campaign, table_vs_sigma,
                        trial_seeds)

RESULTS: list[str] = []
CAMPAIGN_TIME: dict[str, float] = {}


def record(n: int, title: str, ok: bool, detail: str):
    RESULTS.append(f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d} {title}: {detail}")
    print(RESULTS[-1])
    assert ok, detail


@pytest.fixture(autouse=True)
def _quiet(caplog):
    caplog.set_level(logging.CRITICAL, logger="doaloc")


def test_01_noiseless_exact_recovery():
    cfg = TrajectoryConfig(K_max=6)
    t0 = time.perf_counter()
    worst = np.zeros(4)
    for t in range(100):
        sc = random_scenario(cfg, trial_seeds(1, t)[0])
        r, tr = split_psi(solve_noiseless(assemble(sc.measurements)))
        rep = estimate_sdp_o(sc.measurements)
        worst = np.maximum(worst, [
            geodesic_distance(r, sc.truth.rotation), np.linalg.norm(tr - sc.truth.translation),
            geodesic_distance(rep.r_bar, sc.truth.rotation), np.linalg.norm(rep.t_bar - sc.truth.translation)])
    elapsed = time.perf_counter() - t0
    ok = worst[0] < 1e-8 and worst[1] < 1e-6 and worst[2] < 1e-6 and worst[3] < 1e-4 and elapsed < 5
    record(1, "noiseless exact recovery", ok,
           f"linear max {worst[0]:.1e} rad / {worst[1]:.1e} m, SDP+O max {worst[2]:.1e} rad / "
           f"{worst[3]:.1e} m, {elapsed:.2f} s for 100 scenarios")


def test_02_printed_fixture_probe():
    ms = ed.printed_measurements()
    truth = ed.printed_transform()
    recomputed = np.array([angles_from_vector(apply_transform(truth, m.pos_a_global) - m.pos_b_ins)
                           for m in ms])
    dtheta = np.angle(np.exp(1j * (recomputed[:, 0] - ed.DOA[:, 0])))
    dphi = recomputed[:, 1] - ed.DOA[:, 1]
    rep = estimate_sdp_o(ms)
    rot_gap = geodesic_distance(rep.r_bar, truth.rotation)
    t_gap = np.linalg.norm(rep.t_bar - ed.TRANSLATION)
    ok = is_rotation(rep.r_bar)
    record(2, "printed fixture probe", ok,
           f"completed; recomputed-vs-printed DOA max |dtheta| {np.max(np.abs(dtheta)):.3f} rad, "
           f"max |dphi| {np.max(np.abs(dphi)):.3f} rad; estimate differs from printed transform by "
           f"{rot_gap:.3f} rad and {t_gap:.1f} m (printed values are mutually inconsistent)")


def test_03_nongeneric_detection():
    planar = TrajectoryConfig(planar_agent_a=True, K_max=20)
    generic = TrajectoryConfig(K_max=20)
    flagged_planar = flagged_generic = 0
    for t in range(50):
        K = 6 + t % 15
        sp = random_scenario(planar, trial_seeds(3, t)[0])
        flagged_planar += rank_diagnostics(assemble(sp.measurements.head(K))).rank < 12
        sg = random_scenario(generic, trial_seeds(3, 100 + t)[0])
        flagged_generic += rank_diagnostics(assemble(sg.measurements.head(K))).rank < 12
    ok = flagged_planar == 50 and flagged_generic == 0
    record(3, "nongeneric detection", ok,
           f"planar flagged {flagged_planar}/50, generic flagged {flagged_generic}/50 (K from 6 to 20)")


def test_04_constraint_faithfulness():
    rng = np.random.default_rng(4)
    cons = build_constraints()
    worst = 0.0
    for _ in range(1000):
        psi = rng.normal(size=12)
        r = psi[:9].reshape(3, 3)
        cof = np.array([np.cross(r[1], r[2]), np.cross(r[2], r[0]), np.cross(r[0], r[1])])
        pairs = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)]
        direct = ([(r @ r.T - np.eye(3))[p] for p in pairs] + [(r.T @ r - np.eye(3))[p] for p in pairs]
                  + list((r - cof).T.ravel()))
        X = lift(psi)
        worst = max(worst, max(abs(np.vdot(c.Q, X) - d) for c, d in zip(cons, direct)))
    record(4, "constraint faithfulness", worst < 1e-10, f"max |<Q_i,X> - C_i| = {worst:.1e} over 1000 vectors")


def test_05_rank_one_proximity():
    lines, ok = [], True
    for sigma_deg in (0.1, 1.0, 2.0, 3.0):
        spec = CampaignSpec(sigmas=(np.radians(sigma_deg),), K_values=(6,), trials_per_cell=100, seed=5)
        res = run_campaign(spec)
        ratios = np.array([r.rank1_ratio for r in res.records if r.ok])
        med = np.median(ratios)
        ok &= med < 0.1
        q = np.quantile(ratios, [0.5, 0.9, 1.0])
        lines.append(f"{sigma_deg:g} deg median {q[0]:.1e} p90 {q[1]:.1e} max {q[2]:.1e}")
    record(5, "rank-one proximity", ok, "; ".join(lines))


def test_06_four_instants():
    spec = CampaignSpec(sigmas=(np.radians(1.0),), K_values=(4,), trials_per_cell=100, seed=6)
    res = run_campaign(spec)
    good = [r for r in res.records if r.ok]
    rate = len(good) / len(res.records)
    med = np.median([r.rotation_error for r in good])
    record(6, "K=4 feasibility", rate >= 0.9,
           f"success {rate:.0%} over 100 trials, median rotation error {med:.3f} rad")


def test_07_sdp_beats_ls():
    spec = CampaignSpec(sigmas=tuple(np.radians([1.0, 3.0, 5.0])), K_values=(6,), trials_per_cell=20,
                        methods=("SDP_O", "LS_O"), truth_sampling="reference", seed=7)
    rows = table_vs_sigma(run_campaign(spec))
    ratios = [r["SDP_O"] / r["LS_O"] for r in rows]
    ok = all(q <= 0.8 for q in ratios)
    detail = ", ".join(f"{r['sigma_deg']:g} deg: SDP {r['SDP_O']:.3f} / LS {r['LS_O']:.3f} rad "
                       f"(LS/SDP {1 / q:.1f}x)" for r, q in zip(rows, ratios))
    record(7, "SDP+O beats LS+O", ok, detail + "; reference ratio about 2x")


def test_08_trends():
    sig = (0.1, 1.0, 3.0, 5.0)
    Ks = (4, 6, 8, 12, 16)
    spec = CampaignSpec(sigmas=tuple(np.radians(sig)), K_values=Ks, trials_per_cell=100, seed=8)
    t0 = time.perf_counter()
    res = run_campaign(spec)
    CAMPAIGN_TIME["criterion8"] = elapsed = time.perf_counter() - t0
    cells = res.cells()
    med = np.array([[cells[(np.radians(s), K, "SDP_O")].median_rotation_error for K in Ks] for s in sig])
    inversions = [int(np.sum(np.diff(row) > 0)) for row in med]
    k_ok = all(i <= 1 for i in inversions)
    s_ok = bool(np.all(np.diff(med, axis=0) >= 0))
    x = np.array(sig)
    r2 = []
    for col in med.T:
        fit = np.polyval(np.polyfit(x, col, 1), x)
        r2.append(float(1 - np.sum((col - fit) ** 2) / np.sum((col - col.mean()) ** 2)))
    lin_ok = min(r2) > 0.9
    failed = sum(c.n_failed for c in cells.values())
    ok = k_ok and s_ok and lin_ok and elapsed < 600
    record(8, "trend reproduction", ok,
           f"K inversions per sigma {inversions}, sigma-monotone {s_ok}, R^2 per K "
           f"{[round(v, 3) for v in r2]}, {failed} failed trials, mean distance "
           f"{res.distance_stats()['mean_m']:.0f} m, {elapsed:.0f} s")


def test_09_procrustes_and_frames_properties():
    rng = np.random.default_rng(9)
    bad = []
    for _ in range(1000):
        m = rng.normal(size=(3, 3))
        r = nearest_rotation(m)
        a, b = random_rotation(rng), random_rotation(rng)
        if not is_rotation(r):
            bad.append("rotation")
        if np.linalg.norm(nearest_rotation(r) - r) > 1e-12:
            bad.append("idempotence")
        if np.linalg.norm(nearest_rotation(a @ m @ b) - a @ r @ b) > 1e-9:
            bad.append("equivariance")
        d = np.linalg.norm(r - m)
        if any(np.linalg.norm(random_rotation(rng) - m) < d - 1e-12 for _ in range(100)):
            bad.append("minimality")
    for _ in range(1000):
        a, b, c = (random_rotation(rng) for _ in range(3))
        if not (is_rotation(a) and geodesic_distance(a, a) < 1e-12):
            bad.append("identity")
        if abs(geodesic_distance(a, b) - geodesic_distance(b, a)) > 1e-12:
            bad.append("symmetry")
        if geodesic_distance(a, b) > geodesic_distance(a, c) + geodesic_distance(c, b) + 1e-9:
            bad.append("triangle")
        tr = FrameTransform(a, rng.uniform(-500, 500, 3))
        p = rng.uniform(-2000, 2000, 3)
        if np.linalg.norm(apply_transform(invert_transform(tr), apply_transform(tr, p)) - p) > 1e-9 * np.linalg.norm(p):
            bad.append("round trip")
        th, ph = rng.uniform(-np.pi, np.pi), rng.uniform(-np.pi / 2 + 1e-6, np.pi / 2 - 1e-6)
        back = angles_from_vector(doa_unit_vector((th, ph)))
        if abs(np.angle(np.exp(1j * (back.theta - th)))) > 1e-9 or abs(back.phi - ph) > 1e-12:
            bad.append("angles")
    record(9, "procrustes and frames properties", not bad,
           f"{len(bad)} violations over 1000 cases per suite" + (f": {sorted(set(bad))}" if bad else ""))


def test_10_refinement():
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(100):
        truth, ms = generic_scenario(rng, K=8)
        obj = BearingObjective(ms, truth.rotation, truth.translation, scale=300.0)
        x = rng.normal(scale=0.1, size=6)
        _, g = obj.value_and_grad(x)
        fd = np.array([(obj(x + 1e-6 * e) - obj(x - 1e-6 * e)) / 2e-6 for e in np.eye(6)])
        worst = max(worst, np.max(np.abs(g - fd)) / np.max(np.abs(fd)))
    sigma = np.radians(3.0)
    increases = 0
    cfg = TrajectoryConfig(K_max=8)
    for t in range(100):
        sc = random_scenario(cfg, trial_seeds(10, t)[0], trial_seeds(10, t)[1])
        noisy = sc.observe(sigma)
        init = estimate_sdp_o(noisy)
        ref = refine_mle(noisy, init, RefineOptions(max_iter=200))
        trace = np.array(ref.diagnostics["cost_trace"])
        increases += bool(np.any(np.diff(trace) > 0) or trace[-1] > trace[0])
    ok = worst < 1e-5 and increases == 0
    record(10, "MLE refinement", ok,
           f"max relative gradient error {worst:.1e} over 100 points; cost increased in {increases}/100 trials")


def test_11_performance():
    rng = np.random.default_rng(11)
    truth, ms = generic_scenario(rng)
    p = build_problem(assemble(ms, default_scale(ms)))
    times = []
    for _ in range(20):
        t0 = time.perf_counter()
        solve_relaxed(p)
        times.append(time.perf_counter() - t0)
    campaign = CAMPAIGN_TIME.get("criterion8")
    if campaign is None:
        spec = CampaignSpec(sigmas=tuple(np.radians([0.1, 1.0, 3.0, 5.0])), K_values=(4, 6, 8, 12, 16),
                            trials_per_cell=100, seed=8)
        t0 = time.perf_counter()
        run_campaign(spec)
        campaign = time.perf_counter() - t0
    ok = max(times) < 1.0 and campaign < 600
    record(11, "performance", ok,
           f"single SDP solve max {max(times) * 1e3:.1f} ms (median {np.median(times) * 1e3:.1f} ms); "
           f"criterion-8 campaign {campaign:.0f} s")
