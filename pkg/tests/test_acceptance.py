"""End-to-end acceptance battery.

Each test exercises one acceptance criterion at its stated scale and
tolerance and prints one PASS/FAIL line directly to the terminal (the
line appears live even under pytest's output capture).  Scenario runs
are shared through module-scoped fixtures so every full-scale scenario
executes exactly once.
"""

from __future__ import annotations

import sys
import time

import numpy as np
import pytest

from enlargemc.engine import MartingaleSeries, make_grid, simulate_drivers, DriverSpec
from enlargemc.enlargement import (
    EnlargedFeatureSet,
    regress_condexp,
    thin_compensated,
)
from enlargemc.analysis import gkw_project
from enlargemc.oracle import (
    build_tree,
    exact_compensator,
    exact_condexp,
    exact_gkw,
    first_reach,
    martingale_path,
)
from enlargemc.random_times import (
    INF_IDX,
    LABEL_INFINITE,
    RandomTimeSample,
    StoppingFamily,
    avoidance_rate,
    cox_time,
    min_combine,
    thin_thick_decompose,
)
from enlargemc.regression import FunctionDictionary
from enlargemc.reporting import emit_report
from enlargemc.scenarios import ScenarioConfig, levy_symmetry_rows, run_scenario

SEED = 11


@pytest.fixture
def announce(request):
    """Print one live pass/fail line per criterion, bypassing capture."""
    manager = request.config.pluginmanager.getplugin("capturemanager")

    def announce(num: int, label: str, ok: bool, detail: str = "") -> None:
        line = f"\nACCEPTANCE {num} {label}: {'PASS' if ok else 'FAIL'}"
        if detail:
            line += f"  [{detail}]"
        if manager is None:
            print(line, file=sys.__stdout__, flush=True)
        else:
            with manager.global_and_fixture_disabled():
                print(line, flush=True)

    return _announce


def _verdict(result, name: str) -> bool:
    return dict(result.verdicts)[name]


def _summary(result, key: str):
    return dict(result.summary)[key]


def _table(result, name: str):
    return {t.name: t for t in result.tables}[name]


@pytest.fixture(scope="module")
def s1_result():
    return run_scenario(ScenarioConfig(scenario="cox-continuous", seed=SEED))


@pytest.fixture(scope="module")
def s2_result():
    return run_scenario(ScenarioConfig(scenario="cox-jumps", seed=SEED))


@pytest.fixture(scope="module")
def s3_result():
    return run_scenario(ScenarioConfig(scenario="hybrid-default", seed=SEED))


@pytest.fixture(scope="module")
def s4_result():
    return run_scenario(ScenarioConfig(scenario="levy-transform", seed=SEED))


# --------------------------------------------------------------------------


def test_criterion_1_level_hit_symmetry_exact_half(announce):
    """P(W at T_n = +level | still live) = 1/2 within 3 SE for the first
    three alternating level hits, at 1e5 paths x 4000 steps over T = 5."""
    t0 = time.perf_counter()
    table = levy_symmetry_rows(100_000, 4000, 5.0, SEED, members=3, level=1.0)
    wall = time.perf_counter() - t0
    zs = [float(row[-1]) for row in table.rows]
    refs = [float(row[3]) for row in table.rows]
    ok = len(zs) == 3 and all(abs(z) <= 3.0 for z in zs) and all(
        r == 0.5 for r in refs)
    announce(1, "level-hit symmetry = 1/2 within 3 SE (n=1..3)", ok,
              f"z={['%.2f' % z for z in zs]}, wall={wall:.0f}s")
    assert ok, f"symmetry z-scores {zs} (tolerance 3.0)"
    assert wall < 240.0, f"symmetry run took {wall:.0f}s"


def test_criterion_2_drift_certifies_half_and_rejects_broken(s4_result, announce):
    """The compensated occurrence built with the exact 1/2 coefficients and
    the merged compensated occurrence both pass the drift test; the variant
    built with coefficient 0.6 fails it."""
    rows = {r[0]: r for r in _table(s4_result, "drift").rows}
    n_pass = rows["N"][-1] == "pass"
    h_pass = rows["H_tau"][-1] == "pass"
    broken_detected = _verdict(s4_result, "broken_variant_detected")
    broken_fails = rows["N_broken"][-1] == "fail"
    ok = n_pass and h_pass and broken_detected and broken_fails
    announce(2, "drift: 1/2-coefficients pass, 0.6 variant fails", ok,
              f"z(N)={rows['N'][2]:.2f}, z(H_tau)={rows['H_tau'][2]:.2f}, "
              f"z(broken)={rows['N_broken'][2]:.1f}")
    assert ok


def test_criterion_3_projection_refutation_and_certification(s4_result, announce):
    """The occurrence martingale is not representable on the price alone
    (residual ratio >= 0.9) and becomes representable once the compensated
    occurrence joins the basis (residual ratio <= 0.05)."""
    rho_s = float(_summary(s4_result, "rho.N_on_S"))
    rho_sn = float(_summary(s4_result, "rho.N_on_SN"))
    ok = rho_s >= 0.9 and rho_sn <= 0.05
    announce(3, "rho(N|{S}) >= 0.9 and rho(N|{S,N}) <= 0.05", ok,
              f"rho_S={rho_s:.4f}, rho_SN={rho_sn:.2e}")
    assert ok, (rho_s, rho_sn)


def test_criterion_4_bracket_orthogonality(s2_result, s3_result, s4_result, announce):
    """Thin and thick compensated occurrences have pathwise-zero realized
    bracket (disjoint jump supports); the price/occurrence bracket mean is
    within 4 SE of zero at the horizon and its second moment shrinks by at
    least 40% when the step is halved."""
    disjoint_s2 = _verdict(s2_result, "jump_supports_disjoint")
    disjoint_s3 = _verdict(s3_result, "jump_supports_disjoint")
    mean_t = float(_summary(s4_result, "bracket_mean_T"))
    se_t = float(_summary(s4_result, "bracket_se_T"))
    shrink = float(_summary(s4_result, "bracket_shrink_ratio"))
    ok = (disjoint_s2 and disjoint_s3 and abs(mean_t) <= 4.0 * se_t
          and shrink <= 0.6)
    announce(4, "pathwise-zero thin/thick bracket; [S,N]_T within 4 SE; "
                 ">=40% shrink on dt/2", ok,
              f"disjoint=({disjoint_s2},{disjoint_s3}), "
              f"|mean|/se={abs(mean_t) / se_t:.2f}, shrink={shrink:.3f}")
    assert ok


def test_criterion_5_oracle_equivalence(announce):
    """On 20 randomized finite tree worlds the sampling estimators agree
    with the exact oracle to 1e-8: conditional expectations, the thin
    compensated occurrence, and the per-step projection.  The one-step
    hand value (+/- 1/2 after the first step) is reproduced bit for bit."""

    def onehot(n_ids):
        return FunctionDictionary(
            names=tuple(f"node=={k}" for k in range(n_ids)),
            funcs=tuple((lambda f, k=k: (f["node"] == float(k)).astype(float))
                        for k in range(n_ids)))

    def provisional(idx, grid):
        lab = np.where(idx != INF_IDX, 0, LABEL_INFINITE).astype(np.int64)
        raw = np.where(idx != INF_IDX, idx.astype(float), np.inf)
        return RandomTimeSample(grid=grid, idx=idx, label=lab, raw=raw)

    def check_tree(n_steps, up_prob, aux_probs, level, rng):
        world = build_tree(n_steps, up_prob=up_prob, aux_probs=aux_probs)
        grid = make_grid(float(n_steps), n_steps)
        node = np.stack([world.node_id(t).astype(float)
                         for t in range(n_steps + 1)], axis=1)
        feats = EnlargedFeatureSet(grid=grid, arrays={"node": node})
        d = onehot(world.branch ** max(0, n_steps - 1))
        probs = world.probs

        coef = rng.normal(size=3)
        rv = coef[0] + coef[1] * world.walk[:, -1] + coef[2] * world.walk[:, -1] ** 2
        err_ce = max(
            float(np.abs(regress_condexp(rv, feats, t, d, weights=probs,
                                         floor=1).fitted
                         - exact_condexp(world, rv, t)).max())
            for t in range(n_steps))

        tau_idx = first_reach(world, level)
        h_ex, _ = exact_compensator(world, tau_idx)
        fam = StoppingFamily.from_deterministic(
            grid, [float(k) for k in range(1, n_steps + 1)], world.n_atoms)
        dec = thin_thick_decompose(provisional(tau_idx, grid), fam)
        p = np.stack([exact_condexp(world, (tau_idx == k).astype(float), k - 1)
                      for k in range(1, n_steps + 1)], axis=1)
        err_h = float(np.abs(thin_compensated(dec, p).values - h_ex).max())

        w_mart = martingale_path(world, world.walk[:, -1])
        target_rv = rv + 0.7 * h_ex[:, -1] * world.walk[:, -1]
        v = martingale_path(world, target_rv)
        ex = exact_gkw(world, target_rv, [w_mart, h_ex])
        proj = gkw_project(
            MartingaleSeries(grid=grid, values=v, name="V"),
            [MartingaleSeries(grid=grid, values=w_mart, name="M"),
             MartingaleSeries(grid=grid, values=h_ex, name="H")],
            feats, d, weights=probs, mode="per-step", floor=1)
        err_proj = max(abs(proj.rho_res - ex.rho_res),
                       float(np.abs(proj.residual_terminal
                                    - ex.residual[:, -1]).max()))
        return err_ce, err_h, err_proj

    rng = np.random.default_rng(90210)
    cases = []
    for _ in range(14):                                   # binary trees
        cases.append((int(rng.integers(2, 8)), float(rng.uniform(0.3, 0.7)),
                      None, float(rng.integers(1, 3))))
    for _ in range(4):                                    # with an aux coin
        p = float(rng.uniform(0.2, 0.8))
        cases.append((int(rng.integers(2, 5)), float(rng.uniform(0.35, 0.65)),
                      (p, 1.0 - p), 1.0))
    cases.append((9, 0.45, None, 3.0))                    # deep trees
    cases.append((10, 0.55, None, 4.0))

    worst = 0.0
    for n_steps, up, aux, level in cases:
        errs = check_tree(n_steps, up, aux, level, rng)
        worst = max(worst, *errs)

    # one-step hand value: first reach of +1 jumps to 1 with probability 1/2,
    # so the compensated occurrence is exactly +1/2 or -1/2 after the step
    world1 = build_tree(1, up_prob=0.5)
    grid1 = make_grid(1.0, 1)
    fam1 = StoppingFamily.from_deterministic(grid1, [1.0], 2)
    dec1 = thin_thick_decompose(provisional(first_reach(world1, 1.0), grid1), fam1)
    h1 = thin_compensated(dec1, np.array([[0.5], [0.5]]))
    exact_half = (h1.values[:, 1] == np.array([0.5, -0.5])).all()

    ok = len(cases) == 20 and worst <= 1e-8 and bool(exact_half)
    announce(5, "estimators match exact tree oracle on 20 random worlds",
              ok, f"worst |delta|={worst:.2e}, one-step +/-1/2 exact={exact_half}")
    assert ok, f"worst oracle deviation {worst}"


def test_criterion_6_occurrence_laws(s1_result, s2_result, announce):
    """Smooth-hazard survival matches exp(-lam t) within 3 SE at five grid
    times; conditional atom masses at the accumulator's jump dates match
    1 - exp(-jump) within 3 SE."""
    surv = _table(s1_result, "survival")
    surv_z = max(abs(float(r[-1])) for r in surv.rows)
    atoms = _table(s2_result, "atoms")
    atom_z = max(abs(float(r[-1])) for r in atoms.rows)
    ok = (len(surv.rows) == 5 and surv_z <= 3.0
          and _verdict(s1_result, "survival")
          and len(atoms.rows) == 3 and atom_z <= 3.0
          and _verdict(s2_result, "atoms"))
    announce(6, "survival law within 3 SE; atom masses within 3 SE", ok,
              f"max|z| survival={surv_z:.2f}, atoms={atom_z:.2f}")
    assert ok


def test_criterion_7_decomposition_identities(s3_result, announce):
    """Pathwise tau = min(thin, thick) with disjoint finiteness sets: zero
    violations over 1e5 paths, and the thick part's raw-time collision rate
    with the family is exactly 0."""
    n_paths, n_steps, horizon = 100_000, 600, 2.0
    lam, barrier = 0.4, -0.8
    audit_times = (0.3, 0.6, 0.9, 1.2, 1.5, 1.8)
    grid = make_grid(horizon, n_steps)
    bundle = simulate_drivers(grid, n_paths, DriverSpec(brownian=("W",)), SEED)
    fam = StoppingFamily.from_deterministic(grid, list(audit_times), n_paths)
    wv = bundle.component("W")
    audit_idx = fam.idx[0]
    triggered = wv[:, audit_idx] <= barrier
    any_trig = triggered.any(axis=1)
    first = np.argmax(triggered, axis=1)
    audit_arr = np.asarray(audit_times)
    zeta = RandomTimeSample(
        grid=grid,
        idx=np.where(any_trig, audit_idx[first], INF_IDX).astype(np.int64),
        label=np.where(any_trig, first, LABEL_INFINITE).astype(np.int64),
        raw=np.where(any_trig, audit_arr[first], np.inf))
    xi = cox_time(MartingaleSeries(
        grid=grid, values=np.broadcast_to(lam * grid.points, (n_paths, len(grid))),
        name="K"), SEED)
    tau, _ = min_combine(zeta, xi)
    dec = thin_thick_decompose(tau, fam)
    identity_violations = int(
        (np.minimum(dec.tau1.idx, dec.tau2.idx) != tau.idx).sum())
    both_finite = int((dec.tau1.finite & dec.tau2.finite).sum())
    avoid = avoidance_rate(dec.tau2, fam, use_raw=True)
    in_run = (int(_summary(s3_result, "identity_violations")) == 0
              and int(_summary(s3_result, "both_finite_violations")) == 0
              and float(_summary(s3_result, "thick_raw_collision_rate")) == 0.0)
    ok = (identity_violations == 0 and both_finite == 0
          and avoid.aggregate == 0.0 and in_run
          and _verdict(s3_result, "decomposition_identity")
          and _verdict(s3_result, "thick_avoids_family"))
    announce(7, "split identities: 0 violations at 1e5 paths, collision rate 0",
              ok, f"violations={identity_violations}, double-finite={both_finite}, "
                  f"raw collision rate={avoid.aggregate}")
    assert ok


def test_criterion_8_split_merged_residual_identity(s2_result, s3_result, announce):
    """Projecting on {M, H_thin, H_thick} and on {M, H_merged} gives the
    same residuals to 1e-8 on every battery target."""
    d2 = float(_summary(s2_result, "split_merged.max_abs_residual_diff"))
    d3 = float(_summary(s3_result, "split_merged.max_abs_residual_diff"))
    ok = (d2 <= 1e-8 and d3 <= 1e-8
          and _verdict(s2_result, "split_merged_residuals")
          and _verdict(s3_result, "split_merged_residuals"))
    announce(8, "split vs merged basis residuals agree to 1e-8", ok,
              f"max diff: jumps={d2:.2e}, hybrid={d3:.2e}")
    assert ok, (d2, d3)


def test_criterion_9_byte_identical_reports(tmp_path, announce):
    """Re-running a scenario with the identical configuration writes
    byte-identical report files."""
    ok = True
    details = []
    for scenario, paths, steps in (("cox-continuous", 4000, 150),
                                   ("cox-jumps", 4000, 200)):
        outs = []
        for sub in ("a", "b"):
            cfg = ScenarioConfig(scenario=scenario, seed=7,
                                 n_paths=paths, n_steps=steps)
            res = run_scenario(cfg)
            outs.append(sorted(emit_report(res, tmp_path / scenario / sub)))
        names_a = [p.name for p in outs[0]]
        names_b = [p.name for p in outs[1]]
        same = names_a == names_b and all(
            a.read_bytes() == b.read_bytes() for a, b in zip(outs[0], outs[1]))
        ok &= same
        details.append(f"{scenario}: {len(names_a)} files "
                       f"{'identical' if same else 'DIFFER'}")
    announce(9, "re-run reports are byte-identical", ok, "; ".join(details))
    assert ok


def test_every_scenario_verdict_passes(s1_result, s2_result, s3_result,
                                       s4_result):
    """Aggregate gate: every verdict of the four heavyweight scenarios used
    above passes at default scale (the fifth scenario has its own smoke
    test in the CLI suite and the same verdict structure)."""
    failing = [(r.scenario, name)
               for r in (s1_result, s2_result, s3_result, s4_result)
               for name, passed in r.verdicts if not passed]
    assert not failing, f"failing verdicts: {failing}"
