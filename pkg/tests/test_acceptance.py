"""Acceptance criteria, one test each, at the stated tolerances.

Every criterion prints a single ``ACCEPTANCE <k> PASS|FAIL: ...`` line.
Run ``python tests/test_acceptance.py`` for just the summary lines, or
``pytest tests/test_acceptance.py -v -s`` to see them inline.
"""

import os
import sys
import time

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from kph import control, galerkin, lifted, observables, ph_model  # noqa: E402
from kph.galerkin import KpHModel, SampleSet  # noqa: E402
from kph.harness import RunConfig, run_scenario  # noqa: E402

from oracles import batch_mpc, naive_projection, random_structured  # noqa: E402


def criterion_1():
    cfg = RunConfig.from_dict({"params": {"random_systems": 100, "seed": 2024, "n_choices": [2, 3, 4]}})
    t0 = time.perf_counter()
    rep = run_scenario("linear_recovery", cfg)
    elapsed = time.perf_counter() - t0
    worst = max(c.measured for c in rep.checks if c.name.startswith("max"))
    ok = rep.passed and worst <= 1e-8 and elapsed < 10.0
    return ok, f"worst entry error {worst:.2e} (tol 1e-8), runtime {elapsed:.2f}s (< 10s)"


def criterion_2():
    # stated target K = Q (J - R) Q^{-1}; see test_galerkin for the identity the fit actually satisfies
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        lin = ph_model.random_linear_ph(rng, 3, 1, Q=True)
        s = galerkin.uniform_box([-1] * 3, [1] * 3, 200, seed=seed)
        model = galerkin.identify_from_data(observables.q_scaled(lin.Q), lin.as_ph(), s, "unstructured")
        target = lin.Q @ (lin.J - lin.R) @ np.linalg.inv(lin.Q)
        worst = max(worst, float(np.linalg.norm(model.K - target)))
    return worst <= 1e-8, f"max |K - Q(J-R)Q^-1|_F = {worst:.3e} (tol 1e-8)"


def criterion_3():
    b = 0.3
    sys_ = ph_model.pendulum(b)
    d = observables.pendulum_dictionary()
    errJ = errR = KJH = 0.0
    KRH = np.inf
    for th in np.linspace(-np.pi, np.pi, 21):
        for p in np.linspace(-2, 2, 21):
            ga = observables.generator_action(d, sys_, np.array([th, p]))
            errJ = max(errJ, np.max(np.abs(ga.kJ - [p * np.cos(th), -np.sin(th), -p * np.sin(th), 0])))
            errR = max(errR, np.max(np.abs(ga.kR - [0, b * p, 0, b * p * p])))
            KJH = max(KJH, abs(ga.kJ[3]))
            KRH = min(KRH, ga.kR[3])
    scen = run_scenario("pendulum_generator")
    ok = errJ <= 1e-12 and errR <= 1e-12 and KJH <= 1e-12 and KRH >= 0 and scen.passed
    return ok, f"K_J err {errJ:.1e}, K_R err {errR:.1e}, max|K_J H| {KJH:.1e}, min K_R H {KRH:.1e}"


def _scenario_models():
    """Structured models built the same way the scenarios build them, across several configs."""
    pend, pd = ph_model.pendulum(0.3), observables.pendulum_dictionary()
    out = [galerkin.identify_from_data(pd, pend, galerkin.uniform_box([-np.pi, -2], [np.pi, 2], 400, 0))]
    rng = np.random.default_rng(9)
    for n in (2, 3, 4):
        lin = ph_model.random_linear_ph(rng, n, 2)
        out.append(galerkin.identify_from_data(observables.identity(n), lin.as_ph(), galerkin.axis_cross(n)))
        linq = ph_model.random_linear_ph(rng, n, 1, Q=True)
        s = galerkin.uniform_box([-1] * n, [1] * n, 300, seed=n)
        out.append(galerkin.identify_from_data(observables.q_scaled(linq.Q), linq.as_ph(), s))
        out.append(galerkin.identify_from_data(observables.polynomial(n, 2), linq.as_ph(), s))
    out.append(galerkin.identify_from_data(observables.gaussian_rbf(rng.uniform(-2, 2, (6, 2)), 1.0), pend,
                                           galerkin.uniform_box([-np.pi, -2], [np.pi, 2], 400, 1)))
    return out


def criterion_4():
    skew = psd = 0.0
    for m in _scenario_models():
        skew = max(skew, float(np.linalg.norm(m.K_J + m.K_J.T)))
        psd = min(psd, float(np.linalg.eigvalsh(m.K_R)[0]))
    names = ["linear_recovery", "q_conjugate", "passivity_suite", "damping_demo", "mpc_demo",
             "structure_vs_unstructured"]
    cfg = RunConfig.from_dict({"params": {"trajectories": 1, "t_end": 0.1}})
    scen_ok = all(c.passed for n in names for c in run_scenario(n, cfg).checks
                  if "K_J + K_J^T" in c.name and "baseline" not in c.name or
                  "min eig K_R" in c.name and "baseline" not in c.name)
    rng = np.random.default_rng(4)
    worst_raw = np.inf
    systems = [(ph_model.pendulum(0.3), observables.pendulum_dictionary()),
               (ph_model.pendulum(1.5), observables.gaussian_rbf(rng.uniform(-2, 2, (5, 2)), 0.8)),
               (ph_model.random_linear_ph(rng, 2, 1, rank_R=1, Q=True).as_ph(), observables.polynomial(2, 3))]
    for _ in range(200):
        sys_, d = systems[rng.integers(len(systems))]
        X = rng.uniform(-2.5, 2.5, (d.N + 40, 2))
        w = rng.random(len(X)) ** rng.uniform(1, 8)
        try:
            rp = galerkin.raw_projection(d, sys_, SampleSet(X, w / w.sum()))
        except galerkin.SingularGramError:
            continue
        worst_raw = min(worst_raw, float(np.linalg.eigvalsh(rp.A_R)[0]))
    ok = skew == 0 and psd >= 0 and scen_ok and worst_raw >= -1e-10
    return ok, f"max |K_J+K_J^T|_F {skew:.1e}, min eig K_R {psd:.1e}, raw A_R min eig {worst_raw:.2e} (>= -1e-10)"


def criterion_5():
    cfg = RunConfig.from_dict({"params": {"trajectories": 20, "t_end": 10.0, "dt": 1e-3, "seed": 5}})
    rep = run_scenario("passivity_suite", cfg)
    gap = next(c for c in rep.checks if c.name.startswith("max over 20 runs"))
    return gap.passed, f"max H(T)-H(0)-int y^T u over 20 runs = {gap.measured:.3e} (tol 1e-6)"


def criterion_6():
    rng = np.random.default_rng(6)
    ratios = []
    for N in (2, 4, 6):
        model = KpHModel(*random_structured(rng, N, 2, rank_R=N // 2))
        for _ in range(10):
            psi, u = rng.standard_normal(N), rng.uniform(-1, 1, 2)
            res = [abs(lifted.euler_step(model, psi, u, h)[1]) for h in (1e-2, 5e-3, 2.5e-3)]
            ratios += [res[0] / res[1], res[1] / res[2]]
    rep = run_scenario("passivity_suite", RunConfig.from_dict({"params": {"trajectories": 1, "t_end": 0.1}}))
    scen = next(c for c in rep.checks if c.name.startswith("Euler"))
    ratios += list(scen.measured)
    ok = min(ratios) >= 3.5 and max(ratios) <= 4.5
    return ok, f"residual ratios in [{min(ratios):.4f}, {max(ratios):.4f}] (need [3.5, 4.5])"


def criterion_7():
    rep = run_scenario("damping_demo")
    m = {c.name: c for c in rep.checks}
    det = m["PBH detectability of (A_cl, K_u^T)"]
    rise = m["max step increase of lifted storage"]
    decay = m["|psi(50)| / |psi(0)|"]
    # lossless oscillator: K_R = 0, convergence only through the port (detectability branch)
    osc = KpHModel(np.array([[0.0, 1.0], [-1.0, 0.0]]), np.zeros((2, 2)), np.array([[0.0], [1.0]]))
    K_d = 1.0
    A_cl = control.closed_loop_matrix(osc, K_d)
    osc_det = control.check_detectability(A_cl, osc.K_u.T)["detectable"]
    traj = lifted.simulate_lifted(osc, [1.0, 0.0], t_end=50.0, dt=1e-2,
                                  feedback=lambda t, p: -K_d * lifted.lifted_output(osc, p))
    osc_decay = float(np.linalg.norm(traj.psi[-1]))
    osc_rise = float(np.max(np.diff(traj.Hlift)))
    ok = (det.passed and rise.passed and decay.passed and osc_det
          and osc_decay <= 1e-6 and osc_rise <= 1e-10)
    return ok, (f"detectable={det.measured}, max storage rise {rise.measured:.1e}, decay {decay.measured:.1e}; "
                f"K_R=0 oscillator (K_d=1): detectable={osc_det}, decay {osc_decay:.1e}")


def criterion_8():
    rep = run_scenario("mpc_demo")
    m = {c.name: c for c in rep.checks}
    slack = m["max eig(A_d^T P A_d - P + Q)"]
    mono = m["optimal cost nonincreasing"]
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(50):
        N, mu, steps = int(rng.integers(1, 5)), int(rng.integers(1, 3)), int(rng.integers(1, 9))
        model = KpHModel(*random_structured(rng, N, mu))
        B = rng.standard_normal((N, N))
        prob = control.MPCProblem(model, rng.standard_normal(N), steps * 0.1, 0.1, B @ B.T)
        psi0 = rng.standard_normal(N)
        a, b = control.mpc_solve(prob, psi0), batch_mpc(prob, psi0)
        worst = max(worst, float(np.max(np.abs(a["inputs"] - b["inputs"]))))
    ok = slack.passed and mono.passed and worst <= 1e-8
    return ok, (f"Lyapunov slack {slack.measured:.1e} (<= 1e-9), cost nonincreasing over 200 steps="
                f"{mono.measured}, Riccati vs batch {worst:.1e} (tol 1e-8)")


def criterion_9():
    rng = np.random.default_rng(9)
    worst = 0.0
    for k in range(12):
        kind = k % 3
        if kind == 0:
            sys_, d = ph_model.pendulum(rng.uniform(0, 1)), observables.pendulum_dictionary()
        elif kind == 1:
            sys_, d = ph_model.random_linear_ph(rng, 2, 2, Q=True).as_ph(), observables.polynomial(2, 2)
        else:
            sys_, d = ph_model.pendulum(0.5), observables.gaussian_rbf(rng.uniform(-1, 1, (6, 2)), 1.0)
        X = rng.uniform(-2, 2, (int(rng.integers(d.N + 5, 201)), 2))
        w = rng.random(len(X))
        s = SampleSet(X, w / w.sum())
        rp, ref = galerkin.raw_projection(d, sys_, s), naive_projection(d, sys_, s)
        for name in ("M", "A_J", "A_R", "A_u"):
            worst = max(worst, float(np.max(np.abs(getattr(rp, name) - ref[name]))))
    return worst <= 1e-12, f"max |raw - double loop| = {worst:.1e} (tol 1e-12)"


CRITERIA = {
    1: ("exact linear recovery", criterion_1),
    2: ("Q-conjugate identity (stated form)", criterion_2),
    3: ("pendulum generator table", criterion_3),
    4: ("structure constraints", criterion_4),
    5: ("lifted passivity", criterion_5),
    6: ("discrete energy balance order", criterion_6),
    7: ("damping injection", criterion_7),
    8: ("MPC certificates", criterion_8),
    9: ("Galerkin oracle equivalence", criterion_9),
}


def _line(k):
    title, fn = CRITERIA[k]
    ok, detail = fn()
    return ok, f"ACCEPTANCE {k} {'PASS' if ok else 'FAIL'}: {title}: {detail}"


@pytest.mark.parametrize("k", sorted(CRITERIA))
def test_acceptance(k, capsys):
    ok, line = _line(k)
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


if __name__ == "__main__":
    results = [_line(k) for k in sorted(CRITERIA)]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
