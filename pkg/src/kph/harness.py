"""Scenario runners, run configuration, reports and CSV trajectory I/O."""

from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import control, galerkin, lifted, observables, ph_model
from .errors import ConfigError, KphError, NotDissipativeError
from .galerkin import KpHModel, SampleSet
from .observables import Dictionary
from .ph_model import PHSystem, Trajectory

log = logging.getLogger(__name__)

DEFAULT_TOLERANCES = {
    "recovery": 1e-8,
    "q_conjugate": 1e-8,
    "generator_table": 1e-12,
    "raw_psd": 1e-10,
    "lifted_passivity": 1e-6,
    "passivity_conditions": 1e-9,
    "energy_ratio_low": 3.5,
    "energy_ratio_high": 4.5,
    "storage_increase": 1e-10,
    "decay": 1e-6,
    "lyapunov_slack": 1e-9,
    "cost_monotone_rtol": 1e-9,
    "energy_identity": 1e-6,
    "injectivity": 1e-6,
}


# -- configuration -----------------------------------------------------------

def _reject_unknown(section: str, data: dict, allowed):
    extra = sorted(set(data) - set(allowed))
    if extra:
        raise ConfigError(f"unknown key(s) in {section}: {', '.join(extra)}")


def _matrix(value, name, shape=None):
    try:
        rows = [list(map(float, r)) for r in value]
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a row-major nested array of numbers") from None
    if not rows or len({len(r) for r in rows}) != 1:
        raise ConfigError(f"{name} must be rectangular")
    A = np.array(rows)
    if shape is not None and A.shape != shape:
        raise ConfigError(f"{name} has shape {A.shape}, expected {shape}")
    return A


SECTION_KEYS = {
    "system": {"name", "b", "J", "R", "G", "Q"},
    "dictionary": {"kind", "degree", "centers", "width", "include_constant", "Q"},
    "samples": {"kind", "count", "counts", "lower", "upper", "seed", "x0", "t_end", "dt", "stride"},
    "controller": {"K_d", "horizon", "dt", "Q_lyap", "t_end", "steps", "psi_ref", "x0"},
    "params": {"random_systems", "n_choices", "trajectories", "t_end", "dt", "dts", "seed", "u_bound"},
}
TOP_KEYS = {"scenario", "output_dir", "tolerances", *SECTION_KEYS}


@dataclass
class RunConfig:
    """Parsed JSON run configuration; absent sections fall back to scenario defaults."""

    system: dict = field(default_factory=dict)
    dictionary: dict = field(default_factory=dict)
    samples: dict = field(default_factory=dict)
    controller: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    output_dir: Optional[str] = None
    tolerances: dict = field(default_factory=lambda: dict(DEFAULT_TOLERANCES))
    scenario: Optional[str] = None

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        _reject_unknown("config", data, TOP_KEYS)
        kw = {}
        for sec, keys in SECTION_KEYS.items():
            part = data.get(sec, {})
            if not isinstance(part, dict):
                raise ConfigError(f"section {sec!r} must be an object")
            _reject_unknown(sec, part, keys)
            kw[sec] = dict(part)
        tol = dict(DEFAULT_TOLERANCES)
        user_tol = data.get("tolerances", {})
        _reject_unknown("tolerances", user_tol, DEFAULT_TOLERANCES)
        tol.update({k: float(v) for k, v in user_tol.items()})
        cfg = cls(output_dir=data.get("output_dir"), tolerances=tol,
                  scenario=data.get("scenario"), **kw)
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from None
        return cls.from_dict(data)

    def validate(self):
        """Dimension-consistency checks for inline matrices."""
        if self.system:
            build_system(self.system)
        if self.dictionary and self.system:
            d = build_dictionary(self.dictionary, build_system(self.system).n)
            if d.n != build_system(self.system).n:
                raise ConfigError("dictionary and system state dimensions differ")

    def with_seed(self, seed: int) -> "RunConfig":
        samples = dict(self.samples, seed=int(seed))
        params = dict(self.params, seed=int(seed))
        return RunConfig(self.system, self.dictionary, samples, self.controller, params,
                         self.output_dir, self.tolerances, self.scenario)


def build_system(spec: dict) -> PHSystem:
    name = spec.get("name", "pendulum")
    if name == "pendulum":
        b = float(spec.get("b", 0.3))
        if b < 0:
            raise ConfigError("pendulum damping b must be nonnegative")
        return ph_model.pendulum(b)
    if name == "linear_ph":
        try:
            J = _matrix(spec["J"], "J")
        except KeyError:
            raise ConfigError("linear_ph requires J") from None
        n = J.shape[0]
        R = _matrix(spec.get("R", np.zeros((n, n)).tolist()), "R", (n, n))
        G = _matrix(spec.get("G", np.eye(n)[:, :1].tolist()), "G")
        if G.shape[0] != n:
            raise ConfigError(f"G must have {n} rows")
        Q = _matrix(spec.get("Q", np.eye(n).tolist()), "Q", (n, n))
        try:
            return ph_model.LinearPHSystem(J, R, G, Q).as_ph()
        except KphError as e:
            raise ConfigError(f"invalid linear_ph system: {e}") from None
    raise ConfigError(f"unknown system {name!r}")


def build_dictionary(spec: dict, n: int) -> Dictionary:
    spec = dict(spec)
    kind = spec.pop("kind", "identity")
    if "Q" in spec:
        spec["Q"] = _matrix(spec["Q"], "Q", (n, n))
    if "centers" in spec:
        spec["centers"] = _matrix(spec["centers"], "centers")
    d = observables.builtin_dictionary(kind, n, **spec)
    if d.n != n:
        raise ConfigError(f"dictionary acts on R^{d.n}, system state is R^{n}")
    return d


def generate_samples(spec: dict, sys: Optional[PHSystem] = None) -> SampleSet:
    """Build a SampleSet from a config block.

    Kinds: ``grid`` (counts, lower, upper), ``monte_carlo`` (count, lower,
    upper, seed), ``trajectory`` (x0, t_end, dt, stride; needs ``sys``),
    ``axis_cross`` (unit second moment; needs ``sys`` for n).
    """
    kind = spec.get("kind", "monte_carlo")
    if kind == "grid":
        counts = spec.get("counts", 3)
        if np.any(np.asarray(counts) < 1):
            raise ConfigError("grid counts must be >= 1")
        return galerkin.grid(spec["lower"], spec["upper"], counts)
    if kind == "monte_carlo":
        if "seed" not in spec:
            raise ConfigError("monte_carlo sampling needs an explicit seed")
        count = int(spec.get("count", 100))
        if count < 1:
            raise ConfigError("count must be >= 1")
        return galerkin.uniform_box(spec["lower"], spec["upper"], count, int(spec["seed"]))
    if kind == "trajectory":
        if sys is None:
            raise ConfigError("trajectory sampling needs a system")
        traj = ph_model.simulate(sys, np.asarray(spec["x0"], float), None,
                                 float(spec.get("t_end", 10.0)), float(spec.get("dt", 1e-2)))
        return galerkin.trajectory_subsample(traj, int(spec.get("stride", 10)))
    if kind == "axis_cross":
        if sys is None:
            raise ConfigError("axis_cross sampling needs a system")
        return galerkin.axis_cross(sys.n)
    raise ConfigError(f"unknown sample kind {kind!r}")


# -- reports -----------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    measured: object
    tolerance: object
    relation: str = "<="

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed),
                "measured": _jsonable(self.measured), "tolerance": _jsonable(self.tolerance),
                "relation": self.relation}


def _jsonable(v):
    if isinstance(v, (np.floating, float)):
        return float(v)
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    if isinstance(v, np.ndarray):
        return _jsonable(v.tolist())
    if isinstance(v, complex):
        return [v.real, v.imag]
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    return v


@dataclass
class Report:
    scenario: str
    checks: list = field(default_factory=list)
    info: dict = field(default_factory=dict)
    files: list = field(default_factory=list)

    def check(self, name, measured, tolerance, relation="<="):
        if isinstance(measured, (bool, np.bool_)):
            m = bool(measured)
        else:
            m = float(measured) if np.isscalar(measured) else measured
        if relation == "<=":
            ok = m <= tolerance
        elif relation == ">=":
            ok = m >= tolerance
        elif relation == "==":
            ok = m == tolerance
        elif relation == "in":
            lo, hi = tolerance
            ok = bool(np.all((np.asarray(m) >= lo) & (np.asarray(m) <= hi)))
        else:
            raise ValueError(relation)
        self.checks.append(Check(name, bool(ok), m, tolerance, relation))
        return ok

    def fail(self, name, error):
        self.checks.append(Check(name, False, f"{type(error).__name__}: {error}", None, "raises"))

    @property
    def passed(self) -> bool:
        return bool(self.checks) and all(c.passed for c in self.checks)

    def to_dict(self):
        return {"scenario": self.scenario, "passed": self.passed,
                "checks": [c.to_dict() for c in self.checks],
                "info": _jsonable(self.info), "files": list(self.files)}


# -- CSV trajectories --------------------------------------------------------

def _header(traj: Trajectory):
    n = traj.states.shape[1]
    m = traj.inputs.shape[1]
    cols = ["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{i + 1}" for i in range(m)]
    cols += [f"y{i + 1}" for i in range(m)] + ["H"]
    if traj.psi is not None:
        cols += [f"psi{i + 1}" for i in range(traj.psi.shape[1])] + ["Hlift"]
    return cols


def export_trajectory(traj: Trajectory, path) -> str:
    """Write ``t,x..,u..,y..,H[,psi..,Hlift]`` with 17 significant digits, LF endings."""
    path = os.fspath(path)
    d = os.path.dirname(path)
    if d:
        os.makedirs(d, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(_header(traj))
        for k in range(len(traj)):
            row = [traj.times[k], *traj.states[k], *traj.inputs[k], *traj.outputs[k], traj.energies[k]]
            if traj.psi is not None:
                row += [*traj.psi[k], traj.Hlift[k]]
            w.writerow([format(float(v), ".17g") for v in row])
    return path


def load_trajectory(path) -> Trajectory:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    idx = {c: i for i, c in enumerate(header)}
    data = np.array([[float(v) for v in r] for r in body]).reshape(len(body), len(header))

    def cols(prefix):
        names = [c for c in header if c.startswith(prefix) and c[len(prefix):].isdigit()]
        return data[:, [idx[c] for c in names]]

    lifted_run = "Hlift" in idx
    return Trajectory(data[:, 0], cols("x"), cols("u"), cols("y"), data[:, idx["H"]],
                      cols("psi") if lifted_run else None,
                      data[:, idx["Hlift"]] if lifted_run else None)


# -- injectivity -------------------------------------------------------------

def check_injectivity(d: Dictionary, s: SampleSet, tol: float = 1e-6) -> dict:
    """Sample-based surrogate for injectivity of the lifting map.

    Requires ``|Psi(x_i) - Psi(x_j)| >= tol |x_i - x_j|`` for every pair and
    separately reports whether the Jacobian has full column rank (smallest
    singular value >= tol) at every sample.
    """
    X = s.points
    if len(X) < 2:
        raise ConfigError("injectivity check needs at least two samples")
    Psi = np.array([observables.eval_dictionary(d, x) for x in X])
    dx = np.linalg.norm(X[:, None, :] - X[None, :, :], axis=-1)
    dpsi = np.linalg.norm(Psi[:, None, :] - Psi[None, :, :], axis=-1)
    iu = np.triu_indices(len(X), 1)
    ratio = dpsi[iu] / dx[iu]
    k = int(np.argmin(ratio))
    i, j = iu[0][k], iu[1][k]
    sv = []
    for x in X:
        D = observables.eval_jacobian(d, x)
        s_ = np.linalg.svd(D, compute_uv=False)
        sv.append(s_[d.n - 1] if len(s_) >= d.n else 0.0)
    return {
        "injective_on_samples": bool(ratio[k] >= tol),
        "worst_pair": (X[i].tolist(), X[j].tolist()),
        "worst_ratio": float(ratio[k]),
        "jacobian_full_rank": bool(min(sv) >= tol),
        "min_jacobian_sv": float(min(sv)),
        "label": "sample-based surrogate; the relevant state set is not defined analytically",
    }


# -- scenarios ---------------------------------------------------------------

PENDULUM_LINEAR = {
    "name": "linear_ph",
    "J": [[0.0, 1.0], [-1.0, 0.0]],
    "R": [[0.0, 0.0], [0.0, 0.3]],
    "G": [[0.0], [1.0]],
    "Q": [[1.0, 0.0], [0.0, 1.0]],
}


def _max_abs(A):
    return float(np.max(np.abs(A), initial=0.0))


def _linear_params(sys: PHSystem):
    p = sys.params
    return p["J"], p["R"], p["G"], p["Q"]


def _structure_checks(rep: Report, model: KpHModel, label: str):
    sr = model.structure_report()
    rep.check(f"{label}: |K_J + K_J^T|_F", sr["skew_residual"], 0.0, "==")
    rep.check(f"{label}: min eig K_R", sr["psd_min_eig"], 0.0, ">=")


def _identify_recovery(sys):
    J, R, G, _ = _linear_params(sys)
    model = galerkin.identify_from_data(observables.identity(sys.n), sys,
                                        galerkin.axis_cross(sys.n), "structured")
    errs = (_max_abs(model.K_J - J), _max_abs(model.K_R - R), _max_abs(model.K_u - G))
    return model, errs


def scenario_linear_recovery(cfg: RunConfig, out_dir) -> Report:
    rep = Report("linear_recovery")
    tol = cfg.tolerances["recovery"]
    sys = build_system(cfg.system or PENDULUM_LINEAR)
    if sys.name != "linear_ph":
        raise ConfigError("linear_recovery needs a linear_ph system")
    if not np.allclose(_linear_params(sys)[3], np.eye(sys.n)):
        raise ConfigError("linear_recovery assumes identity storage Q = I")
    model, errs = _identify_recovery(sys)
    rep.check("max|K_J - J|", errs[0], tol)
    rep.check("max|K_R - R|", errs[1], tol)
    rep.check("max|K_u - G|", errs[2], tol)
    _structure_checks(rep, model, "configured")
    rep.info["K_J"], rep.info["K_R"], rep.info["K_u"] = model.K_J, model.K_R, model.K_u

    count = int(cfg.params.get("random_systems", 0))
    if count:
        rng = np.random.default_rng(int(cfg.params.get("seed", 0)))
        dims = cfg.params.get("n_choices", [2, 3, 4])
        worst = 0.0
        for _ in range(count):
            lin = ph_model.random_linear_ph(rng, int(rng.choice(dims)), m=int(rng.integers(1, 3)))
            _, e = _identify_recovery(lin.as_ph())
            worst = max(worst, *e)
        rep.check(f"max entry error over {count} random systems", worst, tol)
    return rep


def scenario_q_conjugate(cfg: RunConfig, out_dir) -> Report:
    rep = Report("q_conjugate")
    tol = cfg.tolerances["q_conjugate"]
    seed = int(cfg.params.get("seed", cfg.samples.get("seed", 0)))
    if cfg.system:
        sys = build_system(cfg.system)
        J, R, G, Q = _linear_params(sys)
    else:
        lin = ph_model.random_linear_ph(np.random.default_rng(seed), 3, 1, Q=True)
        J, R, G, Q = lin.J, lin.R, lin.G, lin.Q
        sys = lin.as_ph()
    d = observables.q_scaled(Q)
    samples = generate_samples(cfg.samples or {"kind": "monte_carlo", "count": 200,
                                               "lower": [-1.0] * sys.n, "upper": [1.0] * sys.n,
                                               "seed": seed}, sys)
    model = galerkin.identify_from_data(d, sys, samples, "unstructured")
    # Psi = Q x and x' = (J - R) Q x give Psi' = Q (J - R) Psi
    target = Q @ (J - R)
    rep.check("|K - Q(J-R)|_F", np.linalg.norm(model.K - target), tol)
    rep.info["|K - Q(J-R)Q^-1|_F"] = float(np.linalg.norm(model.K - Q @ (J - R) @ np.linalg.inv(Q)))
    rep.check("|K_u - QG|_F", np.linalg.norm(model.K_u - Q @ G), tol)
    try:
        K_J, K_R = galerkin.split_skew_psd(model.K, tol=1e-10)
        rep.info["split_dissipative"] = True
        rep.info["K_J"], rep.info["K_R"] = K_J, K_R
    except NotDissipativeError as e:
        rep.info["split_dissipative"] = False
        rep.info["split_note"] = str(e)
    sym = -(target + target.T) / 2
    rep.info["min_eig_sym_part_of_-K"] = float(np.linalg.eigvalsh(sym)[0])
    structured = galerkin.identify_from_data(d, sys, samples, "structured")
    _structure_checks(rep, structured, "structured fit")
    return rep


def scenario_pendulum_generator(cfg: RunConfig, out_dir) -> Report:
    rep = Report("pendulum_generator")
    tol = cfg.tolerances["generator_table"]
    sys = build_system(cfg.system or {"name": "pendulum", "b": 0.3})
    if sys.name != "pendulum":
        raise ConfigError("pendulum_generator needs the pendulum system")
    b = sys.params["b"]
    d = observables.pendulum_dictionary()
    s = generate_samples(cfg.samples or {"kind": "grid", "counts": [21, 21],
                                         "lower": [-np.pi, -2.0], "upper": [np.pi, 2.0]}, sys)
    rows, errJ, errR, KJH, KRH_min = [], 0.0, 0.0, 0.0, np.inf
    for th, p in s.points:
        ga = observables.generator_action(d, sys, np.array([th, p]))
        cJ = np.array([p * np.cos(th), -np.sin(th), -p * np.sin(th), 0.0])
        cR = np.array([0.0, b * p, 0.0, b * p * p])
        errJ = max(errJ, _max_abs(ga.kJ - cJ))
        errR = max(errR, _max_abs(ga.kR - cR))
        KJH = max(KJH, abs(ga.kJ[3]))
        KRH_min = min(KRH_min, ga.kR[3])
        rows.append([th, p, *ga.kJ, *ga.kR])
    rep.check("max|K_J psi - closed form|", errJ, tol)
    rep.check("max|K_R psi - closed form|", errR, tol)
    rep.check("max|K_J H|", KJH, tol)
    rep.check("min K_R H", KRH_min, 0.0, ">=")
    ga = observables.generator_action(d, sys, np.array([np.pi / 2, 2.0]))
    rep.info["row_at_(pi/2,2)"] = {"K_J H": float(ga.kJ[3]), "K_R H": float(ga.kR[3])}
    if out_dir:
        path = os.path.join(out_dir, "pendulum_generator.csv")
        os.makedirs(out_dir, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["theta", "p"] + [f"KJ_{l}" for l in d.labels] + [f"KR_{l}" for l in d.labels])
            for r in rows:
                w.writerow([format(float(v), ".17g") for v in r])
        rep.files.append(path)
    return rep


def _random_inputs(rng, m, bound=1.0, n_modes=3) -> Callable:
    amp = rng.uniform(-1, 1, (n_modes, m)) * bound / n_modes
    freq = rng.uniform(0.1, 2.0, (n_modes, m))
    phase = rng.uniform(0, 2 * np.pi, (n_modes, m))
    return lambda t: np.sum(amp * np.sin(freq * t + phase), axis=0)


def _default_model(cfg: RunConfig, default_system=None, default_dict=None):
    sys = build_system(cfg.system or default_system or PENDULUM_LINEAR)
    d = build_dictionary(cfg.dictionary, sys.n) if cfg.dictionary else (
        default_dict(sys) if default_dict else observables.identity(sys.n))
    if cfg.samples:
        s = generate_samples(cfg.samples, sys)
    elif sys.name == "linear_ph" and d.labels == observables.identity(sys.n).labels:
        s = galerkin.axis_cross(sys.n)
    else:
        s = galerkin.uniform_box([-np.pi, -2.0], [np.pi, 2.0], 400, 0) if sys.name == "pendulum" \
            else galerkin.uniform_box([-1.0] * sys.n, [1.0] * sys.n, 50 * d.N, 0)
    return sys, d, s, galerkin.identify_from_data(d, sys, s, "structured")


def scenario_passivity_suite(cfg: RunConfig, out_dir) -> Report:
    rep = Report("passivity_suite")
    tol = cfg.tolerances
    sys, d, s, model = _default_model(
        cfg, {"name": "pendulum", "b": 0.3}, lambda _s: observables.pendulum_dictionary())
    _structure_checks(rep, model, "identified model")
    rep.info["raw_projection"] = {k: v for k, v in model.diagnostics.items()}
    rep.check("raw A_R min eig (Dirichlet form)", model.diagnostics["raw_A_R_min_eig"],
              -tol["raw_psd"], ">=")

    pc = lifted.check_passivity_conditions(model, lifted.IDENTITY_STORAGE, tol["passivity_conditions"])
    rep.check("P = I: |P K_J + K_J^T P|_F", pc["skew_residual"], tol["passivity_conditions"])
    rep.check("P = I: min eig sym(P K_R + K_R^T P)", pc["psd_min_eig"], -tol["passivity_conditions"], ">=")
    try:
        P = control.solve_lyapunov_ct(model.K, np.eye(model.N))
        gp = lifted.check_passivity_conditions(model, lifted.StorageSpec(P))
        rep.info["lyapunov_P_passivity"] = {k: gp[k] for k in ("skew_residual", "psd_min_eig", "passed")}
    except KphError as e:
        rep.info["lyapunov_P_passivity"] = f"{type(e).__name__}: {e}"

    rng = np.random.default_rng(int(cfg.params.get("seed", 0)))
    n_traj = int(cfg.params.get("trajectories", 20))
    t_end = float(cfg.params.get("t_end", 10.0))
    dt = float(cfg.params.get("dt", 1e-3))
    bound = float(cfg.params.get("u_bound", 1.0))
    gaps = []
    for i in range(n_traj):
        psi0 = rng.standard_normal(model.N)
        traj = lifted.simulate_lifted(model, psi0, _random_inputs(rng, model.m, bound), t_end, dt)
        gaps.append(lifted.passivity_gap(traj))
        if i == 0 and out_dir:
            rep.files.append(export_trajectory(_physical_columns(traj, model),
                                               os.path.join(out_dir, "lifted_passivity.csv")))
    rep.check(f"max over {n_traj} runs of H(T)-H(0)-int y^T u", max(gaps), tol["lifted_passivity"])

    dts = cfg.params.get("dts", [1e-2, 5e-3, 2.5e-3])
    ratios = []
    for _ in range(5):
        psi, u = rng.standard_normal(model.N), rng.uniform(-1, 1, model.m)
        res = [abs(lifted.euler_step(model, psi, u, h)[1]) for h in dts]
        ratios += [res[k] / res[k + 1] for k in range(len(res) - 1)]
    rep.check("Euler energy-residual ratios", np.array(ratios),
              (tol["energy_ratio_low"], tol["energy_ratio_high"]), "in")
    psi0 = rng.standard_normal(model.N)
    rep.info["largest_passive_euler_dt"] = lifted.largest_passive_dt(
        model, psi0, _random_inputs(rng, model.m, bound), t_end=0.5)
    return rep


def _physical_columns(traj: Trajectory, model: KpHModel, x=None, y=None, H=None):
    """Lifted-run CSV view; without a physical rollout the x/y/H columns repeat the lifted ones."""
    return Trajectory(traj.times, traj.states if x is None else x, traj.inputs,
                      traj.outputs if y is None else y, traj.Hlift if H is None else H,
                      psi=traj.psi, Hlift=traj.Hlift)


def energy_identity_residual(model: KpHModel, K_d, f, psi, h):
    """Centred-difference storage rate minus ``-psi^T K_R psi - y^T K_d y``.

    Returns ``(residual, exact_rate)``; ``f`` is the closed-loop vector field.
    """
    fwd = ph_model.rk4_step(f, 0.0, psi, h)
    bwd = ph_model.rk4_step(f, 0.0, psi, -h)
    fd = (lifted.storage_value(fwd) - lifted.storage_value(bwd)) / (2 * h)
    y = lifted.lifted_output(model, psi)
    exact = -float(psi @ model.K_R @ psi) - float(y @ K_d @ y)
    return fd - exact, exact


def scenario_damping_demo(cfg: RunConfig, out_dir) -> Report:
    rep = Report("damping_demo")
    tol = cfg.tolerances
    sys, d, s, model = _default_model(cfg)
    K_d = control._gain(cfg.controller.get("K_d", 0.5), model.m)
    t_end = float(cfg.controller.get("t_end", 50.0))
    dt = float(cfg.controller.get("dt", 1e-2))
    ctrl = control.DampingController(K_d)
    A_cl = control.closed_loop_matrix(model, K_d)
    det = control.check_detectability(A_cl, model.K_u.T)
    rep.check("PBH detectability of (A_cl, K_u^T)", det["detectable"], True, "==")
    rep.info["offending_modes"] = det["offending_modes"]
    rep.info["closed_loop_eigenvalues"] = control.eigenvalues(A_cl)

    x0 = np.asarray(cfg.controller.get("x0", [1.0] + [0.5] * (sys.n - 1)), dtype=float)
    psi0 = model.lift(x0)
    fb = lambda t, p: control.damping_input(ctrl, lifted.lifted_output(model, p), t)
    traj = lifted.simulate_lifted(model, psi0, None, t_end, dt, feedback=fb)
    rise = float(np.max(np.diff(traj.Hlift), initial=-np.inf))
    rep.check("max step increase of lifted storage", rise, tol["storage_increase"])
    decay = np.linalg.norm(traj.psi[-1]) / np.linalg.norm(psi0)
    rep.check(f"|psi({t_end:g})| / |psi(0)|", decay, tol["decay"])

    f = lambda t, p: model.K @ p + model.K_u @ fb(t, p)
    probe = traj.psi[:: max(1, len(traj) // 20)]
    resid = [energy_identity_residual(model, K_d, f, p, 5e-4) for p in probe]
    scale = max(1.0, max(abs(r[1]) for r in resid))
    rep.check("energy identity residual (relative, centred FD, h=5e-4)",
              max(abs(r[0]) for r in resid) / scale, tol["energy_identity"])
    ratios = [energy_identity_residual(model, K_d, f, p, 2e-2)[0] /
              energy_identity_residual(model, K_d, f, p, 1e-2)[0]
              for p in probe if np.linalg.norm(p) > 1e-3]
    rep.check("energy identity FD halving ratio", np.array(ratios),
              (tol["energy_ratio_low"], tol["energy_ratio_high"]), "in")

    inj = check_injectivity(d, s, tol["injectivity"])
    rep.info["injectivity"] = inj
    rep.info["claim_scope"] = ("original coordinates" if inj["injective_on_samples"] and inj["jacobian_full_rank"]
                               else "lifted space only")

    # physical rollout with the lifted feedback, for the CSV and the output discrepancy
    def u_phys(t, x):
        return control.damping_input(ctrl, lifted.lifted_output(model, model.lift(x)), t)

    times, X = ph_model.rk4(lambda t, x: ph_model.vector_field(sys, x, u_phys(t, x), False),
                            x0, t_end, dt)
    U = np.array([u_phys(t, x) for t, x in zip(times, X)]).reshape(len(times), sys.m)
    Yp = np.array([ph_model.output(sys, x) for x in X]).reshape(len(times), sys.m)
    Psi = np.array([model.lift(x) for x in X])
    Hl = 0.5 * np.sum(Psi * Psi, axis=1)
    Ylift = np.array([lifted.lifted_output(model, p) for p in Psi]).reshape(len(times), sys.m)
    rep.info["max |y_phys - y_lift| along physical rollout"] = _max_abs(Yp - Ylift)
    phys = Trajectory(times, X, U, Yp, np.array([sys.H(x) for x in X]), psi=Psi, Hlift=Hl)
    if out_dir:
        rep.files.append(export_trajectory(phys, os.path.join(out_dir, "damping_closed_loop.csv")))
    return rep


def scenario_mpc_demo(cfg: RunConfig, out_dir) -> Report:
    rep = Report("mpc_demo")
    tol = cfg.tolerances
    sys, d, s, model = _default_model(cfg)
    c = cfg.controller
    dt = float(c.get("dt", 0.05))
    horizon = float(c.get("horizon", 2.0))
    steps = int(c.get("steps", 200))
    Q_lyap = _matrix(c["Q_lyap"], "Q_lyap", (model.N, model.N)) if "Q_lyap" in c else np.eye(model.N)
    A_d = np.eye(model.N) + dt * model.K
    P = control.solve_lyapunov_dt(A_d, Q_lyap)
    slack = control.lyapunov_slack_dt(A_d, P, Q_lyap)
    rep.check("max eig(A_d^T P A_d - P + Q)", slack, tol["lyapunov_slack"])
    psi_ref = np.asarray(c.get("psi_ref", np.zeros(model.N)), dtype=float)
    prob = control.MPCProblem(model, psi_ref, horizon, dt, P, Q_lyap)
    x0 = np.asarray(c.get("x0", [1.0] + [0.5] * (sys.n - 1)), dtype=float)
    psi0 = model.lift(x0)
    loop = control.mpc_closed_loop(prob, psi0, steps, tol["cost_monotone_rtol"])
    cert = loop["certificate"]
    rep.check("optimal cost nonincreasing", cert["cost_nonincreasing"], True, "==")
    rep.check("worst optimal-cost increase", cert["worst_cost_increase"], 0.0)
    rep.info["V_first_last"] = (cert["V"][0], cert["V"][-1])
    rep.info["final |psi - psi_ref|"] = float(np.linalg.norm(loop["states"][-1] - psi_ref))
    if out_dir:
        n = len(loop["inputs"])
        Psi = loop["states"][:n]
        Hl = 0.5 * np.sum(Psi * Psi, axis=1)
        Y = Psi @ model.K_u
        traj = Trajectory(np.arange(n) * dt, Psi, loop["inputs"], Y, Hl, psi=Psi, Hlift=Hl)
        rep.files.append(export_trajectory(traj, os.path.join(out_dir, "mpc_closed_loop.csv")))
    return rep


def scenario_structure_vs_unstructured(cfg: RunConfig, out_dir) -> Report:
    rep = Report("structure_vs_unstructured")
    sys, d, s, structured = _default_model(
        cfg, {"name": "pendulum", "b": 0.3}, lambda _s: observables.pendulum_dictionary())
    baseline = galerkin.identify_from_data(d, sys, s, "unstructured")
    sr, br = structured.structure_report(), baseline.structure_report()
    rep.check("structured |K_J + K_J^T|_F", sr["skew_residual"], 0.0, "==")
    rep.check("structured PSD violation max(0, -min eig K_R)", max(0.0, -sr["psd_min_eig"]), 0.0, "==")
    rep.check("structured dissipation violation", sr["dissipation_violation"], 0.0, "==")
    rep.check("baseline |K_J + K_J^T|_F", br["skew_residual"], 0.0, ">=")
    rep.check("baseline PSD violation max(0, -min eig K_R)", max(0.0, -br["psd_min_eig"]), 0.0, ">=")
    rep.check("baseline dissipation violation", br["dissipation_violation"], 0.0, ">=")
    rep.info["structured"] = sr
    rep.info["baseline"] = br
    return rep


SCENARIOS = {
    "linear_recovery": scenario_linear_recovery,
    "q_conjugate": scenario_q_conjugate,
    "pendulum_generator": scenario_pendulum_generator,
    "passivity_suite": scenario_passivity_suite,
    "damping_demo": scenario_damping_demo,
    "mpc_demo": scenario_mpc_demo,
    "structure_vs_unstructured": scenario_structure_vs_unstructured,
}


def run_scenario(name: str, cfg: Optional[RunConfig] = None) -> Report:
    """Run one scenario.  Module errors become a failed check, not an exception.

    Raises ConfigError for unknown scenarios and invalid configuration.
    """
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    cfg = cfg or RunConfig()
    out_dir = os.path.join(cfg.output_dir, name) if cfg.output_dir else None
    try:
        return SCENARIOS[name](cfg, out_dir)
    except ConfigError:
        raise
    except (KphError, np.linalg.LinAlgError) as e:
        log.warning("scenario %s failed: %s", name, e)
        rep = Report(name)
        rep.fail("scenario raised", e)
        return rep


def run_batch(names, cfg: Optional[RunConfig] = None) -> dict:
    """Run several scenarios; the result is keyed and ordered by scenario name."""
    return {n: run_scenario(n, cfg) for n in sorted(names)}
