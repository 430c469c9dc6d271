"""Which-way measurement of a two-branch system by a heavy collective pointer.

Coordinate 1 is the system, coordinate 2 the pointer.  The system starts
in c1|left well> + c2|right well>; a switched coupling
-chi * x2 * tanh(x1 / w) kicks the pointer left or right depending on the
system branch.  The pointer's gravitational weight sqrt(A) sets how
strongly the Bohmian-sourced gain favors the branch holding the Bohmian
pointer coordinate.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..bohm import sample_initial_positions
from ..evolve import Dynamics, ExternalPotentialSpec, HarmonicWells, TanhCoupling, evolve_ensemble
from ..grid import make_grid
from ..states import WaveFunction, gaussian, normalize, product_state
from .config import ScenarioConfig
from .output import OutputBundle, Table

FIT_WINDOW = (1e-2, 0.4)


def measurement_setup(cfg: ScenarioConfig, amplification: float | None = None,
                      epsilon: float | None = None):
    """Grid, dynamics and initial wave function for a measurement config."""
    gs, s, p = cfg.grid, cfg.state, cfg.pointer
    g = make_grid(gs.d, 2, gs.points, gs.extent)
    if gs.d != 1:
        raise ValueError("the measurement scenario uses one dimension per coordinate")
    gp = g.physical()
    A = p.amplification if amplification is None else amplification
    half = 0.5 * s.separation
    c1 = complex(s.c1) if s.c1 is not None else 1.0
    c2 = complex(s.c2) if s.c2 is not None else 0.0
    system = c1 * gaussian(gp, -half, s.sigma) + c2 * gaussian(gp, half, s.sigma)
    pointer = gaussian(gp, 0.0, p.sigma)
    psi0 = normalize(g, product_state(g, [system, pointer]))
    # wells whose ground state has width sigma for unit mass
    stiffness = 1.0 / (4 * s.sigma**4)
    potential = ExternalPotentialSpec((
        HarmonicWells(stiffness, ((-half,), (half,)), particles=(0,), cap=s.well_cap),
        TanhCoupling(p.coupling, p.switch_width, duration=p.kick_duration),
    ))
    gravity = cfg.gravity.params(weights=(s.system_weight, math.sqrt(A)))
    if epsilon is not None:
        gravity = replace(gravity, epsilon=epsilon)
    dyn = Dynamics(g, gravity, potential, masses=(1.0, p.mass))
    return g, dyn, psi0


@dataclass(frozen=True)
class BranchRecorder:
    """Branch weights and Bohmian coordinates of every member."""
    extent: float
    points: int
    gap: float

    def masks(self):
        dx = self.extent / self.points
        x = -0.5 * self.extent + dx * np.arange(self.points)
        return x < -self.gap, x > self.gap, np.abs(x) <= self.gap, dx

    def weights(self, values: np.ndarray):
        left, right, middle, dx = self.masks()
        pointer = np.sum(np.abs(values) ** 2, axis=1) * dx  # marginal of coordinate 2
        return (pointer[:, left].sum(axis=1) * dx, pointer[:, right].sum(axis=1) * dx,
                pointer[:, middle].sum(axis=1) * dx)

    def __call__(self, step, time, values, points):
        w1, w2, wg = self.weights(values)
        return {"w1": w1, "w2": w2, "wg": wg,
                "q": points[:, 1, 0].copy(), "x": points[:, 0, 0].copy()}


@dataclass(frozen=True)
class CollapseStop:
    """A member is done once the gap and its empty branch are both below threshold."""
    recorder: BranchRecorder
    threshold: float

    def __call__(self, step, time, values, points):
        w1, w2, wg = self.recorder.weights(values)
        empty = empty_weight(w1, w2, points[:, 1, 0], self.recorder.gap)
        return (wg < self.threshold) & (empty < self.threshold)


def empty_weight(w1, w2, q, gap):
    """Weight of the branch not holding the Bohmian pointer coordinate.

    Inside the gap band neither branch is empty; the larger weight is used.
    """
    return np.where(q < -gap, w2, np.where(q > gap, w1, np.maximum(w1, w2)))


@dataclass
class EnsembleOutcome:
    times: np.ndarray
    w1: np.ndarray  # (R, T)
    w2: np.ndarray
    wg: np.ndarray
    q: np.ndarray
    w_empty: np.ndarray
    separation_index: np.ndarray  # -1: never separated
    bohm_branch: np.ndarray       # branch of the pointer coordinate at separation, -1 none
    converged: np.ndarray
    survivor: np.ndarray          # -1 for flagged runs
    node_flags: np.ndarray
    dt: float
    steps: int


def run_branch_ensemble(cfg: ScenarioConfig, runs: int, duration: float,
                        amplification: float | None = None, epsilon: float | None = None,
                        stride: int | None = None, workers: int = 1) -> EnsembleOutcome:
    g, dyn, psi0 = measurement_setup(cfg, amplification, epsilon)
    ens = sample_initial_positions(WaveFunction(g, psi0), runs, cfg.run.seed)
    dt = cfg.run.dt or cfg.run.dt_fraction * float(np.min(dyn.stability_limit(ens.positions)))
    steps = int(math.ceil(duration / dt))
    rec = BranchRecorder(g.extent, g.points_per_axis, cfg.pointer.gap)
    thr = cfg.run.threshold
    stop = CollapseStop(rec, thr) if dyn.gravity.epsilon > 0 else None
    run = evolve_ensemble(dyn, psi0, ens.positions, dt, steps, rec,
                          record_stride=stride or cfg.run.snapshot_stride,
                          workers=workers, chunk_size=cfg.run.chunk_size, stop=stop)
    return analyze_branches(run.times, run.records, cfg.pointer.gap, thr, run.node_flags, dt,
                            steps, after=cfg.pointer.kick_duration)


def analyze_branches(times, records, gap, threshold, node_flags, dt, steps,
                     after: float = 0.0) -> EnsembleOutcome:
    """Per-member branch bookkeeping.

    Separation is the first snapshot at or after ``after`` (the end of the
    pointer kick) with the gap weight below threshold; earlier dips only
    reflect the pointer packet itself, not a recorded outcome.
    """
    stack = {k: np.stack([r[k] for r in records], axis=1) for k in records[0]}
    w1, w2, wg, q = stack["w1"], stack["w2"], stack["wg"], stack["q"]
    times = np.asarray(times)
    w_empty = empty_weight(w1, w2, q, gap)
    R = len(w1)
    separated = (wg < threshold) & (times >= after - 1e-12)[None, :]
    sep = np.where(separated.any(axis=1), separated.argmax(axis=1), -1)
    qs = q[np.arange(R), np.maximum(sep, 0)]
    bohm = np.where(qs < -gap, 0, np.where(qs > gap, 1, -1))
    bohm = np.where(sep < 0, -1, bohm)
    converged = (sep >= 0) & (wg[:, -1] < threshold) & (np.minimum(w1[:, -1], w2[:, -1])
                                                          < threshold)
    survivor = np.where(converged, np.where(w1[:, -1] > w2[:, -1], 0, 1), -1)
    return EnsembleOutcome(times, w1, w2, wg, q, w_empty, sep, bohm, converged,
                           survivor, np.asarray(node_flags), dt, steps)


def fit_decay(out: EnsembleOutcome, window=FIT_WINDOW):
    """Median per-member exponential rate of w_empty.

    Each member is fitted from the peak of w_empty over the whole run,
    over the snapshots inside ``window``.  Strong amplification empties a
    branch while the kick is still on, so starting after the kick would
    drop exactly the fastest members.  Also returns the log-log slope of the
    local rate against time, pooled over members, as a descriptive growth
    exponent.
    """
    lo, hi = window
    rates, log_t, log_r = [], [], []
    for i in range(len(out.w_empty)):
        peak = int(np.argmax(out.w_empty[i]))
        t, w = out.times[peak:], out.w_empty[i, peak:]
        keep = (w > lo) & (w < hi)
        if keep.sum() < 3:
            continue
        tk, lw = t[keep], np.log(w[keep])
        rates.append(-np.polyfit(tk, lw, 1)[0])
        local = -np.diff(lw) / np.diff(tk)
        mid = 0.5 * (tk[1:] + tk[:-1])
        good = local > 0
        log_t.extend(np.log(mid[good]))
        log_r.extend(np.log(local[good]))
    rate = float(np.median(rates)) if rates else float("nan")
    exponent = float(np.polyfit(log_t, log_r, 1)[0]) if len(log_t) >= 3 else float("nan")
    return rate, exponent, len(rates)


@dataclass
class MeasurementReport:
    expected: tuple[float, float]
    amplification: float
    outcome: EnsembleOutcome
    born: dict
    agreement: float
    decay_rate: float
    sweep: list = field(default_factory=list)  # (A, rate, exponent, members fitted)
    control: dict | None = None
    warnings: list = field(default_factory=list)

    @property
    def survivors(self) -> np.ndarray:
        return self.outcome.survivor

    def bundle(self, name: str = "measurement") -> OutputBundle:
        o = self.outcome
        mean = lambda a: a.mean(axis=0)
        rows = [(t, a, b, c, e) for t, a, b, c, e in
                zip(o.times, mean(o.w1), mean(o.w2), mean(o.wg), mean(o.w_empty))]
        tables = {
            "branch_weights.csv": Table(("t", "w_branch1", "w_branch2", "w_gap", "w_empty"), rows),
            "outcomes.csv": Table(
                ("run", "survivor", "bohm_branch", "separation_time", "converged"),
                [(i, int(o.survivor[i]) + 1 if o.survivor[i] >= 0 else 0,
                  int(o.bohm_branch[i]) + 1 if o.bohm_branch[i] >= 0 else 0,
                  o.times[o.separation_index[i]] if o.separation_index[i] >= 0 else float("nan"),
                  int(o.converged[i])) for i in range(len(o.survivor))]),
        }
        if self.sweep:
            tables["sweep.csv"] = Table(("amplification", "decay_rate", "rate_exponent",
                                         "members_fitted"), self.sweep)
        results = {
            "expected_weights": list(self.expected),
            "amplification": self.amplification,
            "born": self.born,
            "survivor_bohm_agreement": self.agreement,
            "decay_rate": self.decay_rate,
            "sweep": [{"amplification": a, "decay_rate": r, "rate_exponent": x,
                       "members_fitted": n} for a, r, x, n in self.sweep],
            "sweep_strictly_increasing": sweep_increasing(self.sweep) if self.sweep else None,
            "control": self.control,
            "dt": o.dt,
            "steps": o.steps,
            "node_flag_total": int(np.sum(o.node_flags)),
            "partition_error": partition_error(o),
        }
        return OutputBundle(name, results, tables, list(self.warnings))


def partition_error(o: EnsembleOutcome) -> float:
    return float(np.max(np.abs(o.w1 + o.w2 + o.wg - 1.0)))


def sweep_increasing(sweep) -> bool:
    rates = [r for _, r, _, _ in sweep]
    return all(np.isfinite(rates)) and all(b > a for a, b in zip(rates, rates[1:]))


def born_statistics(out: EnsembleOutcome, expected1: float) -> dict:
    ok = out.converged
    n = int(ok.sum())
    flagged = int(len(ok) - n)
    if n == 0:
        return {"expected_branch1": expected1, "observed_branch1": float("nan"),
                "band": float("nan"), "within_band": False, "counted": 0, "flagged": flagged}
    freq = float(np.mean(out.survivor[ok] == 0))
    band = 3 * math.sqrt(expected1 * (1 - expected1) / n)
    return {"expected_branch1": expected1, "observed_branch1": freq, "band": band,
            "within_band": bool(abs(freq - expected1) <= band), "counted": n,
            "flagged": flagged}


def plateau_drift(out: EnsembleOutcome) -> float:
    """Largest change of w_empty after separation, over members."""
    drift = 0.0
    for i in range(len(out.w_empty)):
        s = out.separation_index[i]
        if s < 0:
            continue
        w = out.w_empty[i, s:]
        drift = max(drift, float(np.max(np.abs(w - w[0]))))
    return drift


def run_measurement_scenario(cfg: ScenarioConfig, workers: int | None = None,
                             sweep: bool = True, control: bool | None = None
                             ) -> MeasurementReport:
    workers = workers or cfg.run.workers
    s = cfg.state
    if s.c1 is None or s.c2 is None:
        raise ValueError("a measurement needs both branch amplitudes c1 and c2")
    expected = (abs(s.c1) ** 2, abs(s.c2) ** 2)
    out = run_branch_ensemble(cfg, cfg.run.runs, cfg.run.duration, workers=workers)
    warnings = []
    flagged = int(np.sum(~out.converged))
    if flagged:
        warnings.append(f"{flagged} of {len(out.converged)} runs did not finish collapsing "
                        f"within t={cfg.run.duration}; excluded from branch statistics")
    err = partition_error(out)
    if err > 1e-8:
        warnings.append(f"branch weights miss unity by {err:.3e}")
    counted = out.converged
    agree = (float(np.mean(out.survivor[counted] == out.bohm_branch[counted]))
             if counted.any() else float("nan"))
    rate, _, _ = fit_decay(out)
    report = MeasurementReport(expected, cfg.pointer.amplification, out,
                               born_statistics(out, expected[0]), agree, rate,
                               warnings=warnings)
    if sweep and cfg.run.sweep_runs > 0 and cfg.gravity.epsilon > 0:
        for A in cfg.run.sweep:
            o = run_branch_ensemble(cfg, cfg.run.sweep_runs, cfg.run.sweep_duration,
                                    amplification=A, workers=workers)
            r, x, n = fit_decay(o)
            report.sweep.append((A, r, x, n))
    if control if control is not None else cfg.run.control:
        o = run_branch_ensemble(cfg, cfg.run.control_runs, cfg.run.sweep_duration,
                                epsilon=0.0, workers=workers)
        separated = o.separation_index >= 0
        report.control = {
            "runs": int(len(o.w_empty)),
            "separated": int(separated.sum()),
            "plateau_drift": plateau_drift(o),
            "final_w_empty_mean": float(np.mean(o.w_empty[:, -1])),
            "duration": cfg.run.sweep_duration,
        }
    return report
