"""Trajectory generation and seeded Monte Carlo campaigns.

Every trial draws from its own generator seeded by ``(campaign seed, trial)``,
so a trial can be replayed alone. Within a trial the truth, both trajectories
and the standard-normal noise draws are shared by every (sigma, K, method)
cell: cell K uses the first K instants and noise level sigma scales the same
draws. This keeps comparisons across cells paired.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import example_data
from .frames import FrameTransform, apply_transform, random_rotation
from .measurement import MeasurementSet, NoiseSpec, draw_noise, perturb, synthesize_set
from .pipeline import Method, estimate
from .sdp import SolverOptions

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrajectoryConfig:
    """Kinematic random walk for fixed-wing agents.

    Speed is drawn once per trajectory; each step changes heading by at most
    ``max_turn_rate * measurement_interval`` and climbs at most
    ``max_climb_rate`` m/s.
    """

    speed_range: tuple[float, float] = (40.0, 60.0)
    measurement_interval: float = 5.0
    max_turn_rate: float = 0.35
    max_climb_rate: float = 10.0
    initial_positions: tuple[tuple[float, float, float], tuple[float, float, float]] = (
        (0.0, 0.0, 300.0), (300.0, 0.0, 350.0))
    K_max: int = 16
    seed: int = 0
    planar_agent_a: bool = False

    def __post_init__(self):
        lo, hi = self.speed_range
        if not (self.measurement_interval > 0):
            raise ConfigError("measurement_interval must be positive")
        if not (0 < lo <= hi):
            raise ConfigError(f"invalid speed_range {self.speed_range}")
        if self.max_turn_rate < 0 or self.max_climb_rate < 0:
            raise ConfigError("turn and climb rate caps must be non-negative")
        if self.max_climb_rate >= lo:
            raise ConfigError("max_climb_rate must be below the minimum speed")
        if self.K_max < 1:
            raise ConfigError("K_max must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> TrajectoryConfig:
        kw = dict(d)
        if "speed_range" in kw:
            kw["speed_range"] = tuple(kw["speed_range"])
        if "initial_positions" in kw:
            kw["initial_positions"] = tuple(tuple(p) for p in kw["initial_positions"])
        try:
            return cls(**kw)
        except TypeError as e:
            raise ConfigError(str(e)) from e


def generate_trajectory(cfg: TrajectoryConfig, rng: np.random.Generator | None = None,
                        start=None, max_climb_rate: float | None = None) -> np.ndarray:
    """``(K_max, 3)`` waypoints at successive measurement instants."""
    rng = np.random.default_rng(cfg.seed) if rng is None else rng
    climb_cap = cfg.max_climb_rate if max_climb_rate is None else max_climb_rate
    dt = cfg.measurement_interval
    step = rng.uniform(*cfg.speed_range) * dt
    heading = rng.uniform(-np.pi, np.pi)
    pts = np.empty((cfg.K_max, 3))
    pts[0] = cfg.initial_positions[0] if start is None else start
    for k in range(1, cfg.K_max):
        if k > 1:
            heading += rng.uniform(-1.0, 1.0) * cfg.max_turn_rate * dt
        dz = rng.uniform(-1.0, 1.0) * climb_cap * dt
        horiz = np.sqrt(step**2 - dz**2)
        pts[k] = pts[k - 1] + (horiz * np.cos(heading), horiz * np.sin(heading), dz)
    return pts


def sample_truth(seed: int | np.random.Generator, box: float = 500.0) -> FrameTransform:
    """Haar-uniform rotation, translation uniform in ``[-box, box]^3`` metres."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return FrameTransform(random_rotation(rng), rng.uniform(-box, box, 3))


@dataclass(frozen=True)
class Scenario:
    truth: FrameTransform
    pos_a_global: np.ndarray
    pos_b_global: np.ndarray
    measurements: MeasurementSet
    noise_seed: int

    @property
    def K_max(self) -> int:
        return self.measurements.K

    def mean_distance(self) -> float:
        return float(np.mean(np.linalg.norm(self.pos_a_global - self.pos_b_global, axis=1)))

    def noise(self) -> np.ndarray:
        """Unit-variance draws; noise at level sigma is ``sigma * noise()``."""
        return draw_noise(NoiseSpec(1.0, self.noise_seed), self.K_max)

    def observe(self, sigma: float, K: int | None = None) -> MeasurementSet:
        K = self.K_max if K is None else K
        if K > self.K_max:
            raise ConfigError(f"K={K} exceeds the scenario length {self.K_max}")
        z = sigma * self.noise()
        return MeasurementSet(perturb(m, zt, zp) for m, (zt, zp) in zip(self.measurements[:K], z))


def random_scenario(cfg: TrajectoryConfig, seed: int, noise_seed: int | None = None,
                    box: float = 500.0) -> Scenario:
    rng = np.random.default_rng(seed)
    truth = sample_truth(rng, box)
    pa = generate_trajectory(cfg, rng, cfg.initial_positions[0],
                             max_climb_rate=0.0 if cfg.planar_agent_a else None)
    pb = generate_trajectory(cfg, rng, cfg.initial_positions[1])
    ms = synthesize_set(truth, pa, apply_transform(truth, pb))
    if noise_seed is None:
        noise_seed = int(rng.integers(2**63))
    return Scenario(truth, pa, pb, ms, noise_seed)


def reference_scenario(noise_seed: int, source: str = "global") -> Scenario:
    """The reference example trajectory with its (orthogonalised) transform."""
    truth, ms = example_data.example_scenario(source)
    pb_global = (ms.pos_b - truth.translation) @ truth.rotation
    return Scenario(truth, example_data.POS_A_GLOBAL.copy(), pb_global, ms, noise_seed)


# -- campaigns --------------------------------------------------------------

@dataclass(frozen=True)
class CampaignSpec:
    sigmas: tuple[float, ...] = tuple(np.radians([0.1, 1.0, 2.0, 3.0, 5.0]))
    K_values: tuple[int, ...] = (4, 6, 8, 12, 16)
    trials_per_cell: int = 100
    methods: tuple[str, ...] = ("SDP_O",)
    truth_sampling: str = "random"
    translation_box: float = 500.0
    seed: int = 0

    def __post_init__(self):
        if self.trials_per_cell < 1:
            raise ConfigError("trials_per_cell must be >= 1")
        if any(s < 0 for s in self.sigmas):
            raise ConfigError("sigmas must be non-negative")
        if not self.K_values or min(self.K_values) < 1:
            raise ConfigError("K_values must be positive")
        if self.truth_sampling not in ("random", "reference"):
            raise ConfigError(f"unknown truth_sampling {self.truth_sampling!r}")
        for m in self.methods:
            Method(m)

    @classmethod
    def from_dict(cls, d: dict) -> CampaignSpec:
        kw = dict(d)
        if "sigma_deg" in kw:
            kw["sigmas"] = tuple(np.radians(kw.pop("sigma_deg")))
        for key in ("sigmas", "K_values", "methods"):
            if key in kw:
                kw[key] = tuple(kw[key])
        try:
            return cls(**kw)
        except (TypeError, ValueError) as e:
            raise ConfigError(str(e)) from e


@dataclass(frozen=True)
class TrialRecord:
    sigma: float
    K: int
    method: str
    trial: int
    rotation_error: float
    position_error: float
    status: str
    rank1_ratio: float
    mean_distance: float

    @property
    def ok(self) -> bool:
        return self.status == "ok"


@dataclass(frozen=True)
class CellSummary:
    median_rotation_error: float
    median_position_error: float
    median_rank1_ratio: float
    n_ok: int
    n_failed: int

    @property
    def flagged(self) -> bool:
        return self.n_failed > (self.n_ok + self.n_failed) / 2


def lower_median(values: Iterable[float]) -> float:
    v = sorted(values)
    return v[(len(v) - 1) // 2] if v else float("nan")


@dataclass
class CampaignResult:
    spec: CampaignSpec
    records: list[TrialRecord] = field(default_factory=list)

    @property
    def trials_completed(self) -> int:
        return len({r.trial for r in self.records})

    def cells(self) -> dict[tuple[float, int, str], CellSummary]:
        groups: dict[tuple[float, int, str], list[TrialRecord]] = {}
        for r in self.records:
            groups.setdefault((r.sigma, r.K, r.method), []).append(r)
        out = {}
        for key, rs in groups.items():
            ok = [r for r in rs if r.ok]
            out[key] = CellSummary(
                lower_median(r.rotation_error for r in ok),
                lower_median(r.position_error for r in ok),
                lower_median(r.rank1_ratio for r in ok if np.isfinite(r.rank1_ratio)),
                len(ok), len(rs) - len(ok),
            )
        return out

    def distance_stats(self) -> dict:
        d = {}
        for r in self.records:
            d.setdefault(r.trial, r.mean_distance)
        v = np.array(list(d.values()))
        if not v.size:
            return {"mean_m": float("nan"), "median_m": float("nan")}
        return {"mean_m": float(v.mean()), "median_m": lower_median(v),
                "min_m": float(v.min()), "max_m": float(v.max())}


def trial_seeds(campaign_seed: int, trial: int) -> tuple[int, int]:
    """(scenario seed, noise seed) for one trial."""
    a, b = np.random.SeedSequence([campaign_seed, trial]).generate_state(2, dtype=np.uint64)
    return int(a), int(b)


def trial_scenario(spec: CampaignSpec, cfg: TrajectoryConfig, trial: int) -> Scenario:
    s_seed, n_seed = trial_seeds(spec.seed, trial)
    if spec.truth_sampling == "reference":
        return reference_scenario(n_seed)
    k_max = max(cfg.K_max, max(spec.K_values))
    if k_max != cfg.K_max:
        cfg = TrajectoryConfig(**{**cfg.__dict__, "K_max": k_max})
    return random_scenario(cfg, s_seed, n_seed, spec.translation_box)


def run_trial(spec: CampaignSpec, cfg: TrajectoryConfig, trial: int,
              opts: SolverOptions | None = None) -> list[TrialRecord]:
    """All (sigma, K, method) cells of one trial, in spec order."""
    sc = trial_scenario(spec, cfg, trial)
    dist = sc.mean_distance()
    out = []
    for sigma in spec.sigmas:
        for K in spec.K_values:
            for method in spec.methods:
                if K > sc.K_max:
                    out.append(TrialRecord(sigma, K, method, trial, np.nan, np.nan,
                                           "K exceeds scenario length", np.nan, dist))
                    continue
                try:
                    rep = estimate(sc.observe(sigma, K), method, opts, truth=sc.truth)
                except Exception as e:  # noqa: BLE001 - a failed trial is data, not fatal
                    log.debug("trial %d sigma=%.4g K=%d %s failed: %s", trial, sigma, K, method, e)
                    out.append(TrialRecord(sigma, K, method, trial, np.nan, np.nan,
                                           _status(e), np.nan, dist))
                    continue
                out.append(TrialRecord(sigma, K, method, trial, rep.rotation_error,
                                       rep.position_error, "ok",
                                       rep.diagnostics.get("rank1_ratio", np.nan), dist))
    return out


def _status(e: Exception) -> str:
    name = type(e).__name__
    return {
        "NongenericTrajectoryError": "nongeneric",
        "InsufficientMeasurementsError": "insufficient",
        "SolverError": "solver_failed",
        "InfeasibleError": "infeasible",
        "DegenerateExtractionError": "degenerate_extraction",
    }.get(name, name)


def _run_trial_args(args):
    return run_trial(*args)


def run_campaign(spec: CampaignSpec, cfg: TrajectoryConfig | None = None,
                 opts: SolverOptions | None = None, n_jobs: int = 1,
                 on_trial: Callable[[int, Sequence[TrialRecord]], None] | None = None) -> CampaignResult:
    """Run every trial; records are ordered by trial index whatever ``n_jobs`` is.

    ``on_trial`` is called after each completed trial, in trial order.
    """
    cfg = cfg or TrajectoryConfig()
    result = CampaignResult(spec)
    args = [(spec, cfg, t, opts) for t in range(spec.trials_per_cell)]
    if n_jobs == 1:
        it = map(_run_trial_args, args)
        pool = None
    else:
        pool = ProcessPoolExecutor(max_workers=n_jobs if n_jobs > 0 else None)
        it = pool.map(_run_trial_args, args)
    try:
        for t, recs in enumerate(it):
            result.records.extend(recs)
            if on_trial is not None:
                on_trial(t, recs)
    finally:
        if pool is not None:
            pool.shutdown(cancel_futures=True)
    cells = result.cells()
    for key, c in cells.items():
        if c.flagged:
            log.warning("cell sigma=%.4g K=%d %s: %d of %d trials failed",
                        key[0], key[1], key[2], c.n_failed, c.n_ok + c.n_failed)
    return result


# -- plot-ready tables --------------------------------------------------------

def _deg(s: float) -> float:
    return float(np.round(np.degrees(s), 6))


def table_vs_K(result: CampaignResult, quantity: str = "rotation") -> list[dict]:
    """Median error against K, one column per sigma (rows per method)."""
    cells = result.cells()
    spec = result.spec
    rows = []
    for method in spec.methods:
        for K in spec.K_values:
            row = {"method": method, "K": K}
            for s in spec.sigmas:
                c = cells.get((s, K, method))
                v = np.nan if c is None else (c.median_rotation_error if quantity == "rotation"
                                              else c.median_position_error)
                row[f"sigma_{_deg(s):g}deg"] = v
            rows.append(row)
    return rows


def table_vs_sigma(result: CampaignResult) -> list[dict]:
    """Median rotation error against sigma, one column per method (rows per K)."""
    cells = result.cells()
    spec = result.spec
    rows = []
    for K in spec.K_values:
        for s in spec.sigmas:
            row = {"K": K, "sigma_deg": _deg(s)}
            for method in spec.methods:
                c = cells.get((s, K, method))
                row[method] = np.nan if c is None else c.median_rotation_error
            rows.append(row)
    return rows
