"""
End-to-end experiment: data, probe training, gap fit, joint optimization,
the integer-q oracle and the simulated training-time sweep.

Each stage is a function of its inputs so the command line verbs can run
any prefix of the pipeline; run_pipeline chains them and records what it
produced in a RunArtifact, which stays populated up to the failing stage
when something goes wrong.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from .channel import DeviceProfile, NetworkConfig, ergodic_rate, ergodic_rate_quadrature
from .fitting import GapFit, fit_gap_model
from .optimizer import (AllocationPlan, brute_force, equal_bandwidth_plan, joint_optimize,
                        optimal_bandwidth_plan)
from .scenario import (STREAM_DATA, STREAM_PROBES, STREAM_SHARDS, STREAM_SWEEP,
                       DevicePlacement, ScenarioConfig, sample_scenario)
from .trainer import (Dataset, DecayingSchedule, LossTrace, generate_synthetic, mean_trace,
                      rounds_to_gap, run_feel, shard_dataset, split_dataset)

logger = logging.getLogger(__name__)

SEED_BOUND = 2 ** 31


@dataclass
class TrainingData:
    """Device shards plus the held-out validation set."""

    shards: List[Dataset]
    validation: Optional[Dataset]
    true_model: np.ndarray


@dataclass
class RunArtifact:
    """Everything a run produced; fields stay None until their stage completes."""

    config: ScenarioConfig
    profiles: List[DeviceProfile] = field(default_factory=list)
    placements: List[DevicePlacement] = field(default_factory=list)
    traces: List[LossTrace] = field(default_factory=list)
    fit: Optional[GapFit] = None
    check_traces: List[LossTrace] = field(default_factory=list)
    plan: Optional[AllocationPlan] = None
    oracle_rows: List[AllocationPlan] = field(default_factory=list)
    oracle_best: Optional[AllocationPlan] = None
    sweep: List[Dict[str, Any]] = field(default_factory=list)
    timing: Dict[str, float] = field(default_factory=dict)
    failure: Optional[str] = None


def prepare_data(cfg: ScenarioConfig) -> TrainingData:
    """Generate the synthetic corpus once, split off validation and shard the rest."""

    streams = cfg.streams()
    total = cfg.train_samples + cfg.validation_samples
    dataset, true_model = generate_synthetic(cfg.dimension, total, cfg.delta1, cfg.delta2,
                                             streams[STREAM_DATA])

    if cfg.validation_samples > 0:
        train, validation = split_dataset(dataset, cfg.train_samples)
    else:
        train, validation = dataset, None

    shards = shard_dataset(train, cfg.num_devices, streams[STREAM_SHARDS])
    logger.info("generated %d training samples over %d devices", len(train), cfg.num_devices)
    return TrainingData(shards, validation, true_model)


def _schedule(cfg: ScenarioConfig) -> DecayingSchedule:
    return DecayingSchedule(cfg.lr_numerator, cfg.lr_offset)


def probe_seeds(cfg: ScenarioConfig) -> List[int]:
    rng = cfg.streams()[STREAM_PROBES]
    return [int(s) for s in rng.integers(0, SEED_BOUND, size=cfg.probe_seeds)]


def train_level(cfg: ScenarioConfig, data: TrainingData, q: Optional[int], rounds: int,
                seeds: Sequence[int], show_progress: bool = False) -> LossTrace:
    """Train at one level for every seed and average the traces."""

    traces = [
        run_feel(data.shards, q, rounds, _schedule(cfg), cfg.batch_size, cfg.regularization,
                 seed, validation=data.validation, show_progress=show_progress)
        for seed in seeds
    ]
    if len(traces) == 1:
        return traces[0]

    return mean_trace(traces)


def run_probes(cfg: ScenarioConfig, data: TrainingData,
               show_progress: bool = False) -> Tuple[LossTrace, LossTrace]:
    seeds = probe_seeds(cfg)
    first = train_level(cfg, data, cfg.probe_q1, cfg.probe_rounds, seeds, show_progress)
    second = train_level(cfg, data, cfg.probe_q2, cfg.probe_rounds, seeds, show_progress)
    return first, second


def run_checks(cfg: ScenarioConfig, data: TrainingData,
               show_progress: bool = False) -> List[LossTrace]:
    """Traces at the extra levels the fitted curve is compared against."""

    seeds = probe_seeds(cfg)
    return [train_level(cfg, data, q, cfg.probe_rounds, seeds, show_progress)
            for q in cfg.check_levels]


def fit_probes(cfg: ScenarioConfig, probes: Tuple[LossTrace, LossTrace]) -> GapFit:
    return fit_gap_model(probes[0], probes[1], cfg.dimension, cfg.num_devices, cfg.probe_rounds)


def optimize_plan(cfg: ScenarioConfig, profiles: Sequence[DeviceProfile],
                  fit: GapFit) -> AllocationPlan:
    return joint_optimize(profiles, cfg.network(), fit, cfg.epsilon, tol=cfg.tolerance_s,
                          q0=cfg.q_init, q_max=cfg.q_max)


def run_oracle(cfg: ScenarioConfig, profiles: Sequence[DeviceProfile],
               fit: GapFit) -> Tuple[List[AllocationPlan], AllocationPlan]:
    return brute_force(profiles, cfg.network(), fit, cfg.epsilon,
                       range(2, cfg.oracle_q_max + 1))


def sweep_seeds(cfg: ScenarioConfig) -> List[int]:
    rng = cfg.streams()[STREAM_SWEEP]
    return [int(s) for s in rng.integers(0, SEED_BOUND, size=cfg.sweep_seeds)]


def median_rounds(counts: Sequence[Optional[int]]) -> Optional[int]:
    """Upper median of per-seed round counts; an unreached seed counts as infinite."""

    ordered = sorted(counts, key=lambda n: float("inf") if n is None else n)
    return ordered[len(ordered) // 2]


def simulate_sweep(cfg: ScenarioConfig, data: TrainingData, profiles: Sequence[DeviceProfile],
                   fit: GapFit, show_progress: bool = False,
                   extra_levels: Sequence[int] = ()) -> List[Dict[str, Any]]:
    """
    Simulated time to an epsilon gap for every level of the sweep grid.

    Training stops at the first round with F(w^(n)) - Z <= epsilon. Every
    level runs the same sweep seeds and keeps the median round count, so
    levels differ only in their quantization noise. The rounds do not
    depend on the bandwidth split, so each level is timed under both the
    optimal and the equal split from the same runs.

    Args:
        cfg: Scenario configuration.
        data: Device shards.
        profiles: Device profiles for the timing.
        fit: Gap fit giving Z and the predicted round counts.
        show_progress: Draw a progress bar over levels.
        extra_levels: Levels added to cfg.sweep_levels, e.g. around q*.

    Returns:
        One row per level in ascending q; times are None when the median
        seed never reached the gap.
    """

    net: NetworkConfig = cfg.network()
    seeds = sweep_seeds(cfg)
    target = fit.Z + cfg.epsilon
    grid = sorted({int(q) for q in (*cfg.sweep_levels, *extra_levels) if int(q) >= 2})
    rows: List[Dict[str, Any]] = []

    for q in tqdm(grid, desc="sweep", leave=False, disable=not show_progress):
        counts = [
            rounds_to_gap(run_feel(data.shards, q, cfg.sweep_max_rounds, _schedule(cfg),
                                   cfg.batch_size, cfg.regularization, seed, target_loss=target),
                          fit.Z, cfg.epsilon)
            for seed in seeds
        ]
        rounds = median_rounds(counts)

        optimal = optimal_bandwidth_plan(profiles, net, fit, cfg.epsilon, q)
        equal = equal_bandwidth_plan(profiles, net, fit, cfg.epsilon, q)

        rows.append({
            "q": q,
            "rounds": rounds,
            "seeds_reached": sum(n is not None for n in counts),
            "T_d_optimal_s": optimal.round_deadline_s,
            "T_optimal_s": None if rounds is None else rounds * optimal.round_deadline_s,
            "T_d_equal_s": equal.round_deadline_s,
            "T_equal_s": None if rounds is None else rounds * equal.round_deadline_s,
            "N_eps_predicted": optimal.predicted_rounds,
            "T_predicted_s": optimal.predicted_total_s,
        })
        if rounds is None:
            logger.warning("q=%d did not reach the gap within %d rounds", q, cfg.sweep_max_rounds)
        else:
            logger.info("q=%d reached the gap after a median of %d rounds", q, rounds)

    return rows


def simulated_argmin(rows: Sequence[Dict[str, Any]]) -> Optional[int]:
    """Level with the smallest simulated time under the optimal split."""

    reached = [row for row in rows if row["T_optimal_s"] is not None]
    if not reached:
        return None

    return min(reached, key=lambda row: (row["T_optimal_s"], row["q"]))["q"]


class _Stopwatch:
    def __init__(self, timing: Dict[str, float], name: str) -> None:
        self.timing = timing
        self.name = name

    def __enter__(self) -> None:
        self.start = time.perf_counter()

    def __exit__(self, *exc: Any) -> None:
        self.timing[self.name] = time.perf_counter() - self.start


def run_pipeline(cfg: ScenarioConfig, artifact: Optional[RunArtifact] = None,
                 show_progress: bool = False, with_sweep: bool = True) -> RunArtifact:
    """
    Run every stage in order and collect the results.

    Args:
        cfg: Scenario configuration.
        artifact: Artifact to fill in; pass one to keep partial results when
            a stage raises.
        show_progress: Draw progress bars for training loops.
        with_sweep: Also run the simulated sweep, with q* and its two
            neighbours added to the sweep levels.

    Returns:
        The filled-in RunArtifact.
    """

    artifact = artifact if artifact is not None else RunArtifact(cfg)
    timing = artifact.timing

    try:
        with _Stopwatch(timing, "scenario_s"):
            artifact.profiles, artifact.placements = sample_scenario(cfg)

        with _Stopwatch(timing, "data_s"):
            data = prepare_data(cfg)

        with _Stopwatch(timing, "probes_s"):
            probes = run_probes(cfg, data, show_progress)
            artifact.traces = list(probes)

        with _Stopwatch(timing, "fit_s"):
            artifact.fit = fit_probes(cfg, probes)

        with _Stopwatch(timing, "checks_s"):
            artifact.check_traces = run_checks(cfg, data, show_progress)

        with _Stopwatch(timing, "optimize_s"):
            artifact.plan = optimize_plan(cfg, artifact.profiles, artifact.fit)

        with _Stopwatch(timing, "oracle_s"):
            artifact.oracle_rows, artifact.oracle_best = run_oracle(cfg, artifact.profiles,
                                                                    artifact.fit)

        if with_sweep:
            with _Stopwatch(timing, "sweep_s"):
                neighbours = (artifact.plan.q - 1, artifact.plan.q, artifact.plan.q + 1)
                artifact.sweep = simulate_sweep(cfg, data, artifact.profiles, artifact.fit,
                                                show_progress, extra_levels=neighbours)
    except Exception as e:
        artifact.failure = f"{type(e).__name__}: {e}"
        raise

    return artifact


def rate_check(profiles: Sequence[DeviceProfile], net: NetworkConfig) -> List[Dict[str, float]]:
    """Closed-form against quadrature ergodic rate for each device at an equal split."""

    share = net.total_bandwidth_hz / len(profiles)
    rows = []
    for i, profile in enumerate(profiles):
        theta = profile.theta(net.noise_psd_w_per_hz)
        closed = float(ergodic_rate(share, theta))
        numeric = ergodic_rate_quadrature(share, theta)
        rows.append({"device": i, "b_hz": share, "closed_form_bps": closed,
                     "quadrature_bps": numeric,
                     "relative_error": abs(closed - numeric) / numeric})

    return rows
