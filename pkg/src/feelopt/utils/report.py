"""
Writing a run to disk.

Tables go out as comma-separated CSV with a header row (pandas), documents
as indented UTF-8 JSON. The same artifact always produces the same bytes;
wall-clock timing lives in its own file so it never disturbs that.
"""

import json
import logging
import os
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from ..core.fitting import GapFit, fitted_losses
from ..core.optimizer import AllocationPlan
from ..core.pipeline import RunArtifact, simulated_argmin
from ..core.trainer import LossTrace

logger = logging.getLogger(__name__)


def trace_filename(trace: LossTrace) -> str:
    level = "none" if trace.q is None else str(trace.q)
    return f"trace_q{level}_seed{trace.seed}.csv"


def trace_frame(trace: LossTrace) -> pd.DataFrame:
    frame = pd.DataFrame({"round": np.arange(len(trace.losses)), "loss": trace.losses})
    if trace.accuracy is not None:
        frame["accuracy"] = trace.accuracy

    return frame


def fit_curve_frame(fit: GapFit, traces: List[LossTrace]) -> pd.DataFrame:
    """Measured loss next to Z + U(n) for every traced level."""

    frames = []
    for trace in traces:
        measured = trace.fit_window(fit.N_tilde)
        frames.append(pd.DataFrame({
            "q": trace.q,
            "round": np.arange(1, measured.size + 1),
            "measured": measured,
            "fitted": fitted_losses(fit, trace.q, measured.size),
        }))

    return pd.concat(frames, ignore_index=True)


def oracle_frame(rows: List[AllocationPlan]) -> pd.DataFrame:
    return pd.DataFrame({
        "q": [plan.q for plan in rows],
        "T_d": [plan.round_deadline_s for plan in rows],
        "N_eps": [plan.predicted_rounds for plan in rows],
        "T_total": [plan.predicted_total_s for plan in rows],
    })


def devices_frame(artifact: RunArtifact) -> pd.DataFrame:
    frame = pd.DataFrame({
        "device": np.arange(len(artifact.placements)),
        "distance_m": [p.distance_m for p in artifact.placements],
        "shadowing_db": [p.shadowing_db for p in artifact.placements],
        "cpu_hz": [p.cpu_hz for p in artifact.placements],
        "large_scale_gain": [p.large_scale_gain for p in artifact.placements],
    })
    if artifact.plan is not None:
        frame["bandwidth_hz"] = artifact.plan.bandwidths_hz

    return frame


def plan_document(plan: AllocationPlan) -> Dict[str, Any]:
    document = plan.to_dict()
    document["history"] = [[float(q), float(t)] for q, t in plan.history]
    return document


def build_summary(artifact: RunArtifact) -> str:
    """Plain-text digest of the plan, the fit and the per-device split."""

    cfg = artifact.config
    lines = [f"seed: {cfg.seed}", f"devices: {cfg.num_devices}", f"dimension: {cfg.dimension}",
             f"epsilon: {cfg.epsilon}"]

    if artifact.fit is not None:
        fit = artifact.fit
        lines.append(f"fit: A={fit.A:.6g} B={fit.B:.6g} C={fit.C:.6g} D={fit.D:.6g} Z={fit.Z:.6g}")

    plan = artifact.plan
    if plan is not None:
        lines += [
            f"q*: {plan.q}",
            f"T_d: {plan.round_deadline_s:.6f} s",
            f"N_eps: {plan.predicted_rounds}",
            f"T: {plan.predicted_total_s:.6f} s",
            "devices (f_k, b_k):",
        ]
        for i, (profile, bandwidth) in enumerate(zip(artifact.profiles, plan.bandwidths_hz)):
            lines.append(f"  {i}: f={profile.cpu_hz:.6g} Hz b={bandwidth:.6g} Hz")

    if artifact.oracle_best is not None:
        lines.append(f"oracle q: {artifact.oracle_best.q} "
                     f"T: {artifact.oracle_best.predicted_total_s:.6f} s")

    if artifact.sweep:
        argmin = simulated_argmin(artifact.sweep)
        lines.append(f"simulated argmin q: {argmin if argmin is not None else 'not reached'}")

    if artifact.failure is not None:
        lines.append(f"failed: {artifact.failure}")

    return "\n".join(lines) + "\n"


def _write_json(path: str, document: Any) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(document, f, indent=2)
        f.write("\n")


def _write_text(path: str, text: str) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text)


def _write_frame(path: str, frame: pd.DataFrame) -> None:
    frame.to_csv(path, index=False, encoding='utf-8', lineterminator="\n")


def emit_report(artifact: RunArtifact, out_dir: str) -> List[str]:
    """
    Write every available part of the artifact into out_dir.

    Existing files are overwritten, so re-running on the same artifact is
    idempotent.

    Args:
        artifact: The run to persist; stages that did not complete are skipped.
        out_dir: Target directory, created when missing.

    Returns:
        Paths of the files written, in writing order.
    """

    outputs: List[tuple] = [("config.json", _write_json, artifact.config.to_dict())]

    for trace in artifact.traces + artifact.check_traces:
        outputs.append((trace_filename(trace), _write_frame, trace_frame(trace)))

    if artifact.fit is not None:
        outputs.append(("fit.json", _write_json, artifact.fit.to_dict()))
        traced = [t for t in artifact.traces + artifact.check_traces if t.q is not None]
        if traced:
            outputs.append(("fit_curves.csv", _write_frame, fit_curve_frame(artifact.fit, traced)))

    if artifact.plan is not None:
        outputs.append(("plan.json", _write_json, plan_document(artifact.plan)))

    if artifact.placements:
        outputs.append(("devices.csv", _write_frame, devices_frame(artifact)))

    if artifact.oracle_rows:
        outputs.append(("oracle.csv", _write_frame, oracle_frame(artifact.oracle_rows)))

    if artifact.sweep:
        outputs.append(("sweep.csv", _write_frame, pd.DataFrame(artifact.sweep)))

    outputs.append(("summary.txt", _write_text, build_summary(artifact)))
    outputs.append(("timing.json", _write_json, {k: float(v) for k, v in artifact.timing.items()}))

    written: List[str] = []
    path: Optional[str] = None
    try:
        path = out_dir
        os.makedirs(out_dir, exist_ok=True)
        for name, writer, payload in outputs:
            path = os.path.join(out_dir, name)
            writer(path, payload)
            written.append(path)
    except OSError as e:
        raise OSError(f"Could not write {path}: {e}")

    logger.info("wrote %d files to %s", len(written), out_dir)
    return written
