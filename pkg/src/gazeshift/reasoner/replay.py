"""Replay evaluation: run scenarios through the pipeline and score them.

A trial is correct iff the selected instance equals the expected target
at cue-onset + 1 or cue-onset + 2 cycles. Results aggregate per
interaction-regularity group (H1..H4) into a success table.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

from .pipeline import MemoryBuffer, step_cycle
from .scenario import REGULARITIES, Scenario

CORRECTNESS_WINDOW = (1, 2)  # offsets after cue onset that count


@dataclass(frozen=True)
class ReplayResult:
    scenario_id: str
    regularity: str
    records: tuple  # one GazeTargetRecord per cycle
    correct: bool


@dataclass(frozen=True)
class GroupRow:
    regularity: str
    clips: int
    correct: int

    @property
    def success_rate(self) -> float:
        return 100.0 * self.correct / self.clips if self.clips else 0.0


def replay_scenario(scenario: Scenario, backend, history_k: int = 10,
                    log_fh=None) -> ReplayResult:
    """Run every cycle in order and apply the two-cycle correctness rule."""
    buffer = MemoryBuffer(k=history_k)
    records = []
    for cycle in scenario.cycles:
        t0 = time.monotonic()
        record = step_cycle(cycle, buffer, backend)
        records.append(record)
        if log_fh is not None:
            log_fh.write(json.dumps({
                "scenario": scenario.scenario_id,
                "cycle": cycle.index,
                "mark": record.mark,
                "instance": record.instance_id,
                "category": record.category,
                "point_2d": record.point_2d,
                "point_3d": record.point_3d,
                "held": record.held,
                "face_fallback": record.face_fallback,
                "elapsed_s": time.monotonic() - t0,
            }) + "\n")
    cue = scenario.cue_cycle()
    correct = False
    if cue is not None and cue.expected_instance is not None:
        for offset in CORRECTNESS_WINDOW:
            t = cue.index + offset
            if t < len(records) and records[t].instance_id == cue.expected_instance \
                    and not records[t].held:
                correct = True
                break
    return ReplayResult(scenario.scenario_id, scenario.regularity,
                        tuple(records), correct)


def replay_evaluate(scenarios, backend_factory, history_k: int = 10,
                    log_path=None):
    """Score a scenario set; returns (group rows, results, excluded ids).

    ``backend_factory(scenario)`` builds a fresh backend per scenario (a
    scripted backend is bound to one scenario's canned responses).
    Scenarios without evaluation metadata are excluded with a warning.
    """
    results = []
    excluded = []
    log_fh = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for scenario in scenarios:
            if not scenario.has_evaluation_metadata():
                warnings.warn(f"scenario {scenario.scenario_id} has no cue/expected "
                              "target; excluded from scoring")
                excluded.append(scenario.scenario_id)
                continue
            results.append(replay_scenario(scenario, backend_factory(scenario),
                                           history_k=history_k, log_fh=log_fh))
    finally:
        if log_fh is not None:
            log_fh.close()
    rows = []
    for group in REGULARITIES:
        group_results = [r for r in results if r.regularity == group]
        if group_results:
            rows.append(GroupRow(group, len(group_results),
                                 sum(r.correct for r in group_results)))
    return rows, results, excluded


def write_success_table(rows, path) -> None:
    """CSV with the success-table schema: regularity, clips, correct, rate."""
    lines = ["regularity,clips,correct,success_rate"]
    for row in rows:
        lines.append(f"{row.regularity},{row.clips},{row.correct},{row.success_rate:.1f}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
