"""Scripted gaze-reasoning pipeline: scenarios, marking, prompts, backends.

The pipeline consumes scenario files (pre-annotated interaction streams),
marks candidate instances, synthesizes a prompt per cycle, queries a
pluggable language-model backend, parses the selected mark, and localizes
it to a 3D point in the robot base frame. `replay` scores scenario runs
with the two-cycle correctness window.
"""

from .scenario import (
    SCENARIO_SCHEMA,
    SCENARIO_VERSION,
    CameraIntrinsics,
    Instance,
    RigidTransform,
    Scenario,
    ScenarioCycle,
    load_scenario,
    load_scenario_dir,
)
from .pipeline import (
    EmptySceneError,
    GazeTargetRecord,
    MarkedScene,
    MemoryBuffer,
    ResponseParseError,
    localize,
    mark_scene,
    parse_response,
    query_backend,
    step_cycle,
    synthesize_prompt,
)
from .backends import OracleBackend, RemoteBackend, ScriptedBackend
from .replay import GroupRow, ReplayResult, replay_evaluate, replay_scenario

__all__ = [
    "SCENARIO_SCHEMA", "SCENARIO_VERSION", "CameraIntrinsics", "Instance",
    "RigidTransform", "Scenario", "ScenarioCycle", "load_scenario",
    "load_scenario_dir", "EmptySceneError", "GazeTargetRecord", "MarkedScene",
    "MemoryBuffer", "ResponseParseError", "localize", "mark_scene",
    "parse_response", "query_backend", "step_cycle", "synthesize_prompt",
    "OracleBackend", "RemoteBackend", "ScriptedBackend", "GroupRow",
    "ReplayResult", "replay_evaluate", "replay_scenario",
]
