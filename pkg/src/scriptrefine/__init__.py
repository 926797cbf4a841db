"""Multi-agent iterative refinement of narrative scripts.

A script is reviewed globally and scene by scene, revised by specialised
editors, and scored after every pass; the loop first reworks the storyline,
then locks it and refines details until the score stops improving.
"""

from .evaluation import (
    DimensionScores,
    PairwiseResult,
    ScriptEvaluation,
    compare_scripts_calibrated,
    evaluate_script,
)
from .gateway import (
    AgentRole,
    BackendConfig,
    FixtureBackend,
    FixtureSet,
    Gateway,
    LiveBackend,
    extract_json,
)
from .fixtures import load_sample_script
from .orchestrator import RefineConfig, RefineError, RefineTrace, refine
from .script import Scene, Script, parse_script, serialize_script

__version__ = "0.1.0"

__all__ = [
    "AgentRole",
    "BackendConfig",
    "DimensionScores",
    "FixtureBackend",
    "FixtureSet",
    "Gateway",
    "LiveBackend",
    "PairwiseResult",
    "RefineConfig",
    "RefineError",
    "RefineTrace",
    "Scene",
    "Script",
    "ScriptEvaluation",
    "compare_scripts_calibrated",
    "evaluate_script",
    "extract_json",
    "load_sample_script",
    "parse_script",
    "refine",
    "serialize_script",
]
