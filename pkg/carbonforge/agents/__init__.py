"""
Carbonforge Agents

Budgeted self-play between an LCA critic and a document retriever.
"""

from .abstraction import build_data_abstraction
from .backends import FixtureBackend, HttpBackend, QueryBackend
from .orchestrator import AgentTranscript, Budget, critique, replay_transcript, run_selfplay

__all__ = [
    "build_data_abstraction",
    "FixtureBackend",
    "HttpBackend",
    "QueryBackend",
    "AgentTranscript",
    "Budget",
    "critique",
    "replay_transcript",
    "run_selfplay",
]
