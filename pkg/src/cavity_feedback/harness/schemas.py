"""Request and response bodies of the HTTP service."""
from __future__ import annotations

from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, Field

CommandName = Literal["decay", "sweep-tm", "sweep-heating", "budget", "hmm", "check"]
PresetName = Literal["idle", "repeated"]


class RunRequest(BaseModel):
    """One command invocation. ``params`` uses config-file units (chi as chi/2pi in Hz)."""

    model_config = ConfigDict(extra="forbid")

    preset: PresetName | None = None
    params: dict[str, float] = Field(default_factory=dict)
    seed: int = Field(0, ge=0)
    shots: int | None = Field(None, ge=1)
    workers: int = Field(1, ge=1)
    options: dict[str, Any] = Field(default_factory=dict)


class RunResponse(BaseModel):
    command: CommandName
    version: str
    status: Literal["ok", "check_failed", "numerical_failure"]
    resolved_params: dict[str, float]
    request: RunRequest
    files: dict[str, str]
    report: dict[str, Any]
    error: str | None = None


class ErrorBody(BaseModel):
    kind: Literal["config", "numerical"]
    message: str
