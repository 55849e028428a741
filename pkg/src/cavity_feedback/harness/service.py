"""FastAPI application exposing the commands over HTTP.

``POST /run/{command}`` takes a :class:`RunRequest` and returns every output file in
the body; the client decides where files land and writes the manifest.
"""
from __future__ import annotations

from importlib.metadata import PackageNotFoundError, version

from fastapi import FastAPI
from fastapi.responses import JSONResponse

from ..model import ParameterError, preset, params_from_mapping
from ..hmm import ZeroLikelihoodError
from .commands import COMMANDS, ConfigError, NumericalFailure, clean
from .schemas import CommandName, ErrorBody, RunRequest, RunResponse

try:
    VERSION = version("cavity-feedback")
except PackageNotFoundError:
    VERSION = "0+unknown"

app = FastAPI(title="cavity-feedback", version=VERSION)


def resolve(request: RunRequest):
    """Resolved parameters, canonicalized through config units so a replayed request matches exactly."""
    base = preset(request.preset) if request.preset else None
    return params_from_mapping(params_from_mapping(request.params, base=base).to_config())


def _error(status: int, kind: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content=ErrorBody(kind=kind, message=message).model_dump())


@app.get("/health")
def health() -> dict:
    return {"status": "ok", "version": VERSION}


@app.get("/commands")
def commands() -> list[str]:
    return list(COMMANDS)


@app.post("/run/{command}", response_model=RunResponse, responses={400: {"model": ErrorBody}})
def run(command: CommandName, request: RunRequest):
    try:
        params = resolve(request)
    except (ParameterError, KeyError, TypeError) as exc:
        return _error(400, "config", str(exc))
    resolved = request.model_copy(update={"preset": None, "params": params.to_config()})
    body = dict(command=command, version=VERSION, request=resolved, resolved_params=params.to_config())
    try:
        out = COMMANDS[command](params, request.seed, request.shots, request.workers, request.options)
    except ZeroLikelihoodError as exc:
        return _error(500, "numerical", str(exc))
    except (ParameterError, ConfigError) as exc:
        return _error(400, "config", str(exc))
    except NumericalFailure as exc:
        partial = exc.partial
        return JSONResponse(status_code=500, content=RunResponse(
            **body, status="numerical_failure", files=partial.files if partial else {},
            report=clean(partial.report) if partial else {}, error=str(exc)).model_dump(mode="json"))
    except (ArithmeticError, FloatingPointError) as exc:
        return _error(500, "numerical", str(exc))
    status = "check_failed" if out.passed is False else "ok"
    return RunResponse(**body, status=status, files=out.files, report=clean(out.report))
