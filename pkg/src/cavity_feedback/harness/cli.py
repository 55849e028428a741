"""Command-line client.

By default requests go to the service in-process; ``--server URL`` targets a running
instance instead (``uvicorn cavity_feedback.harness.service:app``). Exit codes:
0 success, 2 configuration error, 3 numerical failure, 4 check failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path
from typing import Any

import httpx

from ..model import ParameterError, load_config
from .manifest import MANIFEST_NAME, RunManifest, utc_now, verify, write_outputs

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CHECK = 0, 2, 3, 4
SUBCOMMANDS = ("decay", "sweep-tm", "sweep-heating", "budget", "hmm", "check")

log = logging.getLogger("cavity_feedback")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--shots", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", type=Path, default=Path("out"))
    p.add_argument("--preset", choices=("idle", "repeated"))
    p.add_argument("--server", help="base URL of a running service")
    p.add_argument("--plot", action="store_true", help="also draw SVG line charts (needs matplotlib)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cavity-feedback", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        _common(p)
        if name == "check":
            p.add_argument("--simulate", action="store_true", help="also run the Monte Carlo checks")
    p = sub.add_parser("rerun", help="replay the request stored in a manifest")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--workers", type=int)
    p.add_argument("--server")
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


def request_from_args(args: argparse.Namespace) -> dict[str, Any]:
    """Merge config file and flags into a request body; flags win."""
    config = load_config(args.config) if args.config else {}
    block = config.get(args.command) or config.get(args.command.replace("-", "_")) or {}
    if not isinstance(block, dict):
        raise ParameterError("command block is not a mapping", args.command, block)
    body: dict[str, Any] = {
        "preset": args.preset or config.get("preset"),
        "params": config.get("params") or {},
        "seed": args.seed if args.seed is not None else config.get("seed", 0),
        "shots": args.shots if args.shots is not None else config.get("shots"),
        "workers": args.workers if args.workers is not None else config.get("workers", 1),
        "options": dict(block),
    }
    if getattr(args, "simulate", False):
        body["options"]["simulate"] = True
    if body["preset"] is None and not body["params"]:
        body["preset"] = "repeated"
    return body


class Client:
    def __init__(self, server: str | None):
        if server:
            self._http = httpx.Client(base_url=server, timeout=None)
        else:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                from fastapi.testclient import TestClient

            from .service import app
            self._http = TestClient(app)

    def run(self, command: str, body: dict) -> httpx.Response:
        return self._http.post(f"/run/{command}", json=body)


def execute(command: str, body: dict, out_dir: Path, server: str | None = None, plot: bool = False) -> int:
    manifest = RunManifest(command=command, version="", request=body, resolved_params={},
                           seed=int(body.get("seed") or 0), started=utc_now())
    response = Client(server).run(command, body)
    data = response.json()
    if response.status_code in (400, 422):
        message = data.get("message") if isinstance(data, dict) and "message" in data else data.get("detail")
        log.error("configuration error: %s", message)
        return EXIT_CONFIG
    if "files" not in data:
        log.error("numerical failure: %s", data.get("message"))
        code = EXIT_NUMERICAL
        manifest.status, manifest.error = "numerical_failure", data.get("message")
        files = {}
    else:
        code = {"ok": EXIT_OK, "check_failed": EXIT_CHECK}.get(data["status"], EXIT_NUMERICAL)
        manifest.version = data["version"]
        manifest.request = data["request"]
        manifest.resolved_params = data["resolved_params"]
        manifest.status, manifest.error = data["status"], data.get("error")
        files = data["files"]
        if manifest.error:
            log.error("numerical failure: %s (partial results written)", manifest.error)
    manifest.files = write_outputs(out_dir, files)
    manifest.finished = utc_now()
    manifest.exit_code = code
    (out_dir / MANIFEST_NAME).write_text(manifest.to_json(), encoding="utf-8")
    for name in sorted(files):
        log.info("wrote %s", out_dir / name)
    if plot and files:
        try:
            from .plots import render
        except ImportError:
            log.warning("matplotlib is not installed; skipping plots")
        else:
            for path in render(out_dir, files):
                log.info("wrote %s", path)
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        if args.command == "rerun":
            manifest = RunManifest.load(args.manifest)
            body = dict(manifest.request)
            if args.workers is not None:
                body["workers"] = args.workers
            code = execute(manifest.command, body, args.out, args.server)
            if code == EXIT_OK:
                mismatched = [n for n, ok in verify(args.out, manifest).items() if not ok]
                if mismatched:
                    log.warning("outputs differ from manifest: %s", ", ".join(mismatched))
            return code
        body = request_from_args(args)
    except (ParameterError, OSError, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    return execute(args.command, body, args.out, args.server, args.plot)


if __name__ == "__main__":
    sys.exit(main())
