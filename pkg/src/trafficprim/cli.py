"""Command-line client for the pipeline service.

Every subcommand builds one HTTP request. By default the request is served by
an in-process instance of the service (no daemon needed); set the
``TRAFFICPRIM_SERVER`` environment variable to a base URL to target a running
server instead. Service errors come back as ``{"error": <class>, "message"}``
and are mapped to exit codes: 0 success, 2 usage, 3 input/parse, 4
numeric/inference, 5 catalog integrity.

stdout carries data and reports only; diagnostics go to stderr.
"""
from __future__ import annotations

import argparse
import asyncio
import json
import os
import sys

import httpx

from .errors import EXIT_CODE_BY_CLASS


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # one-line machine-parsable stderr
        print(f"usage: {message}", file=sys.stderr)
        raise SystemExit(2)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trafficprim", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse, resample and store one bag")
    p.add_argument("--manifest", required=True, metavar="PATH")
    p.add_argument("--catalog", required=True, metavar="DIR")
    p.add_argument("--behavior", required=True, metavar="NAME")

    p = sub.add_parser("segment", help="segment a stored bag into primitives")
    p.add_argument("--catalog", required=True, metavar="DIR")
    p.add_argument("--bag", required=True, metavar="ID")
    p.add_argument("--behavior", required=True, metavar="NAME")
    p.add_argument("--config", default=None, metavar="PATH")
    p.add_argument("--seed", type=int, default=None, metavar="N")

    p = sub.add_parser("unify", help="filter/merge primitives and compose scenarios")
    p.add_argument("--catalog", required=True, metavar="DIR")
    p.add_argument("--behavior", required=True, metavar="NAME")
    p.add_argument("--config", default=None, metavar="PATH")

    p = sub.add_parser("query", help="fetch every window of a scenario")
    p.add_argument("--catalog", required=True, metavar="DIR")
    p.add_argument("--scenario", required=True, metavar="NAME")
    p.add_argument("--channels", required=True, metavar="LIST",
                   help="comma-separated topic.column selectors")
    p.add_argument("--out", default=None, metavar="DIR")

    p = sub.add_parser("synth", help="write a synthetic maneuver bag")
    p.add_argument("--states", type=int, default=5, metavar="K")
    p.add_argument("--dims", type=int, default=4, metavar="D")
    p.add_argument("--frames", type=int, default=1180, metavar="T")
    p.add_argument("--seed", type=int, default=0, metavar="N")
    p.add_argument("--out", required=True, metavar="DIR")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)

    return parser


def _request(path: str, payload: dict) -> httpx.Response:
    server = os.environ.get("TRAFFICPRIM_SERVER")
    if server:
        with httpx.Client(base_url=server, timeout=None) as client:
            return client.post(path, json=payload)

    async def in_process() -> httpx.Response:
        from .service.app import create_app

        transport = httpx.ASGITransport(app=create_app())
        async with httpx.AsyncClient(
            transport=transport, base_url="http://trafficprim.local", timeout=None
        ) as client:
            return await client.post(path, json=payload)

    return asyncio.run(in_process())


def _run(path: str, payload: dict) -> dict:
    response = _request(path, payload)
    if response.status_code == 200:
        return response.json()
    try:
        body = response.json()
        error_class = body.get("error", "error")
        message = body.get("message", response.text)
    except (json.JSONDecodeError, ValueError):
        error_class, message = "error", response.text
    print(f"{error_class}: {message}", file=sys.stderr)
    raise SystemExit(EXIT_CODE_BY_CLASS.get(error_class, 1))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "ingest":
        body = _run("/ingest", {
            "manifest_path": args.manifest,
            "catalog_dir": args.catalog,
            "behavior": args.behavior,
        })
        print(body["bag_id"])

    elif args.command == "segment":
        body = _run("/segment", {
            "catalog_dir": args.catalog,
            "bag_id": args.bag,
            "behavior": args.behavior,
            "config_path": args.config,
            "seed": args.seed,
        })
        print(f"used_states {body['used_states']}")
        for label in sorted(body["frame_counts"], key=int):
            print(f"primitive {label} frames {body['frame_counts'][label]}")
        print(f"segmentation {body['segmentation_csv']}")

    elif args.command == "unify":
        body = _run("/unify", {
            "catalog_dir": args.catalog,
            "behavior": args.behavior,
            "config_path": args.config,
        })
        for key in ("bags", "primitives_before", "primitives_after",
                    "scenarios", "scenario_instances"):
            print(f"{key} {body[key]}")

    elif args.command == "query":
        channels = [c for c in args.channels.split(",") if c]
        body = _run("/query", {
            "catalog_dir": args.catalog,
            "scenario": args.scenario,
            "channels": channels,
            "out_dir": args.out,
        })
        print(f"count {body['count']}")
        for window in body["windows"]:
            suffix = f" {window['file']}" if window["file"] else ""
            print(
                f"window {window['bag_id']} {window['start_frame']} "
                f"{window['end_frame']}{suffix}"
            )

    elif args.command == "synth":
        body = _run("/synth", {
            "states": args.states,
            "dims": args.dims,
            "frames": args.frames,
            "seed": args.seed,
            "out_dir": args.out,
        })
        print(body["manifest"])
        print(body["truth"])

    elif args.command == "serve":
        try:
            import uvicorn
        except ImportError:
            print("usage: the 'serve' command needs uvicorn installed", file=sys.stderr)
            return 2
        from .service.app import create_app

        uvicorn.run(create_app(), host=args.host, port=args.port)

    return 0


def entrypoint() -> None:
    raise SystemExit(main())


if __name__ == "__main__":
    entrypoint()
