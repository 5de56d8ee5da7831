"""Command line entry points: run scenarios, scaling sweeps, frame dumps, live serving."""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click

from . import wire
from .node import demo_scenario, run_scenario, scale_run
from .runtime import DEMO_KEY


def _default_outdir() -> str:
    return os.environ.get("MEDEX_OUTPUT_DIR", "medex-out")


def _load_scenario(source: str) -> dict:
    if source == "demo":
        return demo_scenario()
    return json.loads(Path(source).read_text())


@click.group()
def main():
    """Message-exchange middleware simulator for distributed best-practice automata."""


@main.command()
@click.argument("scenario")
@click.option("-o", "--outdir", default=None, help="Output directory (env MEDEX_OUTPUT_DIR, default medex-out)")
@click.option("--duration", type=float, default=None, help="Override scenario duration (virtual seconds)")
def run(scenario, outdir, duration):
    """Run SCENARIO (a JSON file, or 'demo') on the virtual clock and write reports."""
    doc = _load_scenario(scenario)
    if duration is not None:
        doc["duration_s"] = duration
    out = Path(outdir or _default_outdir())
    cluster, report = run_scenario(doc, outdir=out)
    click.echo(f"scenario {report.scenario_name!r}: {report.trace_records} trace records")
    for req in report.requirements:
        mark = "PASS" if req["passed"] else "FAIL"
        click.echo(f"  [{mark}] {req['name']} ({req['detail']})")
    click.echo(f"outputs in {out}/")
    if not all(r["passed"] for r in report.requirements):
        sys.exit(1)


@main.command()
@click.option("-o", "--outdir", default=None)
@click.option("--n-max", type=int, default=10, show_default=True)
@click.option("--rates", default="0.1,1,5", show_default=True, help="Poll periods in seconds, comma separated")
@click.option("--duration", type=float, default=60.0, show_default=True)
def scale(outdir, n_max, rates, duration):
    """Sweep automaton count against polling rates and fit the work-unit growth."""
    periods = tuple(float(r) for r in rates.split(","))
    out = Path(outdir or _default_outdir())
    result = scale_run(range(0, n_max + 1), periods, duration, outdir=out)
    for period, fit in result["fits"].items():
        click.echo(
            f"poll {period}s: slope={fit['slope']:.1f} work-units/automaton, "
            f"intercept={fit['intercept']:.1f}, R^2={fit['r2']:.4f}"
        )
    click.echo(f"outputs in {out}/")


@main.command()
@click.argument("hexframe")
@click.option("--key", "key_hex", default=None, help="AES key (hex) to decrypt the payload preview")
def inspect(hexframe, key_hex):
    """Render a hex-encoded frame as annotated text."""
    data = bytes.fromhex(hexframe.replace(" ", "").replace(":", ""))
    key = bytes.fromhex(key_hex) if key_hex else DEMO_KEY
    click.echo(wire.dump_frame(data, key))


@main.command()
@click.argument("scenario", default="demo")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8787, show_default=True)
@click.option("--speed", type=float, default=1.0, show_default=True, help="Virtual seconds per wall second")
@click.option("--no-script", is_flag=True, help="Drop the scenario's scripted events (operator drives everything)")
def serve(scenario, host, port, speed, no_script):
    """Run SCENARIO in real time and expose the control API plus the console."""
    from .server import serve as _serve

    doc = _load_scenario(scenario)
    doc.setdefault("duration_s", 10 ** 9)  # a served node runs until stopped
    if no_script:
        doc["events"] = []
    click.echo(f"serving {doc.get('name', scenario)!r} on http://{host}:{port}/ (speed x{speed})")
    _serve(doc, host=host, port=port, speed=speed)


if __name__ == "__main__":
    main()
