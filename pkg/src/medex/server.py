"""Live node: wall-clock driver plus the HTTP/WebSocket control API.

The API never mutates state behind the protocol's back: injections publish
the same frames a monitor would, link toggles and kills go through the same
cluster operations the scenario script uses. Every trace record is available
both over the WebSocket stream and a cursor-based polling endpoint, so a
console can always rebuild its view from snapshot plus stream.
"""

from __future__ import annotations

import asyncio
import os
import threading
import time
from contextlib import asynccontextmanager
from pathlib import Path

from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.responses import HTMLResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .node import Cluster, ScenarioError
from .registry import AutomatonAgent, ConfigServer, Registrar
from .transport import RmeGateway


class NodeServer:
    """Runs a cluster in real time: virtual seconds track wall seconds * speed."""

    def __init__(self, scenario: dict, speed: float = 1.0, tick_s: float = 0.02):
        self.cluster = Cluster(scenario, mode="real-time")
        self.speed = speed
        self.tick_s = tick_s
        self.lock = threading.RLock()
        self._thread: threading.Thread | None = None
        self._running = False
        self._t0: float | None = None

    def start(self) -> None:
        with self.lock:
            self.cluster.start()
        self._running = True
        self._t0 = time.monotonic()
        self._thread = threading.Thread(target=self._drive, name="medex-driver", daemon=True)
        self._thread.start()

    def _drive(self) -> None:
        last_cpu = time.monotonic()
        while self._running:
            target = (time.monotonic() - self._t0) * self.speed
            with self.lock:
                if target > self.cluster.clock.now:
                    self.cluster.clock.advance(target)
                if time.monotonic() - last_cpu >= 5.0:
                    # real CPU samples complement the deterministic work units
                    last_cpu = time.monotonic()
                    t = os.times()
                    self.cluster.metrics.mark(
                        self.cluster.clock.now, "cpu_sample",
                        cpu_seconds=round(t.user + t.system, 3),
                    )
            time.sleep(self.tick_s)

    def stop(self) -> None:
        self._running = False
        if self._thread:
            self._thread.join(timeout=2.0)

    # -- locked views ------------------------------------------------------------

    def state(self) -> dict:
        with self.lock:
            c = self.cluster
            comps = []
            for ep, comp in c.components.items():
                entry = {"endpoint": ep, "entity": comp.entity, "alive": comp.alive}
                if isinstance(comp, ConfigServer):
                    entry.update(kind="config_server", rank=comp.rank, active=comp.active)
                elif isinstance(comp, Registrar):
                    entry.update(kind="registrar", unit=comp.unit, registered=comp.registered)
                elif isinstance(comp, RmeGateway):
                    entry.update(kind="gateway")
                elif isinstance(comp, AutomatonAgent):
                    entry.update(kind="automaton", phase=comp.phase)
                comps.append(entry)
            links = [
                {"name": name, "up": not c.net.link_named(name).forced_down}
                for name in c._links
            ]
            return {
                "t": c.clock.now,
                "speed": self.speed,
                "automata": c.snapshots(),
                "components": comps,
                "links": links,
                "events_cursor": len(c.tracer.records),
            }

    def events_since(self, since: int, limit: int = 1000) -> dict:
        with self.lock:
            records = self.cluster.tracer.records
            chunk = records[since : since + limit]
            return {"next": since + len(chunk), "total": len(records), "events": chunk}


class InjectBody(BaseModel):
    entity: int
    unit: int
    measurement: str
    value: float


class CommandBody(BaseModel):
    entity: int
    unit: int
    command: str


class ConfirmBody(BaseModel):
    entity: int
    unit: int
    automaton: int = 1


class LinkBody(BaseModel):
    link: str
    up: bool


class ComponentBody(BaseModel):
    component: str


FRONTEND_DIST = Path(__file__).resolve().parents[2] / "frontend" / "dist"

_FALLBACK_PAGE = """<!doctype html>
<html><head><title>medex node</title></head>
<body style="font-family: system-ui; margin: 4em auto; max-width: 40em">
<h1>medex node</h1>
<p>The node is running. The operator console build was not found
(<code>frontend/dist</code>); use the JSON API under <code>/api/</code>.</p>
</body></html>"""


def create_app(server: NodeServer, frontend_dir: Path | None = None) -> FastAPI:
    subscribers: set[asyncio.Queue] = set()
    loop_holder: dict = {}

    def on_trace(rec: dict) -> None:
        loop = loop_holder.get("loop")
        if loop is None:
            return
        for q in list(subscribers):
            loop.call_soon_threadsafe(q.put_nowait, rec)

    server.cluster.tracer.subscribe(on_trace)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        loop_holder["loop"] = asyncio.get_running_loop()
        yield
        server.stop()

    app = FastAPI(title="medex control API", lifespan=lifespan)

    @app.get("/api/state")
    def get_state():
        return server.state()

    @app.get("/api/scenario")
    def get_scenario():
        return server.cluster.scenario

    @app.get("/api/events")
    def get_events(since: int = 0, limit: int = 1000):
        return server.events_since(since, limit)

    def _run(fn):
        try:
            with server.lock:
                return fn()
        except ScenarioError as e:
            raise HTTPException(status_code=400, detail=e.problems)

    @app.post("/api/inject")
    def inject(body: InjectBody):
        audit = _run(lambda: server.cluster.inject_vital(body.entity, body.unit, body.measurement, body.value))
        return {"audit_id": audit}

    @app.post("/api/command")
    def command(body: CommandBody):
        audit = _run(lambda: server.cluster.inject_command(body.entity, body.unit, body.command))
        return {"audit_id": audit}

    @app.post("/api/confirm")
    def confirm(body: ConfirmBody):
        def do():
            agent = server.cluster.agent_at(body.entity, body.unit, body.automaton)
            if agent is None or agent.instance is None:
                raise ScenarioError([f"no automaton at {body.entity}.{body.unit}.{body.automaton}"])
            return agent.confirm_current()

        return {"confirmed_uid": _run(do)}

    @app.post("/api/link")
    def link(body: LinkBody):
        _run(lambda: server.cluster.set_link(body.link, body.up))
        return {"link": body.link, "up": body.up}

    @app.post("/api/kill")
    def kill(body: ComponentBody):
        _run(lambda: server.cluster.kill(body.component))
        return {"killed": body.component}

    @app.post("/api/restart")
    def restart(body: ComponentBody):
        _run(lambda: server.cluster.restart(body.component))
        return {"restarted": body.component}

    @app.websocket("/api/stream")
    async def stream(ws: WebSocket):
        await ws.accept()
        q: asyncio.Queue = asyncio.Queue()
        subscribers.add(q)
        try:
            while True:
                rec = await q.get()
                await ws.send_json(rec)
        except WebSocketDisconnect:
            pass
        finally:
            subscribers.discard(q)

    dist = frontend_dir if frontend_dir is not None else FRONTEND_DIST
    if dist.is_dir():
        app.mount("/", StaticFiles(directory=str(dist), html=True), name="console")
    else:
        @app.get("/", response_class=HTMLResponse)
        def index():
            return _FALLBACK_PAGE

    return app


def serve(scenario: dict, host: str = "127.0.0.1", port: int = 8787, speed: float = 1.0) -> None:
    import uvicorn

    server = NodeServer(scenario, speed=speed)
    server.start()
    app = create_app(server)
    uvicorn.run(app, host=host, port=port, log_level="warning")
