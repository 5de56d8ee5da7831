"""Node composition: build entities from specs, run scenarios, collect metrics.

A scenario document describes the entities (config servers, registrars,
automata, gateway), the inter-entity links, and a timed event script
(vital-sign injections, commands, link toggles, component kills/restarts).
Virtual-mode runs are fully deterministic: the same scenario and seed produce
byte-identical trace logs.
"""

from __future__ import annotations

import copy
import json
import statistics
from dataclasses import dataclass, replace
from pathlib import Path

from . import payloads, wire
from .automaton import AutomatonDef, load_model
from .models import bundle_by_name
from .registry import AutomatonAgent, ConfigServer, Registrar
from .runtime import DEMO_KEY, Component, Runtime, Timing
from .simnet import LinkProfile, SimNetwork, VirtualClock
from .telemetry import Metrics, Tracer
from .transport import RmeGateway
from .wire import Address, MessageType


class ScenarioError(ValueError):
    """Scenario/spec validation failure; message lists every problem."""

    def __init__(self, problems: list[str]):
        self.problems = problems
        super().__init__("; ".join(problems))


def _timing_from(doc: dict | None) -> Timing:
    if not doc:
        return Timing()
    allowed = {f for f in Timing.__dataclass_fields__}
    unknown = set(doc) - allowed
    if unknown:
        raise ScenarioError([f"unknown timing fields: {sorted(unknown)}"])
    return Timing(**doc)


@dataclass
class EntitySpec:
    entity: int
    name: str
    role: str  # "rural" | "center" | "ambulance"
    units: dict[int, str]
    config_servers: list[dict]  # {rank, endpoint}
    registrars: list[dict]      # {unit, endpoint}
    automata: list[dict]        # {bundle, side, endpoint} (side: rural|center|organ:<name>)
    gateway: dict               # {endpoint, peers: {entity: endpoint}}
    timing: dict | None = None

    @classmethod
    def from_doc(cls, doc: dict) -> "EntitySpec":
        return cls(
            entity=doc["entity"],
            name=doc.get("name", f"entity-{doc['entity']}"),
            role=doc.get("role", "center"),
            units={int(k): v for k, v in doc.get("units", {}).items()},
            config_servers=list(doc.get("config_servers", [])),
            registrars=list(doc.get("registrars", [])),
            automata=list(doc.get("automata", [])),
            gateway=dict(doc.get("gateway", {})),
            timing=doc.get("timing"),
        )

    def validate(self) -> list[str]:
        problems = []
        if not 0 < self.entity < 32:
            problems.append(f"entity {self.entity} outside 1-31")
        endpoints = [cs["endpoint"] for cs in self.config_servers]
        endpoints += [r["endpoint"] for r in self.registrars]
        endpoints += [a["endpoint"] for a in self.automata]
        if self.gateway:
            endpoints.append(self.gateway["endpoint"])
        dupes = {ep for ep in endpoints if endpoints.count(ep) > 1}
        if dupes:
            problems.append(f"entity {self.entity}: duplicate endpoints {sorted(dupes)}")
        ranks = [cs["rank"] for cs in self.config_servers]
        if len(set(ranks)) != len(ranks):
            problems.append(f"entity {self.entity}: duplicate config server ranks")
        if not self.config_servers:
            problems.append(f"entity {self.entity}: needs at least one config server")
        for r in self.registrars:
            if r["unit"] not in self.units:
                problems.append(f"entity {self.entity}: registrar for unknown unit {r['unit']}")
        return problems

    def cs_endpoints_by_rank(self) -> list[str]:
        return [cs["endpoint"] for cs in sorted(self.config_servers, key=lambda c: c["rank"])]


def _resolve_automaton(spec: EntitySpec, adoc: dict, bundles: dict):
    """Pick the model definition, projection, and authority for one automaton spec."""
    bundle_name = adoc.get("bundle", "stroke")
    options = adoc.get("model_options") or {}
    key = (bundle_name, tuple(sorted(options.items())))
    if key not in bundles:
        if options:
            from .models import BUNDLES

            bundles[key] = BUNDLES[bundle_name](**options)
        else:
            bundles[key] = bundle_by_name(bundle_name)
    bundle = bundles[key]
    side = adoc.get("side", spec.role)
    if side == "rural":
        adef, projection, authority = bundle.rural, bundle.projection, "rural"
    elif side == "center":
        adef, projection, authority = bundle.center, bundle.projection, "center"
    elif side.startswith("organ:"):
        name = side.split(":", 1)[1]
        matches = [o for o in bundle.organs if o.name == name]
        if not matches:
            raise ScenarioError([f"bundle {bundle_name!r} has no organ {name!r}"])
        adef = matches[0]
        projection = {s.uid: s.uid for s in adef.states}
        authority = "rural" if spec.role == "rural" else "center"
    else:
        raise ScenarioError([f"unknown automaton side {side!r}"])
    adef = replace(adef, entity=spec.entity)
    if "unit" in adoc:
        adef = replace(adef, unit=adoc["unit"])
    if "automaton" in adoc:
        adef = replace(adef, automaton=adoc["automaton"])
    return adef, projection, adoc.get("authority", authority)


class Cluster:
    """A running set of entities on one simulated network."""

    def __init__(self, scenario: dict, mode: str = "manual"):
        problems = validate_scenario(scenario)
        if problems:
            raise ScenarioError(problems)
        self.scenario = copy.deepcopy(scenario)
        self.seed = scenario.get("seed", 0)
        self.clock = VirtualClock(mode=mode)
        self.tracer = Tracer()
        self.metrics = Metrics()
        self.net = SimNetwork(self.clock, self.tracer, self.metrics, seed=self.seed)
        key = bytes.fromhex(scenario["key_hex"]) if "key_hex" in scenario else DEMO_KEY
        self.rt = Runtime(
            clock=self.clock, net=self.net, tracer=self.tracer, metrics=self.metrics,
            key=key, timing=_timing_from(scenario.get("timing")),
        )
        self.specs = [EntitySpec.from_doc(d) for d in scenario.get("entities", [])]
        self.components: dict[str, Component] = {}
        self._factories: dict[str, callable] = {}
        self.agents: dict[str, AutomatonAgent] = {}
        self._bundles: dict = {}  # (bundle name, options) -> ModelBundle
        self._links: dict[str, tuple[int, int]] = {}
        self._audit_seq = 0
        self._build()

    # -- construction -----------------------------------------------------------

    def _build(self) -> None:
        for link_doc in self.scenario.get("links", []):
            profile = LinkProfile(
                latency_s=link_doc.get("latency_ms", 0.0) / 1000.0,
                jitter_s=link_doc.get("jitter_ms", 0.0) / 1000.0,
                drop_probability=link_doc.get("drop_probability", 0.0),
                bandwidth_bps=link_doc.get("bandwidth_bps", 0.0),
                partitions=tuple(tuple(w) for w in link_doc.get("partitions_s", [])),
            )
            a, b = link_doc["entities"]
            self.net.add_link(link_doc["name"], a, b, profile)
            self._links[link_doc["name"]] = (a, b)
            for start, end in profile.partitions:
                self.clock.call_at(start, self._notify_link_state, link_doc["name"], False)
                self.clock.call_at(end, self._notify_link_state, link_doc["name"], True)

        for spec in self.specs:
            self._build_entity(spec)

    def _build_entity(self, spec: EntitySpec) -> None:
        gw_ep = spec.gateway.get("endpoint") if spec.gateway else None
        cs_eps = spec.cs_endpoints_by_rank()
        peer_list = [(cs["rank"], cs["endpoint"]) for cs in spec.config_servers]
        timing = _timing_from(spec.timing) if spec.timing else None

        if spec.gateway:
            peers = {int(k): v for k, v in spec.gateway.get("peers", {}).items()}
            self._register_factory(
                gw_ep,
                lambda ep=gw_ep, e=spec.entity, p=peers: RmeGateway(self.rt, ep, e, p),
                timing,
            )

        for cs in spec.config_servers:
            self._register_factory(
                cs["endpoint"],
                lambda c=cs, s=spec, pl=peer_list, g=gw_ep: ConfigServer(
                    self.rt, c["endpoint"], s.entity, c["rank"],
                    set(s.units), pl, gateway_ep=g,
                ),
                timing,
            )

        for reg in spec.registrars:
            self._register_factory(
                reg["endpoint"],
                lambda r=reg, s=spec, eps=cs_eps, g=gw_ep: Registrar(
                    self.rt, r["endpoint"], s.entity, r["unit"], eps, gateway_ep=g
                ),
                timing,
            )

        for adoc in spec.automata:
            adef, projection, authority = _resolve_automaton(spec, adoc, self._bundles)
            ep = adoc["endpoint"]
            self._register_factory(
                ep,
                lambda e=ep, d=adef, pr=projection, au=authority, eps=cs_eps, g=gw_ep: AutomatonAgent(
                    self.rt, e, d, eps, g, projection=pr, authority=au
                ),
                timing,
            )

    def _register_factory(self, endpoint: str, factory, timing: Timing | None = None) -> None:
        if endpoint in self._factories:
            raise ScenarioError([f"duplicate component endpoint {endpoint}"])
        if timing is None:
            self._factories[endpoint] = factory
        else:
            # Components bind timing at construction; swap the runtime default
            # while this entity's components build (and rebuild on restart).
            def build():
                saved = self.rt.timing
                self.rt.timing = timing
                try:
                    return factory()
                finally:
                    self.rt.timing = saved

            self._factories[endpoint] = build

    def start(self) -> None:
        # Boot order: directories first, then routing, then units, then automata.
        def order_key(ep: str) -> int:
            comp = self.components[ep]
            if isinstance(comp, ConfigServer):
                return 0
            if isinstance(comp, RmeGateway):
                return 1
            if isinstance(comp, Registrar):
                return 2
            return 3

        for ep, factory in self._factories.items():
            comp = factory()
            self.components[ep] = comp
            if isinstance(comp, AutomatonAgent):
                self.agents[ep] = comp
        for ep in sorted(self.components, key=order_key):
            self.components[ep].start(self.clock.now)
        for ev in self.scenario.get("events", []):
            self.clock.call_at(ev["at_s"], self._run_event, ev)

    # -- scripted and live events ----------------------------------------------------

    def _run_event(self, ev: dict) -> None:
        action = ev["action"]
        if action == "vital":
            self.inject_vital(ev["entity"], ev["unit"], ev["measurement"], ev["value"])
        elif action == "command":
            self.inject_command(ev["entity"], ev["unit"], ev["command"])
        elif action == "link":
            self.set_link(ev["link"], ev["up"])
        elif action == "kill":
            self.kill(ev["component"])
        elif action == "restart":
            self.restart(ev["component"])
        elif action == "hang":
            self.hang(ev["component"])
        elif action == "stop":
            self.stop(ev["component"])
        else:
            raise ScenarioError([f"unknown scripted action {action!r}"])

    def _injector_ep(self, entity: int) -> str:
        ep = f"e{entity}.ops"
        if not self.net.is_registered(ep):
            self.net.register(ep, entity, lambda data, src, now: None)
        return ep

    def _gateway_ep(self, entity: int) -> str:
        gw = self.rt.gateway(entity)
        if gw is None:
            raise ScenarioError([f"entity {entity} has no gateway"])
        return gw.endpoint

    def _publish_app(
        self, entity: int, unit: int, mtype: MessageType, payload: dict, priority: int
    ) -> int:
        self._audit_seq += 1
        header = wire.MessageHeader(
            message_type=mtype,
            priority=priority,
            checksum_flag=True,
            open_loop_safe_state=0,
            source=Address(entity, unit, 0),
            destination=Address(0, unit, 0),
        )
        body = dict(payload)
        body["audit_id"] = self._audit_seq
        frame = wire.seal_frame(header, payloads.encode_app(body), self.rt.key)
        self.tracer.emit(
            self.clock.now, f"e{entity}.ops", "injected",
            message_type=wire.message_name(int(mtype)), audit_id=self._audit_seq, **payload,
        )
        self.net.send(self._injector_ep(entity), self._gateway_ep(entity), frame)
        return self._audit_seq

    def inject_vital(self, entity: int, unit: int, measurement: str, value: float) -> int:
        return self._publish_app(
            entity, unit, MessageType.VITAL_SIGN,
            {"measurement": measurement, "value": float(value)}, priority=5,
        )

    def inject_command(self, entity: int, unit: int, command: str) -> int:
        return self._publish_app(
            entity, unit, MessageType.BEST_PRACTICE_COMMAND, {"command": command}, priority=6
        )

    def _notify_link_state(self, name: str, up: bool) -> None:
        entities = self._links.get(name, ())
        self.tracer.emit(self.clock.now, f"link:{name}", "carrier", up=up)
        for agent in self.agents.values():
            if agent.entity in entities and agent.alive:
                agent.set_link_state(up, self.clock.now)

    def set_link(self, name: str, up: bool) -> None:
        link = self.net.link_named(name)
        if link is None:
            raise ScenarioError([f"unknown link {name!r}"])
        link.set_up(up)
        self._notify_link_state(name, up)

    def kill(self, endpoint: str) -> None:
        comp = self.components.get(endpoint)
        if comp is None:
            raise ScenarioError([f"unknown component {endpoint!r}"])
        comp.kill()
        self.metrics.mark(self.clock.now, "killed", endpoint=endpoint)

    def restart(self, endpoint: str) -> None:
        factory = self._factories.get(endpoint)
        if factory is None:
            raise ScenarioError([f"unknown component {endpoint!r}"])
        old = self.components.get(endpoint)
        if old and old.alive:
            old.kill()
        comp = factory()
        self.components[endpoint] = comp
        if isinstance(comp, AutomatonAgent):
            self.agents[endpoint] = comp
        comp.start(self.clock.now)
        self.metrics.mark(self.clock.now, "restarted", endpoint=endpoint)

    def hang(self, endpoint: str) -> None:
        agent = self.agents.get(endpoint)
        if agent is None:
            raise ScenarioError([f"component {endpoint!r} is not an automaton"])
        agent.hang()

    def stop(self, endpoint: str) -> None:
        agent = self.agents.get(endpoint)
        if agent is None:
            raise ScenarioError([f"component {endpoint!r} is not an automaton"])
        agent.stop()

    # -- state access -------------------------------------------------------------------

    def run(self, duration_s: float | None = None) -> None:
        self.clock.advance(duration_s if duration_s is not None else self.scenario.get("duration_s", 60.0))

    def snapshots(self) -> list[dict]:
        return [agent.snapshot() for agent in self.agents.values()]

    def agent_at(self, entity: int, unit: int, automaton: int = 1) -> AutomatonAgent | None:
        for agent in self.agents.values():
            if agent.address.as_tuple() == (entity, unit, automaton):
                return agent
        return None

    def open_loop_uids(self) -> dict[str, frozenset[int]]:
        return {ep: agent.adef.open_loop_uids for ep, agent in self.agents.items()}


def validate_scenario(scenario: dict) -> list[str]:
    problems: list[str] = []
    if not isinstance(scenario, dict):
        return ["scenario must be a JSON object"]
    seen_entities: set[int] = set()
    endpoints: list[str] = []
    for doc in scenario.get("entities", []):
        try:
            spec = EntitySpec.from_doc(doc)
        except (KeyError, TypeError) as e:
            problems.append(f"malformed entity spec: {e}")
            continue
        if spec.entity in seen_entities:
            problems.append(f"duplicate entity uid {spec.entity}")
        seen_entities.add(spec.entity)
        problems.extend(spec.validate())
        endpoints += [cs["endpoint"] for cs in spec.config_servers]
        endpoints += [r["endpoint"] for r in spec.registrars]
        endpoints += [a["endpoint"] for a in spec.automata]
        if spec.gateway:
            endpoints.append(spec.gateway["endpoint"])
    dupes = {ep for ep in endpoints if endpoints.count(ep) > 1}
    if dupes:
        problems.append(f"endpoints not unique across entities: {sorted(dupes)}")
    for link in scenario.get("links", []):
        ents = link.get("entities", [])
        if len(ents) != 2:
            problems.append(f"link {link.get('name')}: must join exactly two entities")
        for e in ents:
            if e not in seen_entities:
                problems.append(f"link {link.get('name')}: unknown entity {e}")
    for ev in scenario.get("events", []):
        if "at_s" not in ev or "action" not in ev:
            problems.append(f"event {ev} needs at_s and action")
    return problems


# -- scenario running ------------------------------------------------------------------


REQUIREMENT_CHECKS = "requirements"


def check_requirements(cluster: Cluster) -> list[dict]:
    """Post-run requirement checklist evaluated over traces and counters.

    This list is this harness's own; it verifies the safety and liveness
    properties the middleware promises, one verdict per named requirement.
    """
    tracer, metrics = cluster.tracer, cluster.metrics
    results = []

    def add(name: str, passed: bool, detail: str = ""):
        results.append({"name": name, "passed": bool(passed), "detail": detail})

    ols = cluster.open_loop_uids()
    bad = [
        rec for rec in tracer.find(event="app_publish")
        if rec["component"] in ols and rec["safe_state_uid"] not in ols[rec["component"]]
    ]
    add(
        "queued-before-commit: every published message names an open-loop safe state",
        not bad, f"{len(bad)} violations",
    )

    t = cluster.rt.timing
    early = [
        rec for rec in tracer.records
        if rec["event"] in ("automaton_declared_dead", "registrar_declared_dead")
        and rec.get("silent_for", 0) < t.miss_threshold * min(t.unit_heartbeat_s, t.config_heartbeat_s)
    ]
    add(
        "failure declarations only after N consecutive silent periods",
        not early, f"{len(early)} premature declarations",
    )

    active = {}
    for spec in cluster.specs:
        count = sum(
            1 for cs in spec.config_servers
            if isinstance(cluster.components.get(cs["endpoint"]), ConfigServer)
            and cluster.components[cs["endpoint"]].alive
            and cluster.components[cs["endpoint"]].active
        )
        active[spec.entity] = count
    add(
        "single active config server per entity at quiescence",
        all(v <= 1 for v in active.values()),
        json.dumps(active),
    )

    dead_letters = metrics.total("dead_letter")
    unroutable = metrics.get("net", "unroutable")
    add("no unroutable frames (dead letters are accounted)", unroutable == 0,
        f"unroutable={unroutable} dead_letters={dead_letters}")
    return results


def sync_latency_samples(cluster: Cluster) -> list[dict]:
    """Adoption latency: authoritative transition to the thin side's remote_sync commit.

    Only adoptions have unambiguous causality in the trace; mirrored
    transitions (both sites stepping on the same event) are deliberately not
    counted as synchronization delay.
    """
    transitions = cluster.tracer.find(event="transition")
    samples = []
    for rec in transitions:
        if rec["reason"] != "remote_sync":
            continue
        agent = cluster.agents.get(rec["component"])
        if agent is None:
            continue
        unit, automaton = agent.address.unit, agent.address.automaton
        cause = None
        for other in transitions:
            if other["t"] > rec["t"]:
                break
            peer = cluster.agents.get(other["component"])
            if (
                peer is not None
                and other["component"] != rec["component"]
                and peer.address.unit == unit
                and peer.address.automaton == automaton
                and other["reason"] != "remote_sync"
                and agent.instance.projection.get(other["target_uid"]) == rec["target_uid"]
            ):
                cause = other
        if cause is not None:
            samples.append(
                {"unit": unit, "state": rec["target"], "latency_s": rec["t"] - cause["t"]}
            )
    return samples


def _metrics_csv(metrics_report: dict) -> str:
    lines = ["component,counter,value"]
    for comp, counters in metrics_report["counters"].items():
        for name, value in sorted(counters.items()):
            lines.append(f"{comp},{name},{value}")
    for comp, units in metrics_report["work_units"].items():
        lines.append(f"{comp},work_units,{units}")
    return "\n".join(lines) + "\n"


@dataclass
class ScenarioReport:
    scenario_name: str
    seed: int
    duration_s: float
    metrics: dict
    requirements: list[dict]
    trace_records: int
    sync_latencies: list[dict]

    def to_dict(self) -> dict:
        latencies = [s["latency_s"] for s in self.sync_latencies]
        return {
            "scenario": self.scenario_name,
            "seed": self.seed,
            "duration_s": self.duration_s,
            "trace_records": self.trace_records,
            "requirements": self.requirements,
            "sync_latencies": {
                "samples": self.sync_latencies,
                "count": len(latencies),
                "max_s": max(latencies) if latencies else None,
                "mean_s": sum(latencies) / len(latencies) if latencies else None,
            },
            "metrics": self.metrics,
        }


def run_scenario(scenario: dict, outdir: str | Path | None = None) -> tuple[Cluster, ScenarioReport]:
    """Build, run to the scenario's duration, evaluate requirements, write outputs."""
    cluster = Cluster(scenario)
    cluster.start()
    cluster.run()
    report = ScenarioReport(
        scenario_name=scenario.get("name", "unnamed"),
        seed=cluster.seed,
        duration_s=scenario.get("duration_s", 60.0),
        metrics=cluster.metrics.report(),
        requirements=check_requirements(cluster),
        trace_records=len(cluster.tracer.records),
        sync_latencies=sync_latency_samples(cluster),
    )
    if outdir is not None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trace.jsonl").write_text(cluster.tracer.jsonl() + "\n")
        (out / "metrics.json").write_text(json.dumps(cluster.metrics.report(), indent=2, sort_keys=True))
        (out / "metrics.csv").write_text(_metrics_csv(report.metrics))
        (out / "summary.json").write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True))
    return cluster, report


# -- scalability sweep ---------------------------------------------------------------------


_SCALE_MODEL = {
    "name": "telemetry",
    "measurements": {"metric": ""},
    "initial": 1,
    "states": [
        {"uid": 1, "name": "Idle", "safety": "open_loop_safe"},
        {"uid": 2, "name": "Busy", "safety": "open_loop_safe"},
    ],
    "transitions": [
        {"source": 1, "target": 2, "trigger": {"kind": "condition", "guard": "metric > 0.5"}},
        {"source": 2, "target": 1, "trigger": {"kind": "condition", "guard": "metric <= 0.5"}},
    ],
}


def _scale_model(entity: int, unit: int) -> AutomatonDef:
    doc = copy.deepcopy(_SCALE_MODEL)
    doc["address"] = {"entity": entity, "unit": unit, "automaton": 1}
    return load_model(doc)


def scale_scenario(n_automata: int, poll_period_s: float, duration_s: float = 60.0) -> dict:
    """Two entities with n paired communicating automata publishing at 1 Hz."""
    def entity_doc(entity: int, role: str) -> dict:
        return {
            "entity": entity,
            "name": f"scale-{role}",
            "role": role,
            "units": {str(u): f"pair-{u}" for u in range(1, n_automata + 1)},
            "config_servers": [{"rank": 0, "endpoint": f"e{entity}.cs0"}],
            "registrars": [
                {"unit": u, "endpoint": f"e{entity}.u{u}.reg"} for u in range(1, n_automata + 1)
            ],
            "automata": [],
            "gateway": {"endpoint": f"e{entity}.gw", "peers": {str(3 - entity): f"e{3 - entity}.gw"}},
        }

    scen = {
        "name": f"scale-n{n_automata}-poll{poll_period_s}",
        "seed": 1,
        "duration_s": duration_s + 20.0,
        "timing": {"poll_period_s": poll_period_s},
        "entities": [entity_doc(1, "rural"), entity_doc(2, "center")],
        "links": [{"name": "pair-link", "entities": [1, 2], "latency_ms": 10.0}],
        "events": [],
    }
    for u in range(1, n_automata + 1):
        for entity in (1, 2):
            scen["entities"][entity - 1]["automata"].append(
                {"bundle": "__scale__", "side": "rural" if entity == 1 else "center",
                 "unit": u, "endpoint": f"e{entity}.u{u}.a1"}
            )
    for k in range(int(duration_s)):
        for u in range(1, n_automata + 1):
            scen["events"].append(
                {"at_s": 10.0 + k + u * 0.01, "action": "vital", "entity": 1, "unit": u,
                 "measurement": "metric", "value": float(k % 2)}
            )
    return scen


class _ScaleCluster(Cluster):
    """Cluster whose automata use the built-in telemetry model instead of a bundle."""

    def _build_entity(self, spec: EntitySpec) -> None:
        automata, spec.automata = spec.automata, []
        super()._build_entity(spec)
        spec.automata = automata
        gw_ep = spec.gateway.get("endpoint")
        cs_eps = spec.cs_endpoints_by_rank()
        for adoc in automata:
            adef = _scale_model(spec.entity, adoc["unit"])
            authority = "rural" if adoc["side"] == "rural" else "center"
            ep = adoc["endpoint"]
            self._register_factory(
                ep,
                lambda e=ep, d=adef, au=authority, eps=cs_eps, g=gw_ep: AutomatonAgent(
                    self.rt, e, d, eps, g, authority=au
                ),
            )


def linear_fit(points: list[tuple[float, float]]) -> dict:
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    fit = statistics.linear_regression(xs, ys)
    r2 = statistics.correlation(xs, ys) ** 2
    return {"slope": fit.slope, "intercept": fit.intercept, "r2": r2}


def scale_run(
    n_values: range | list[int] = range(0, 11),
    poll_periods_s: tuple[float, ...] = (0.1, 1.0, 5.0),
    duration_s: float = 60.0,
    outdir: str | Path | None = None,
) -> dict:
    """Work-unit cost versus automaton count for several polling rates, with linear fits.

    The work-unit metric is a deterministic proxy for processing cost (frames,
    transitions, polls, each at a fixed weight), so the sweep is reproducible
    on any hardware.
    """
    table: list[dict] = []
    fits: dict[str, dict] = {}
    for period in poll_periods_s:
        points = []
        for n in n_values:
            cluster = _ScaleCluster(scale_scenario(n, period, duration_s))
            cluster.start()
            cluster.run()
            work = cluster.metrics.total_work()
            points.append((float(n), work))
            table.append({"poll_period_s": period, "n_automata": n, "work_units": work})
        fits[str(period)] = linear_fit(points) | {"points": points}
    result = {"duration_s": duration_s, "fits": fits, "table": table}
    if outdir is not None:
        out = Path(outdir)
        out.mkdir(parents=True, exist_ok=True)
        lines = ["poll_period_s,n_automata,work_units"]
        lines += [f"{r['poll_period_s']},{r['n_automata']},{r['work_units']}" for r in table]
        (out / "scale.csv").write_text("\n".join(lines) + "\n")
        (out / "scale_summary.json").write_text(json.dumps(result, indent=2, sort_keys=True))
    return result


# -- demo scenario ----------------------------------------------------------------------------


def demo_scenario(with_script: bool = True) -> dict:
    """Two-entity stroke deployment used by the CLI and the operator console."""
    scen = {
        "name": "stroke-demo",
        "seed": 42,
        "duration_s": 600.0,
        "entities": [
            {
                "entity": 1,
                "name": "rural",
                "role": "rural",
                "units": {"1": "stroke"},
                "config_servers": [
                    {"rank": 0, "endpoint": "e1.cs0"},
                    {"rank": 1, "endpoint": "e1.cs1"},
                ],
                "registrars": [{"unit": 1, "endpoint": "e1.u1.reg"}],
                "automata": [{"bundle": "stroke", "side": "rural", "endpoint": "e1.u1.a1"}],
                "gateway": {"endpoint": "e1.gw", "peers": {"2": "e2.gw"}},
            },
            {
                "entity": 2,
                "name": "center",
                "role": "center",
                "units": {"1": "stroke"},
                "config_servers": [{"rank": 0, "endpoint": "e2.cs0"}],
                "registrars": [{"unit": 1, "endpoint": "e2.u1.reg"}],
                "automata": [{"bundle": "stroke", "side": "center", "endpoint": "e2.u1.a1"}],
                "gateway": {"endpoint": "e2.gw", "peers": {"1": "e1.gw"}},
            },
        ],
        "links": [
            {"name": "rural-center", "entities": [1, 2], "latency_ms": 40.0}
        ],
        "events": [],
    }
    if with_script:
        scen["events"] = [
            {"at_s": 12.0, "action": "command", "entity": 2, "unit": 1, "command": "begin_ct"},
            {"at_s": 14.0, "action": "command", "entity": 2, "unit": 1, "command": "ct_ischemic"},
            {"at_s": 16.0, "action": "vital", "entity": 1, "unit": 1, "measurement": "systolic_bp", "value": 185.0},
        ]
    return scen
