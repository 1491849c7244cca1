"""Per-session orchestration: workflow contracts, virtual clock, event log.

A session owns one layered canvas, one candidate cache, and one append-only
event log. Three workflow kinds gate what a generation request may depend on:

- W1 regenerates from the prompt and seed schedule alone, every time.
- W2 chains each generation on the previous latent (text-conditioned only).
- W3 conditions on a flattened canvas snapshot, weighted by the influence
  dial, and may also run a background loop that generates on a cadence.

Time is a virtual millisecond clock advanced only by explicit ticks, which is
what makes full replay from the event log bit-exact. Commands are applied
one at a time; callers that share a session across threads must serialize
(the HTTP service does).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Optional

from .engine import (
    CycleMode,
    GeneratedCandidate,
    GenerationRequest,
    LatentVector,
    ProceduralEngine,
)
from .layers import (
    COMPOSITED_INTO,
    CONDITIONED_ON,
    IMPORTED_AS,
    LayerOrigin,
    LayerStack,
    ProvenanceGraph,
)
from .raster import RasterImage, Rgba, WHITE, digest_hex, pixel_digest

MIN_CANVAS = 4
MEASURES = ("ownership", "satisfaction", "usability", "expectation", "explainability", "art")

_MASK64 = (1 << 64) - 1


class WorkflowKind(str, Enum):
    W1 = "W1"  # basic turn-taking: no dependency on prior results
    W2 = "W2"  # iterative turn-taking: latent chain across rounds
    W3 = "W3"  # parallel/hybrid: snapshot-conditioned, background loop allowed


class ContractViolation(Exception):
    """A command conflicts with the session's workflow contract."""

    code = "contract_violation"


class ModeUnavailable(ContractViolation):
    """Parallel mode requested on a workflow that does not support it."""

    code = "mode_unavailable"


class WeightPinned(ContractViolation):
    """Influence weight is fixed for this workflow."""

    code = "weight_pinned"


class ClockRegression(ContractViolation):
    """Tick time ran backwards."""

    code = "clock_regression"


class UnknownCandidateError(KeyError):
    def __init__(self, candidate_id: int):
        self.candidate_id = candidate_id
        super().__init__(f"no candidate with id {candidate_id}")


class ReplayError(ValueError):
    """An event log could not be replayed back into a session."""


# Event kinds (closed set).
CREATE = "Create"
SET_PROMPT = "SetPrompt"
SET_WEIGHT = "SetWeight"
GENERATE = "Generate"
CANDIDATE_READY = "CandidateReady"
IMPORT = "Import"
EDIT = "Edit"
START_PARALLEL = "StartParallel"
STOP_PARALLEL = "StopParallel"
TICK = "Tick"
RATE = "Rate"

EVENT_KINDS = (
    CREATE,
    SET_PROMPT,
    SET_WEIGHT,
    GENERATE,
    CANDIDATE_READY,
    IMPORT,
    EDIT,
    START_PARALLEL,
    STOP_PARALLEL,
    TICK,
    RATE,
)


@dataclass(frozen=True)
class SessionEvent:
    index: int
    at: int
    kind: str
    payload: dict

    def to_json(self) -> str:
        # Canonical form: fixed top-level key order, compact separators,
        # payload key order fixed by the emitting site.
        return json.dumps(
            {"index": self.index, "at": self.at, "kind": self.kind, "payload": self.payload},
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "SessionEvent":
        data = json.loads(line)
        return cls(index=data["index"], at=data["at"], kind=data["kind"], payload=data["payload"])


@dataclass(frozen=True)
class SessionConfig:
    cadence_ms: int = 2000
    persistence: float = 0.7
    background: Rgba = WHITE
    w3_initial_weight: float = 0.5

    def to_payload(self) -> dict:
        return {
            "cadence_ms": self.cadence_ms,
            "persistence": self.persistence,
            "background": list(self.background),
            "w3_initial_weight": self.w3_initial_weight,
        }

    @classmethod
    def from_payload(cls, data: dict) -> "SessionConfig":
        return cls(
            cadence_ms=data["cadence_ms"],
            persistence=data["persistence"],
            background=Rgba(*data["background"]),
            w3_initial_weight=data["w3_initial_weight"],
        )


@dataclass
class Rating:
    measure: str
    score: int
    at: int


class Session:
    """One co-creation session: canvas, cache, clock, provenance, event log."""

    def __init__(
        self,
        workflow: WorkflowKind,
        width: int,
        height: int,
        base_seed: int,
        config: Optional[SessionConfig] = None,
        session_id: Optional[str] = None,
    ):
        if width < MIN_CANVAS or height < MIN_CANVAS:
            raise ValueError(f"canvas must be at least {MIN_CANVAS}x{MIN_CANVAS}, got {width}x{height}")
        if not 0 <= base_seed <= _MASK64:
            raise ValueError(f"base seed must fit in 64 bits, got {base_seed}")
        self.id = session_id
        self.workflow = WorkflowKind(workflow)
        self.config = config or SessionConfig()
        self.canvas = LayerStack(width, height, self.config.background)
        self.prompt = ""
        self.influence_weight = self.config.w3_initial_weight if self.workflow is WorkflowKind.W3 else 0.0
        self.base_seed = base_seed
        self.seed_counter = 0
        self.cache: list[GeneratedCandidate] = []
        self.latent_chain: Optional[LatentVector] = None
        self.parallel_running = False
        self.clock = 0
        self.events: list[SessionEvent] = []
        self.provenance = ProvenanceGraph()
        self.ratings: list[Rating] = []
        self.created_at_wall: Optional[float] = None  # set by the service in wall-tick mode
        self._engine = ProceduralEngine(persistence=self.config.persistence)
        self._parallel_anchor = 0
        self._parallel_produced = 0
        self._snapshot_seq = 0
        self._log(
            CREATE,
            {
                "workflow": self.workflow.value,
                "width": width,
                "height": height,
                "seed": str(base_seed),
                "config": self.config.to_payload(),
            },
        )

    # -- log plumbing -------------------------------------------------------

    def _log(self, kind: str, payload: dict) -> SessionEvent:
        event = SessionEvent(index=len(self.events), at=self.clock, kind=kind, payload=payload)
        self.events.append(event)
        return event

    def to_jsonl(self) -> str:
        return "\n".join(e.to_json() for e in self.events) + "\n"

    # -- commands ------------------------------------------------------------

    def set_prompt(self, text: str) -> None:
        self.prompt = text
        self._log(SET_PROMPT, {"text": text})

    def set_weight(self, value: float) -> None:
        if self.workflow is WorkflowKind.W1:
            raise WeightPinned("W1 sessions keep influence weight pinned to 0")
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"influence weight must be in [0, 1], got {value}")
        self.influence_weight = float(value)
        self._log(SET_WEIGHT, {"value": float(value)})

    def _next_seed(self) -> int:
        seed = (self.base_seed + self.seed_counter) & _MASK64
        self.seed_counter += 1
        return seed

    def _capture_snapshot(self) -> tuple[RasterImage, str]:
        """Flatten the canvas and record it as a provenance node."""
        image = self.canvas.flatten()
        self._snapshot_seq += 1
        node = self.provenance.add_snapshot(self._snapshot_seq, at=self.clock)
        for layer in self.canvas.layers:
            if layer.visible:
                self.provenance.add_edge(f"layer:{layer.id}", node, COMPOSITED_INTO)
        return image, node

    def record_final_snapshot(self) -> RasterImage:
        """Capture the closing canvas state into the provenance graph.

        Used by the replay harness so that a trailing import still counts as a
        completed feedback cycle.
        """
        image, _ = self._capture_snapshot()
        return image

    def _run_generation(self, initiator: str, cycle_mode: CycleMode) -> GeneratedCandidate:
        seed = self._next_seed()
        snapshot = None
        snapshot_node = None
        prior = None
        weight = 0.0
        if self.workflow is WorkflowKind.W2:
            prior = self.latent_chain
        elif self.workflow is WorkflowKind.W3:
            snapshot, snapshot_node = self._capture_snapshot()
            weight = self.influence_weight
        request = GenerationRequest(
            prompt=self.prompt,
            seed=seed,
            influence_weight=weight,
            snapshot=snapshot,
            prior_latent=prior,
        )
        candidate_id = len(self.cache) + 1
        self._log(
            GENERATE,
            {
                "initiator": initiator,
                "candidate_id": candidate_id,
                "prompt": self.prompt,
                "seed": str(seed),
                "influence_weight": weight,
                "snapshot_digest": digest_hex(pixel_digest(snapshot)) if snapshot else None,
                "has_prior": prior is not None,
            },
        )
        latent, image = self._engine.generate(request, self.canvas.width, self.canvas.height)
        candidate = GeneratedCandidate(
            id=candidate_id,
            image=image,
            latent=latent,
            request=request,
            created_at=self.clock,
            cycle_mode=cycle_mode,
        )
        self.cache.append(candidate)
        if self.workflow is WorkflowKind.W2:
            self.latent_chain = latent
        cand_node = self.provenance.add_candidate(candidate_id, at=self.clock)
        if snapshot_node is not None:
            self.provenance.add_edge(snapshot_node, cand_node, CONDITIONED_ON, weight=weight)
        self._log(
            CANDIDATE_READY,
            {
                "candidate_id": candidate_id,
                "cycle_mode": cycle_mode.value,
                "latent_digest": digest_hex(latent.digest()),
                "image_digest": digest_hex(pixel_digest(image)),
            },
        )
        return candidate

    def turn_generate(self) -> GeneratedCandidate:
        """One explicit generation per the session's workflow recipe."""
        return self._run_generation("turn", CycleMode.TURN_TAKING)

    def start_parallel(self) -> None:
        if self.workflow is not WorkflowKind.W3:
            raise ModeUnavailable(f"parallel mode is unavailable for {self.workflow.value}")
        if self.parallel_running:
            return  # idempotent
        self.parallel_running = True
        self._parallel_anchor = self.clock
        self._parallel_produced = 0
        self._log(START_PARALLEL, {})

    def stop_parallel(self) -> None:
        if self.workflow is not WorkflowKind.W3:
            raise ModeUnavailable(f"parallel mode is unavailable for {self.workflow.value}")
        if not self.parallel_running:
            return
        self.parallel_running = False
        self._log(STOP_PARALLEL, {})

    def tick(self, now_ms: int) -> list[GeneratedCandidate]:
        """Advance the virtual clock, producing background candidates on
        every cadence boundary crossed while the parallel loop runs."""
        if now_ms < self.clock:
            raise ClockRegression(f"tick to {now_ms} behind clock {self.clock}")
        produced = []
        if self.parallel_running:
            cadence = self.config.cadence_ms
            while self._parallel_anchor + (self._parallel_produced + 1) * cadence <= now_ms:
                self._parallel_produced += 1
                self.clock = self._parallel_anchor + self._parallel_produced * cadence
                produced.append(self._run_generation("parallel", CycleMode.PARALLEL))
        self.clock = now_ms
        self._log(TICK, {"now_ms": now_ms})
        return produced

    def import_candidate(self, candidate_id: int) -> int:
        """Copy a cached candidate onto the canvas as a new top layer."""
        candidate = self.candidate(candidate_id)
        layer_id = self.canvas.add_layer(candidate.image, LayerOrigin.imported(candidate_id))
        self.provenance.add_layer(layer_id, at=self.clock)
        self.provenance.add_edge(f"candidate:{candidate_id}", f"layer:{layer_id}", IMPORTED_AS)
        self._log(IMPORT, {"candidate_id": candidate_id, "layer_id": layer_id})
        return layer_id

    def brush(self, layer_id: int, x: int, y: int, radius: int, color: Rgba) -> None:
        self.canvas.brush_stroke(layer_id, x, y, radius, color)
        self._log(
            EDIT,
            {"op": "brush", "layer_id": layer_id, "x": x, "y": y, "radius": radius, "color": list(color)},
        )

    def fill(self, layer_id: int, x0: int, y0: int, x1: int, y1: int, color: Rgba) -> None:
        self.canvas.rect_fill(layer_id, x0, y0, x1, y1, color)
        self._log(
            EDIT,
            {
                "op": "fill",
                "layer_id": layer_id,
                "x0": x0,
                "y0": y0,
                "x1": x1,
                "y1": y1,
                "color": list(color),
            },
        )

    def layer_props(
        self,
        layer_id: int,
        opacity: Optional[float] = None,
        visible: Optional[bool] = None,
        index: Optional[int] = None,
    ) -> None:
        self.canvas.set_layer_props(layer_id, opacity=opacity, visible=visible, index=index)
        self._log(
            EDIT,
            {"op": "props", "layer_id": layer_id, "opacity": opacity, "visible": visible, "index": index},
        )

    def apply_edit(self, payload: dict) -> None:
        """Apply an edit command given as an Edit-event payload."""
        op = payload["op"]
        if op == "brush":
            self.brush(
                payload["layer_id"], payload["x"], payload["y"], payload["radius"], Rgba(*payload["color"])
            )
        elif op == "fill":
            self.fill(
                payload["layer_id"],
                payload["x0"],
                payload["y0"],
                payload["x1"],
                payload["y1"],
                Rgba(*payload["color"]),
            )
        elif op == "props":
            self.layer_props(
                payload["layer_id"],
                opacity=payload.get("opacity"),
                visible=payload.get("visible"),
                index=payload.get("index"),
            )
        else:
            raise ValueError(f"unknown edit op {op!r}")

    def record_rating(self, measure: str, score: int) -> None:
        if measure not in MEASURES:
            raise ValueError(f"unknown measure {measure!r}; expected one of {MEASURES}")
        if not isinstance(score, int) or not 1 <= score <= 7:
            raise ValueError(f"score must be an integer in [1, 7], got {score}")
        self.ratings.append(Rating(measure, score, self.clock))
        self._log(RATE, {"measure": measure, "score": score})

    # -- queries -------------------------------------------------------------

    def candidate(self, candidate_id: int) -> GeneratedCandidate:
        if 1 <= candidate_id <= len(self.cache):
            return self.cache[candidate_id - 1]
        raise UnknownCandidateError(candidate_id)

    def flatten(self) -> RasterImage:
        return self.canvas.flatten()

    def flatten_digest(self) -> str:
        return digest_hex(pixel_digest(self.canvas.flatten()))

    def ratings_by_measure(self) -> dict[str, list[int]]:
        grouped: dict[str, list[int]] = {}
        for rating in self.ratings:
            grouped.setdefault(rating.measure, []).append(rating.score)
        return grouped

    def mode_histogram(self) -> dict[str, int]:
        counts = {CycleMode.TURN_TAKING.value: 0, CycleMode.PARALLEL.value: 0}
        for candidate in self.cache:
            counts[candidate.cycle_mode.value] += 1
        return counts


def create_session(
    workflow: WorkflowKind | str,
    width: int,
    height: int,
    base_seed: int,
    config: Optional[SessionConfig] = None,
    session_id: Optional[str] = None,
) -> Session:
    """Start a fresh session; W1 sessions pin the influence weight to 0."""
    return Session(WorkflowKind(workflow), width, height, base_seed, config, session_id)


def classify_cycle(events: Iterable[SessionEvent], ready_index: int) -> CycleMode:
    """Infer a generation's participation mode from the event log alone.

    A generation counts as parallel when the background loop initiated it, or
    when any edit landed between its request and its completion; otherwise it
    was a turn exchange. Pure function of the log, so persisted sessions can
    be re-classified and checked against the stored tags.
    """
    log = list(events)
    ready = log[ready_index]
    if ready.kind != CANDIDATE_READY:
        raise ValueError(f"event {ready_index} is {ready.kind}, not {CANDIDATE_READY}")
    candidate_id = ready.payload["candidate_id"]
    generate_index = None
    for i in range(ready_index - 1, -1, -1):
        event = log[i]
        if event.kind == GENERATE and event.payload["candidate_id"] == candidate_id:
            generate_index = i
            break
    if generate_index is None:
        raise ValueError(f"no {GENERATE} event precedes ready event {ready_index}")
    if log[generate_index].payload["initiator"] == "parallel":
        return CycleMode.PARALLEL
    if any(log[i].kind == EDIT for i in range(generate_index + 1, ready_index)):
        return CycleMode.PARALLEL
    return CycleMode.TURN_TAKING


def replay_events(events: Iterable[SessionEvent], session_id: Optional[str] = None) -> Session:
    """Rebuild a session by re-running the commands in an event log.

    Derived events (generation results) are regenerated, not copied, and the
    rebuilt log must match the source exactly; any divergence raises
    :class:`ReplayError`.
    """
    log = list(events)
    if not log or log[0].kind != CREATE:
        raise ReplayError("log must start with a Create event")
    create = log[0].payload
    session = Session(
        WorkflowKind(create["workflow"]),
        create["width"],
        create["height"],
        int(create["seed"]),
        SessionConfig.from_payload(create["config"]),
        session_id=session_id,
    )
    for event in log[1:]:
        kind = event.kind
        payload = event.payload
        try:
            if kind == SET_PROMPT:
                session.set_prompt(payload["text"])
            elif kind == SET_WEIGHT:
                session.set_weight(payload["value"])
            elif kind == GENERATE:
                if payload["initiator"] == "turn":
                    session.turn_generate()
                # parallel generations are re-derived by their Tick event
            elif kind == CANDIDATE_READY:
                pass  # derived
            elif kind == IMPORT:
                session.import_candidate(payload["candidate_id"])
            elif kind == EDIT:
                session.apply_edit(payload)
            elif kind == START_PARALLEL:
                session.start_parallel()
            elif kind == STOP_PARALLEL:
                session.stop_parallel()
            elif kind == TICK:
                session.tick(payload["now_ms"])
            elif kind == RATE:
                session.record_rating(payload["measure"], payload["score"])
            else:
                raise ReplayError(f"unknown event kind {kind!r} at index {event.index}")
        except (ContractViolation, ValueError, KeyError) as exc:
            if isinstance(exc, ReplayError):
                raise
            raise ReplayError(f"event {event.index} ({kind}) failed to replay: {exc}") from exc
    if len(session.events) != len(log):
        raise ReplayError(
            f"replay produced {len(session.events)} events, source log has {len(log)}"
        )
    for ours, theirs in zip(session.events, log):
        if (ours.index, ours.at, ours.kind, ours.payload) != (
            theirs.index,
            theirs.at,
            theirs.kind,
            theirs.payload,
        ):
            raise ReplayError(
                f"replay diverged at event {theirs.index}: regenerated {ours.kind} "
                f"does not match logged {theirs.kind}"
            )
    return session


def parse_jsonl(text: str) -> list[SessionEvent]:
    """Parse an event log, reporting the 1-based line number on bad input."""
    events = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            events.append(SessionEvent.from_json(line))
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise ReplayError(f"corrupt event log at line {lineno}: {exc}") from exc
    return events


def replay_jsonl(text: str, session_id: Optional[str] = None) -> Session:
    return replay_events(parse_jsonl(text), session_id=session_id)
