"""Append-only JSONL event log per session, and reconstruction from it.

One event per line: ``created``, ``trial_planned``, ``response_recorded``
and ``completed``, with contiguous sequence numbers from 0.  Rebuilding a
session replays the log against a fresh session seeded from the stored
config; any divergence between a logged plan and the reconstruction (a
tampered level, a foreign log) raises IntegrityError naming the first bad
event.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from .errors import IntegrityError
from .session import (
    PresentationOrder,
    SessionConfig,
    SessionState,
    TrialPlan,
    create_session,
    resolve_choice,
    verify_plan,
)

SCHEMA_VERSION = 1

CREATED = "created"
TRIAL_PLANNED = "trial_planned"
RESPONSE_RECORDED = "response_recorded"
COMPLETED = "completed"

KINDS = (CREATED, TRIAL_PLANNED, RESPONSE_RECORDED, COMPLETED)


@dataclass(frozen=True)
class SessionEvent:
    schema_version: int
    session_id: str
    seq: int
    kind: str
    timestamp: float
    payload: dict

    def to_json(self) -> str:
        return json.dumps(
            {
                "schema_version": self.schema_version,
                "session_id": self.session_id,
                "seq": self.seq,
                "kind": self.kind,
                "timestamp": self.timestamp,
                "payload": self.payload,
            },
            sort_keys=True,
        )


def make_event(session_id: str, seq: int, kind: str, payload: dict) -> SessionEvent:
    if kind not in KINDS:
        raise IntegrityError(f"unknown event kind {kind!r}", seq=seq)
    return SessionEvent(
        schema_version=SCHEMA_VERSION,
        session_id=session_id,
        seq=seq,
        kind=kind,
        timestamp=time.time(),
        payload=payload,
    )


def plan_payload(plan: TrialPlan) -> dict:
    return {
        "trial_index": plan.trial_index,
        "variant": plan.variant,
        "clip": plan.clip,
        "reference_level": plan.reference_level,
        "order": plan.order.value,
    }


def plan_from_payload(payload: dict) -> TrialPlan:
    return TrialPlan(
        trial_index=int(payload["trial_index"]),
        variant=payload["variant"],
        clip=payload["clip"],
        reference_level=int(payload["reference_level"]),
        order=PresentationOrder(payload["order"]),
    )


def append_event(path: Path | str, event: SessionEvent) -> None:
    """Append one event line and flush it to disk before returning."""
    with open(path, "a") as fh:
        fh.write(event.to_json() + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def read_events(path: Path | str) -> list[SessionEvent]:
    """Parse and structurally validate one session's log."""
    events: list[SessionEvent] = []
    with open(path) as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IntegrityError(f"{path}: line {line_no} is not valid JSON: {exc}") from exc
            events.append(
                SessionEvent(
                    schema_version=int(raw["schema_version"]),
                    session_id=raw["session_id"],
                    seq=int(raw["seq"]),
                    kind=raw["kind"],
                    timestamp=float(raw["timestamp"]),
                    payload=raw.get("payload", {}),
                )
            )
    validate_event_stream(events)
    return events


def validate_event_stream(events: Iterable[SessionEvent]) -> None:
    events = list(events)
    if not events:
        raise IntegrityError("empty event log")
    session_id = events[0].session_id
    for i, ev in enumerate(events):
        if ev.schema_version != SCHEMA_VERSION:
            raise IntegrityError(
                f"event {i}: unsupported schema_version {ev.schema_version}", seq=ev.seq
            )
        if ev.seq != i:
            raise IntegrityError(
                f"event sequence must be contiguous from 0; event {i} has seq {ev.seq}", seq=ev.seq
            )
        if ev.session_id != session_id:
            raise IntegrityError(f"event {i} belongs to a different session", seq=ev.seq)
        if ev.kind not in KINDS:
            raise IntegrityError(f"event {i}: unknown kind {ev.kind!r}", seq=ev.seq)
    if events[0].kind != CREATED:
        raise IntegrityError("first event must be 'created'", seq=events[0].seq)


@dataclass
class RebuiltSession:
    session_id: str
    config: SessionConfig
    state: SessionState
    planned_persisted: set[int]
    idempotency_key: str | None
    next_seq: int


def rebuild_session(events: list[SessionEvent]) -> RebuiltSession:
    """Replay a validated event stream into a live session state.

    Each logged plan is checked against the plan the reconstruction itself
    produces, and each logged choice against the logged answer and order, so
    tampering surfaces as IntegrityError at the first divergent event.
    """
    validate_event_stream(events)
    created = events[0]
    config = SessionConfig.from_dict(created.payload["config"])
    state = create_session(config)
    planned: set[int] = set()
    for ev in events[1:]:
        if ev.kind == TRIAL_PLANNED:
            logged = plan_from_payload(ev.payload)
            try:
                expected = state.next_trial()
                verify_plan(expected, logged)
            except IntegrityError as exc:
                raise IntegrityError(str(exc), trial_index=exc.trial_index, seq=ev.seq) from None
            planned.add(logged.trial_index)
        elif ev.kind == RESPONSE_RECORDED:
            expected = state.next_trial()
            idx = int(ev.payload["trial_index"])
            if idx != expected.trial_index:
                raise IntegrityError(
                    f"response event targets trial {idx} but trial "
                    f"{expected.trial_index} is outstanding",
                    trial_index=idx,
                    seq=ev.seq,
                )
            answer = ev.payload["rater_answer"]
            choice = resolve_choice(expected.order, answer)
            if ev.payload.get("choice") != choice.value:
                raise IntegrityError(
                    f"trial {idx}: logged choice {ev.payload.get('choice')!r} does not "
                    f"follow from order {expected.order.value!r} and answer {answer!r}",
                    trial_index=idx,
                    seq=ev.seq,
                )
            state._record_choice(expected, choice, float(ev.payload["timestamp"]))
        elif ev.kind == COMPLETED:
            if state.status != "complete":
                raise IntegrityError(
                    f"log claims completion after {state.cursor} of "
                    f"{config.total_trials} trials",
                    seq=ev.seq,
                )
    return RebuiltSession(
        session_id=created.session_id,
        config=config,
        state=state,
        planned_persisted=planned,
        idempotency_key=created.payload.get("idempotency_key"),
        next_seq=len(events),
    )
