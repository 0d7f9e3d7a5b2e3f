"""HTTP session service for live rating sessions.

Sessions are event-sourced: every state change is appended to a per-session
JSONL log under the data directory, and restarting the service rebuilds all
sessions from those logs.  Rater-facing payloads never disclose which of
the two presented stimuli is the reference, nor its scale level; only the
experimenter token may read estimates.
"""

from __future__ import annotations

import math
import threading
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import Depends, FastAPI, Header, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from pydantic import BaseModel
from typing import Literal

from .errors import ApcError, ConfigError, IntegrityError, SessionCompleteError
from .events import (
    COMPLETED,
    CREATED,
    RESPONSE_RECORDED,
    TRIAL_PLANNED,
    append_event,
    make_event,
    plan_payload,
    read_events,
    rebuild_session,
)
from .manifest import StimulusManifest, validate_config_against_manifest, variant_key, level_key
from .session import (
    ANSWER_FIRST,
    PresentationOrder,
    SessionConfig,
    SessionState,
    create_session,
)

RATER_ROLE = "rater"
EXPERIMENTER_ROLE = "experimenter"


@dataclass
class ServiceConfig:
    data_dir: Path
    manifest: StimulusManifest
    rater_token: str = "rater-token"
    experimenter_token: str = "experimenter-token"


@dataclass
class SessionRuntime:
    session_id: str
    config: SessionConfig
    state: SessionState
    log_path: Path
    next_seq: int
    planned_persisted: set[int] = field(default_factory=set)
    lock: threading.Lock = field(default_factory=threading.Lock)

    def append(self, kind: str, payload: dict) -> None:
        append_event(self.log_path, make_event(self.session_id, self.next_seq, kind, payload))
        self.next_seq += 1


class CreateSessionRequest(BaseModel):
    config: dict
    manifest_ref: str = "default"
    idempotency_key: str | None = None


class ResponseBody(BaseModel):
    choice: Literal["first", "second"]


@dataclass
class Registry:
    service: ServiceConfig
    sessions: dict[str, SessionRuntime] = field(default_factory=dict)
    idempotency: dict[str, str] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)


def _recover_sessions(registry: Registry) -> None:
    data_dir = registry.service.data_dir
    for log_path in sorted(data_dir.glob("*.jsonl")):
        try:
            rebuilt = rebuild_session(read_events(log_path))
        except (ApcError, KeyError, ValueError) as exc:
            print(f"warning: skipping corrupt session log {log_path}: {exc}")
            continue
        runtime = SessionRuntime(
            session_id=rebuilt.session_id,
            config=rebuilt.config,
            state=rebuilt.state,
            log_path=log_path,
            next_seq=rebuilt.next_seq,
            planned_persisted=rebuilt.planned_persisted,
        )
        registry.sessions[rebuilt.session_id] = runtime
        if rebuilt.idempotency_key:
            registry.idempotency[rebuilt.idempotency_key] = rebuilt.session_id


def _estimate_payload(state: SessionState) -> list[dict]:
    out = []
    for est in state.estimates():
        out.append(
            {
                "variant": est.variant,
                "pse": None if math.isnan(est.pse) else est.pse,
                "uncertainty": None if math.isnan(est.uncertainty) else est.uncertainty,
                "n_trials": est.n_trials,
                "method": est.method,
            }
        )
    return out


def create_app(service_config: ServiceConfig) -> FastAPI:
    service_config.data_dir.mkdir(parents=True, exist_ok=True)
    registry = Registry(service=service_config)
    _recover_sessions(registry)

    app = FastAPI(title="adaptive paired-comparison session service")
    app.state.registry = registry
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    def role_of(authorization: str | None = Header(default=None)) -> str:
        if not authorization or not authorization.startswith("Bearer "):
            raise HTTPException(status_code=401, detail="missing bearer token")
        token = authorization.removeprefix("Bearer ")
        if token == service_config.experimenter_token:
            return EXPERIMENTER_ROLE
        if token == service_config.rater_token:
            return RATER_ROLE
        raise HTTPException(status_code=401, detail="unknown token")

    def get_runtime(session_id: str) -> SessionRuntime:
        runtime = registry.sessions.get(session_id)
        if runtime is None:
            raise HTTPException(status_code=404, detail=f"no session {session_id!r}")
        return runtime

    @app.get("/v1/health")
    def health() -> dict:
        return {"status": "ok", "sessions": len(registry.sessions)}

    @app.post("/v1/sessions", status_code=201)
    def create_session_endpoint(body: CreateSessionRequest, role: str = Depends(role_of)) -> dict:
        if body.manifest_ref != "default":
            raise HTTPException(
                status_code=422,
                detail=[{"field": "manifest_ref", "message": f"unknown manifest {body.manifest_ref!r}"}],
            )
        try:
            config = SessionConfig.from_dict(body.config)
        except (ConfigError, TypeError) as exc:
            raise HTTPException(
                status_code=422, detail=[{"field": "config", "message": str(exc)}]
            ) from exc
        problems = validate_config_against_manifest(config, service_config.manifest)
        if problems:
            raise HTTPException(
                status_code=422,
                detail=[{"field": "config", "message": p} for p in problems],
            )
        with registry.lock:
            if body.idempotency_key and body.idempotency_key in registry.idempotency:
                return {"session_id": registry.idempotency[body.idempotency_key]}
            session_id = uuid.uuid4().hex
            runtime = SessionRuntime(
                session_id=session_id,
                config=config,
                state=create_session(config),
                log_path=service_config.data_dir / f"{session_id}.jsonl",
                next_seq=0,
            )
            runtime.append(
                CREATED,
                {"config": config.to_dict(), "idempotency_key": body.idempotency_key},
            )
            registry.sessions[session_id] = runtime
            if body.idempotency_key:
                registry.idempotency[body.idempotency_key] = session_id
        return {"session_id": session_id}

    @app.get("/v1/sessions/{session_id}/trials/next")
    def next_trial(session_id: str, role: str = Depends(role_of)) -> dict:
        runtime = get_runtime(session_id)
        with runtime.lock:
            try:
                plan = runtime.state.next_trial()
            except SessionCompleteError:
                raise HTTPException(
                    status_code=409,
                    detail={
                        "status": "complete",
                        "trials_completed": runtime.state.cursor,
                    },
                ) from None
            if plan.trial_index not in runtime.planned_persisted:
                runtime.append(TRIAL_PLANNED, plan_payload(plan))
                runtime.planned_persisted.add(plan.trial_index)
            manifest = service_config.manifest
            reference_url = manifest.url(plan.clip, level_key(plan.reference_level))
            standard_url = manifest.url(plan.clip, variant_key(plan.variant))
            if plan.order is PresentationOrder.REFERENCE_FIRST:
                first, second = reference_url, standard_url
            else:
                first, second = standard_url, reference_url
            total = runtime.config.total_trials
            return {
                "trial_index": plan.trial_index,
                "first": first,
                "second": second,
                "progress": plan.trial_index / total,
                "session_status": runtime.state.status,
            }

    @app.post("/v1/sessions/{session_id}/trials/{trial_index}/response")
    def post_response(
        session_id: str, trial_index: int, body: ResponseBody, role: str = Depends(role_of)
    ) -> dict:
        runtime = get_runtime(session_id)
        with runtime.lock:
            state = runtime.state
            if trial_index < state.cursor:
                # at-least-once delivery: a replayed POST with the identical
                # body is a no-op, anything else is a conflict
                answered = _answer_for(state.records[trial_index])
                if answered == body.choice:
                    return {"accepted": True, "session_status": state.status, "idempotent": True}
                raise HTTPException(
                    status_code=409,
                    detail=f"trial {trial_index} was already answered differently",
                )
            if state.status == "complete":
                raise HTTPException(
                    status_code=409,
                    detail={"status": "complete", "trials_completed": state.cursor},
                )
            plan = state.next_trial()
            if trial_index != plan.trial_index:
                raise HTTPException(
                    status_code=409,
                    detail=f"trial {plan.trial_index} is outstanding, got response "
                    f"for {trial_index}",
                )
            state.record_response(trial_index, body.choice)
            record = state.records[-1]
            runtime.append(
                RESPONSE_RECORDED,
                {
                    "trial_index": trial_index,
                    "rater_answer": body.choice,
                    "choice": record.choice.value,
                    "timestamp": record.timestamp,
                },
            )
            if state.status == "complete":
                runtime.append(COMPLETED, {"trials_completed": state.cursor})
            return {"accepted": True, "session_status": state.status}

    @app.get("/v1/sessions/{session_id}/estimates")
    def get_estimates(session_id: str, role: str = Depends(role_of)) -> dict:
        if role != EXPERIMENTER_ROLE:
            raise HTTPException(
                status_code=403, detail="estimates require the experimenter token"
            )
        runtime = get_runtime(session_id)
        with runtime.lock:
            return {
                "session_id": session_id,
                "session_status": runtime.state.status,
                "estimates": _estimate_payload(runtime.state),
            }

    return app


def _answer_for(record) -> str:
    """Invert choice resolution: which first/second answer produced this record."""
    reference_first = record.plan.order is PresentationOrder.REFERENCE_FIRST
    prefer_reference = record.choice.value == "reference"
    return ANSWER_FIRST if reference_first == prefer_reference else "second"
