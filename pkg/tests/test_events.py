import json

import numpy as np
import pytest

from apc.errors import IntegrityError
from apc.events import (
    CREATED,
    RESPONSE_RECORDED,
    TRIAL_PLANNED,
    append_event,
    make_event,
    plan_payload,
    read_events,
    rebuild_session,
)
from apc.psychometric import PsychometricModel
from apc.session import SessionConfig, create_session

from conftest import scripted_answer


def small_config(seed=4):
    return SessionConfig(
        variants=("va", "vb"),
        clips=tuple(f"c{i}" for i in range(6)),
        seed=seed,
        trials_per_variant=4,
        policy="bald",
    )


def record_scripted_log(path, config, n_responses, session_id="sess1", seed=99):
    """Drive a session while appending events, mirroring the service."""
    state = create_session(config)
    rng = np.random.default_rng(seed)
    model = PsychometricModel(midpoint=30.0)
    seq = 0
    append_event(path, make_event(session_id, seq, CREATED,
                                  {"config": config.to_dict(), "idempotency_key": None}))
    seq += 1
    for _ in range(n_responses):
        plan = state.next_trial()
        append_event(path, make_event(session_id, seq, TRIAL_PLANNED, plan_payload(plan)))
        seq += 1
        answer = scripted_answer(plan, model, rng)
        state.record_response(plan.trial_index, answer)
        record = state.records[-1]
        append_event(
            path,
            make_event(session_id, seq, RESPONSE_RECORDED, {
                "trial_index": plan.trial_index,
                "rater_answer": answer,
                "choice": record.choice.value,
                "timestamp": record.timestamp,
            }),
        )
        seq += 1
    return state


class TestEventStream:
    def test_round_trip_rebuild_matches_live(self, tmp_path):
        path = tmp_path / "s.jsonl"
        config = small_config()
        live = record_scripted_log(path, config, n_responses=5)
        rebuilt = rebuild_session(read_events(path))
        assert rebuilt.state.records == live.records
        assert rebuilt.state.estimates() == live.estimates()
        assert rebuilt.config == config

    def test_pending_plan_survives_rebuild(self, tmp_path):
        path = tmp_path / "s.jsonl"
        config = small_config()
        state = create_session(config)
        append_event(path, make_event("sess1", 0, CREATED,
                                      {"config": config.to_dict(), "idempotency_key": None}))
        plan = state.next_trial()
        append_event(path, make_event("sess1", 1, TRIAL_PLANNED, plan_payload(plan)))
        rebuilt = rebuild_session(read_events(path))
        assert rebuilt.planned_persisted == {0}
        assert rebuilt.state.next_trial() == plan

    def test_tampered_level_names_first_divergent_event(self, tmp_path):
        path = tmp_path / "s.jsonl"
        record_scripted_log(path, small_config(), n_responses=4)
        lines = path.read_text().strip().split("\n")
        tampered = json.loads(lines[3])  # second trial_planned event
        assert tampered["kind"] == TRIAL_PLANNED
        tampered["payload"]["reference_level"] = max(
            1, tampered["payload"]["reference_level"] - 2
        )
        lines[3] = json.dumps(tampered, sort_keys=True)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(IntegrityError) as err:
            rebuild_session(read_events(path))
        assert err.value.seq == 3
        assert err.value.trial_index == 1

    def test_non_contiguous_seq_rejected(self, tmp_path):
        path = tmp_path / "s.jsonl"
        record_scripted_log(path, small_config(), n_responses=2)
        lines = path.read_text().strip().split("\n")
        skipped = json.loads(lines[-1])
        skipped["seq"] = 99
        lines[-1] = json.dumps(skipped, sort_keys=True)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(IntegrityError):
            read_events(path)

    def test_inconsistent_choice_detected(self, tmp_path):
        path = tmp_path / "s.jsonl"
        record_scripted_log(path, small_config(), n_responses=3)
        lines = path.read_text().strip().split("\n")
        ev = json.loads(lines[2])
        assert ev["kind"] == RESPONSE_RECORDED
        ev["payload"]["choice"] = (
            "standard" if ev["payload"]["choice"] == "reference" else "reference"
        )
        lines[2] = json.dumps(ev, sort_keys=True)
        path.write_text("\n".join(lines) + "\n")
        with pytest.raises(IntegrityError) as err:
            rebuild_session(read_events(path))
        assert err.value.seq == 2
