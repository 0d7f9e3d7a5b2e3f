import numpy as np
import pytest

from apc.psychometric import Choice, PsychometricModel, prefer_reference_prob
from apc.session import ANSWER_FIRST, ANSWER_SECOND, PresentationOrder


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def scripted_answer(plan, model: PsychometricModel, rng: np.random.Generator) -> str:
    """What a simulated observer would answer ('first'/'second') for a plan."""
    p = prefer_reference_prob(model, plan.reference_level)
    prefers_reference = rng.random() < p
    if plan.order is PresentationOrder.REFERENCE_FIRST:
        return ANSWER_FIRST if prefers_reference else ANSWER_SECOND
    return ANSWER_SECOND if prefers_reference else ANSWER_FIRST


def run_scripted_session(state, model: PsychometricModel, rng: np.random.Generator):
    """Drive a session to completion with a simulated observer."""
    from apc.errors import SessionCompleteError

    while True:
        try:
            plan = state.next_trial()
        except SessionCompleteError:
            return state
        state.record_response(plan.trial_index, scripted_answer(plan, model, rng))


def choice_sequence(rng: np.random.Generator, n: int) -> list[Choice]:
    return [
        Choice.PREFER_REFERENCE if rng.random() < 0.5 else Choice.PREFER_STANDARD
        for _ in range(n)
    ]
