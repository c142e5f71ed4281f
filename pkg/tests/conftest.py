"""Shared fixtures: canonical gait recordings and small cohort builders."""

from __future__ import annotations

import numpy as np
import pytest

from stepforge.dsp import vector_magnitude
from stepforge.model import MinuteRecord, WearState
from stepforge.simulate import GaitSegment, gen_gait

WALK_RECIPE = [
    GaitSegment("rest", 30, noise_sd_g=0.01),
    GaitSegment("walk", 60, cadence_hz=2.0, amplitude_g=0.35, noise_sd_g=0.01),
    GaitSegment("rest", 30, noise_sd_g=0.01),
]


@pytest.fixture(scope="session")
def walk_recording():
    """120 s: 30 s rest, 60 s of 2 Hz walking (120 true steps), 30 s rest."""
    rec, truth = gen_gait(WALK_RECIPE, sample_rate_hz=80.0, seed=5)
    return rec, truth


@pytest.fixture(scope="session")
def walk_vm(walk_recording):
    rec, truth = walk_recording
    return vector_magnitude(rec), truth


def make_minute(
    subject="S1",
    day=1,
    minute=0,
    wear=WearState.WAKE_WEAR,
    flagged=False,
    mims=1.0,
    ac=10,
    steps=None,
):
    return MinuteRecord(
        subject_id=subject,
        day_index=day,
        minute_of_day=minute,
        wear=wear,
        quality_flagged=flagged,
        mims=mims,
        ac=ac,
        steps={"peak_original": 5.0} if steps is None else steps,
    )


@pytest.fixture
def minute_factory():
    return make_minute
