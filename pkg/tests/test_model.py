from __future__ import annotations

import math

import numpy as np
import pytest

from lobsim.errors import InvalidEventError, ModelFaultError, ValidationError
from lobsim.gridfn import GridFunction
from lobsim.model import Event, EventLog, LOBState, ScalingParams, imbalance, spread, top_volumes


def state(vb=1.0, va=1.0):
    return LOBState(1.0, GridFunction(0.1, -5, np.full(10, vb)), 1.2, GridFunction(0.1, -5, np.full(10, va)))


def test_power_law_scaling():
    p = ScalingParams.power_law(100)
    assert p.dx == 0.01
    assert p.dt == pytest.approx(100**-2.5)
    assert p.dv == p.dt
    assert p.dt / p.dx == pytest.approx(1e-3)
    assert p.n_ticks == 200000
    assert p.eta_n == pytest.approx(0.01**0.9)


def test_scaling_validation():
    with pytest.raises(ValidationError):
        ScalingParams(0.1, 0.01, 0.01, 0.05, 0.01, 1.0, 5.0)
    with pytest.raises(ValidationError):
        ScalingParams(0.1, 0.01, 0.01, 0.1, 0.01, 1.0, 0.1)
    with pytest.raises(ValidationError):
        ScalingParams.power_law(1)


def test_top_volumes_and_imbalance():
    s = state(3.0, 1.0)
    vb, va = top_volumes(s, 0.3)
    assert vb == pytest.approx(0.9) and va == pytest.approx(0.3)
    assert imbalance(s, 0.3) == pytest.approx(0.75)
    assert spread(s) == pytest.approx(0.2)
    with pytest.raises(ModelFaultError):
        imbalance(state(0.0, 0.0), 0.3)


def test_event_validation():
    with pytest.raises(InvalidEventError):
        Event("E", xi=1)
    with pytest.raises(InvalidEventError):
        Event("A")
    with pytest.raises(InvalidEventError):
        Event("B", omega=1.0)
    with pytest.raises(InvalidEventError):
        Event("A", xi=1, phi_dur=0.0)
    with pytest.raises(ValidationError):
        LOBState(math.nan, GridFunction(1, 0, []), 1.0, GridFunction(1, 0, []))


def test_event_log_round_trip():
    evs = [Event("A", xi=-3, phi_dur=0.5), Event("D", omega=-0.25, pi=0.3), Event("C", xi=2)]
    log = EventLog.from_events(evs)
    assert list(log) == evs
    assert log.kind.dtype == np.int8
