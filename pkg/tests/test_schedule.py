import numpy as np
import pytest

from modules.errors import InvalidArgumentError, TemperatureRangeError
from modules.material import WLF_TABLE
from modules.schedule import PiecewiseLinear, Schedule, SwitchEvent


def test_piecewise_linear_interpolates_and_holds():
    f = PiecewiseLinear.from_points([(0.0, 90.0), (1.5, 90.0), (2.25, 45.0)])
    assert f(0.75) == 90.0
    assert f(1.875) == pytest.approx(67.5)
    assert f(10.0) == 45.0
    assert f(-1.0) == 90.0
    assert f.to_points()[-1] == (2.25, 45.0)
    assert PiecewiseLinear.constant(3.0)(7.0) == 3.0


def test_piecewise_linear_rejects_unsorted():
    with pytest.raises(InvalidArgumentError):
        PiecewiseLinear([1.0, 0.0], [0.0, 1.0])
    with pytest.raises(InvalidArgumentError):
        PiecewiseLinear([], [])


def _schedule(**kwargs):
    return Schedule(
        total_time=1.0,
        temperature=PiecewiseLinear.from_points([(0.0, 31.5), (1.0, 90.0)]),
        factors={"load": PiecewiseLinear.from_points([(0.0, 0.0), (1.0, 1.0)])},
        **kwargs,
    )


def test_factor_lookup():
    schedule = _schedule()
    assert schedule.factor("load", 0.25) == pytest.approx(0.25)
    with pytest.raises(InvalidArgumentError):
        schedule.factor("missing", 0.0)


def test_events_are_sorted_and_due_once():
    schedule = _schedule(events=[SwitchEvent(0.6, "late"), SwitchEvent(0.3, "release")])
    assert [e.name for e in schedule.events] == ["release", "late"]
    assert schedule.events_due(0.2, set()) == []
    assert [e.name for e in schedule.events_due(0.3, set())] == ["release"]
    assert [e.name for e in schedule.events_due(0.7, {"release"})] == ["late"]


def test_time_grid_inserts_event_times():
    schedule = _schedule(events=[SwitchEvent(0.3, "release")])
    assert np.allclose(schedule.time_grid(0.25), [0.0, 0.25, 0.3, 0.5, 0.75, 1.0])
    grid = _schedule().time_grid(0.3)
    assert grid[-1] == 1.0
    assert len(grid) == 5


def test_time_grid_drops_slivers():
    schedule = _schedule(events=[SwitchEvent(0.25 + 1e-13, "release")])
    assert len(schedule.time_grid(0.25)) == 5
    with pytest.raises(InvalidArgumentError):
        schedule.time_grid(0.0)


def test_temperature_range_check():
    _schedule().check_temperature_range(WLF_TABLE["row1"])
    cold = Schedule(1.0, PiecewiseLinear.from_points([(0.0, 90.0), (1.0, 20.0)]))
    with pytest.raises(TemperatureRangeError):
        cold.check_temperature_range(WLF_TABLE["row1"])


def test_total_time_must_be_positive():
    with pytest.raises(InvalidArgumentError):
        Schedule(0.0, PiecewiseLinear.constant(70.0))
