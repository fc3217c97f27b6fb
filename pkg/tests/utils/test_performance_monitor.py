import pytest

from app.utils.performance_monitor import ResponseTimer, measure_time


def test_measure_time_reports_elapsed_seconds(mocker):
    mocker.patch("app.utils.performance_monitor.time.perf_counter", side_effect=[10.0, 12.5])

    with measure_time() as timer:
        pass

    assert timer.get_elapsed_time() == pytest.approx(2.5)
    assert timer.elapsed_ms == pytest.approx(2500.0)


def test_unstarted_timer_reads_zero():
    assert ResponseTimer().get_elapsed_time() == 0.0


def test_timer_stops_even_when_block_raises(mocker):
    mocker.patch("app.utils.performance_monitor.time.perf_counter", side_effect=[1.0, 4.0])

    with pytest.raises(RuntimeError), measure_time() as timer:
        raise RuntimeError("iteration failed")

    assert timer.get_elapsed_time() == pytest.approx(3.0)
