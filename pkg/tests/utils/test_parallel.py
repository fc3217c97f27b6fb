import threading

from app.core.structured_logging import get_correlation_id, set_correlation_id
from app.utils.parallel import parallel_map


def test_results_keep_input_order():
    items = list(range(20))
    assert parallel_map(lambda x: x * x, items, workers=4) == [x * x for x in items]


def test_single_worker_runs_inline():
    caller = threading.get_ident()
    assert parallel_map(lambda _: threading.get_ident(), [1, 2, 3], workers=1) == [caller] * 3


def test_correlation_id_reaches_worker_threads():
    set_correlation_id("run-7")
    assert parallel_map(lambda _: get_correlation_id(), [1, 2, 3, 4], workers=3) == ["run-7"] * 4


def test_empty_input():
    assert parallel_map(lambda x: x, [], workers=4) == []
