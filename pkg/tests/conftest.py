import pytest

from app.core.structured_logging import correlation_id

pytest_plugins = ["tests.fixtures.task_fixtures"]


@pytest.fixture(autouse=True)
def clear_correlation_id():
    """Every test starts without a run correlation id."""
    token = correlation_id.set(None)
    yield
    correlation_id.reset(token)
