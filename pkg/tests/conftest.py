import pytest
import structlog


@pytest.fixture(autouse=True)
def _reset_structlog():
    """CLI tests configure structlog against pytest's captured stderr; drop it afterwards"""
    yield
    structlog.reset_defaults()
