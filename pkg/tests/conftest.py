import pytest


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "slow: full-length training runs (minutes each; cached under tests/.run_cache)",
    )
