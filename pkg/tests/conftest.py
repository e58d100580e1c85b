"""Fixtures shared across the test suite."""

import pytest

from toydata import toy_setup


@pytest.fixture
def small_data():
    return toy_setup()
