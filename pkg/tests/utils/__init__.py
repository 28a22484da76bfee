# pylint: disable=duplicate-code
"""Utility helpers for tests."""

# Shared fixtures intentionally mirror other tests.
