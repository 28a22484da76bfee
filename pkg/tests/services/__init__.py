"""Services module tests."""
