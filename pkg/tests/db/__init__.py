"""Database module tests."""
