"""Schemas module tests."""
