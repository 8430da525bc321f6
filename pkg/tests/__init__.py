"""Tests for SQDM."""
