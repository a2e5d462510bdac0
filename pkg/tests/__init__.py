"""Tests for voromesh."""
