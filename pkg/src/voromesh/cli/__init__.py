"""Command-line interface for voromesh."""
