"""Packaged mesh files."""
