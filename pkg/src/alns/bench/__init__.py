"""Benchmark problems, manufactured solutions, reports and the command-line driver."""
