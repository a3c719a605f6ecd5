"""Collects one verdict per acceptance criterion for the terminal summary."""

RESULTS = {}


def record(criterion, passed, detail):
    RESULTS[criterion] = (bool(passed), detail)
    return bool(passed)
