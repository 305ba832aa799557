"""Execution counters proving which optional code paths actually ran.

Training methods are expected to be faithful to their flags: e.g. the plain
mean-teacher baseline must never enter the collaborative decode or the
principal-axis labeling code.  Those functions call :func:`bump` on entry so
tests and experiment drivers can assert this directly.
"""

from collections import Counter

_counts: Counter = Counter()


def bump(name: str, amount: int = 1) -> None:
    _counts[name] += amount


def reset() -> None:
    _counts.clear()


def counts(prefix: str = "") -> dict[str, int]:
    """Snapshot of counters, optionally filtered to one name prefix."""
    return {k: v for k, v in sorted(_counts.items()) if k.startswith(prefix)}
