"""Small builders shared by the unit tests."""

from __future__ import annotations

import numpy as np

from wearauth.core import SubjectStream


def make_stream(subject="s1", levels=(1,) * 10, hr=None, start="2016-01-04T10:00", gaps=()):
    """Hand-built stream of consecutive minutes, minus the offsets in ``gaps``."""
    n = len(levels)
    keep = [i for i in range(n) if i not in set(gaps)]
    hr = np.full(n, 70.0) if hr is None else np.asarray(hr, dtype=float)
    rng = np.arange(n, dtype=float)
    return SubjectStream(
        subject,
        np.datetime64(start, "m") + np.asarray(keep, dtype=np.int64),
        hr[keep],
        (1.0 + 0.1 * rng)[keep],
        np.asarray([10 * lv for lv in levels], dtype=np.int64)[keep],
        (1.0 + rng / 100)[keep],
        np.asarray(levels, dtype=np.int64)[keep],
    )


# one outcome line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: dict[int, str] = {}


def record(k: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[k] = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
    assert ok, ACCEPTANCE[k]
