"""Complex-multiplication tallies, one row per detection, split by phase.

Kernels charge the conventional cost of the operation they perform (an
``m x n`` matrix-vector product costs ``m*n``, a QAM mapping costs ``M`` per
entry, a squared norm costs one per entry, a Cholesky factor ``n^3/3`` ...),
which is the accounting used by the closed-form expressions in
:mod:`nagmcmc.harness`.
"""

from __future__ import annotations

import numpy as np

PHASES = ("preprocessing", "gd", "walk", "residual", "decision")


class OpCounter:
    """Per-detection multiplication tallies.

    Parameters
    ----------
    n : int
        Number of detections (trials) tracked side by side.
    """

    def __init__(self, n: int = 1):
        self.counts = np.zeros((n, len(PHASES)))

    def __len__(self):
        return self.counts.shape[0]

    def add(self, phase: str, amount, rows=None) -> None:
        amount = np.asarray(amount, dtype=np.float64)
        if np.any(amount < 0):
            raise ValueError("negative multiplication count")
        col = PHASES.index(phase)
        if rows is None:
            self.counts[:, col] += amount
        else:
            np.add.at(self.counts[:, col], rows, amount)

    def phase(self, name: str) -> np.ndarray:
        return self.counts[:, PHASES.index(name)]

    def total(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def snapshot(self, row: int = 0) -> dict[str, float]:
        return {p: float(v) for p, v in zip(PHASES, self.counts[row])}

    def extend(self, other: "OpCounter") -> None:
        self.counts = np.vstack([self.counts, other.counts])


def charge(counter: OpCounter | None, phase: str, amount, rows=None) -> None:
    if counter is not None:
        counter.add(phase, amount, rows)
