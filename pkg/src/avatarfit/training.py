"""Small helpers shared by the training loops."""
from __future__ import annotations

import math

import torch

from .errors import TrainingDivergedError


def seeded_generator(seed: int) -> torch.Generator:
    torch.manual_seed(seed)
    return torch.Generator().manual_seed(seed)


def minibatches(n: int, batch_size: int, gen: torch.Generator, shuffle: bool = True):
    order = torch.randperm(n, generator=gen) if shuffle else torch.arange(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


def check_finite(loss: torch.Tensor, stage: str, epoch: int, step: int, extra: dict | None = None) -> float:
    value = float(loss.detach())
    if not math.isfinite(value):
        detail = "" if not extra else " " + ", ".join(f"{k}={float(v):.4g}" for k, v in extra.items())
        raise TrainingDivergedError(f"{stage}: non-finite loss at epoch {epoch}, step {step}{detail}")
    return value


def step_decay(optimizer, every: int, factor: float):
    """Epoch-level schedule: multiply the step size by ``factor`` every ``every`` epochs."""
    return torch.optim.lr_scheduler.StepLR(optimizer, step_size=every, gamma=factor)


class CurveLog:
    """Accumulates per-epoch means of named loss terms."""

    def __init__(self):
        self.rows: list[dict] = []
        self._sums: dict[str, float] = {}
        self._count = 0

    def add(self, n: int, **terms) -> None:
        for k, v in terms.items():
            self._sums[k] = self._sums.get(k, 0.0) + float(v) * n
        self._count += n

    def close_epoch(self, epoch: int, **fixed) -> dict:
        row = {"epoch": epoch, **fixed, **{k: v / max(self._count, 1) for k, v in self._sums.items()}}
        self.rows.append(row)
        self._sums, self._count = {}, 0
        return row

    def header(self) -> list[str]:
        keys: list[str] = []
        for r in self.rows:
            keys += [k for k in r if k not in keys]
        return keys

    def write_csv(self, path) -> None:
        from .io import write_csv

        header = self.header()
        write_csv(path, header, [[r.get(k, "") for k in header] for r in self.rows])
