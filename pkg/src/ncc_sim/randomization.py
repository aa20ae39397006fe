"""Treatment-assignment sequences, reproducible from a seed.

Permuted blocks are the default: each period is filled with independently
shuffled blocks whose per-arm composition follows the period's allocation
ratio, which stratifies the allocation over calendar time.  Simple
randomization (i.i.d. draws with the allocation probabilities) is provided
for comparison runs.

Replicate streams use a counter-based generator (Philox) keyed by
``(master_seed, *path)``, so parallel workers produce identical draws no
matter how replicates are scheduled.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .design import TrialDesign, _block_quotas


def as_generator(seed) -> np.random.Generator:
    """Pass through a Generator, otherwise seed a fresh one."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def replicate_stream(master_seed: int, *path: int) -> np.random.Generator:
    """Independent stream for one replicate, invariant to worker scheduling."""
    key = np.random.SeedSequence([int(master_seed), *(int(p) for p in path)])
    return np.random.Generator(np.random.Philox(key))


@dataclass(frozen=True)
class AssignmentSequence:
    """Arm label per enrolled patient, with the period each one belongs to."""

    arms: np.ndarray
    periods: np.ndarray
    seed: int | None = None

    def __len__(self) -> int:
        return len(self.arms)

    def counts(self, num_arms: int, num_periods: int) -> np.ndarray:
        """Realized (arms x periods) allocation table."""
        out = np.zeros((num_arms, num_periods), dtype=np.int64)
        np.add.at(out, (self.arms, self.periods - 1), 1)
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["j", "arm", "period"])
            for j, (k, s) in enumerate(zip(self.arms, self.periods), start=1):
                writer.writerow([j, int(k), int(s)])


def permuted_block_sequence(design: TrialDesign, period: int, seed) -> np.ndarray:
    """Assignments for one period as shuffled fixed-composition blocks.

    Full blocks carry the exact per-block quota for each active arm.  When the
    block length does not divide the period size, the final short block is a
    shuffle of exactly the remaining per-arm counts, so the realized period
    totals always match the design's cell sizes.
    """
    rng = as_generator(seed)
    sizes = design.cells[:, period - 1]
    n_period = int(sizes.sum())
    block = design.block_sizes[period - 1]
    quotas = _block_quotas(design, period)
    if quotas is None:
        raise ValueError(
            f"period {period}: block size {block} cannot carry the allocation ratio {tuple(sizes)} in whole counts"
        )
    n_full = n_period // block
    base = np.repeat(np.arange(design.num_arms, dtype=np.int64), quotas)
    full = rng.permuted(np.tile(base, (n_full, 1)), axis=1).ravel() if n_full else np.empty(0, dtype=np.int64)
    left = sizes - n_full * quotas
    tail = rng.permutation(np.repeat(np.arange(design.num_arms, dtype=np.int64), left))
    return np.concatenate([full, tail])


def simple_sequence(design: TrialDesign, period: int, seed) -> np.ndarray:
    """I.i.d. assignments with probabilities proportional to the cell sizes."""
    rng = as_generator(seed)
    sizes = design.cells[:, period - 1]
    n_period = int(sizes.sum())
    probs = sizes / n_period
    return rng.choice(design.num_arms, size=n_period, p=probs).astype(np.int64)


def assignment_sequence(design: TrialDesign, seed) -> AssignmentSequence:
    """Whole-trial assignment sequence, period fragments concatenated in order."""
    rng = as_generator(seed)
    fragment = permuted_block_sequence if design.randomization_kind == "permuted_block" else simple_sequence
    arms = [fragment(design, s, rng) for s in range(1, design.num_periods + 1)]
    periods = np.repeat(
        np.arange(1, design.num_periods + 1, dtype=np.int64),
        design.period_sizes,
    )
    return AssignmentSequence(
        arms=np.concatenate(arms),
        periods=periods,
        seed=seed if isinstance(seed, (int, np.integer)) else None,
    )
