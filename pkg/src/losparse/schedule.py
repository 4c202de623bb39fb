"""Cubic remaining-fraction schedule with warm-up and final fine-tuning phases."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class PruneSchedule:
    """Fraction of neurons kept at each optimizer step.

    ``p_t`` is 1 for the first ``warmup_steps`` steps, decays cubically to
    ``final_fraction`` and stays there for the last ``final_steps`` steps.

    ``literal`` switches the decay numerator from ``t - t_i`` to
    ``t - t_i - t_f``. That variant overshoots 1 after warm-up and jumps at
    ``T - t_f``; it exists only for comparison.
    """

    total_steps: int
    warmup_steps: int
    final_steps: int
    final_fraction: float
    literal: bool = False

    def __post_init__(self):
        if self.total_steps < 1:
            raise ValueError(f"total_steps must be positive, got {self.total_steps}")
        if self.warmup_steps < 0 or self.final_steps < 0:
            raise ValueError("warm-up and final step counts must be non-negative")
        if self.warmup_steps + self.final_steps >= self.total_steps:
            raise ValueError(
                f"warmup_steps + final_steps ({self.warmup_steps} + {self.final_steps}) "
                f"must be below total_steps ({self.total_steps})"
            )
        # 0 is allowed so a schedule can prune every sparse column away
        if not 0.0 <= self.final_fraction <= 1.0:
            raise ValueError(f"final_fraction must lie in [0, 1], got {self.final_fraction}")


def remaining_fraction(s: PruneSchedule, t: int) -> float:
    if not 0 <= t <= s.total_steps:
        raise IndexError(f"step {t} outside [0, {s.total_steps}]")
    if t < s.warmup_steps:
        return 1.0
    end = s.total_steps - s.final_steps
    if t >= end:
        return s.final_fraction
    span = s.total_steps - s.warmup_steps - s.final_steps
    offset = t - s.warmup_steps - (s.final_steps if s.literal else 0)
    return s.final_fraction + (1.0 - s.final_fraction) * (1.0 - offset / span) ** 3
