"""Soft risk level: start risk-neutral, tighten linearly to the target alpha."""
from dataclasses import dataclass


@dataclass(frozen=True)
class RiskSchedule:
    alpha: float
    rho: float
    total_steps: int

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.rho <= 1.0:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if self.total_steps < 1:
            raise ValueError("total_steps must be positive")

    @property
    def soft_steps(self) -> float:
        """Step index from which alpha' stays at alpha."""
        return self.rho * self.total_steps


def soft_risk_level(m: int, schedule: RiskSchedule) -> float:
    """max(alpha, 1 - (1 - alpha) * m / (rho * M)) for 1-based step m."""
    if not 1 <= m <= schedule.total_steps:
        raise ValueError(f"step {m} outside 1..{schedule.total_steps}")
    if m >= schedule.soft_steps:
        # the formula lands a few ulps above alpha at m == rho * M
        return schedule.alpha
    return max(schedule.alpha, 1.0 - (1.0 - schedule.alpha) * m / schedule.soft_steps)
