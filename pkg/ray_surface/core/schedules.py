from abc import abstractmethod
from typing import Dict, Type


def anneal_tau(step: int, total: int, tau_start: float, tau_end: float) -> float:
    """Geometric interpolation from `tau_start` (step 0) to `tau_end` (step total)."""
    if not 0 <= step <= total:
        raise ValueError(f"step {step} outside [0, {total}]")
    if not tau_start >= tau_end > 0:
        raise ValueError(f"need tau_start >= tau_end > 0, got {tau_start}, {tau_end}")
    if total == 0:
        return tau_end
    return tau_start * (tau_end / tau_start) ** (step / total)


def lambda_r_schedule(epoch: int, ramp: int) -> float:
    """Residual weight: 0 at epoch 0, linear up to 1 at `ramp` epochs."""
    if ramp < 1:
        raise ValueError(f"lambda_r ramp must be >= 1 epoch, got {ramp}")
    return min(1.0, max(epoch, 0) / ramp)


class Schedule:
    def __init__(self, **kwargs):
        pass

    def reset(self) -> None:
        pass

    @abstractmethod
    def value(self, step: int, total: int) -> float:
        pass


class GeometricAnneal(Schedule):
    def __init__(self, start: float = 1.0, end: float = 0.01, **kwargs):
        super().__init__()
        self.start, self.end = start, end

    def value(self, step: int, total: int) -> float:
        return anneal_tau(step, total, self.start, self.end)


class LinearAnneal(Schedule):
    def __init__(self, start: float = 1.0, end: float = 0.01, **kwargs):
        super().__init__()
        if not start >= end > 0:
            raise ValueError(f"need start >= end > 0, got {start}, {end}")
        self.start, self.end = start, end

    def value(self, step: int, total: int) -> float:
        if total == 0:
            return self.end
        frac = min(max(step / total, 0.0), 1.0)
        return self.start + (self.end - self.start) * frac


class LinearRamp(Schedule):
    """Ramp from 0 to 1 over `ramp` units; `total` is ignored."""

    def __init__(self, ramp: int = 10, **kwargs):
        super().__init__()
        self.ramp = ramp

    def value(self, step: int, total: int = 0) -> float:
        return lambda_r_schedule(step, self.ramp)


class Constant(Schedule):
    """Fixed value; falls back to `start` so it can stand in for an anneal."""

    def __init__(self, value: float = None, start: float = 1.0, **kwargs):
        super().__init__()
        self.constant = start if value is None else value

    def value(self, step: int, total: int = 0) -> float:
        return self.constant


SCHEDULES: Dict[str, Type[Schedule]] = {
    "geometric": GeometricAnneal,
    "linear": LinearAnneal,
    "ramp": LinearRamp,
    "constant": Constant,
}


def make_schedule(name: str, **params) -> Schedule:
    if name not in SCHEDULES:
        raise ValueError(f"unknown schedule '{name}', expected one of {sorted(SCHEDULES)}")
    return SCHEDULES[name](**params)
