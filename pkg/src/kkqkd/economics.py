"""Hardware cost of N-user downstream access networks, in photodetector units.

Every scheme shares a fixed head-end cost of one tunable laser (20 C_PD).
Per user: DV needs two single-photon detectors, CV schemes need two balanced
homodyne detectors, the local-local-oscillator scheme adds a tunable laser,
and direct detection needs one photodetector.
"""
from __future__ import annotations

from dataclasses import dataclass, field

SCHEMES = ("dv", "tlo", "llo", "dd")


@dataclass(frozen=True)
class CostModel:
    """Unit costs relative to ``c_pd``."""

    c_pd: float = 1.0
    multipliers: dict = field(default_factory=lambda: {"pd": 1.0, "bhd": 4.0, "spad": 10.0, "tunable_laser": 20.0})

    def __post_init__(self) -> None:
        if not self.c_pd > 0:
            raise ValueError(f"c_pd must be > 0 (got {self.c_pd})")
        required = {"pd", "bhd", "spad", "tunable_laser"}
        missing = required - set(self.multipliers)
        if missing:
            raise ValueError(f"cost multipliers missing: {sorted(missing)}")
        bad = {k: v for k, v in self.multipliers.items() if not v > 0}
        if bad:
            raise ValueError(f"cost multipliers must be > 0: {bad}")

    def unit(self, part: str) -> float:
        return self.multipliers[part]


def per_user_cost(scheme: str, model: CostModel) -> float:
    m = model.unit
    if scheme == "dv":
        return 2 * m("spad")
    if scheme == "tlo":
        return 2 * m("bhd")
    if scheme == "llo":
        return 2 * m("bhd") + m("tunable_laser")
    if scheme == "dd":
        return m("pd")
    raise ValueError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")


def network_cost(scheme: str, n_users: int, model: CostModel | None = None) -> float:
    """Total cost in units of ``C_PD`` (multiply by ``model.c_pd`` for currency)."""
    model = model or CostModel()
    if int(n_users) != n_users or n_users < 1:
        raise ValueError(f"n_users must be a positive integer (got {n_users})")
    return model.unit("tunable_laser") + n_users * per_user_cost(scheme, model)


def cost_table(n_max: int, model: CostModel | None = None) -> list[tuple[str, int, float]]:
    """Rows ``(scheme, n_users, cost_cpd)`` for ``n_users = 1..n_max``."""
    if int(n_max) != n_max or n_max < 1:
        raise ValueError(f"n_max must be a positive integer (got {n_max})")
    return [(s, n, network_cost(s, n, model)) for n in range(1, int(n_max) + 1) for s in SCHEMES]
