"""Central tolerance record. Every numeric threshold used by the checks lives here."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace


@dataclass(frozen=True)
class Tolerances:
    # inverse Laplacian mean test: |mean| <= mean_rel * ||f||_inf + mean_abs
    mean_rel: float = 1e-10
    mean_abs: float = 1e-10
    traceless: float = 1e-12
    k_star: float = 1e-12
    margin_strict: float = 1e-8
    l2_rel: float = 1e-10
    energy_slack: float = 1e-8
    lin_rel: float = 1e-8
    min_decrease: float = 1e-12
    fd_order: int = 4
    l1_oversample: int = 4

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> "Tolerances":
        if not data:
            return cls()
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise KeyError(f"unknown tolerance keys: {sorted(unknown)}")
        return replace(cls(), **data)


DEFAULT_TOLERANCES = Tolerances()
