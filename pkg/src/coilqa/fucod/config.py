from __future__ import annotations

from collections.abc import Mapping
from dataclasses import asdict, dataclass
from typing import Any

from coilqa.errors import InputError


class TooFewSamples(InputError):
    code = "TOO_FEW_SAMPLES"


class KTooLarge(InputError):
    code = "K_TOO_LARGE"


@dataclass(frozen=True)
class FucodConfig:
    """Detector parameters.

    ``lof_cap`` is the raw LOF mapped to score 1; ``robust_spread_mult``
    scales the MAD used to normalize distance and cluster scores.

    A single saturated detector already fuses to the 0.5 flag level, so each
    detector on its own must stay quiet on clean data. With a MAD multiplier
    of 5 and a cap of 2, the kNN distance and LOF tails of ordinary noise
    flag around 10% of samples. 25 and 3 put the alarm onset near 15 MADs
    and LOF 2.2.
    """

    alpha: float = 0.05
    k_nn: int = 10
    k_clusters: int = 3
    lof_cap: float = 3.0
    robust_spread_mult: float = 25.0
    eps: float = 1e-12

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise InputError(f"alpha must lie in (0, 1), got {self.alpha}")
        if int(self.k_nn) != self.k_nn or self.k_nn < 2:
            raise InputError(f"k_nn must be an integer >= 2, got {self.k_nn}")
        if int(self.k_clusters) != self.k_clusters or self.k_clusters < 1:
            raise InputError(f"k_clusters must be an integer >= 1, got {self.k_clusters}")
        if not self.lof_cap > 1.0:
            raise InputError(f"lof_cap must exceed 1, got {self.lof_cap}")
        if not self.robust_spread_mult > 0.0:
            raise InputError("robust_spread_mult must be positive")
        if not self.eps > 0.0:
            raise InputError("eps must be positive")

    def check_sample_count(self, n: int) -> None:
        if n < 3:
            raise TooFewSamples(f"outlier detection needs at least 3 samples, got {n}")
        if self.k_nn >= n:
            raise KTooLarge(f"k_nn={self.k_nn} needs more than {self.k_nn} samples, got {n}")
        if self.k_clusters > n:
            raise KTooLarge(f"k_clusters={self.k_clusters} exceeds sample count {n}")

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any] | None) -> FucodConfig:
        try:
            return cls(**(doc or {}))
        except TypeError as exc:
            raise InputError(f"bad fucod configuration: {exc}") from exc
