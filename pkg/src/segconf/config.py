"""Run configuration shared by the pipeline, sweeps and the CLI."""

from __future__ import annotations

from dataclasses import asdict, dataclass

from .errors import InvalidSpec


@dataclass(frozen=True)
class RunConfig:
    """Pipeline knobs. Defaults are the headline setting: eta 0.9, tau 0.2, mean over inner pixels."""

    eta: float = 0.9
    tau: float = 0.2
    connectivity: int = 4
    agg: str = "mean"
    region: str = "inner"
    refine_mode: str = "segment"
    bins: int = 100
    # "cas" fuses all statistics; "softmax" scores with the top class probability alone
    baseline: str = "cas"
    seg_iou: str = "adjusted"
    correlation: str = "pearson"

    def __post_init__(self) -> None:
        checks = [
            (0.0 < self.eta < 1.0, f"eta must lie in (0, 1), got {self.eta}"),
            (0.0 <= self.tau <= 1.0, f"tau must lie in [0, 1], got {self.tau}"),
            (self.connectivity in (4, 8), f"connectivity must be 4 or 8, got {self.connectivity}"),
            (self.agg in ("mean", "median"), f"agg must be mean or median, got {self.agg!r}"),
            (self.region in ("inner", "whole"), f"region must be inner or whole, got {self.region!r}"),
            (self.refine_mode in ("segment", "pixel", "off"), f"bad refine mode {self.refine_mode!r}"),
            (self.bins >= 2, f"bins must be >= 2, got {self.bins}"),
            (self.baseline in ("cas", "softmax"), f"baseline must be cas or softmax, got {self.baseline!r}"),
            (self.seg_iou in ("adjusted", "accuracy"), f"bad seg_iou mode {self.seg_iou!r}"),
            (self.correlation in ("pearson", "spearman"), f"bad correlation {self.correlation!r}"),
        ]
        for ok, msg in checks:
            if not ok:
                raise InvalidSpec(msg)

    def to_dict(self) -> dict:
        return asdict(self)
