"""Labeled feature vectors partitioned into named column groups."""

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class SampleSet:
    """N feature vectors with optional +/-1 labels and named column spans."""

    x: np.ndarray
    y: np.ndarray | None = None
    groups: dict[str, tuple[int, int]] = field(default_factory=dict)

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("x must be 2-D (samples, features)")
        if not np.all(np.isfinite(x)):
            raise ValueError("feature vectors must be finite")
        object.__setattr__(self, "x", x)
        if self.y is not None:
            y = np.asarray(self.y)
            if y.shape != (x.shape[0],):
                raise ValueError("y length must match sample count")
            if not np.all(np.isin(y, (-1, 1))):
                raise ValueError("labels must be +1 or -1")
            object.__setattr__(self, "y", y.astype(np.float64))
        for name, (a, b) in self.groups.items():
            if not (0 <= a < b <= x.shape[1]):
                raise ValueError(f"group {name!r} span ({a},{b}) out of range")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def restrict(self, group: str) -> np.ndarray:
        if group not in self.groups:
            raise ValueError(f"group {group!r} absent from sample set")
        a, b = self.groups[group]
        return self.x[:, a:b]

    def both_classes_present(self) -> bool:
        return self.y is not None and len(np.unique(self.y)) == 2
