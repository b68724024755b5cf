"""Training run records and their on-disk forms.

Wall-clock time is kept on the in-memory report but never written to the
output files, so reruns with the same seed produce byte-identical outputs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import io


@dataclass
class TrainReport:
    experiment: str
    seed: int
    loss_g: list = field(default_factory=list)
    loss_d: list = field(default_factory=list)
    coverage: list = field(default_factory=list)  # (step, covered_modes)
    stage_curves: dict = field(default_factory=dict)  # stage -> list of losses
    metrics: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    snapshot_id: str = ""

    def check_finite(self) -> None:
        for name, seq in (("loss_g", self.loss_g), ("loss_d", self.loss_d)):
            arr = np.asarray(seq, dtype=np.float64)
            if arr.size and not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"non-finite values recorded in {name}")

    def write_curves_csv(self, path) -> None:
        cov = dict(self.coverage)
        rows = []
        for i, (lg, ld) in enumerate(zip(self.loss_g, self.loss_d)):
            rows.append([i, lg, ld, cov.get(i, "")])
        io.write_csv(path, ["step", "loss_G", "loss_D", "coverage"], rows)

    def write_stage_csv(self, stage: str, path) -> None:
        rows = [[i, v] for i, v in enumerate(self.stage_curves.get(stage, []))]
        io.write_csv(path, ["step", "loss"], rows)
