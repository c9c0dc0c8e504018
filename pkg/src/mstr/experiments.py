"""Reusable experiment drivers shared by ``scripts/`` and the acceptance suite."""
from __future__ import annotations

import dataclasses
import statistics
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

from .data import SyntheticSpec, generate_synthetic_dataset
from .model import MstrConfig
from .trainer import TrainConfig, evaluate, train

# Templates share one feature direction and flip sign per sample, so a class is
# identified by how long its bump lasts rather than where it points.  Per-frame
# statistics then overlap across classes and only multi-frame integration
# separates them.
BENEFIT_SPEC = SyntheticSpec(
    num_classes=3,
    T_range=(150, 243),
    input_dim=8,
    pattern_scales=(1, 9, 27),
    noise_std=0.5,
    samples_per_class=125,
    template_norm=6.0,
    amplitude_rule="energy",
    shared_direction=True,
    random_polarity=True,
)
BENEFIT_MODEL = MstrConfig(input_dim=8, model_dim=16, p=3, L=4, heads=2, blocks=1, num_classes=3,
                           use_positional=False)
BENEFIT_TRAIN = TrainConfig(epochs=40, learning_rate=3e-3, batch_size=16)


@dataclass
class BenefitResult:
    levels: tuple[int, ...]
    seeds: tuple[int, ...]
    test_wa: dict[int, list[float]] = field(default_factory=dict)

    def median(self, L: int) -> float:
        return float(statistics.median(self.test_wa[L]))

    def to_csv(self) -> str:
        lines = ["L,seed,test_wa"]
        for L in self.levels:
            lines += [f"{L},{s},{wa:.10g}" for s, wa in zip(self.seeds, self.test_wa[L])]
        return "\n".join(lines) + "\n"


def multiscale_benefit(seeds: Sequence[int] = (0, 1, 2, 3, 4), levels: Sequence[int] = (4, 1),
                       spec: SyntheticSpec = BENEFIT_SPEC, model: MstrConfig = BENEFIT_MODEL,
                       train_config: TrainConfig = BENEFIT_TRAIN,
                       log: Optional[Callable[[str], None]] = None) -> BenefitResult:
    """Test WA of the best-validation checkpoint for each (L, seed).

    Seed ``s`` fixes both the generated dataset and the initialisation, so
    the L values are compared on identical data.
    """
    res = BenefitResult(tuple(levels), tuple(seeds))
    for L in levels:
        cfg = dataclasses.replace(model, L=L)
        res.test_wa[L] = []
        for s in seeds:
            ds = generate_synthetic_dataset(spec, s, cfg.p, L)
            run = train(cfg, dataclasses.replace(train_config, seeds=(s,)), ds).runs[0]
            wa = evaluate(run.best_params, ds["test"]).wa
            res.test_wa[L].append(wa)
            if log:
                log(f"L={L} seed={s} best_epoch={run.best_epoch} val_wa={run.best_val_wa:.4f} test_wa={wa:.4f}")
    return res
