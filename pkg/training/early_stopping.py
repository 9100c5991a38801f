from dataclasses import dataclass
from typing import Optional


@dataclass
class EarlyStopping:
    """
    Patience counter on a metric that should grow (validation CIDEr). An epoch improves only when its metric beats
    the best one by more than ``threshold``; training stops after ``patience`` epochs in a row without improvement.
    """
    patience: int = 3
    threshold: float = 0.0
    best_metric: Optional[float] = None
    best_epoch: Optional[int] = None
    patience_counter: int = 0

    def update(self, metric: float, epoch: int) -> bool:
        if self.best_metric is None or (metric > self.best_metric and metric - self.best_metric > self.threshold):
            self.best_metric, self.best_epoch = metric, epoch
            self.patience_counter = 0
            return True
        self.patience_counter += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.patience_counter >= self.patience
