"""Smoothed Jaccard training loss and the evaluation metrics (IoU, Dice, MAE).

Conventions: predictions binarize at 0.5 for IoU/Dice while MAE uses the
continuous probability map; two empty masks score IoU = Dice = 1.0 so an
all-negative prediction of an all-negative truth counts as agreement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .errors import ConfigError, DimensionError, UsageError
from .tensor import Tensor, add, div, mul, neg, tensor_sum

ArrayLike = Union[Tensor, np.ndarray]


def _as_array(x: ArrayLike) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float32)


def jaccard_loss(pred: Tensor, truth: ArrayLike, alpha: float = 0.7) -> Tensor:
    """Smoothed Jaccard loss, differentiable in ``pred``; value in [0, alpha).

    loss = alpha * (1 - (alpha + sum(y*p)) / (alpha + sum(y + p - y*p)))
    """
    if alpha <= 0:
        raise ConfigError(f"alpha must be positive, got {alpha}")
    truth_arr = _as_array(truth)
    if pred.shape != truth_arr.shape:
        raise DimensionError(f"jaccard_loss: pred {pred.shape} and truth "
                             f"{truth_arr.shape} differ")
    t = Tensor(truth_arr)
    overlap = tensor_sum(mul(pred, t))
    pred_sum = tensor_sum(pred)
    truth_sum = float(truth_arr.sum(dtype=np.float32))
    union = add(add(pred_sum, truth_sum), neg(overlap))
    ratio = div(add(overlap, alpha), add(union, alpha))
    return mul(add(neg(ratio), 1.0), alpha)


def binarize(pred: ArrayLike, threshold: float = 0.5) -> np.ndarray:
    """Binary mask: probability >= threshold."""
    return (_as_array(pred) >= threshold).astype(np.float32)


def _check_pair(a: np.ndarray, b: np.ndarray, opname: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{opname}: shapes {a.shape} and {b.shape} differ")


def iou(pred_binary: ArrayLike, truth: ArrayLike) -> float:
    """Intersection over union of two binary masks; 1.0 when both are empty."""
    p, t = _as_array(pred_binary), _as_array(truth)
    _check_pair(p, t, "iou")
    inter = float(np.logical_and(p > 0.5, t > 0.5).sum())
    union = float(np.logical_or(p > 0.5, t > 0.5).sum())
    return 1.0 if union == 0 else inter / union


def dice(pred_binary: ArrayLike, truth: ArrayLike) -> float:
    """Dice coefficient 2|X∩Y| / (|X|+|Y|); 1.0 when both masks are empty."""
    p, t = _as_array(pred_binary), _as_array(truth)
    _check_pair(p, t, "dice")
    pb, tb = p > 0.5, t > 0.5
    total = float(pb.sum() + tb.sum())
    if total == 0:
        return 1.0
    return 2.0 * float(np.logical_and(pb, tb).sum()) / total


def mae(pred: ArrayLike, truth: ArrayLike) -> float:
    """Mean absolute per-pixel error of the continuous probability map."""
    p, t = _as_array(pred), _as_array(truth)
    _check_pair(p, t, "mae")
    return float(np.abs(p.astype(np.float64) - t.astype(np.float64)).mean())


@dataclass
class EvalReport:
    """Per-sample and mean IoU/Dice/MAE over a dataset."""

    sample_ids: list
    ious: list
    dices: list
    maes: list

    @property
    def count(self) -> int:
        return len(self.sample_ids)

    @property
    def mean_iou(self) -> float:
        return float(np.mean(self.ious))

    @property
    def mean_dice(self) -> float:
        return float(np.mean(self.dices))

    @property
    def mean_mae(self) -> float:
        return float(np.mean(self.maes))

    def to_table(self, model_name: str = "model") -> str:
        header = f"{'Model':<20} {'mIoU':>8} {'mDice':>8} {'MAE':>8}"
        row = (f"{model_name:<20} {self.mean_iou:>8.4f} "
               f"{self.mean_dice:>8.4f} {self.mean_mae:>8.4f}")
        return "\n".join([header, row])

    def to_csv(self) -> str:
        lines = ["id,iou,dice,mae"]
        for sid, i, d, m in zip(self.sample_ids, self.ious, self.dices, self.maes):
            lines.append(f"{sid},{i:.8g},{d:.8g},{m:.8g}")
        lines.append(f"mean,{self.mean_iou:.8g},{self.mean_dice:.8g},{self.mean_mae:.8g}")
        return "\n".join(lines) + "\n"


def evaluate(dataset: Sequence, model, threshold: float = 0.5) -> EvalReport:
    """Score a model over a dataset in deterministic (given) order.

    ``model`` is either an object with ``forward(Tensor) -> ModelOutput`` or
    a callable mapping an image array to a probability map array.
    """
    if len(dataset) == 0:
        raise UsageError("evaluate requires a non-empty dataset")
    predict: Callable[[np.ndarray], np.ndarray]
    if hasattr(model, "forward"):
        predict = lambda img: model.forward(Tensor(img)).prob.data  # noqa: E731
    elif callable(model):
        predict = lambda img: _as_array(model(img))  # noqa: E731
    else:
        raise UsageError("model must expose forward() or be callable")
    ids, ious, dices, maes = [], [], [], []
    for sample in dataset:
        prob = predict(sample.image)
        pb = binarize(prob, threshold)
        ids.append(sample.id)
        ious.append(iou(pb, sample.mask))
        dices.append(dice(pb, sample.mask))
        maes.append(mae(prob, sample.mask))
    return EvalReport(ids, ious, dices, maes)
