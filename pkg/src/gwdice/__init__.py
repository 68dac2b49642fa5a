"""Generalised Wasserstein Dice score, loss and evaluation tools."""

from .dice_losses import (
    mean_dice,
    soft_dice_binary,
    wasserstein_dice,
    wasserstein_dice_grad,
    wasserstein_dice_loss,
)
from .label_metric import (
    BRATS_SPACE,
    GroundMetric,
    LabelSpace,
    LabelTree,
    metric_from_matrix,
    metric_from_tree,
    metric_tree_brats,
    metric_zero_one,
)
from .wasserstein import emd_crisp, emd_lp, emd_map_crisp

__version__ = "0.1.0"
