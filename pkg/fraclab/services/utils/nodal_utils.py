from typing import Tuple

import cv2
import numpy as np


def label_sign_components(field: np.ndarray, threshold: float) -> Tuple[np.ndarray, np.ndarray]:
    """4-connected components of {W > tau} and {W < -tau}.

    Returns (labels, signs): labels are 1..count in order of first appearance
    in a row-major scan (0 marks the zero-set buffer); signs[k] is the sign of
    domain k (signs[0] = 0).
    """
    positive = (field > threshold).astype(np.uint8)
    negative = (field < -threshold).astype(np.uint8)
    n_pos, pos_labels = cv2.connectedComponents(positive, connectivity=4)
    _, neg_labels = cv2.connectedComponents(negative, connectivity=4)

    combined = pos_labels.astype(np.int64)
    combined[neg_labels > 0] = neg_labels[neg_labels > 0] + (n_pos - 1)

    flat = combined.ravel()
    present, first_index = np.unique(flat, return_index=True)
    keep = present > 0
    order = present[keep][np.argsort(first_index[keep])]
    remap = np.zeros(int(combined.max()) + 1, dtype=np.int64)
    remap[order] = np.arange(1, order.size + 1)
    labels = remap[combined]

    signs = np.zeros(order.size + 1, dtype=np.int64)
    signs[1:] = np.where(order < n_pos, 1, -1)
    return labels, signs


def cell_owner(labels: np.ndarray, field: np.ndarray) -> np.ndarray:
    """Label of each rectangular cell: that of its corner with the largest |W|."""
    corners_l = np.stack(
        [labels[:-1, :-1], labels[:-1, 1:], labels[1:, :-1], labels[1:, 1:]]
    )
    corners_w = np.stack(
        [field[:-1, :-1], field[:-1, 1:], field[1:, :-1], field[1:, 1:]]
    )
    strength = np.where(corners_l > 0, np.abs(corners_w), -1.0)
    pick = np.argmax(strength, axis=0)
    return np.take_along_axis(corners_l, pick[None], axis=0)[0]
