"""Scene text recognition trained on real labeled word boxes, plus
semi-supervised (pseudo-labeling, mean teacher) and self-supervised
(rotation prediction, momentum contrast) training over unlabeled data."""

__version__ = "0.1.0"
