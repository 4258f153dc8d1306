import numpy as np

from molchan import TrainingSequence


def alternating(K: int, first: int = 1) -> TrainingSequence:
    k = np.arange(K)
    return TrainingSequence(((k % 2) == (0 if first else 1)).astype(np.int8))
