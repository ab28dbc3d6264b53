"""Pure-numpy segment reductions; the fallback when the extension is absent."""

import numpy as np


def segment_sum(values, seg, n_segments):
    out = np.zeros((n_segments, values.shape[1]), dtype=np.float64)
    np.add.at(out, seg, values)
    return out


def segment_max(values, seg, n_segments):
    out = np.full((n_segments, values.shape[1]), -np.inf, dtype=np.float64)
    np.maximum.at(out, seg, values)
    return out
