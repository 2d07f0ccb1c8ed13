"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""

import numpy as np


def accumulate_phases(proj, scales, acc_re, acc_im):
    """Add sum_i exp(-i * scales[k] * proj[i, m]) into ``acc_re + 1j*acc_im``."""
    proj = np.asarray(proj, dtype=np.float64)
    scales = np.asarray(scales, dtype=np.float64)
    if acc_re.shape != (scales.size, proj.shape[1]) or acc_im.shape != acc_re.shape:
        raise ValueError("accumulators must have shape (len(scales), proj.shape[1])")
    if proj.shape[0] == 0:
        return
    for k, s in enumerate(scales):
        phase = s * proj
        acc_re[k] += np.cos(phase).sum(axis=0)
        acc_im[k] -= np.sin(phase).sum(axis=0)
