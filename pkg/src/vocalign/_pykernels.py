"""Pure-Python/numpy versions of the compiled kernels (same signatures)."""
import math

import numpy as np


def cooc_dense(ids, seg, steps, out):
    n = len(ids)
    vocab = out.shape[1]
    flat = out.reshape(-1)
    for d in range(1, min(len(steps) - 1, n - 1) + 1):
        same = seg[:-d] == seg[d:]
        a = ids[:-d][same]
        b = ids[d:][same]
        flat += np.bincount(a * vocab + b, minlength=flat.size) * steps[d]
        flat += np.bincount(b * vocab + a, minlength=flat.size) * steps[d]


def glove_epoch(W, C, bw, bc, gW, gC, gbw, gbc, rows, cols, vals, order,
                lr, x_max, alpha, grad_clip):
    cost = 0.0
    for k, e in enumerate(order.tolist()):
        i = int(rows[e])
        j = int(cols[e])
        x = float(vals[e])
        wi, cj = W[i], C[j]
        diff = float(bw[i] + bc[j] - math.log(x) + wi @ cj)
        fdiff = diff if x > x_max else (x / x_max) ** alpha * diff
        if not (math.isfinite(diff) and math.isfinite(fdiff)):
            return cost, k
        cost += 0.5 * fdiff * diff
        t1 = np.clip(fdiff * cj, -grad_clip, grad_clip) * lr
        t2 = np.clip(fdiff * wi, -grad_clip, grad_clip) * lr
        wi -= t1 / np.sqrt(gW[i])
        cj -= t2 / np.sqrt(gC[j])
        gW[i] += t1 * t1
        gC[j] += t2 * t2
        fdiff *= lr
        bw[i] -= fdiff / math.sqrt(gbw[i])
        bc[j] -= fdiff / math.sqrt(gbc[j])
        gbw[i] += fdiff * fdiff
        gbc[j] += fdiff * fdiff
    return cost, -1
