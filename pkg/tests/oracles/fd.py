"""Central finite differences over parameter arrays.

Callers pass extended-precision (longdouble) copies where they can, so that the
round-off of the difference quotient stays far below the tolerance under test.
"""

import numpy as np

EXT = np.longdouble


def central_diff(loss, arrays, max_params=None, rel_step=1e-6, seed=0):
    """FD gradients of the scalar `loss()` w.r.t. entries of `arrays` (mutated and restored).

    Returns a list of (array_index, flat_index, fd_value).
    """
    picks = [(a, i) for a, arr in enumerate(arrays) for i in range(arr.size)]
    if max_params is not None and len(picks) > max_params:
        rng = np.random.default_rng(seed)
        sel = rng.choice(len(picks), max_params, replace=False)
        picks = [picks[s] for s in sorted(sel)]
    out = []
    for a, i in picks:
        flat = arrays[a].reshape(-1)
        orig = flat[i]
        step = rel_step * max(1.0, abs(float(orig)))
        flat[i] = orig + step
        up = loss()
        flat[i] = orig - step
        down = loss()
        flat[i] = orig
        out.append((a, i, float((up - down) / (2 * step))))
    return out


def max_rel_error(analytic_arrays, fd, floor=1e-8):
    """Largest |a - fd| / max(|a|, |fd|, floor) over the probed entries."""
    worst = 0.0
    for a, i, val in fd:
        an = analytic_arrays[a].reshape(-1)[i]
        worst = max(worst, abs(an - val) / max(abs(an), abs(val), floor))
    return worst
