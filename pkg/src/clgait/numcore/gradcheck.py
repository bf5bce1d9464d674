"""Central finite-difference verification of analytic gradients.

Runs in f64 only; large tensors are subsampled with a deterministic
counter-based stream so repeated runs check the same coordinates.
"""

import numpy as np

from . import rng as rngmod

# coordinates with |analytic| and |numeric| below this floor are compared
# against the floor rather than against each other, so finite-difference
# noise on near-zero gradients does not dominate the report
REL_FLOOR = 1e-4


def grad_check(loss_fn, params, grads, h=1e-5, max_coords=8, seed=0,
               kink_tol=None):
    """Worst relative error between `grads` and central differences.

    loss_fn: dict[str, ndarray] -> float, evaluated in f64.
    params:  the point to check at (f64 arrays; mutated transiently).
    grads:   analytic gradients, same keys/shapes.

    Central differences have two failure modes that are properties of the
    probe, not of the gradient: with piecewise-linear ops (relu, max) the
    interval [x - h, x + h] can straddle a kink, and for coordinates whose
    gradient is tiny relative to the loss the difference fp - fm loses
    precision to roundoff. `kink_tol` enables a multi-scale discriminator:
    coordinates whose error exceeds it are re-checked at neighboring step
    sizes (x10 and /10, /100, within [1e-7, 1e-3]) and the minimum error is
    reported. Kink noise collapses at smaller h, roundoff noise at larger
    h; a wrong analytic gradient stays wrong at every step size.
    """
    if not (1e-7 <= h <= 1e-3):
        raise ValueError(f"grad_check: h={h} outside [1e-7, 1e-3]")
    worst = 0.0
    worst_coord = None

    def central(flat, c, step):
        orig = flat[c]
        flat[c] = orig + step
        fp = float(loss_fn(params))
        flat[c] = orig - step
        fm = float(loss_fn(params))
        flat[c] = orig
        return (fp - fm) / (2.0 * step)

    for name in sorted(params):
        p = params[name]
        if p.dtype != np.float64:
            raise ValueError(f"grad_check requires f64 params, got {p.dtype} for '{name}'")
        n = p.size
        if n <= max_coords:
            coords = np.arange(n)
        else:
            r = rngmod.stream(seed, "gradcheck", name)
            coords = r.choice(n, size=max_coords, replace=False)
        flat = p.reshape(-1)
        gflat = grads[name].reshape(-1)
        for c in coords:
            analytic = float(gflat[c])

            def rel_at(step):
                numeric = central(flat, c, step)
                denom = max(abs(analytic), abs(numeric), REL_FLOOR)
                return abs(analytic - numeric) / denom, numeric

            rel, numeric = rel_at(h)
            if kink_tol is not None and rel > kink_tol:
                for step in (h * 10.0, h / 10.0, h / 100.0):
                    if not (1e-7 <= step <= 1e-3):
                        continue
                    other_rel, other_num = rel_at(step)
                    if other_rel < rel:
                        rel, numeric = other_rel, other_num
                    if rel <= kink_tol:
                        break
            if rel > worst:
                worst = rel
                worst_coord = (name, int(c), analytic, numeric)
    return worst, worst_coord
