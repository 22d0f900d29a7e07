"""Central finite-difference gradient checks."""
import numpy as np

H = 1e-4
KINK_TOL = 1e-5


def rel_error(a, n, floor=1e-7):
    return abs(a - n) / max(abs(a), abs(n), floor)


def check_tensor_grads(loss_fn, tensors, rng, n_samples=20, h=H, scale=None, stats=None):
    """Compare analytic and central-difference gradients.

    ``loss_fn()`` rebuilds the graph and returns a scalar tensor; ``tensors``
    maps names to leaf tensors.  Checks ``n_samples`` coordinates in total
    (spread over the tensors by size) and returns ``(worst relative error,
    number checked)``.  ``scale`` optionally maps names to the factor the
    analytic gradient should be multiplied by before comparison (e.g. to
    undo a gradient reversal).

    The networks are piecewise smooth (ReLU, max-pool, top-k proposals).  A
    coordinate whose +-h stencil straddles a kink has no well-defined
    derivative there; it shows up as central differences at ``h`` and
    ``h / 10`` disagreeing with each other, and is resampled.  The count of
    such coordinates goes to ``stats["kinks"]`` when a dict is given.
    """
    for t in tensors.values():
        t.grad = None
    out = loss_fn()
    out.backward()
    analytic = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy()
                for k, t in tensors.items()}
    names = list(tensors)
    sizes = np.array([tensors[k].data.size for k in names], dtype=float)

    def central(t, idx, step):
        old = t.data[idx]
        t.data[idx] = old + step
        fp = float(loss_fn().data)
        t.data[idx] = old - step
        fm = float(loss_fn().data)
        t.data[idx] = old
        return (fp - fm) / (2 * step)

    worst, checked, kinks = 0.0, 0, 0
    for _ in range(20 * n_samples):
        if checked == n_samples:
            break
        name = names[rng.choice(len(names), p=sizes / sizes.sum())]
        t = tensors[name]
        idx = tuple(int(rng.integers(0, s)) for s in t.data.shape)
        num = central(t, idx, h)
        if rel_error(num, central(t, idx, h / 10)) > KINK_TOL:
            kinks += 1
            continue
        a = analytic[name][idx] * (scale or {}).get(name, 1.0)
        worst = max(worst, rel_error(a, num))
        checked += 1
    if stats is not None:
        stats["kinks"] = kinks
    return worst, checked
