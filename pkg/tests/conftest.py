import numpy as np

from modnmt.tensor import Tape, backward, no_grad


def finite_difference_gradients(f, params, h=1e-5):
    """Central finite differences of scalar f() w.r.t. each param tensor.

    f must be deterministic and must not mutate state; analytic gradients are
    collected under a fresh tape and zeroed afterwards.
    """
    with Tape():
        loss = f()
        backward(loss)
    analytic = [p.grad.copy() for p in params]
    numeric = []
    for p in params:
        num = np.zeros_like(p.data)
        flat, nflat = p.data.reshape(-1), num.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            with no_grad():
                fp = f().item()
            flat[i] = orig - h
            with no_grad():
                fm = f().item()
            flat[i] = orig
            nflat[i] = (fp - fm) / (2.0 * h)
        numeric.append(num)
        p.zero_grad()
    return analytic, numeric


def max_rel_err(analytic, numeric, floor=1e-6):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum.reduce([np.abs(a), np.abs(n), np.full_like(a, floor)])
        worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def gradient_check(f, params, h=1e-5, floor=1e-6):
    analytic, numeric = finite_difference_gradients(f, params, h=h)
    return max_rel_err(analytic, numeric, floor=floor)
