"""Accelerated proximal gradient descent for smooth + prox-friendly composites."""

import numpy as np


def accelerated_proxgrad(
    g_grad,
    h_prox,
    beta: float,
    mu_sc: float,
    x0: np.ndarray,
    T: int,
    callback=None,
    stop=None,
):
    """Run T iterations of accelerated proximal gradient descent.

    Minimizes g + h where g is beta-smooth and mu_sc-strongly convex and h is
    convex with an available prox. Each iteration takes a prox-gradient step
    from the extrapolated point and then extrapolates with the constant
    momentum (sqrt(beta) - sqrt(mu_sc)) / (sqrt(beta) + sqrt(mu_sc)); with
    T = 1 no momentum is ever applied, so a single iteration equals the plain
    unaccelerated step.

    g_grad(y) returns the gradient of g at y; h_prox(x, beta) returns
    argmin_y (beta/2)*||y - x||^2 + h(y). callback(t, x) is invoked after
    each iteration; stop(t, x), if given, ends the run early when it returns
    True. Returns the final iterate.
    """
    if beta <= 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if mu_sc < 0:
        raise ValueError(f"mu_sc must be nonnegative, got {mu_sc}")
    if beta < mu_sc:
        raise ValueError(f"need beta >= mu_sc, got beta={beta}, mu_sc={mu_sc}")
    momentum = (np.sqrt(beta) - np.sqrt(mu_sc)) / (np.sqrt(beta) + np.sqrt(mu_sc))
    x_prev = np.array(x0, dtype=float, copy=True)
    y = x_prev.copy()
    x = x_prev
    for t in range(1, T + 1):
        x = h_prox(y - g_grad(y) / beta, beta)
        y = x + momentum * (x - x_prev)
        x_prev = x
        if callback is not None:
            callback(t, x)
        if stop is not None and stop(t, x):
            break
    return x
