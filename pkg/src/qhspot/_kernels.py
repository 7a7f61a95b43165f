"""Compiled inner loops for the elastic-net path solver.

The coordinate-descent kernel works on the Gram form of the problem
(G = X'X/n, c = X'y/n), so one coefficient update costs O(p) regardless of
the number of rows, and unchanged coefficients cost O(1). Warm starts carry
the solution from each lambda to the next smaller one.
"""

import numba
import numpy as np

MAX_SWEEPS_DEFAULT = 100_000


@numba.njit(cache=True, nogil=True)
def enet_path_gram(G, c, lambdas, alpha, tol, max_sweeps):
    """Cyclic coordinate descent over a descending lambda grid.

    Minimizes, per lambda,

        (1/2n) * ||y - X b||^2  +  lam * (alpha*||b||_1 + (1-alpha)/2*||b||_2^2)

    expressed through G = X'X/n and c = X'y/n. Returns the coefficient path
    (len(lambdas) x p), sweeps used per lambda, and a convergence flag per
    lambda (False when max_sweeps was exhausted).
    """
    n_lambda = lambdas.shape[0]
    p = G.shape[0]
    betas = np.zeros((n_lambda, p))
    sweeps_used = np.zeros(n_lambda, dtype=np.int64)
    converged = np.zeros(n_lambda, dtype=np.bool_)

    beta = np.zeros(p)
    # r_j = c_j - sum_k G_jk beta_k, kept incrementally.
    r = c.copy()

    for li in range(n_lambda):
        lam = lambdas[li]
        l1 = lam * alpha
        l2 = lam * (1.0 - alpha)
        done = False
        sweep = 0
        while sweep < max_sweeps and not done:
            sweep += 1
            max_delta = 0.0
            for j in range(p):
                old = beta[j]
                rho = r[j] + G[j, j] * old
                denom = G[j, j] + l2
                if denom <= 0.0:
                    new = 0.0
                elif rho > l1:
                    new = (rho - l1) / denom
                elif rho < -l1:
                    new = (rho + l1) / denom
                else:
                    new = 0.0
                delta = new - old
                if delta != 0.0:
                    beta[j] = new
                    for k in range(p):
                        r[k] -= G[k, j] * delta
                    if abs(delta) > max_delta:
                        max_delta = abs(delta)
            if max_delta < tol:
                done = True
        sweeps_used[li] = sweep
        converged[li] = done
        betas[li] = beta
    return betas, sweeps_used, converged
