"""Compiled inner loops shared by the solvers.

Everything here operates on plain float64 arrays so that both the public
(numpy) code paths and the hot fitting loops use the same arithmetic.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def pwl_locate(nodes, x):
    """Locate x on an equally spaced hat-function grid.

    Returns (i0, v0, v1): hats i0 and i0+1 are the active pair, with values
    v0 and v1 and slopes -1/h and +1/h.  Outside [nodes[0], nodes[-1]] the
    boundary segment is continued linearly, so v0 + v1 == 1 holds everywhere.
    At a grid node the matching hat gets exactly 1.0; the active segment is
    the right one at interior nodes and at the left endpoint, the left one
    at the right endpoint.
    """
    count = nodes.shape[0]
    if x != x:
        # NaN input (diverged parameters): keep indices in bounds and let the
        # NaN values propagate to the caller's finite-parameter guard
        return 0, np.nan, np.nan
    lo = nodes[0]
    h = (nodes[count - 1] - lo) / (count - 1)
    u = (x - lo) / h
    uc = u
    if uc < 0.0:
        uc = 0.0
    elif uc > count - 1.0:
        uc = count - 1.0
    p = int(np.floor(uc + 0.5))
    if x == nodes[p]:
        if p < count - 1:
            return p, 1.0, 0.0
        return count - 2, 0.0, 1.0
    uf = np.floor(u)
    if uf < 0.0:
        i0 = 0
    elif uf > count - 2.0:
        i0 = count - 2
    else:
        i0 = int(uf)
    v1 = (x - nodes[i0]) / h
    return i0, 1.0 - v1, v1


@njit(cache=True)
def ury_step(u_mat, nodes, x_row, y, mu):
    """One Kaczmarz projection for one record; updates u_mat in place.

    Returns the pre-step residual y - yhat.
    """
    m = u_mat.shape[0]
    yhat = 0.0
    norm2 = 0.0
    for j in range(m):
        i0, v0, v1 = pwl_locate(nodes, x_row[j])
        yhat += u_mat[j, i0] * v0 + u_mat[j, i0 + 1] * v1
        norm2 += v0 * v0 + v1 * v1
    # norm2 >= m/2 because every active pair satisfies v0 + v1 == 1
    assert norm2 > 0.0
    resid = y - yhat
    f = mu * resid / norm2
    for j in range(m):
        i0, v0, v1 = pwl_locate(nodes, x_row[j])
        u_mat[j, i0] += f * v0
        u_mat[j, i0 + 1] += f * v1
    return resid


@njit(cache=True)
def ury_pass(u_mat, nodes, xs, ys, order, mu):
    """One sweep of Kaczmarz projections over the records listed in order."""
    for q in range(order.shape[0]):
        i = order[q]
        ury_step(u_mat, nodes, xs[i], ys[i], mu)


@njit(cache=True)
def ury_predict(u_mat, nodes, xs):
    """Model outputs for every row of xs."""
    n_rec = xs.shape[0]
    m = u_mat.shape[0]
    out = np.empty(n_rec)
    for i in range(n_rec):
        acc = 0.0
        for j in range(m):
            i0, v0, v1 = pwl_locate(nodes, xs[i, j])
            acc += u_mat[j, i0] * v0 + u_mat[j, i0 + 1] * v1
        out[i] = acc
    return out


@njit(cache=True)
def ka_theta(h_tens, in_nodes, x_row):
    """Hidden-layer vector: theta_k = sum_j sum_p H[k,j,p] phi_p(x_j)."""
    kk = h_tens.shape[0]
    m = h_tens.shape[1]
    theta = np.zeros(kk)
    for j in range(m):
        i0, v0, v1 = pwl_locate(in_nodes, x_row[j])
        for k in range(kk):
            theta[k] += h_tens[k, j, i0] * v0 + h_tens[k, j, i0 + 1] * v1
    return theta


@njit(cache=True)
def ka_pass(h_tens, g_mat, in_nodes, out_nodes, xs, ys, order, mu):
    """One sweep of Newton-Kaczmarz updates; returns the skipped-step count.

    Per record: linearize the output in the parameters, then apply one
    Kaczmarz projection.  Only the active hat pairs are touched: 2 outer
    entries per addend and 2 inner entries per addend and input.
    """
    kk, m, n = h_tens.shape
    s = g_mat.shape[1]
    out_h = (out_nodes[s - 1] - out_nodes[0]) / (s - 1)
    theta = np.empty(kk)
    oi0 = np.empty(kk, np.int64)
    oa0 = np.empty(kk)
    oa1 = np.empty(kk)
    dg = np.empty(kk)
    skipped = 0
    for q in range(order.shape[0]):
        i = order[q]
        for k in range(kk):
            theta[k] = 0.0
        phi_sq = 0.0
        for j in range(m):
            i0, v0, v1 = pwl_locate(in_nodes, xs[i, j])
            phi_sq += v0 * v0 + v1 * v1
            for k in range(kk):
                theta[k] += h_tens[k, j, i0] * v0 + h_tens[k, j, i0 + 1] * v1
        e_val = 0.0
        a_sq = 0.0
        b_fac = 0.0
        for k in range(kk):
            i0, v0, v1 = pwl_locate(out_nodes, theta[k])
            oi0[k] = i0
            oa0[k] = v0
            oa1[k] = v1
            g0 = g_mat[k, i0]
            g1 = g_mat[k, i0 + 1]
            e_val += g0 * v0 + g1 * v1
            a_sq += v0 * v0 + v1 * v1
            dgk = (g1 - g0) / out_h
            dg[k] = dgk
            b_fac += dgk * dgk
        zeta = a_sq + b_fac * phi_sq
        if zeta <= 1e-300:
            skipped += 1
            continue
        f = mu * (ys[i] - e_val) / zeta
        for k in range(kk):
            g_mat[k, oi0[k]] += f * oa0[k]
            g_mat[k, oi0[k] + 1] += f * oa1[k]
        for j in range(m):
            i0, v0, v1 = pwl_locate(in_nodes, xs[i, j])
            for k in range(kk):
                fd = f * dg[k]
                h_tens[k, j, i0] += fd * v0
                h_tens[k, j, i0 + 1] += fd * v1
    return skipped


@njit(cache=True)
def ka_predict(h_tens, g_mat, in_nodes, out_nodes, xs):
    """Tree-model outputs for every row of xs (piecewise-linear outer basis)."""
    kk, m, n = h_tens.shape
    n_rec = xs.shape[0]
    out = np.empty(n_rec)
    theta = np.empty(kk)
    for i in range(n_rec):
        for k in range(kk):
            theta[k] = 0.0
        for j in range(m):
            i0, v0, v1 = pwl_locate(in_nodes, xs[i, j])
            for k in range(kk):
                theta[k] += h_tens[k, j, i0] * v0 + h_tens[k, j, i0 + 1] * v1
        acc = 0.0
        for k in range(kk):
            i0, v0, v1 = pwl_locate(out_nodes, theta[k])
            acc += g_mat[k, i0] * v0 + g_mat[k, i0 + 1] * v1
        out[i] = acc
    return out


@njit(cache=True)
def ridge_nk_iters(c_vec, g_vec, centers, xs, ys, mu, n_iters):
    """Cyclic Newton-Kaczmarz iterations for the ridge model, in place.

    One iteration = one record.  Returns the number of iterations skipped
    because the linearization gradient vanished (all Gaussians underflowed).
    """
    n_rec, m = xs.shape
    s = centers.shape[0]
    skipped = 0
    for q in range(n_iters):
        i = q % n_rec
        theta = 0.0
        for j in range(m):
            theta += c_vec[j] * xs[i, j]
        yhat = 0.0
        w = 0.0
        gnorm2 = 0.0
        for l in range(s):
            d = theta - centers[l]
            psi = np.exp(-2.0 * d * d)
            yhat += g_vec[l] * psi
            w += g_vec[l] * (-4.0 * d * psi)
            gnorm2 += psi * psi
        x2 = 0.0
        for j in range(m):
            x2 += xs[i, j] * xs[i, j]
        gnorm2 += w * w * x2
        if gnorm2 <= 1e-300:
            skipped += 1
            continue
        f = mu * (ys[i] - yhat) / gnorm2
        for l in range(s):
            d = theta - centers[l]
            g_vec[l] += f * np.exp(-2.0 * d * d)
        fw = f * w
        for j in range(m):
            c_vec[j] += fw * xs[i, j]
    return skipped
