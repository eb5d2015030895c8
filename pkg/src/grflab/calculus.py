"""Levi-Civita calculus on every backend.

A connection is stored as ``Gam[..., i, j, l]`` meaning nabla_{e_i} e_j = Gam_ij^l e_l.
In a Lie frame this comes from the Koszul formula with bracket constants and
the (constant) metric; on the torus it is the coordinate Christoffel symbol.
Covariant derivatives put the new derivative index first among the tensor
axes, so (nabla T)_{a i1 .. ip} = e_a(T_{i1..ip}) - sum_s Gam_{a i_s}^m T_{..m..}.
"""

import numpy as np

from .tensors import antisym_p, sym


def _ntensor(state, T):
    return np.ndim(T) - len(state.backend.grid_shape)


def connection(state):
    """Christoffel array Gam[..., i, j, l] of the Levi-Civita connection (cached)."""
    cache = state.__dict__.setdefault("_calc_cache", {})
    if "gam" in cache:
        return cache["gam"]
    g, ginv = state.g, state.ginv
    c = state.backend.bracket
    if c is not None:
        # lowered Koszul: Gam_ijk = (c_ij^m g_mk - c_jk^m g_mi + c_ki^m g_mj) / 2
        cg = np.einsum("ijm,mk->ijk", c, g)
        low = 0.5 * (cg - np.transpose(cg, (2, 0, 1)) + np.transpose(cg, (1, 2, 0)))
    else:
        dg = state.backend.deriv(g)  # dg[..., a, i, j] = d_a g_ij
        low = 0.5 * (np.swapaxes(dg, -3, -2) + dg - np.moveaxis(dg, -3, -1))
        # low[..., i, j, m] = (d_i g_jm + d_j g_im - d_m g_ij) / 2
    gam = np.einsum("...ijk,...kl->...ijl", low, ginv)
    cache["gam"] = gam
    return gam


def covd(state, T):
    """Covariant derivative; derivative index becomes the first tensor axis."""
    T = np.asarray(T, dtype=float)
    gam = connection(state)
    p = _ntensor(state, T)
    out = state.backend.deriv(T)
    if p == 0:
        return out
    lead = T.ndim - p
    n = gam.shape[-1]
    G = gam.reshape(gam.shape[:-3] + (n * n, n))
    for s in range(p):
        # sum_z Gam[a, i_s, z] T[.., z, ..] as a batched matmul over the grid
        Tm = np.moveaxis(T, lead + s, -1)
        rest = Tm.shape[lead:-1]
        Tf = Tm.reshape(Tm.shape[:lead] + (-1, n))
        prod = np.matmul(G, np.swapaxes(Tf, -1, -2))  # (grid, a*i_s, rest)
        prod = prod.reshape(prod.shape[:-2] + (n, n) + rest)
        out = out - np.moveaxis(prod, lead + 1, lead + 1 + s)
    return out


def exterior_d(state, form):
    """d of a p-form from the torsion-free connection: (p+1) Alt(nabla T)."""
    form = np.asarray(form, dtype=float)
    p = _ntensor(state, form)
    return (p + 1) * antisym_p(covd(state, form), p + 1)


def codiff(state, T):
    """(d*T)_{i..} = -g^{ab} nabla_a T_{b i..}."""
    nT = covd(state, T)
    return -trace01(state, nT)


def trace01(state, T):
    """Contract the first two tensor axes with g^{-1}."""
    p = _ntensor(state, T)
    lead = T.ndim - p
    ginv = state.ginv
    G = ginv.reshape(ginv.shape[:-2] + ginv.shape[-2:] + (1,) * (p - 2))
    return np.sum(G * T, axis=(lead, lead + 1))


def grad(state, u):
    """Covariant components of du and the vector field grad u."""
    du = covd(state, u)
    return du, np.einsum("...a,...ab->...b", du, state.ginv)


def hessian(state, u):
    return sym(covd(state, covd(state, u)))


def rough_laplacian(state, T):
    return trace01(state, covd(state, covd(state, T)))


def div_sym(state, h):
    """(div h)_i = g^{ab} nabla_a h_{bi}."""
    return trace01(state, covd(state, h))


def div_star(state, xi):
    """(div* xi)_{ij} = -(nabla_i xi_j + nabla_j xi_i)/2, the L2 adjoint of div."""
    return -sym(covd(state, xi))


def lie_derivative_metric(state, xi):
    """L_X g = nabla_i X_j + nabla_j X_i for the 1-form xi = X^flat."""
    return 2.0 * sym(covd(state, xi))


def interior(X, form, p):
    """i_X T: contract the vector X^a into the first slot of the covariant p-form T."""
    letters = "bcdefg"[: p - 1]
    return np.einsum(f"...a,...a{letters}->...{letters}", X, form)
