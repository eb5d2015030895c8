"""Levi-Civita and Bismut curvature, torsion divergence and soliton residuals.

Curvature convention: Rm_{ijkl} = <R(e_i, e_j) e_k, e_l> with
R(X, Y) = nabla_X nabla_Y - nabla_Y nabla_X - nabla_[X,Y], so the unit sphere
has Rm_{ijkl} = g_il g_jk - g_ik g_jl and Rc_{jk} = g^{il} Rm_{ijkl}.
"""

from dataclasses import dataclass

import numpy as np

from . import calculus as calc
from .tensors import h_square, norm_sq, riemann_symmetry_residual, sym


def _riemann_coordinate(state):
    """Lowered Levi-Civita curvature in coordinates.

    Rm_{ijkl} = (d_i d_k g_jl - d_i d_l g_jk - d_j d_k g_il + d_j d_l g_ik) / 2
                + g(Gam_jl, Gam_ik) - g(Gam_il, Gam_jk)
    Each piece carries the Riemann symmetries exactly, so they survive the
    aliasing of pointwise products on the grid.
    """
    be = state.backend
    ddg = be.deriv(be.deriv(state.g))  # ddg[..., a, b, i, j] = d_b d_a g_ij (commuting)
    t = np.einsum("...ikjl->...ijkl", ddg)
    second = 0.5 * (t - np.swapaxes(t, -2, -1) - np.swapaxes(t, -4, -3)
                    + np.swapaxes(np.swapaxes(t, -2, -1), -4, -3))
    gam = calc.connection(state)
    gg = np.einsum("...abm,...mq,...cdq->...abcd", gam, state.g, gam, optimize=True)
    quad = np.einsum("...jlik->...ijkl", gg) - np.einsum("...iljk->...ijkl", gg)
    return second + quad


def _ricci_coordinate(state):
    """g^{il} contraction of the coordinate formula above, without forming Rm."""
    be = state.backend
    gi = state.ginv
    ddg = be.deriv(be.deriv(state.g))  # ddg[..., a, b, i, j] = d_a d_b g_ij
    s1 = np.einsum("...il,...ikjl->...jk", gi, ddg, optimize=True)
    s2 = np.einsum("...il,...iljk->...jk", gi, ddg, optimize=True)
    s3 = np.einsum("...il,...jkil->...jk", gi, ddg, optimize=True)
    second = 0.5 * (s1 + np.swapaxes(s1, -1, -2) - s2 - s3)
    gam = calc.connection(state)
    low = np.einsum("...abm,...mq->...abq", gam, state.g)
    q1 = np.einsum("...il,...jlq,...ikq->...jk", gi, low, gam, optimize=True)
    q2 = np.einsum("...il,...ilm,...jkm->...jk", gi, gam, low, optimize=True)
    return sym(second + q1 - q2)


def ricci(state):
    """Ricci tensor; on the torus this skips the full curvature tensor."""
    cache = state.__dict__.get("_calc_cache", {})
    if "pack" in cache or state.backend.bracket is not None:
        return levi_civita_pack(state).Rc
    return _ricci_coordinate(state)


def _riemann_from_connection(state, gam):
    """Lowered curvature of the connection ``gam`` (torsion allowed)."""
    be = state.backend
    dgam = be.deriv(gam)  # dgam[..., a, j, k, l] = e_a(gam_jk^l)
    quad = (np.einsum("...jkm,...iml->...ijkl", gam, gam)
            - np.einsum("...ikm,...jml->...ijkl", gam, gam))
    Rup = dgam - np.swapaxes(dgam, -4, -3) + quad
    if be.bracket is not None:
        Rup = Rup - np.einsum("ijm,...mkl->...ijkl", be.bracket, gam)
    return np.einsum("...ijkm,...ml->...ijkl", Rup, state.g)


@dataclass(frozen=True, eq=False)
class CurvaturePack:
    Rm: np.ndarray
    Rc: np.ndarray
    R: np.ndarray
    Hsq: np.ndarray
    Hnorm_sq: np.ndarray
    dstarH: np.ndarray
    RmPlus: np.ndarray = None
    RcPlus: np.ndarray = None
    RPlus: np.ndarray = None

    def bianchi_residual(self):
        return riemann_symmetry_residual(self.Rm)


def levi_civita_pack(state) -> CurvaturePack:
    cache = state.__dict__.setdefault("_calc_cache", {})
    if "pack" in cache:
        return cache["pack"]
    if state.backend.bracket is None:
        Rm = _riemann_coordinate(state)
    else:
        Rm = _riemann_from_connection(state, calc.connection(state))
    ginv = state.ginv
    Rc = sym(np.einsum("...ijkl,...il->...jk", Rm, ginv))
    R = np.einsum("...jk,...jk->...", Rc, ginv)
    H = state.H
    Hsq = sym(h_square(H, ginv))
    pack = CurvaturePack(Rm, Rc, R, Hsq, norm_sq(H, ginv), dstar_H(state))
    cache["pack"] = pack
    return pack


def bismut_rm(state, pack=None):
    """Rm+ from Levi-Civita curvature plus the torsion terms.

    Rm+_{ijkl} = Rm_{ijkl} + (nabla_i H_{jkl} - nabla_j H_{ikl}) / 2
                 - H_{il}^m H_{jkm} / 4 + H_{jl}^m H_{ikm} / 4
    """
    pack = pack or levi_civita_pack(state)
    H = state.H
    nH = calc.covd(state, H)
    Hu = np.einsum("...ilm,...mn->...iln", H, state.ginv)
    t4 = np.einsum("...ilm,...jkm->...ijkl", Hu, H)
    return (pack.Rm + 0.5 * (nH - np.swapaxes(nH, -4, -3))
            - 0.25 * t4 + 0.25 * np.swapaxes(t4, -4, -3))


def bismut_rm_direct(state):
    """Curvature of the metric connection with torsion H, computed from its Christoffel array."""
    gam = calc.connection(state) + 0.5 * np.einsum("...ijm,...ml->...ijl", state.H, state.ginv)
    return _riemann_from_connection(state, gam)


def bismut_pack(state, pack=None) -> CurvaturePack:
    pack = pack or levi_civita_pack(state)
    Rp = bismut_rm(state, pack)
    ginv = state.ginv
    Rcp = np.einsum("...ijkl,...il->...jk", Rp, ginv)
    Rsp = np.einsum("...jk,...jk->...", Rcp, ginv)
    return CurvaturePack(pack.Rm, pack.Rc, pack.R, pack.Hsq, pack.Hnorm_sq, pack.dstarH,
                         RmPlus=Rp, RcPlus=Rcp, RPlus=Rsp)


def dstar_H(state):
    """(d*H)_{ij} = -g^{ab} nabla_a H_{bij}."""
    return calc.codiff(state, state.H)


@dataclass(frozen=True, eq=False)
class SolitonResidual:
    metric_res: np.ndarray
    form_res: np.ndarray
    metric_l2: float
    form_l2: float
    metric_sup: float
    form_sup: float

    @property
    def total(self):
        return max(self.metric_sup, self.form_sup)


def soliton_residual(state, f=None) -> SolitonResidual:
    """Rc - H^2/4 + Hess f and d*H + i_{grad f} H, with f-weighted L2 and sup norms."""
    pack = levi_civita_pack(state)
    if f is None:
        f = state.backend.constant(0.0)
    metric = pack.Rc - 0.25 * pack.Hsq + calc.hessian(state, f)
    _, gradf = calc.grad(state, f)
    form = pack.dstarH + calc.interior(gradf, state.H, 3)
    w = np.exp(-f)
    ginv = state.ginv
    m2 = norm_sq(metric, ginv)
    f2 = norm_sq(form, ginv)
    return SolitonResidual(metric, form,
                           float(np.sqrt(max(state.integrate(m2 * w), 0.0))),
                           float(np.sqrt(max(state.integrate(f2 * w), 0.0))),
                           float(np.sqrt(np.max(m2))), float(np.sqrt(np.max(f2))))
