"""Second variation of lambda, the operator N, slice projections and verdicts.

A variation is a pair (h, K) of a symmetric 2-tensor and a 2-form; its scalar
potential v solves Delta_f v = div_f div_f h - <dK, H>/6 with zero weighted
mean. The quadratic form is

    (N x, x)_f = (A h + C K, h)_f + (B K + D h, K)_f + (Delta_f v / 2, v)_f

with the blocks listed in ``SecondVariation``.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property

import numpy as np

from . import calculus as calc
from .curvature import levi_civita_pack, soliton_residual
from .errors import ConsistencyError, PreconditionError
from .spectral import WeightedOps
from .geometry import SphereHarmonicBasis
from .tensors import antisym_p, inner, levi_civita, raise_all, raise_index, ring_apply

SOLITON_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class VariationPair:
    h: np.ndarray
    K: np.ndarray
    v: object = None

    def __add__(self, other):
        v = None if self.v is None or other.v is None else self.v + other.v
        return VariationPair(self.h + other.h, self.K + other.K, v)

    def scale(self, c):
        return VariationPair(c * self.h, c * self.K, None if self.v is None else c * self.v)


def _mm(A, ginv, B):
    """(A g^{-1} B)_{ij} = A_{ia} g^{ab} B_{bj}."""
    return np.einsum("...ia,...ab,...bj->...ij", A, ginv, B, optimize=True)


class SecondVariation:
    """Blocks of N and the second-variation form at a soliton (g, H, f)."""

    def __init__(self, state, f=None, require_soliton=True, tol=SOLITON_TOL):
        self.state = state
        self.frame = state.backend.grid_shape == ()
        if f is None:
            f = state.backend.constant(0.0)
        self.f = f
        if require_soliton:
            res = soliton_residual(state, f)
            if res.total > tol:
                raise PreconditionError(
                    f"base point is not a certified soliton (residual {res.total:.3e} > {tol:.1e})")
        self.ops = WeightedOps(state, f)
        self.pack = levi_civita_pack(state)
        self.ginv = state.ginv
        self.H = state.H
        self.nablaH = calc.covd(state, self.H)
        self.gradf = self.ops.gradf

    # -- pieces ------------------------------------------------------------
    def dK(self, K):
        return calc.exterior_d(self.state, K)

    def pointwise(self, S, T):
        return inner(S, T, self.ginv)

    def rhs_v(self, h, K):
        ops = self.ops
        return ops.div_f_one(ops.div_f(h)) - self.pointwise(self.dK(K), self.H) / 6.0

    def v_of(self, h, K):
        return self.ops.solve_lap_f(self.rhs_v(h, K))

    def complete(self, x: VariationPair) -> VariationPair:
        if x.v is not None:
            return x
        return VariationPair(x.h, x.K, self.v_of(x.h, x.K))

    def A(self, h):
        ops, gi, H = self.ops, self.ginv, self.H
        Hsq = self.pack.Hsq
        t = _mm(h, gi, Hsq)
        hu = raise_all(h, gi)
        hhh = np.einsum("...ac,...iab,...jcd,...bd->...ij", hu, H, H, gi, optimize=True)
        return (0.5 * ops.lap_f_tensor(h) + ring_apply(self.pack.Rm, h, gi)
                + ops.div_star(ops.div_f(h)) - 0.125 * (t + np.swapaxes(t, -1, -2)) - 0.5 * hhh)

    def B(self, K):
        return -0.5 * self.ops.dstar_f(self.dK(K))

    def C(self, K):
        gi = self.ginv
        t = np.einsum("...iab,...jcd,...ac,...bd->...ij", self.dK(K), self.H, gi, gi, optimize=True)
        return 0.25 * (t + np.swapaxes(t, -1, -2))

    def D(self, h):
        """D(h) as listed: five terms in nabla H, div h, nabla h and grad f."""
        st, gi, H = self.state, self.ginv, self.H
        hu = raise_all(h, gi)
        divh = np.einsum("...b,...bc->...c", calc.div_sym(st, h), gi)  # upper index
        nh = calc.covd(st, h)  # nh[a, i, b] = nabla_a h_ib
        nh_u = np.einsum("...aib,...ac,...bd->...cid", nh, gi, gi, optimize=True)  # nabla^a h_i^b
        t1 = -np.einsum("...ab,...abij->...ij", hu, self.nablaH)
        t2 = -np.einsum("...b,...bij->...ij", divh, H)
        t3 = np.einsum("...aib,...baj->...ij", nh_u, H)
        t4 = np.einsum("...ajb,...bia->...ij", nh_u, H)
        t5 = np.einsum("...ab,...bij,...a->...ij", hu, H, self.gradf, optimize=True)
        return 0.5 * (t1 + t2 + t3 + t4 + t5)

    def D_adjoint(self, h):
        """The f-adjoint of C: (3/2) d*_f Alt(h_l^k H_kij)."""
        P = np.einsum("...lk,...kij->...lij", raise_index(h, self.ginv, 1), self.H)
        return 1.5 * self.ops.dstar_f(antisym_p(P, 3))

    # -- operator and forms ------------------------------------------------
    def apply(self, x: VariationPair) -> VariationPair:
        x = self.complete(x)
        h, K = x.h, x.K
        return VariationPair(self.A(h) + self.C(K), self.B(K) + self.D(h),
                             0.5 * self.ops.lap_f(x.v))

    def pair(self, x: VariationPair, y: VariationPair, with_v=True):
        """f-twisted inner product of two variations."""
        ops = self.ops
        out = ops.ip(x.h, y.h) + ops.ip(x.K, y.K)
        if with_v and x.v is not None and y.v is not None:
            out += ops.ip(x.v, y.v)
        return out

    def quad(self, x, y):
        """(N x, y)_f."""
        y = self.complete(y)
        return self.pair(self.apply(x), y)

    def second_variation(self, x: VariationPair, y: VariationPair):
        """Symmetric bilinear form polarizing the second-variation integral."""
        x, y = self.complete(x), self.complete(y)
        ops, gi, H = self.ops, self.ginv, self.H
        h1, h2 = x.h, y.h
        lin = (0.5 * ops.lap_f_tensor(h1) + ring_apply(self.pack.Rm, h1, gi)
               + ops.div_star(ops.div_f(h1)))
        val = ops.ip(lin, h2)
        hHh = np.einsum("...ij,...jk,...ki->...", raise_all(h1, gi), self.pack.Hsq,
                        raise_all(h2, gi), optimize=True)
        hHHh = np.einsum("...ij,...ac,...iab,...jcd,...bd->...",
                         raise_all(h1, gi), raise_all(h2, gi), H, H, gi, optimize=True)
        dK1, dK2 = self.dK(x.K), self.dK(y.K)

        def hdKH(h, dK):
            return np.einsum("...ij,...iab,...jcd,...ac,...bd->...", raise_all(h, gi), dK, H, gi, gi,
                             optimize=True)

        pt = -0.25 * hHh - 0.5 * hHHh + 0.5 * (hdKH(h1, dK2) + hdKH(h2, dK1))
        val += self.state.integrate(pt * ops.ef)
        val -= ops.ip(dK1, dK2) / 6.0
        if not self.frame:
            val -= 0.5 * ops.ip(ops.grad(x.v), ops.grad(y.v))
        return float(val)


def second_variation(state, f, x, y, require_soliton=True):
    return SecondVariation(state, f, require_soliton).second_variation(x, y)


def assemble_N(state, f=None, require_soliton=True):
    return SecondVariation(state, f, require_soliton)


# ---------------------------------------------------------------------------
# Lichnerowicz-type operator and the Dh identity
# ---------------------------------------------------------------------------

def delta_G(state, h, tol=1e-9):
    """Delta_G h = Delta h / 2 + 3 R(h) + (Rc o h + h o Rc) / 2 on TT tensors."""
    gi = state.ginv
    tr = np.einsum("...ij,...ij->...", h, gi)
    divh = calc.div_sym(state, h)
    scale = max(1.0, float(np.max(np.abs(h))))
    if np.max(np.abs(tr)) > tol * scale or np.max(np.abs(divh)) > tol * scale:
        raise PreconditionError("delta_G requires a trace-free, divergence-free tensor")
    pack = levi_civita_pack(state)
    t = _mm(pack.Rc, gi, h)
    return (0.5 * calc.rough_laplacian(state, h) + 3.0 * ring_apply(pack.Rm, h, gi)
            + 0.5 * (t + np.swapaxes(t, -1, -2)))


def dh_identity_terms(state, h):
    """Both sides of ||Dh||^2 = ||nabla h||^2 + 2||div h||^2 + 2(R h, h) - 2 int Rc h h."""
    gi = state.ginv
    nh = calc.covd(state, h)
    Dh = (nh + np.einsum("...jki->...ijk", nh) + np.einsum("...kij->...ijk", nh)) / np.sqrt(3.0)
    pack = levi_civita_pack(state)
    lhs = state.integrate(inner(Dh, Dh, gi))
    rch = np.einsum("...ij,...ik,...jk->...", raise_all(pack.Rc, gi), h, raise_index(h, gi, 1),
                    optimize=True)
    rhs = (state.integrate(inner(nh, nh, gi))
           + 2.0 * state.integrate(inner(calc.div_sym(state, h), calc.div_sym(state, h), gi))
           + 2.0 * state.integrate(inner(ring_apply(pack.Rm, h, gi), h, gi))
           - 2.0 * state.integrate(rch))
    return lhs, rhs


# ---------------------------------------------------------------------------
# variation spaces
# ---------------------------------------------------------------------------

def _sym_basis(n):
    out = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            out.append(E)
    return out


def _form_basis(n):
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            E = np.zeros((n, n))
            E[i, j], E[j, i] = 1.0, -1.0
            out.append(E)
    return out


def fourier_scalar_basis(grid, kcut):
    """Real trigonometric functions with |k_i| <= kcut, one per lattice vector pair."""
    x = grid.coords
    ks = []
    r = range(-kcut, kcut + 1)
    for a in r:
        for b in r:
            for c in r:
                ks.append((a, b, c))
    funcs = []
    labels = []
    for k in ks:
        if k == (0, 0, 0):
            funcs.append(np.ones(grid.grid_shape))
            labels.append(("const", k))
            continue
        neg = tuple(-q for q in k)
        if neg < k:
            continue
        phase = k[0] * x[0] + k[1] * x[1] + k[2] * x[2]
        funcs.append(np.sqrt(2.0) * np.cos(phase))
        labels.append(("cos", k))
        funcs.append(np.sqrt(2.0) * np.sin(phase))
        labels.append(("sin", k))
    return funcs, labels


class VariationSpace:
    """Finite variation space: scalar basis functions times constant (h, K) frames.

    DOF ordering: for each scalar function, the upper triangle of h in
    lexicographic order, then the strict upper triangle of K.
    """

    def __init__(self, sv: SecondVariation, kcut=1):
        self.sv = sv
        st = sv.state
        n = st.dim
        self.n = n
        self.Es = np.array(_sym_basis(n))
        self.Ea = np.array(_form_basis(n))
        self.ns, self.na = len(self.Es), len(self.Ea)
        self.nloc = self.ns + self.na
        if sv.frame:
            self.funcs, self.labels = [np.array(1.0)], [("const", ())]
        else:
            self.funcs, self.labels = fourier_scalar_basis(st.backend, kcut)
        self.nb = len(self.funcs)
        self.dim = self.nb * self.nloc
        self._gram = None
        self._chol = None

    # -- fields ------------------------------------------------------------
    def _stack(self, coeffs):
        """Fields for the columns of ``coeffs`` (dim x m) as stacked arrays."""
        C = np.asarray(coeffs, dtype=float).reshape(self.nb, self.nloc, -1)
        phi = np.array(self.funcs)  # (nb, grid...)
        h = np.einsum("bqm,qij->bmij", C[:, : self.ns], self.Es)
        K = np.einsum("bqm,qij->bmij", C[:, self.ns:], self.Ea)
        gshape = phi.shape[1:]
        P = phi.reshape(self.nb, -1).T  # (points, nb)

        def spread(T):
            m = T.shape[1]
            out = P @ T.reshape(self.nb, -1)  # (points, m * n * n)
            out = out.reshape(gshape + (m, self.n, self.n))
            return np.moveaxis(out, len(gshape), 0)

        return spread(h), spread(K)

    def element(self, j) -> VariationPair:
        e = np.zeros(self.dim)
        e[j] = 1.0
        return self.field(e)

    def field(self, c) -> VariationPair:
        hs, Ks = self._stack(np.asarray(c, dtype=float)[:, None])
        return VariationPair(hs[0], Ks[0])

    def fields(self, C):
        hs, Ks = self._stack(C)
        return [VariationPair(hs[m], Ks[m]) for m in range(hs.shape[0])]

    # -- pairings ----------------------------------------------------------
    def _measure(self):
        st = self.sv.state
        dens = self.sv.ops.ef * st.sqrt_det
        if self.sv.frame:
            return dens * st.backend.sc.ref_volume
        return dens * st.backend.cell_volume

    def _pair_stacks(self, A, B):
        """Matrix of weighted pairings between two stacks of tensor fields."""
        gi = self.sv.ginv
        mu = self._measure()
        Bu = np.matmul(np.matmul(gi, B), gi)
        lead = A.shape[0]
        Aw = A * np.reshape(mu, np.shape(mu) + (1, 1))
        return Aw.reshape(lead, -1) @ Bu.reshape(Bu.shape[0], -1).T

    def _pair_scalars(self, A, B):
        mu = self._measure()
        return (A * mu).reshape(A.shape[0], -1) @ B.reshape(B.shape[0], -1).T

    @cached_property
    def basis_stacks(self):
        return self._stack(np.eye(self.dim))

    def gram(self):
        """Gram matrix of the (h, K) part of the basis."""
        if self._gram is None:
            hs, Ks = self.basis_stacks
            G = self._pair_stacks(hs, hs) + self._pair_stacks(Ks, Ks)
            self._gram = 0.5 * (G + G.T)
        return self._gram

    def cholesky(self):
        if self._chol is None:
            self._chol = np.linalg.cholesky(self.gram())
        return self._chol

    def pairing_vector(self, x: VariationPair):
        """b_j = (x, e_j) over the (h, K) part."""
        return self.pairing_matrix([x])[:, 0]

    def pairing_matrix(self, xs):
        """Columns b_j = (x, e_j) for each variation in ``xs``."""
        hs, Ks = self.basis_stacks
        Xh = np.array([x.h for x in xs])
        XK = np.array([x.K for x in xs])
        return (self._pair_stacks(hs, Xh) + self._pair_stacks(Ks, XK))

    def coeffs(self, x: VariationPair, check=True, tol=1e-8):
        """Least-squares coefficients of x; raises if x leaves the space."""
        return self.coeffs_many([x], check, tol)[:, 0]

    def coeffs_many(self, xs, check=True, tol=1e-8):
        C = np.linalg.solve(self.gram(), self.pairing_matrix(xs))
        if check:
            sv = self.sv
            for x, y in zip(xs, self.fields(C)):
                d = VariationPair(x.h - y.h, x.K - y.K)
                nx = np.sqrt(max(sv.pair(x, x, with_v=False), 0.0))
                nd = np.sqrt(max(sv.pair(d, d, with_v=False), 0.0))
                if nd > tol * max(nx, 1e-300):
                    raise ConsistencyError(
                        f"variation leaves the discrete space (residual {nd / nx:.3e})")
        return C

    def assemble(self):
        """Matrix M_ij = (N e_j, e_i)_f including the potential term, plus its asymmetry."""
        sv = self.sv
        cols = [sv.complete(e) for e in self.fields(np.eye(self.dim))]
        Ncols = [sv.apply(c) for c in cols]
        hs = np.array([c.h for c in cols])
        Ks = np.array([c.K for c in cols])
        Nh = np.array([c.h for c in Ncols])
        NK = np.array([c.K for c in Ncols])
        M = self._pair_stacks(hs, Nh) + self._pair_stacks(Ks, NK)
        if not sv.frame:
            vs = np.array([c.v for c in cols])
            Nv = np.array([c.v for c in Ncols])
            M = M + self._pair_scalars(vs, Nv)
        asym = float(np.max(np.abs(M - M.T))) / max(1.0, float(np.max(np.abs(M))))
        return 0.5 * (M + M.T), asym


# ---------------------------------------------------------------------------
# gauge directions and the slice
# ---------------------------------------------------------------------------

def gauge_direction(state, xi, alpha=None, closed=None) -> VariationPair:
    """Infinitesimal diffeomorphism plus B-field shift: (L_X g, i_X H + d alpha + closed)."""
    X = np.einsum("...a,...ab->...b", xi, state.ginv)
    K = calc.interior(X, state.H, 3)
    if alpha is not None:
        K = K + calc.exterior_d(state, alpha)
    if closed is not None:
        K = K + closed
    return VariationPair(calc.lie_derivative_metric(state, xi), K)


def volume_form(state):
    n = state.dim
    eps = levi_civita(n)
    sd = state.sqrt_det
    return np.multiply.outer(sd, eps) if np.ndim(sd) else sd * eps


def conformal_direction(state, u, omega=None) -> VariationPair:
    """(u g, K): in dimension 3, K = -d*(omega dV); otherwise K = 0."""
    h = np.asarray(u)[..., None, None] * state.g
    n = state.dim
    K = np.zeros(np.shape(h))
    if n == 3 and omega is not None:
        K = -calc.codiff(state, np.asarray(omega)[..., None, None, None] * volume_form(state))
    return VariationPair(h, K)


def _orth(Y, rtol=1e-9):
    if Y.shape[1] == 0:
        return Y
    U, s, _ = np.linalg.svd(Y, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return U[:, :0]
    r = int(np.sum(s > rtol * s[0]))
    return U[:, :r]


class SliceProjector:
    """f-orthogonal projections onto the gauge space, the conformal block and their complement.

    Everything happens in whitened coordinates y = L^T c with G = L L^T, where
    the Gram product becomes Euclidean.
    """

    def __init__(self, space: VariationSpace, gauge_cols, v1_cols):
        self.space = space
        L = space.cholesky()
        self.L = L
        self.Qv = _orth(L.T @ gauge_cols)
        Y1 = L.T @ v1_cols
        Y1 = Y1 - self.Qv @ (self.Qv.T @ Y1)
        self.Q1 = _orth(Y1) if Y1.size else Y1
        B = np.hstack([self.Qv, self.Q1])
        U, s, _ = np.linalg.svd(B, full_matrices=True)
        self.Qp = U[:, B.shape[1]:] if B.shape[1] else np.eye(space.dim)

    def _proj_c(self, Q, c):
        y = self.L.T @ c
        return np.linalg.solve(self.L.T, Q @ (Q.T @ y))

    def project_coeffs(self, c):
        return tuple(self._proj_c(Q, c) for Q in (self.Qv, self.Q1, self.Qp))

    def project(self, x: VariationPair):
        c = self.space.coeffs(x)
        return tuple(self.space.field(p) for p in self.project_coeffs(c))

    def matrix(self, which):
        """Projector in coefficient coordinates: L^{-T} Q Q^T L^T."""
        Q = {"V": self.Qv, "V1": self.Q1, "perp": self.Qp}[which]
        return np.linalg.solve(self.L.T, Q @ Q.T @ self.L.T)

    def check(self):
        """Idempotency and f-self-adjointness residuals of the three projectors."""
        G = self.space.gram()
        out = {}
        for k in ("V", "V1", "perp"):
            P = self.matrix(k)
            sc = max(1.0, float(np.max(np.abs(P))))
            out[k] = (float(np.max(np.abs(P @ P - P))) / sc,
                      float(np.max(np.abs(G @ P - (G @ P).T))) / max(1.0, float(np.max(np.abs(G)))))
        return out


def gauge_columns(space: VariationSpace):
    """Coefficient columns spanning the gauge directions inside ``space``."""
    sv = space.sv
    st = sv.state
    n = st.dim
    gens = []
    for phi in space.funcs:
        for a in range(n):
            xi = np.multiply.outer(phi, np.eye(n)[a])
            gens.append(gauge_direction(st, xi))
    # closed 2-forms in the space (exact ones and harmonic ones)
    kcols = np.zeros((space.dim, space.nb * space.na))
    for m in range(space.nb):
        for q in range(space.na):
            kcols[m * space.nloc + space.ns + q, m * space.na + q] = 1.0
    dKs = np.array([sv.dK(x.K).reshape(-1) for x in space.fields(kcols)])
    U, s, _ = np.linalg.svd(dKs, full_matrices=False)
    tol = 1e-9 * max(1.0, s[0] if s.size else 1.0)
    rank = int(np.sum(s > tol))
    closed = kcols @ U[:, rank:]
    return np.hstack([space.coeffs_many(gens), closed])


def conformal_columns(space: VariationSpace):
    sv = space.sv
    st = sv.state
    n = st.dim
    gens = []
    for phi in space.funcs:
        gens.append(conformal_direction(st, phi))
        if n == 3 and not sv.frame:
            gens.append(conformal_direction(st, 0.0 * phi, phi))
    cols = list(space.coeffs_many(gens).T)
    if n >= 4:
        for m in range(space.nb):
            for q in range(space.na):
                e = np.zeros(space.dim)
                e[m * space.nloc + space.ns + q] = 1.0
                cols.append(e)
    return np.column_stack(cols)


def slice_projector(space: VariationSpace) -> SliceProjector:
    return SliceProjector(space, gauge_columns(space), conformal_columns(space))


def slice_project(state, f, x: VariationPair, kcut=1):
    """Split x into gauge, conformal and complement components."""
    space = VariationSpace(SecondVariation(state, f), kcut)
    return slice_projector(space).project(x)


# ---------------------------------------------------------------------------
# round S^3 conformal sector, exact arithmetic
# ---------------------------------------------------------------------------

def _exact(x, name, tol=1e-9):
    q = Fraction(x).limit_denominator(1000)
    if abs(float(q) - x) > tol:
        raise ConsistencyError(f"{name} = {x!r} is not a small rational")
    return q


def sphere_constants(state=None):
    """(n, rho, |H|^2, c) for the unit round S^3 with H = c dV, from the frame geometry."""
    from .geometry import biinvariant_geometry, su2

    state = state or biinvariant_geometry(su2())
    pack = levi_civita_pack(state)
    n = state.dim
    rho = float(np.trace(pack.Rc @ state.ginv)) / n
    if np.max(np.abs(pack.Rc - rho * state.g)) > 1e-12:
        raise PreconditionError("sphere mode analysis needs an Einstein frame metric")
    c = float(np.einsum("ijk,ijk->", state.H, volume_form(state))) / 6.0 / float(np.linalg.det(state.g))
    return n, _exact(rho, "rho"), _exact(float(pack.Hnorm_sq), "|H|^2"), _exact(c, "c")


def sphere_mode_form(mu, constants=None):
    """Exact 2x2 matrix of the form in (a, b) for h = a chi g, K = -b d*(chi dV), Delta chi = -mu chi.

    Contributions per unit L2 norm of chi:
      (1/2) Delta_f h        -n mu a^2 / 2
      R h                    rho n a^2
      div* div h             mu a^2
      -(1/8)(hH^2 + H^2h)    -|H|^2 a^2 / 4
      -(1/2) h h H H         -|H|^2 a^2 / 2
      h dK H coupling        -6 c mu a b
      -|dK|^2 / 6            -mu^2 b^2
      -|grad v|^2 / 2        -mu (a - c b)^2 / 2, since v = (a - c b) chi
    """
    n, rho, Hn, c = constants or sphere_constants()
    mu = Fraction(mu)
    aa = -Fraction(n, 2) * mu + rho * n + mu - Hn / 4 - Hn / 2 - mu / 2
    ab = (-6 * c * mu + mu * c) / 2
    bb = -mu * mu - mu * c * c / 2
    return [[aa, ab], [ab, bb]]


def _kernel_2x2(M):
    (p, q), (_, r) = M
    if p * r - q * q != 0:
        return []
    if p == 0 and q == 0 and r == 0:
        return [(Fraction(1), Fraction(0)), (Fraction(0), Fraction(1))]
    if p != 0 or q != 0:
        return [(-q, p)] if (p, q) != (0, 0) else [(Fraction(1), Fraction(0))]
    return [(Fraction(1), Fraction(0))]


def _normalize_ray(v):
    a, b = v
    s = a if a != 0 else b
    return (a / s, b / s)


def _gram_cos2(x, y, G):
    ip = lambda u, w: u[0] * G[0] * w[0] + u[1] * G[1] * w[1]
    return ip(x, y) ** 2 / (ip(x, x) * ip(y, y))


@dataclass
class StabilityReport:
    classification: str
    top_eigenvalues: list
    kernel: list = field(default_factory=list)
    mode_table: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def to_dict(self):
        def conv(o):
            if isinstance(o, Fraction):
                return str(o) if o.denominator != 1 else int(o)
            if isinstance(o, (list, tuple)):
                return [conv(v) for v in o]
            if isinstance(o, dict):
                return {k: conv(v) for k, v in o.items()}
            if isinstance(o, np.floating):
                return float(o)
            if isinstance(o, np.integer):
                return int(o)
            return o
        return {"classification": self.classification,
                "top_eigenvalues": conv(self.top_eigenvalues),
                "kernel": conv(self.kernel), "mode_table": conv(self.mode_table),
                "details": conv(self.details)}


def sphere_mode_analysis(basis, constants=None) -> StabilityReport:
    """Mode-by-mode form on the conformal/form block of the unit S^3 with H = 2 dV."""
    n, rho, Hn, c = constants or sphere_constants()
    rows = []
    kernel = []
    semidef = True
    for k, mu in zip(basis.degrees, basis.eigenvalues):
        M = sphere_mode_form(mu, (n, rho, Hn, c))
        (p, q), (_, r) = M
        tr, det = p + r, p * r - q * q
        disc = float(tr * tr - 4 * det)
        ev = sorted([(float(tr) - np.sqrt(max(disc, 0.0))) / 2, (float(tr) + np.sqrt(max(disc, 0.0))) / 2])
        nsd = p <= 0 and r <= 0 and det >= 0
        semidef &= nsd
        rays = []
        if mu > 0:
            G = (Fraction(n), 2 * Fraction(mu))
            for ray in _kernel_2x2(M):
                ray = _normalize_ray(ray)
                entry = {"k": k, "mu": mu, "ray": ray, "relation": f"a = {ray[0] / ray[1]} b"
                         if ray[1] != 0 else "b = 0", "identified": None, "angle": None}
                # gauge direction of X = grad chi projected to the block: only exact when
                # Hess chi is pure trace, which happens for the first eigenspace (mu = n)
                if mu == n:
                    gauge = (-2 * Fraction(mu) / n, c)
                    cos2 = _gram_cos2(ray, gauge, G)
                    entry["identified"] = "gauge: X = grad chi_1"
                    entry["angle"] = float(np.arccos(min(1.0, np.sqrt(float(cos2)))))
                else:
                    # (chi g + Hess chi / 4, d*(chi dV) / 4) minus 1/8 of the gauge
                    # direction of X = grad chi leaves (chi g, -(1/4 + c/8) d*-part)
                    rem = (Fraction(1), -Fraction(1, 4) - c / 8)
                    cos2 = _gram_cos2(ray, rem, G)
                    ang = float(np.arccos(min(1.0, np.sqrt(float(cos2)))))
                    entry["angle"] = ang
                    if ang < KERNEL_ANGLE_TOL:
                        entry["identified"] = "(chi g + Hess chi/4, d*(chi dV)/4) modulo gauge"
                rays.append(entry)
        kernel.extend(rays)
        rows.append({"k": k, "mu": mu, "multiplicity": (k + 1) ** 2, "form": M,
                     "eigenvalues": ev, "negative_semidefinite": bool(nsd),
                     "kernel_rays": [e["ray"] for e in rays]})
    cls = "stable" if semidef and all(e["identified"] for e in kernel) else (
        "unstable" if not semidef else "kernel-marginal")
    return StabilityReport(cls, [max(r["eigenvalues"]) for r in rows], kernel, rows,
                           {"constants": {"n": n, "rho": rho, "H_norm_sq": Hn, "c": c}})


# ---------------------------------------------------------------------------
# verdicts
# ---------------------------------------------------------------------------

TOL_EIG = 1e-7
KERNEL_ANGLE_TOL = 1e-4


def restricted_spectrum(space: VariationSpace, proj: SliceProjector, M=None):
    """Eigenpairs of N on the slice complement, with coefficient-space eigenvectors."""
    if M is None:
        M, _ = space.assemble()
    L = proj.L
    Mw = np.linalg.solve(L, np.linalg.solve(L, M).T).T
    Mw = 0.5 * (Mw + Mw.T)
    Q = proj.Qp
    ev, U = np.linalg.eigh(Q.T @ Mw @ Q)
    vecs = np.linalg.solve(L.T, Q @ U)
    return ev[::-1], vecs[:, ::-1]


def _rayleigh_check(space, ev, vecs, count):
    sv = space.sv
    worst = 0.0
    for j in range(min(count, len(ev))):
        x = space.field(vecs[:, j])
        rq = sv.quad(x, x) / sv.pair(x, x, with_v=False)
        worst = max(worst, abs(rq - ev[j]) / max(1.0, abs(ev[j])))
    return worst


def delta_G_frame_spectrum(state):
    """Eigenvalues of Delta_G on frame-constant trace-free tensors (divergence-free there)."""
    n = state.dim
    basis = [E for E in _sym_basis(n)]
    B = np.array(basis)
    tr = np.einsum("qij,ij->q", B, state.ginv)
    # trace-free subspace
    _, s, Vt = np.linalg.svd(tr[None, :])
    C = Vt[1:].T
    TT = np.einsum("qm,qij->mij", C, B)
    M = np.array([[inner(delta_G(state, a), b, state.ginv) for a in TT] for b in TT])
    G = np.array([[inner(a, b, state.ginv) for a in TT] for b in TT])
    from scipy.linalg import eigh

    return eigh(0.5 * (M + M.T), G, eigvals_only=True)[::-1]


def stability_verdict(state, f=None, kcut=1, kmax=2, tol_eig=TOL_EIG, top=8) -> StabilityReport:
    """Linear stability on the slice complement of the discrete variation space."""
    sv = SecondVariation(state, f)
    space = VariationSpace(sv, kcut)
    proj = slice_projector(space)
    M, asym = space.assemble()
    ev, vecs = restricted_spectrum(space, proj, M)
    rq = _rayleigh_check(space, ev, vecs, top)
    kern_idx = [j for j in range(len(ev)) if abs(ev[j]) <= tol_eig]
    details = {"dof": space.dim, "gauge_rank": proj.Qv.shape[1], "conformal_rank": proj.Q1.shape[1],
               "complement_dim": proj.Qp.shape[1], "asymmetry": asym, "rayleigh_residual": rq,
               "projector_residuals": proj.check()}
    kernel = []
    for j in kern_idx:
        x = space.field(vecs[:, j])
        nh = sv.pair(VariationPair(x.h, 0 * x.K), VariationPair(x.h, 0 * x.K), with_v=False)
        kernel.append({"eigenvalue": float(ev[j]), "h_fraction": float(nh / sv.pair(x, x, with_v=False)),
                       "identified": None})
    mode_report = None
    backend = state.backend
    is_round_s3 = (sv.frame and state.dim == 3 and getattr(backend.sc, "name", "") == "su2"
                   and np.allclose(state.g, np.eye(3), atol=1e-12))
    if is_round_s3:
        mode_report = sphere_mode_analysis(SphereHarmonicBasis(max(kmax, 2)))
        kernel.extend(mode_report.kernel)
        details["mode_classification"] = mode_report.classification
    if sv.frame:
        dg = delta_G_frame_spectrum(state)
        details["delta_G_frame_max"] = float(dg[0])
        details["delta_G_sufficient_condition"] = bool(dg[0] <= tol_eig)
        # Lambda(h, H) for frame TT tensors: exactness of 3 Lambda in the frame complex
        details["lambda_form_exactness"] = _lambda_exactness(state)
    if ev.size and ev[0] > tol_eig:
        cls = "unstable"
    elif mode_report is not None and mode_report.classification == "unstable":
        cls = "unstable"
    elif any(k["identified"] is None for k in kernel):
        cls = "kernel-marginal"
    else:
        cls = "stable"
    return StabilityReport(cls, [float(e) for e in ev[:top]], kernel,
                           mode_report.mode_table if mode_report else [], details)


def _lambda_exactness(state):
    """Largest distance of 3 Lambda(h) from the image of d on frame-constant 2-forms."""
    from .tensors import lambda_3form

    n = state.dim
    forms = np.array(_form_basis(n))
    D = np.array([calc.exterior_d(state, K).ravel() for K in forms]).T
    worst = 0.0
    for E in _sym_basis(n):
        h = E - np.trace(E @ state.ginv) / n * state.g
        lam = 3.0 * lambda_3form(h, state.H, state.ginv).ravel()
        if D.size and np.any(D):
            coef, *_ = np.linalg.lstsq(D, lam, rcond=None)
            r = lam - D @ coef
        else:
            r = lam
        worst = max(worst, float(np.linalg.norm(r)))
    return worst


def conformal_bound(state, f=None):
    """Form value on the constant conformal direction of a Lie frame versus the Cauchy-Schwarz bound.

    For frame-constant u the gradient vanishes, so the bound reads form <= 0.
    """
    sv = SecondVariation(state, f)
    n = state.dim
    x = VariationPair(np.array(state.g, dtype=float), np.zeros((n, n)))
    val = sv.quad(x, x)
    coeff = -((n - 2) / 2.0 - 18.0 + 10.0 * np.sqrt(3.0))
    return val, coeff * 0.0
