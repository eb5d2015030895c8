"""Dense multilinear algebra for small-dimension tensors.

All kernels act on numpy arrays whose *trailing* axes are tensor indices and
whose leading axes (if any) index grid points, so the same code serves a
single frame point and a whole periodic grid. Components are always stored
fully covariant; contractions raise indices with an explicit inverse metric
``ginv``.

Norm convention: |T|^2 is the full index sum T_{i..} T^{i..} with no 1/p!
factor, and <S, T> on forms is the corresponding full contraction.
"""

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .errors import InputError

MIN_DIM = 3
MAX_DIM = 8


def _perm_sign(p):
    sign = 1
    p = list(p)
    for i in range(len(p)):
        while p[i] != i:
            j = p[i]
            p[i], p[j] = p[j], p[i]
            sign = -sign
    return sign


def sym(a):
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def antisym_p(a, p):
    lead = a.ndim - p
    out = np.zeros_like(a)
    for perm in permutations(range(p)):
        axes = list(range(lead)) + [lead + q for q in perm]
        out = out + _perm_sign(perm) * np.transpose(a, axes)
    return out / len(list(permutations(range(p))))


def antisym2(a):
    return antisym_p(a, 2)


def antisym3(a):
    return antisym_p(a, 3)


def levi_civita(n):
    """Permutation symbol of rank ``n`` as a dense float array."""
    eps = np.zeros((n,) * n)
    for perm in permutations(range(n)):
        eps[perm] = _perm_sign(perm)
    return eps


# ---------------------------------------------------------------------------
# array kernels
# ---------------------------------------------------------------------------

def raise_index(T, ginv, slot):
    """Raise tensor slot ``slot`` (counted among trailing tensor axes)."""
    rank = _rank_of(T, ginv)
    lead = T.ndim - rank
    Tm = np.moveaxis(T, lead + slot, -1)
    shp = Tm.shape
    # batched matmul over the grid: (grid, rest, a) @ (grid, a, b)
    out = np.matmul(Tm.reshape(shp[:lead] + (-1, shp[-1])), ginv)
    return np.moveaxis(out.reshape(shp), -1, lead + slot)


def _rank_of(T, ginv):
    return T.ndim - (ginv.ndim - 2)


def raise_all(T, ginv):
    rank = _rank_of(T, ginv)
    out = T
    for s in range(rank):
        out = raise_index(out, ginv, s)
    return out


def inner(S, T, ginv):
    """Full contraction <S, T>_g of two covariant tensors of equal rank."""
    rank = _rank_of(S, ginv)
    Su = raise_all(S, ginv)
    axes = tuple(range(-rank, 0))
    return np.sum(Su * T, axis=axes)


def norm_sq(T, ginv):
    return inner(T, T, ginv)


def h_square(H, ginv):
    """H^2_{ij} = H_{iab} H_{jcd} g^{ac} g^{bd}."""
    return np.einsum("...iab,...jcd,...ac,...bd->...ij", H, H, ginv, ginv, optimize=True)


def ring_apply(Rm, h, ginv):
    """(R h)_{jk} = R_{ijkl} h^{il}."""
    hu = raise_all(h, ginv)
    return np.einsum("...ijkl,...il->...jk", Rm, hu)


def lambda_3form(h, H, ginv):
    """Lambda_{aib} = (h_a^j H_{jib} + h_b^j H_{jai} + h_i^j H_{jba}) / 3."""
    hm = raise_index(h, ginv, 1)  # h_a^j
    t1 = np.einsum("...aj,...jib->...aib", hm, H)
    t2 = np.einsum("...bj,...jai->...aib", hm, H)
    t3 = np.einsum("...ij,...jba->...aib", hm, H)
    return (t1 + t2 + t3) / 3.0


def riemann_symmetry_residual(Rm):
    """Max violation of skew pairs, pair symmetry and the first Bianchi identity."""
    r1 = Rm + np.swapaxes(Rm, -4, -3)
    r2 = Rm + np.swapaxes(Rm, -2, -1)
    lead = Rm.ndim - 4
    L = list(range(lead))
    pair = np.transpose(Rm, L + [lead + 2, lead + 3, lead, lead + 1])
    r3 = Rm - pair
    # R_ijkl + R_jkil + R_kijl
    b1 = np.transpose(Rm, L + [lead + 2, lead, lead + 1, lead + 3])
    b2 = np.transpose(Rm, L + [lead + 1, lead + 2, lead, lead + 3])
    r4 = Rm + b1 + b2
    scale = max(1.0, float(np.max(np.abs(Rm))) if Rm.size else 1.0)
    return max(float(np.max(np.abs(r))) for r in (r1, r2, r3, r4)) / scale


# ---------------------------------------------------------------------------
# validated single-point value types
# ---------------------------------------------------------------------------

def _check_dim(comps, rank, name):
    comps = np.asarray(comps, dtype=float)
    if comps.ndim != rank or len(set(comps.shape)) != 1:
        raise InputError(f"{name}: expected a square rank-{rank} array, got shape {comps.shape}")
    n = comps.shape[0]
    if not MIN_DIM <= n <= MAX_DIM:
        raise InputError(f"{name}: dimension {n} outside [{MIN_DIM}, {MAX_DIM}]")
    return comps, n


def _sym_tol(comps):
    return 1e-12 * max(1.0, float(np.max(np.abs(comps))))


@dataclass(frozen=True)
class SymTensor2:
    comps: np.ndarray

    def __post_init__(self):
        comps, _ = _check_dim(self.comps, 2, "SymTensor2")
        if np.max(np.abs(comps - comps.T)) > _sym_tol(comps):
            raise InputError("SymTensor2: components are not symmetric")
        object.__setattr__(self, "comps", comps)

    @property
    def dim(self):
        return self.comps.shape[0]


@dataclass(frozen=True)
class Form2:
    comps: np.ndarray

    def __post_init__(self):
        comps, _ = _check_dim(self.comps, 2, "Form2")
        if np.max(np.abs(comps + comps.T)) > _sym_tol(comps):
            raise InputError("Form2: components are not antisymmetric")
        object.__setattr__(self, "comps", comps)

    @property
    def dim(self):
        return self.comps.shape[0]


@dataclass(frozen=True)
class Form3:
    comps: np.ndarray

    def __post_init__(self):
        comps, _ = _check_dim(self.comps, 3, "Form3")
        tol = _sym_tol(comps)
        for axes in ((1, 0, 2), (0, 2, 1), (2, 1, 0)):
            if np.max(np.abs(comps + np.transpose(comps, axes))) > tol:
                raise InputError("Form3: components are not totally antisymmetric")
        object.__setattr__(self, "comps", comps)

    @property
    def dim(self):
        return self.comps.shape[0]


@dataclass(frozen=True)
class FrameMetric:
    comps: np.ndarray

    def __post_init__(self):
        comps = SymTensor2(self.comps).comps
        try:
            np.linalg.cholesky(comps)
        except np.linalg.LinAlgError:
            raise InputError("FrameMetric: metric is not positive definite") from None
        object.__setattr__(self, "comps", comps)

    @property
    def dim(self):
        return self.comps.shape[0]

    @property
    def inverse(self):
        return np.linalg.inv(self.comps)


def _match(*objs):
    dims = {o.dim for o in objs}
    if len(dims) != 1:
        raise InputError(f"dimension mismatch: {sorted(dims)}")


def hsquare(H: Form3, g: FrameMetric) -> SymTensor2:
    _match(H, g)
    return SymTensor2(sym(h_square(H.comps, g.inverse)))


def form_norm_sq(T, g: FrameMetric) -> float:
    _match(T, g)
    return float(norm_sq(T.comps, g.inverse))


def ring_R(Rm, h: SymTensor2, g: FrameMetric = None) -> SymTensor2:
    """Apply the curvature operator (R h)_{jk} = R_{ijkl} h^{il}.

    ``Rm`` must carry the algebraic symmetries of a Riemann tensor; the
    metric defaults to the identity (orthonormal frame).
    """
    Rm = np.asarray(Rm, dtype=float)
    if Rm.shape != (h.dim,) * 4:
        raise InputError(f"ring_R: curvature shape {Rm.shape} does not match dim {h.dim}")
    if riemann_symmetry_residual(Rm) > 1e-10:
        raise InputError("ring_R: curvature array violates Riemann symmetries")
    ginv = np.eye(h.dim) if g is None else g.inverse
    return SymTensor2(sym(ring_apply(Rm, h.comps, ginv)))


def lambda_form(h: SymTensor2, H: Form3, g: FrameMetric = None) -> Form3:
    _match(h, H)
    ginv = np.eye(h.dim) if g is None else g.inverse
    return Form3(lambda_3form(h.comps, H.comps, ginv))
