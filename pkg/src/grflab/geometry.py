"""Backends on which fields live, and the (g, b, H0) geometry state.

Three backends are provided:

* ``LieFrame``: left-invariant tensors on a Lie group, written in a fixed
  frame e_i with brackets [e_i, e_j] = c_{ij}^k e_k. Components are constant,
  so partial derivatives vanish and curvature is exact algebra.
* ``Torus``: fields sampled on an n^3 lattice of the flat 2*pi-periodic
  3-torus, differentiated spectrally in coordinate frames.
* ``SphereModes``: the round S^3 as the su(2) frame, together with the scalar
  Laplace spectrum used for the conformal sector of the stability analysis.

Every field array carries the backend's grid axes first and tensor indices
last; for frame backends the grid shape is ``()``.
"""

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .errors import InputError
from .tensors import levi_civita, sym

JACOBI_TOL = 1e-12


# ---------------------------------------------------------------------------
# structure constants
# ---------------------------------------------------------------------------

def jacobi_residual(alpha):
    a = np.asarray(alpha)
    # sum_m a_ijm a_mkl + a_jkm a_mil + a_kim a_mjl
    t = (np.einsum("ijm,mkl->ijkl", a, a)
         + np.einsum("jkm,mil->ijkl", a, a)
         + np.einsum("kim,mjl->ijkl", a, a))
    return float(np.max(np.abs(t))) if t.size else 0.0


@dataclass(frozen=True)
class StructureConstants:
    """alpha_{ijk} = <[e_i, e_j], e_k> in a basis orthonormal for a bi-invariant metric.

    ``ref_volume`` is the volume of the group in that reference metric; it
    only fixes the additive constant of the minimizer f.
    """

    alpha: np.ndarray
    name: str = "custom"
    ref_volume: float = 1.0

    def __post_init__(self):
        a = np.asarray(self.alpha, dtype=float)
        if a.ndim != 3 or len(set(a.shape)) != 1:
            raise InputError(f"structure constants must be dim^3, got shape {a.shape}")
        tol = 1e-12 * max(1.0, float(np.max(np.abs(a))) if a.size else 1.0)
        for axes in ((1, 0, 2), (0, 2, 1)):
            if np.max(np.abs(a + np.transpose(a, axes))) > tol:
                raise InputError("structure constants are not totally antisymmetric")
        res = jacobi_residual(a)
        if res > JACOBI_TOL * max(1.0, float(np.max(np.abs(a))) ** 2):
            raise InputError(f"structure constants violate the Jacobi identity (residual {res:.3e})")
        object.__setattr__(self, "alpha", a)

    @property
    def dim(self):
        return self.alpha.shape[0]

    def killing_form(self):
        """B(X, Y) = tr(ad X ad Y) from explicit adjoint matrices."""
        ad = np.array([self.alpha[i].T for i in range(self.dim)])  # (ad e_i)_{kj} = c_ij^k
        return np.einsum("ikj,ljk->il", ad, ad)


def su2():
    return StructureConstants(2.0 * levi_civita(3), "su2", ref_volume=2.0 * np.pi ** 2)


def abelian(n=3):
    return StructureConstants(np.zeros((n, n, n)), f"abelian{n}")


def direct_sum(*algebras):
    n = sum(a.dim for a in algebras)
    alpha = np.zeros((n, n, n))
    off = 0
    vol = 1.0
    for a in algebras:
        d = a.dim
        alpha[off:off + d, off:off + d, off:off + d] = a.alpha
        off += d
        vol *= a.ref_volume
    return StructureConstants(alpha, "+".join(a.name for a in algebras), ref_volume=vol)


def su2xsu2():
    return direct_sum(su2(), su2())


def su3():
    """Gell-Mann structure constants f_abc (totally antisymmetric)."""
    f = np.zeros((8, 8, 8))
    r3 = np.sqrt(3.0) / 2.0
    entries = {
        (0, 1, 2): 1.0,
        (0, 3, 6): 0.5, (0, 4, 5): -0.5,
        (1, 3, 5): 0.5, (1, 4, 6): 0.5,
        (2, 3, 4): 0.5, (2, 5, 6): -0.5,
        (3, 4, 7): r3, (5, 6, 7): r3,
    }
    from itertools import permutations
    from .tensors import _perm_sign
    for idx, val in entries.items():
        for p in permutations(range(3)):
            f[tuple(idx[q] for q in p)] = _perm_sign(p) * val
    return StructureConstants(f, "su3")


ALGEBRAS = {"su2": su2, "su2xsu2": su2xsu2, "su3": su3, "abelian3": abelian}


# ---------------------------------------------------------------------------
# backends
# ---------------------------------------------------------------------------

class LieFrame:
    """Left-invariant fields on a Lie group in a fixed frame."""

    grid_shape = ()

    def __init__(self, sc: StructureConstants):
        self.sc = sc
        self.dim = sc.dim

    @property
    def bracket(self):
        return self.sc.alpha

    def deriv(self, T):
        """Frame derivatives e_a(T) of constant components: identically zero."""
        return np.zeros((self.dim,) + np.shape(T))

    def divergence(self, T):
        return np.zeros(np.shape(T)[1:])

    def integrate(self, F, sqrt_det):
        return float(F * sqrt_det * self.sc.ref_volume)

    def constant(self, value):
        return float(value)

    def describe(self):
        return {"backend": "lie", "algebra": self.sc.name, "dim": self.dim}


class Torus:
    """Spectral backend on the 2*pi-periodic 3-torus with n points per axis."""

    dim = 3
    period = 2.0 * np.pi

    def __init__(self, n=16):
        if n < 8 or n & (n - 1):
            raise InputError(f"torus grid size must be a power of two >= 8, got {n}")
        self.n = n
        self.grid_shape = (n, n, n)
        k = sfft.fftfreq(n, d=1.0 / n)
        kr = sfft.rfftfreq(n, d=1.0 / n)  # last axis uses the real-input half spectrum
        self.k = k
        self._kaxes = [k.reshape(n, 1, 1), k.reshape(1, n, 1), kr.reshape(1, 1, -1)]
        # odd derivatives drop the Nyquist mode
        self._kd = [np.where(np.abs(q) == n // 2, 0.0, q) for q in self._kaxes]
        self._k2 = [q ** 2 for q in self._kaxes]
        self.h = self.period / n
        self.cell_volume = self.h ** 3

    bracket = None

    @cached_property
    def coords(self):
        x = np.arange(self.n) * self.h
        return np.meshgrid(x, x, x, indexing="ij")

    def _fft(self, T):
        return sfft.rfftn(T, axes=(0, 1, 2))

    def _ifft(self, That):
        return sfft.irfftn(That, s=self.grid_shape, axes=(0, 1, 2))

    def deriv(self, T):
        """Spectral partials; new axis 3 holds the derivative direction."""
        T = np.asarray(T, dtype=float)
        That = self._fft(T)
        extra = T.ndim - 3
        outs = []
        for a in range(3):
            ka = self._kd[a].reshape(self._kd[a].shape + (1,) * extra)
            outs.append(self._ifft(1j * ka * That))
        return np.stack(outs, axis=3)

    def divergence(self, T):
        """sum_a d_a T[..., a, rest]: contract the derivative with the first tensor axis."""
        T = np.asarray(T, dtype=float)
        That = self._fft(T)
        extra = T.ndim - 4
        acc = 0.0
        for a in range(3):
            ka = self._kd[a].reshape(self._kd[a].shape + (1,) * extra)
            acc = acc + 1j * ka * That[:, :, :, a]
        return self._ifft(acc)

    def drop_nyquist(self, u):
        """Remove every Fourier mode with |k_i| = n/2 in some direction.

        The spectral first derivative annihilates those modes, so without this
        filter they would add spurious null directions to discrete Laplacians.
        """
        uh = self._fft(u)
        keep = self.lowpass_mask(self.n // 2 - 1)
        return self._ifft(uh * keep.reshape(keep.shape + (1,) * (np.ndim(u) - 3)))

    def integrate(self, F, sqrt_det):
        return float(np.sum(F * sqrt_det) * self.cell_volume)

    def constant(self, value):
        return np.full(self.grid_shape, float(value))

    def lowpass_mask(self, kcut):
        """Boolean mask on the half spectrum keeping |k_i| <= kcut."""
        m = [np.abs(q) <= kcut for q in self._kaxes]
        return m[0] & m[1] & m[2]

    def random_bandlimited(self, tensor_shape, kcut, rng, amplitude=1.0):
        """Real random field with Fourier support |k_i| <= kcut in every direction."""
        shape = self.grid_shape + tuple(tensor_shape)
        noise = rng.standard_normal(shape)
        nh = self._fft(noise)
        mask = self.lowpass_mask(kcut)
        mask = mask.reshape(mask.shape + (1,) * len(tensor_shape))
        F = self._ifft(nh * mask)
        scale = np.sqrt(np.mean(F ** 2)) or 1.0
        return amplitude * F / scale

    def describe(self):
        return {"backend": "torus", "n": self.n}


@dataclass(frozen=True)
class SphereHarmonicBasis:
    """Laplace spectrum mu_k = k(k+2) on the unit S^3 up to degree ``kmax``."""

    kmax: int

    def __post_init__(self):
        if self.kmax < 1:
            raise InputError("kmax must be >= 1")

    @property
    def degrees(self):
        return list(range(self.kmax + 1))

    @property
    def eigenvalues(self):
        return [k * (k + 2) for k in self.degrees]

    @property
    def multiplicities(self):
        return [(k + 1) ** 2 for k in self.degrees]


class SphereModes(LieFrame):
    """Round S^3: su(2) frame geometry plus its scalar harmonic table."""

    def __init__(self, basis: SphereHarmonicBasis):
        super().__init__(su2())
        self.basis = basis

    def describe(self):
        return {"backend": "sphere", "kmax": self.basis.kmax}


def sphere_mode_space(kmax):
    if kmax < 2:
        raise InputError("sphere_mode_space requires kmax >= 2")
    return SphereHarmonicBasis(kmax)


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------

def exterior_d_frame(bracket, form):
    """Chevalley-Eilenberg differential of a constant 2-form in a Lie frame.

    (db)(e_i, e_j, e_k) = -b([e_i,e_j], e_k) + b([e_i,e_k], e_j) - b([e_j,e_k], e_i)
    """
    c = bracket
    t = np.einsum("ijm,mk->ijk", c, form)
    return -t + np.transpose(t, (0, 2, 1)) - np.transpose(t, (2, 0, 1))


@dataclass(frozen=True, eq=False)
class GeometryState:
    """Metric g, B-field b and closed background 3-form H0; H = H0 + db.

    Arrays carry the backend's grid axes first. The state is immutable; use
    ``replace`` to derive new states.
    """

    backend: object
    g: np.ndarray
    b: np.ndarray
    H0: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.backend.dim
        gs = tuple(self.backend.grid_shape)
        for name, arr, rank in (("g", self.g, 2), ("b", self.b, 2), ("H0", self.H0, 3)):
            if np.shape(arr) != gs + (n,) * rank:
                raise InputError(f"{name} has shape {np.shape(arr)}, expected {gs + (n,) * rank}")
        g = np.asarray(self.g, dtype=float)
        if np.max(np.abs(g - np.swapaxes(g, -1, -2))) > 1e-12 * max(1.0, np.max(np.abs(g))):
            raise InputError("metric is not symmetric")
        g = sym(g)
        eig = np.linalg.eigvalsh(g)
        if np.min(eig) <= 0:
            bad = np.argwhere(eig[..., 0] <= 0) if g.ndim > 2 else []
            where = f" at node {tuple(int(i) for i in bad[0])}" if len(bad) else ""
            raise InputError(f"metric is not positive definite{where}")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "b", np.asarray(self.b, dtype=float))
        object.__setattr__(self, "H0", np.asarray(self.H0, dtype=float))

    @property
    def dim(self):
        return self.backend.dim

    @cached_property
    def ginv(self):
        return np.linalg.inv(self.g)

    @cached_property
    def sqrt_det(self):
        return np.sqrt(np.linalg.det(self.g))

    @cached_property
    def db(self):
        from .calculus import exterior_d
        return exterior_d(self, self.b)

    @cached_property
    def H(self):
        return self.H0 + self.db

    @property
    def volume(self):
        return self.backend.integrate(1.0 if self.backend.grid_shape == () else np.ones(self.backend.grid_shape),
                                      self.sqrt_det)

    def integrate(self, F):
        return self.backend.integrate(F, self.sqrt_det)

    def min_metric_eigenvalue(self):
        return float(np.min(np.linalg.eigvalsh(self.g)))

    def replace(self, g=None, b=None):
        return GeometryState(self.backend,
                             self.g if g is None else g,
                             self.b if b is None else b,
                             self.H0, dict(self.meta))


def biinvariant_geometry(sc: StructureConstants, scale=1.0):
    """Bi-invariant metric scale*Id with H(X, Y, Z) = g([X, Y], Z).

    With g^{-1}H(X, Y) = [X, Y] the frame components are H_ijk = scale*alpha_ijk,
    and (g, H) is Bismut-flat and generalized Einstein for compact semisimple
    algebras.
    """
    if scale <= 0:
        raise InputError("scale must be positive")
    n = sc.dim
    backend = LieFrame(sc)
    return GeometryState(backend, scale * np.eye(n), np.zeros((n, n)), scale * sc.alpha,
                         {"kind": "biinvariant", "scale": float(scale)})


def round_sphere(kmax=2):
    basis = sphere_mode_space(kmax)
    backend = SphereModes(basis)
    return GeometryState(backend, np.eye(3), np.zeros((3, 3)), backend.sc.alpha.copy(),
                         {"kind": "round_s3", "kmax": kmax})


def left_invariant_state(sc: StructureConstants, g, b=None, H0=None):
    n = sc.dim
    backend = LieFrame(sc)
    return GeometryState(backend, np.asarray(g, float),
                         np.zeros((n, n)) if b is None else np.asarray(b, float),
                         sc.alpha.copy() if H0 is None else np.asarray(H0, float))


def berger_state(a, c, sc=None):
    """Left-invariant diag(a, a, c) metric on SU(2) with the round H = 2 e^123."""
    sc = sc or su2()
    return left_invariant_state(sc, np.diag([a, a, c]))


def torus_state(grid: Torus, g_field=None, b_field=None, H0=None):
    """Torus geometry; H0 defaults to zero so that H = db."""
    n = grid.n
    gs = grid.grid_shape
    if g_field is None:
        g_field = np.broadcast_to(np.eye(3), gs + (3, 3)).copy()
    if b_field is None:
        b_field = np.zeros(gs + (3, 3))
    if H0 is None:
        H0 = np.zeros(gs + (3, 3, 3))
    g_field = np.asarray(g_field, float)
    if g_field.shape == (3, 3):
        g_field = np.broadcast_to(g_field, gs + (3, 3)).copy()
    b_field = np.asarray(b_field, float)
    if np.max(np.abs(b_field + np.swapaxes(b_field, -1, -2))) > 1e-12 * max(1.0, np.max(np.abs(b_field))):
        raise InputError("b_field is not antisymmetric")
    return GeometryState(grid, g_field, b_field, np.asarray(H0, float), {"kind": "torus", "n": n})


def torus_perturbation(grid: Torus, eps=1e-2, kcut=2, seed=0, metric_only=False):
    """Flat torus plus a seed-controlled band-limited (g, b) perturbation of size eps."""
    rng = np.random.default_rng(seed)
    h = sym(grid.random_bandlimited((3, 3), kcut, rng))
    h /= np.sqrt(np.mean(np.sum(h ** 2, axis=(-1, -2))))
    g = np.eye(3) + eps * h
    b = np.zeros(grid.grid_shape + (3, 3))
    if not metric_only:
        raw = grid.random_bandlimited((3, 3), kcut, rng)
        b = raw - np.swapaxes(raw, -1, -2)
        b /= np.sqrt(np.mean(np.sum(b ** 2, axis=(-1, -2))))
        b = eps * b
    st = torus_state(grid, g, b)
    st.meta.update({"kind": "torus_perturbed", "eps": eps, "kcut": kcut, "seed": seed})
    return st
