"""The lambda functional, its minimizer, and the f-weighted operators.

lambda(g, H) is the lowest eigenvalue of -4 Laplacian + R - |H|^2/12. The
minimizer is f = -2 log(omega) for the positive, L2-normalized ground state.

Weighted divergences are assembled in conservative form with the density
w = e^{-f} sqrt(det g), so that the discrete integration-by-parts identities
hold to rounding error rather than to discretization error.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from . import calculus as calc
from .curvature import levi_civita_pack
from .errors import ConsistencyError, SolverError
from .tensors import inner, norm_sq, raise_all

EIG_RESIDUAL_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SpectralResult:
    lam: float
    f: np.ndarray
    omega: np.ndarray
    solver_info: dict = field(default_factory=dict)


def potential(state):
    pack = levi_civita_pack(state)
    return pack.R - pack.Hnorm_sq / 12.0


def _lower_all(T, g):
    return raise_all(T, g)


class WeightedOps:
    """f-weighted differential operators for a fixed (state, f)."""

    def __init__(self, state, f=None):
        self.state = state
        be = state.backend
        self.frame = be.grid_shape == ()
        if f is None:
            f = be.constant(0.0)
        self.f = np.asarray(f, dtype=float) if not self.frame else float(f)
        self.ef = np.exp(-self.f)
        self.w = self.ef * state.sqrt_det
        self.gam = calc.connection(state)
        _, self.gradf = calc.grad(state, self.f)

    # -- pairing ---------------------------------------------------------
    def ip(self, S, T):
        """(S, T)_f = integral of <S, T> e^{-f} dV."""
        S = np.asarray(S, dtype=float)
        if S.ndim == len(self.state.backend.grid_shape):
            pt = S * T
        else:
            pt = inner(S, T, self.state.ginv)
        return self.state.integrate(pt * self.ef)

    # -- first-order pieces ----------------------------------------------
    def grad(self, u):
        return calc.covd(self.state, u)

    def _wdiv_upper(self, Tup):
        """Weighted divergence on the first slot of a fully contravariant tensor.

        Returns the contravariant result e^f nabla_a(e^{-f} T^{a i..}).
        """
        st = self.state
        gam = self.gam
        p = Tup.ndim - len(st.backend.grid_shape)
        letters = "ijklmn"[: p - 1]
        if self.frame:
            out = np.einsum(f"ama,m{letters}->{letters}", gam, Tup)
        else:
            wT = self.w.reshape(self.w.shape + (1,) * p) * Tup
            out = st.backend.divergence(wT) / self.w.reshape(self.w.shape + (1,) * (p - 1))
        for s in range(p - 1):
            src = letters[:s] + "m" + letters[s + 1:]
            out = out + np.einsum(f"...am{letters[s]},...a{src}->...{letters}", gam, Tup)
        return out

    def wdiv(self, T):
        """Weighted divergence of a covariant tensor on its first slot, lowered."""
        st = self.state
        res = self._wdiv_upper(raise_all(T, st.ginv))
        if res.ndim == len(st.backend.grid_shape):
            return res
        return _lower_all(res, st.g)

    # -- public operators --------------------------------------------------
    def lap_f(self, u):
        """Delta_f u = Delta u - <grad f, grad u> on scalars."""
        if self.frame:
            return 0.0 * u
        return self.wdiv(self.grad(u))

    def lap_f_tensor(self, T):
        """Rough Laplacian Delta_f T = -nabla*_f nabla T."""
        return self.wdiv(calc.covd(self.state, T))

    def div_f(self, h):
        """(div_f h)_i = nabla_j h_ji - h_ji nabla_j f."""
        return self.wdiv(h)

    def div_f_one(self, xi):
        return self.wdiv(xi)

    def div_star(self, xi):
        return calc.div_star(self.state, xi)

    def dstar_f(self, T):
        """(d*_f T)_{i..} = (d*T)_{i..} + nabla_a f T_{a i..}."""
        return -self.wdiv(T)

    def exterior_d(self, T):
        return calc.exterior_d(self.state, T)

    def hess(self, u):
        return calc.hessian(self.state, u)

    # -- scalar Poisson problem --------------------------------------------
    def solve_lap_f(self, rhs, tol=1e-13, maxiter=2000):
        """Mean-zero solution of Delta_f v = rhs; rhs must have zero weighted mean."""
        st = self.state
        if self.frame:
            if abs(float(rhs)) > 1e-8 * max(1.0, abs(float(rhs))) and abs(float(rhs)) > 1e-10:
                raise ConsistencyError(f"Poisson right-hand side {float(rhs):.3e} has nonzero mean")
            return 0.0
        be = st.backend
        shape = be.grid_shape
        vol_w = float(np.sum(self.w))
        mean = float(np.sum(self.w * rhs)) / vol_w
        scale = max(float(np.max(np.abs(rhs))), 1e-300)
        if abs(mean) > 1e-8 * scale and abs(mean) > 1e-12:
            raise ConsistencyError(f"Poisson compatibility violated: weighted mean {mean:.3e}")
        b = rhs - mean
        sw = np.sqrt(self.w)
        ones = (sw / np.sqrt(vol_w)).ravel()

        def proj(x):
            return x - ones * np.dot(ones, x)

        def mv(x):
            u = x.reshape(shape) / sw
            return proj((-sw * self.lap_f(u)).ravel())

        ginv_mean = np.mean(st.ginv, axis=(0, 1, 2))
        symbol = sum(ginv_mean[a, a] * be._k2[a] for a in range(3))
        inv = np.where(symbol > 0, 1.0 / np.where(symbol > 0, symbol, 1.0), 0.0)

        def prec(x):
            X = x.reshape(shape)
            return proj(np.real(be._ifft(be._fft(X) * inv)).ravel())

        n = b.size
        A = spla.LinearOperator((n, n), matvec=mv, dtype=float)
        M = spla.LinearOperator((n, n), matvec=prec, dtype=float)
        y, info = spla.cg(A, proj((sw * b).ravel() * -1.0), rtol=tol, atol=0.0, maxiter=maxiter, M=M)
        if info != 0:
            raise SolverError("Poisson solve did not converge", residual=info)
        v = y.reshape(shape) / sw
        return v - float(np.sum(self.w * v)) / vol_w


def weighted_ops(state, f=None):
    return WeightedOps(state, f)


# ---------------------------------------------------------------------------
# lambda
# ---------------------------------------------------------------------------

def _frame_lambda(state):
    V = float(potential(state))
    vol = state.volume
    return SpectralResult(V, float(np.log(vol)), float(1.0 / np.sqrt(vol)),
                          {"homogeneous": True, "iterations": 0, "residual": 0.0})


def schrodinger_apply(state, u, V=None):
    """(-4 Delta + V) u with the conservative discrete Laplacian."""
    V = potential(state) if V is None else V
    ops = WeightedOps(state)
    return -4.0 * ops.lap_f(u) + V * u


def compute_lambda(state, tol=1e-13, v0=None) -> SpectralResult:
    """Ground state of -4 Delta + R - |H|^2/12.

    On the torus the operator is symmetrized with sqrt(det g)^{1/2} and solved
    on the Nyquist-free subspace (see ``Torus.drop_nyquist``). LOBPCG with an
    FFT preconditioner does the work; shift-invert Lanczos is the fallback.
    """
    if state.backend.grid_shape == ():
        return _frame_lambda(state)
    be = state.backend
    shape = be.grid_shape
    V = potential(state)
    sw = np.sqrt(state.sqrt_det)
    ops = WeightedOps(state)
    n = V.size
    penalty = 1e3 * (1.0 + float(np.max(np.abs(V))))
    counter = {"matvec": 0, "inner_solves": 0}

    def P(x):
        return be.drop_nyquist(x.reshape(shape)).ravel()

    def mv(x):
        counter["matvec"] += 1
        x = np.ravel(x)
        y = P(x)
        u = y.reshape(shape) / sw
        Sy = (sw * (-4.0 * ops.lap_f(u) + V * u)).ravel()
        return P(Sy) + penalty * (x - y)

    def columns(fn):
        def apply(X):
            X = np.asarray(X)
            if X.ndim == 1:
                return fn(X)
            return np.column_stack([fn(c) for c in X.T])
        return apply

    ginv_mean = np.mean(state.ginv, axis=(0, 1, 2))
    k2 = 4.0 * sum(ginv_mean[a, a] * be._k2[a] for a in range(3))

    def make_prec(shift):
        symbol = k2 + shift

        def prec(x):
            return be._ifft(be._fft(np.reshape(x, shape)) / symbol).ravel()
        return prec

    A = spla.LinearOperator((n, n), matvec=mv, matmat=columns(mv), dtype=float)
    start = P(sw.ravel() if v0 is None else (np.asarray(v0) * sw).ravel())

    def residual(lam, x):
        return float(np.linalg.norm(mv(x) - lam * x) / np.linalg.norm(x))

    method = "lobpcg"
    prec = make_prec(1.0 + max(0.0, float(np.mean(V)) - float(np.min(V))))
    M = spla.LinearOperator((n, n), matvec=prec, matmat=columns(prec), dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        vals, vecs = spla.lobpcg(A, start[:, None], M=M, largest=False, tol=tol, maxiter=200)
    lam = float(vals[0])
    x = P(vecs[:, 0])
    resid = residual(lam, x)
    if not np.isfinite(resid) or resid > 100 * tol:
        method = "shift-invert"
        lam, x = _shift_invert(A, mv, make_prec, float(np.min(V)) - 1.0, float(np.mean(V)),
                               start, n, tol, counter)
        x = P(x)
        resid = residual(lam, x)
    omega = x.reshape(shape) / sw
    if np.sum(omega) < 0:
        omega = -omega
    if np.min(omega) <= 0:
        raise SolverError("ground state is not positive", residual=float(np.min(omega)))
    omega = omega / np.sqrt(state.integrate(omega ** 2))
    if resid > EIG_RESIDUAL_TOL:
        raise SolverError(f"eigen-residual {resid:.3e} above tolerance", residual=resid)
    f = -2.0 * np.log(omega)
    return SpectralResult(lam, f, omega, {"homogeneous": False, "method": method,
                                          "matvecs": counter["matvec"],
                                          "inner_solves": counter["inner_solves"],
                                          "residual": resid})


def _shift_invert(A, mv, make_prec, sigma, vmean, start, n, tol, counter):
    prec = make_prec(vmean - sigma)
    M = spla.LinearOperator((n, n), matvec=prec, dtype=float)
    shifted = spla.LinearOperator((n, n), matvec=lambda x: mv(x) - sigma * x, dtype=float)

    def opinv(b):
        y, info = spla.cg(shifted, b, rtol=tol, atol=0.0, maxiter=1000, M=M)
        counter["inner_solves"] += 1
        if info != 0:
            raise SolverError("inner solve of the shift-inverted eigenproblem failed", residual=info)
        return y

    OPinv = spla.LinearOperator((n, n), matvec=opinv, dtype=float)
    try:
        vals, vecs = spla.eigsh(A, k=1, sigma=sigma, which="LM", OPinv=OPinv, v0=start,
                                tol=1e-14, maxiter=500)
    except spla.ArpackNoConvergence as exc:
        raise SolverError("ground-state eigensolve did not converge") from exc
    return float(vals[0]), vecs[:, 0]


def rayleigh_quotient(state, omega):
    """integral of (R - |H|^2/12) omega^2 + 4 |grad omega|^2, over integral of omega^2."""
    V = potential(state)
    if state.backend.grid_shape == ():
        return float(V)
    dw = calc.covd(state, omega)
    num = state.integrate(V * omega ** 2 + 4.0 * norm_sq(dw, state.ginv))
    return num / state.integrate(omega ** 2)


def lambda_identity_residual(state, res: SpectralResult):
    """Pointwise R - |H|^2/12 + 2 Delta f - |grad f|^2 - lambda."""
    V = potential(state)
    if state.backend.grid_shape == ():
        return abs(float(V) - res.lam)
    ops = WeightedOps(state)
    df = calc.covd(state, res.f)
    r = V + 2.0 * ops.lap_f(res.f) - norm_sq(df, state.ginv) - res.lam
    return float(np.max(np.abs(r)))


# ---------------------------------------------------------------------------
# dense oracle
# ---------------------------------------------------------------------------

def fourier_diff_matrix(n, period=2.0 * np.pi):
    """Dense first-derivative matrix of trigonometric interpolation (Nyquist dropped)."""
    h = period / n
    j = np.arange(n)
    diff = j[:, None] - j[None, :]
    with np.errstate(divide="ignore"):
        D = 0.5 * (-1.0) ** diff / np.tan(diff * h / 2.0)
    D[diff == 0] = 0.0
    return D * (2.0 * np.pi / period)


def dense_schrodinger(state):
    """Dense symmetrized matrix of -4 Delta + V on the torus grid."""
    be = state.backend
    n = be.n
    D1 = fourier_diff_matrix(n)
    I = np.eye(n)
    Ds = [np.kron(np.kron(D1, I), I), np.kron(np.kron(I, D1), I), np.kron(np.kron(I, I), D1)]
    sg = state.sqrt_det.ravel()
    ginv = state.ginv.reshape(-1, 3, 3)
    L = np.zeros((n ** 3, n ** 3))
    for i in range(3):
        for j in range(3):
            L += Ds[i] @ ((sg * ginv[:, i, j])[:, None] * Ds[j])
    s = np.sqrt(sg)
    S = -4.0 * (L / s[:, None]) / s[None, :] + np.diag(potential(state).ravel())
    S = 0.5 * (S + S.T)
    nu = (-1.0) ** np.arange(n)
    P1 = I - np.outer(nu, nu) / n
    P = np.kron(np.kron(P1, P1), P1)
    penalty = 1e3 * (1.0 + float(np.max(np.abs(potential(state)))))
    return P @ S @ P + penalty * (np.eye(n ** 3) - P)


def dense_lambda(state):
    from scipy.linalg import eigh
    S = dense_schrodinger(state)
    return float(eigh(S, eigvals_only=True, subset_by_index=[0, 0])[0])
