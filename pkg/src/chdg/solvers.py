"""Iterative solvers for (I - Pi S) g = b: fixed point, CGNR and GMRES(n).

Every solver reports the relative residual ||b - A g||_2 / ||b - A g0||_2 and
stops on it.  "Modal" variants work in the face-mass (M) inner product, which
is the Euclidean product of the orthonormal modal coefficients.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Protocol

import numpy as np

METHODS = ("fixed_point", "cgnr_nodal", "cgnr_modal", "gmres_nodal", "gmres_modal")

STAGNATION_WINDOW = 50
STAGNATION_DELTA = 1e-14


class Operator(Protocol):
    def apply_A(self, g: np.ndarray) -> np.ndarray: ...
    def apply_A_adjoint(self, g: np.ndarray) -> np.ndarray: ...
    def mass_apply(self, g: np.ndarray) -> np.ndarray: ...
    def mass_solve(self, g: np.ndarray) -> np.ndarray: ...


class MatrixOperator:
    """Dense stand-in for a TransmissionSystem: explicit A and SPD mass M."""

    def __init__(self, A: np.ndarray, M: np.ndarray | None = None):
        self.A = np.asarray(A)
        self.M = np.eye(len(A)) if M is None else np.asarray(M)
        self._Minv = np.linalg.inv(self.M)

    def apply_A(self, g):
        return self.A @ g

    def apply_A_adjoint(self, g):
        return self.A.conj().T @ g

    def mass_apply(self, g):
        return self.M @ g

    def mass_solve(self, g):
        return self._Minv @ g


@dataclass
class SolverConfig:
    method: str = "gmres_nodal"
    restart: int = 30
    rtol: float = 1e-6
    maxit: int = 1000
    x0: Optional[np.ndarray] = None
    kappa: Optional[float] = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if not self.rtol > 0:
            raise ValueError("rtol must be positive")
        if self.maxit < 1:
            raise ValueError("maxit must be at least 1")
        if self.restart < 0:
            raise ValueError("restart must be non-negative")

    @property
    def modal(self) -> bool:
        return self.method.endswith("_modal")


@dataclass
class IterationReport:
    method: str
    residuals: list = field(default_factory=list)
    residuals_M: Optional[list] = None
    errors: dict = field(default_factory=dict)
    iterations: int = 0
    wall_time: float = 0.0
    status: str = "maxit"

    @property
    def final_residual(self) -> float:
        return self.residuals[-1]

    @property
    def converged(self) -> bool:
        return self.status == "converged"


# callback(iteration, current iterate) -> optional logged value (e.g. a field error)
Callback = Callable[[int, np.ndarray], Optional[float]]


class _Monitor:
    """Residual bookkeeping shared by all solvers."""

    def __init__(self, op, b, g0, cfg, callback, every):
        self.op, self.b, self.cfg = op, b, cfg
        self.callback, self.every = callback, max(1, every)
        self.report = IterationReport(cfg.method, residuals_M=[] if cfg.modal else None)
        r0 = b - op.apply_A(g0)
        self.r0_2 = float(np.linalg.norm(r0))
        self.r0_M = _norm_M(op, r0)
        self.best = np.inf
        self.best_it = 0
        self.last_callback = None
        self.t0 = time.perf_counter()

    def rel(self, r_norm_2):
        return r_norm_2 / self.r0_2 if self.r0_2 > 0 else 0.0

    def log(self, it: int, r: np.ndarray, g_fn) -> bool:
        """Record the residual vector of iterate ``it``; return True to stop."""
        rel = self.rel(float(np.linalg.norm(r)))
        self.report.residuals.append(rel)
        if self.report.residuals_M is not None:
            self.report.residuals_M.append(_norm_M(self.op, r) / self.r0_M if self.r0_M > 0 else 0.0)
        self.report.iterations = it
        if self.callback is not None and it % self.every == 0:
            self.last_callback = it
            val = self.callback(it, g_fn())
            if val is not None:
                self.report.errors[it] = val
        if rel <= self.cfg.rtol:
            self.report.status = "converged"
            return True
        if rel < self.best - STAGNATION_DELTA:
            self.best, self.best_it = rel, it
        elif it - self.best_it >= STAGNATION_WINDOW:
            self.report.status = "stagnation"
            return True
        return False

    def finish(self, g: np.ndarray) -> tuple[np.ndarray, IterationReport]:
        """Replace the last entry by an explicitly recomputed residual."""
        r = self.b - self.op.apply_A(g)
        rep = self.report
        rel = self.rel(float(np.linalg.norm(r)))
        rep.residuals[-1] = rel
        if rep.residuals_M is not None:
            rep.residuals_M[-1] = _norm_M(self.op, r) / self.r0_M if self.r0_M > 0 else 0.0
        if rep.status == "converged" and rel > self.cfg.rtol:
            rep.status = "maxit"
        if self.callback is not None and self.last_callback != rep.iterations:
            val = self.callback(rep.iterations, g)
            if val is not None:
                rep.errors[rep.iterations] = val
        rep.wall_time = time.perf_counter() - self.t0
        return g, rep

    def true_residual(self, g):
        return self.b - self.op.apply_A(g)


def _norm_M(op, r) -> float:
    return float(np.sqrt(max(np.vdot(r, op.mass_apply(r)).real, 0.0)))


def _initial(b, cfg):
    b = np.asarray(b, dtype=complex)
    g = np.zeros_like(b) if cfg.x0 is None else np.array(cfg.x0, dtype=complex)
    return b, g


def fixed_point(op: Operator, b: np.ndarray, cfg: SolverConfig, callback: Callback | None = None,
                callback_every: int = 1):
    """g <- Pi S g + b, with Pi S g evaluated as g - A g."""
    b, g = _initial(b, cfg)
    mon = _Monitor(op, b, g, cfg, callback, callback_every)
    w = g - op.apply_A(g)  # Pi S g
    r = b - g + w
    if mon.log(0, r, lambda: g):
        return mon.finish(g)
    for it in range(1, cfg.maxit + 1):
        g = w + b
        w = g - op.apply_A(g)
        r = b - g + w
        if mon.log(it, r, lambda: g):
            break
    return mon.finish(g)


def cgnr(op: Operator, b: np.ndarray, cfg: SolverConfig, callback: Callback | None = None,
         callback_every: int = 1):
    """Conjugate gradients on the normal equations.

    Nodal: Euclidean products and z = A^H r.  Modal: M-products and
    z = M^-1 A^H M r, so the M-norm of the residual is minimized.
    """
    b, g = _initial(b, cfg)
    mon = _Monitor(op, b, g, cfg, callback, callback_every)
    modal = cfg.modal

    if modal:
        def norm2(x):
            return np.vdot(x, op.mass_apply(x)).real

        def precond(r):
            return op.mass_solve(op.apply_A_adjoint(op.mass_apply(r)))
    else:
        def norm2(x):
            return np.vdot(x, x).real

        precond = op.apply_A_adjoint

    r = b - op.apply_A(g)
    if mon.log(0, r, lambda: g):
        return mon.finish(g)
    z = precond(r)
    p = z.copy()
    gamma = norm2(z)
    it = 0
    while it < cfg.maxit:
        if gamma == 0.0:
            mon.report.status = "stagnation"
            break
        it += 1
        q = op.apply_A(p)
        qq = norm2(q)
        if qq == 0.0:
            mon.report.status = "stagnation"
            break
        alpha = gamma / qq
        g = g + alpha * p
        r = r - alpha * q
        if mon.log(it, r, lambda: g):
            if mon.report.status != "converged":
                break
            # confirm on the explicit residual before stopping
            r = mon.true_residual(g)
            if mon.rel(float(np.linalg.norm(r))) <= cfg.rtol:
                break
            mon.report.status = "maxit"
        z = precond(r)
        gamma_new = norm2(z)
        beta = gamma_new / gamma
        gamma = gamma_new
        p = z + beta * p
    return mon.finish(g)


def gmres(op: Operator, b: np.ndarray, cfg: SolverConfig, callback: Callback | None = None,
          callback_every: int = 1):
    """Restarted GMRES with modified Gram-Schmidt and conditional re-orthogonalization.

    ``cfg.restart == 0`` means no restart.  The modal variant runs Arnoldi in
    the M-inner product.  Per-iteration residuals are r0 - (A V) y computed
    from the stored products A v_j, not from the Hessenberg estimate.
    """
    b, g = _initial(b, cfg)
    mon = _Monitor(op, b, g, cfg, callback, callback_every)
    modal = cfg.modal
    m = cfg.restart if cfg.restart > 0 else cfg.maxit

    def weigh(x):
        return op.mass_apply(x) if modal else x

    def norm(x):
        return float(np.sqrt(max(np.vdot(x, weigh(x)).real, 0.0)))

    r = b - op.apply_A(g)
    if mon.log(0, r, lambda: g):
        return mon.finish(g)

    it = 0
    done = False
    while not done and it < cfg.maxit:
        beta = norm(r)
        if beta == 0.0:
            mon.report.status = "converged"
            break
        V = [r / beta]
        MV = [weigh(V[0])]  # M is Hermitian, so <v, w>_M = vdot(M v, w)
        W = []
        cap = min(m, 64)  # grown on demand, m may be as large as maxit
        H = np.zeros((cap + 1, cap), dtype=complex)
        cs = np.zeros(cap)
        sn = np.zeros(cap, dtype=complex)
        s = np.zeros(cap + 1, dtype=complex)
        s[0] = beta
        y = np.zeros(0, dtype=complex)
        for j in range(m):
            if j == cap:
                cap = min(m, 2 * cap)
                H = np.pad(H, ((0, cap + 1 - H.shape[0]), (0, cap - H.shape[1])))
                cs, sn = np.pad(cs, (0, cap - j)), np.pad(sn, (0, cap - j))
                s = np.pad(s, (0, cap + 1 - s.size))
            it += 1
            w = op.apply_A(V[j])
            W.append(w)
            w = w.copy()
            before = norm(w)
            for i in range(j + 1):
                H[i, j] = np.vdot(MV[i], w)
                w -= H[i, j] * V[i]
            after = norm(w)
            if after < 0.7071 * before:
                for i in range(j + 1):
                    c = np.vdot(MV[i], w)
                    H[i, j] += c
                    w -= c * V[i]
                after = norm(w)
            H[j + 1, j] = after

            # apply previous rotations and form the new one
            for i in range(j):
                hi, hi1 = H[i, j], H[i + 1, j]
                H[i, j] = cs[i] * hi + sn[i] * hi1
                H[i + 1, j] = -np.conj(sn[i]) * hi + cs[i] * hi1
            a, bb = H[j, j], H[j + 1, j]
            t = np.hypot(abs(a), abs(bb))
            if abs(a) == 0.0:
                cs[j], sn[j] = 0.0, 1.0
            else:
                cs[j] = abs(a) / t
                sn[j] = (a / abs(a)) * np.conj(bb) / t
            H[j, j] = cs[j] * a + sn[j] * bb
            H[j + 1, j] = 0.0
            s[j + 1] = -np.conj(sn[j]) * s[j]
            s[j] = cs[j] * s[j]

            y = _back_substitute(H[: j + 1, : j + 1], s[: j + 1])
            res = r - np.column_stack(W) @ y
            happy = after <= 1e-14 * beta

            def current(y=y, j=j):
                return g + np.column_stack(V[: j + 1]) @ y

            stop = mon.log(it, res, current)
            if stop or happy or it >= cfg.maxit:
                if happy and not stop:
                    mon.report.status = "converged"
                done = stop or happy or it >= cfg.maxit
                break
            V.append(w / after)
            MV.append(weigh(V[-1]))
        g = g + np.column_stack(V[: len(y)]) @ y
        r = b - op.apply_A(g)
        if done and mon.report.status == "converged" and mon.rel(float(np.linalg.norm(r))) > cfg.rtol:
            # estimate converged but the explicit residual did not; keep going
            done = it >= cfg.maxit
            mon.report.status = "maxit"
    return mon.finish(g)


def _back_substitute(R, s):
    n = len(s)
    y = np.zeros(n, dtype=complex)
    for i in range(n - 1, -1, -1):
        y[i] = (s[i] - R[i, i + 1:] @ y[i + 1:]) / R[i, i]
    return y


def solve(op: Operator, b: np.ndarray, cfg: SolverConfig, callback: Callback | None = None,
          callback_every: int = 1):
    """Dispatch on ``cfg.method``; returns (g, IterationReport)."""
    if cfg.method == "fixed_point":
        fn = fixed_point
    elif cfg.method.startswith("cgnr"):
        fn = cgnr
    else:
        fn = gmres
    return fn(op, b, cfg, callback, callback_every)
