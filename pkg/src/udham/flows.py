"""Time-1 maps and Hamiltonian flows.

Three grades of flow machinery, in decreasing exactness:

* angle-only generators u(theta): the flow is the exact shear
  (theta, I) -> (theta, I - t grad u(theta));
* affine generators X = C(theta) + D(theta).I: the angle equation decouples
  and the action equation is linear, so the time-t map has the closed form
  (theta + E_t, (1+F_t) I + G_t) with (E, F, G) obtained either by
  per-grid-point ODE integration (collocation) or by Lie series on the
  coordinate functions (exact at truncation, carries parameter jets);
* arbitrary generators: Lie series H o Phi = sum ad_Y^r H / r! with a tail
  monitor, cross-validated against grid composition.

Also here: symplectic integrators (leapfrog / Yoshida-4 / implicit
midpoint) and the pendulum rotation-orbit toolbox used by the coupled-map
instability construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import gammaln

from .series import FTSeries, poisson_bracket, product
from .weights import C_NORM, ParameterError, ScaleProfile

TWO_PI = 2.0 * math.pi


class LieDivergence(RuntimeError):
    """Lie-series tail stopped decreasing before the tolerance was met."""


class StiffnessError(RuntimeError):
    """Integrator step-size underflow."""


# ---------------------------------------------------------------------------
# exact shear for angle-only generators
# ---------------------------------------------------------------------------

def angle_flow(u: FTSeries, t: float = 1.0):
    """Exact time-t map of an angle-only Hamiltonian u(theta).

    Angles are frozen and I -> I - t grad u(theta); the map is exactly
    symplectic (a shear).  Returns a callable (theta, I) -> (theta, I').
    """
    for (m, w) in u.blocks:
        if sum(m) != 0:
            raise ParameterError("angle_flow requires an angle-only generator")
    grads = u.grad_theta()

    def flow(theta, I):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        I = np.atleast_2d(np.asarray(I, dtype=float))
        kick = np.stack([g.eval(theta) for g in grads], axis=-1)
        return theta, I - t * kick

    return flow


# ---------------------------------------------------------------------------
# affine transforms
# ---------------------------------------------------------------------------

@dataclass
class AffineTransform:
    """(theta, I) -> (theta + E(theta), I + F(theta).I + G(theta)).

    E and G are lists of n angle-only series, F an n x n nested list; all may
    carry parameter jets.  Closed under composition.
    """

    E: list
    F: list
    G: list
    log: list = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.E)

    @classmethod
    def identity(cls, n, K, n_w=0, D_w=0):
        z = lambda: FTSeries.zeros(n, K, D_I=0, D_w=D_w, n_w=n_w)
        return cls(E=[z() for _ in range(n)],
                   F=[[z() for _ in range(n)] for _ in range(n)],
                   G=[z() for _ in range(n)], log=["id"])

    def apply(self, theta, I, w=None):
        theta = np.atleast_2d(np.asarray(theta, dtype=float))
        I = np.atleast_2d(np.asarray(I, dtype=float))
        Ev = np.stack([e.eval(theta, w=w) for e in self.E], axis=-1)
        Gv = np.stack([g.eval(theta, w=w) for g in self.G], axis=-1)
        Fv = np.stack([np.stack([f.eval(theta, w=w) for f in row], axis=-1)
                       for row in self.F], axis=-2)
        return theta + Ev, I + np.einsum("pij,pj->pi", Fv, I) + Gv

    def jacobian_defect(self, rng=None, n_pts=64, h=1e-6):
        """Max |det DPhi - 1| over random points (symplecticity probe)."""
        rng = rng or np.random.default_rng(0)
        n = self.n
        pts_th = rng.uniform(size=(n_pts, n))
        pts_I = rng.uniform(-0.3, 0.3, size=(n_pts, n))
        worst = 0.0
        for p in range(n_pts):
            z0 = np.concatenate([pts_th[p], pts_I[p]])
            Jac = np.zeros((2 * n, 2 * n))
            for j in range(2 * n):
                zp, zm = z0.copy(), z0.copy()
                zp[j] += h
                zm[j] -= h
                tp, ip = self.apply(zp[:n], zp[n:])
                tm, im = self.apply(zm[:n], zm[n:])
                Jac[:, j] = (np.concatenate([tp[0], ip[0]])
                             - np.concatenate([tm[0], im[0]])) / (2 * h)
            worst = max(worst, abs(np.linalg.det(Jac) - 1.0))
        return worst


def compose_angle(f: FTSeries, E0: list, E1: Optional[list] = None,
                  K_out: Optional[int] = None, oversample: float = 2.0,
                  report: Optional[dict] = None) -> FTSeries:
    """f(theta + E(theta, w), I, w) truncated back to K_out.

    E0 is the base shift (n series), E1 an optional list indexed by
    parameter a of first-order jet shifts; the composition is expanded to
    first order in w (jet semantics).  Collocation: sample on a uniform
    grid with the requested oversampling, then FFT and truncate.
    """
    n = f.n
    K_out = K_out if K_out is not None else f.K
    N = int(math.ceil(oversample * (2 * K_out + 1)))
    axes = [np.arange(N) / N] * n
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    E0v = np.stack([_eval_block0(e, grid) for e in E0], axis=-1)
    pts = grid + E0v.real
    vals = f.eval_blocks(pts)

    out = FTSeries(n=n, K=K_out, D_I=f.D_I, D_w=f.D_w, n_w=f.n_w, s=f.s,
                   delta=f.delta, h=f.h, real=f.real)
    acc = {}
    for (m, w), v in vals.items():
        acc[(m, w)] = acc.get((m, w), 0.0) + v
    if E1 is not None:
        # first-order jet correction: w_a E1^a . grad_theta f evaluated on
        # the base-shifted points
        grads = f.grad_theta()
        for a, E1a in enumerate(E1):
            if E1a is None or all(c is None for c in E1a):
                continue
            e1v = [None if c is None else _eval_block0(c, grid) for c in E1a]
            for i in range(n):
                if e1v[i] is None:
                    continue
                gv = grads[i].eval_blocks(pts)
                for (m, w), v in gv.items():
                    if sum(w) + 1 > f.D_w:
                        continue
                    w2 = list(w)
                    w2[a] += 1
                    key = (m, tuple(w2))
                    acc[key] = acc.get(key, 0.0) + v * e1v[i]
    disc = 0.0
    for (m, w), v in acc.items():
        coef = np.fft.fftn(v.reshape((N,) * n)) / N ** n
        idx = np.arange(-K_out, K_out + 1) % N
        kept = coef[np.ix_(*([idx] * n))]
        disc += float(np.sum(np.abs(coef)) - np.sum(np.abs(kept)))
        if np.max(np.abs(kept)) > 0:
            out.block(m, w)[...] = kept
    if report is not None:
        report["aliasing_mass"] = disc
    if out.real:
        for arr in out.blocks.values():
            flip = np.conj(arr[(slice(None, None, -1),) * n])
            arr[...] = 0.5 * (arr + flip)
    return out.prune()


def _eval_block0(series: FTSeries, pts):
    """Value of the w-degree-0 part at points."""
    vals = series.eval_blocks(pts)
    key0 = ((0,) * series.n, (0,) * series.n_w)
    return vals.get(key0, np.zeros(len(pts), dtype=complex)).real


def _rebanded(f: FTSeries, K_out: int) -> FTSeries:
    """Same series with bandwidth K_out (pad or truncate)."""
    if f.K == K_out:
        return f
    out = FTSeries(n=f.n, K=K_out, D_I=f.D_I, D_w=f.D_w, n_w=f.n_w, s=f.s,
                   delta=f.delta, h=f.h, real=f.real)
    kk = min(f.K, K_out)
    src = slice(f.K - kk, f.K + kk + 1)
    dst = slice(K_out - kk, K_out + kk + 1)
    for key, arr in f.blocks.items():
        out.block(*key)[(dst,) * f.n] = arr[(src,) * f.n]
    return out


def _jet_shift_components(E: list):
    """Split jet series E_i(theta, w) into base and first-order lists."""
    n_w = E[0].n_w
    if n_w == 0 or E[0].D_w == 0:
        return E, None
    base, first = [], [[None] * len(E) for _ in range(n_w)]
    for i, e in enumerate(E):
        b = FTSeries.zeros(e.n, e.K, n_w=e.n_w, D_w=0)
        for (m, w), arr in e.blocks.items():
            if sum(w) == 0:
                b.block(m, (0,) * e.n_w)[...] += arr
            elif sum(w) == 1:
                a = int(np.argmax(w))
                c = FTSeries.zeros(e.n, e.K, n_w=e.n_w, D_w=0)
                c.block(m, (0,) * e.n_w)[...] = arr
                first[a][i] = c if first[a][i] is None else first[a][i] + c
        base.append(b)
    return base, first


def apply_affine(H: FTSeries, tr: AffineTransform, K_out: Optional[int] = None,
                 D_I_out: Optional[int] = None,
                 report: Optional[dict] = None) -> FTSeries:
    """Pull back H by the affine transform: H(theta+E, (1+F)I + G)."""
    n = H.n
    K_out = K_out if K_out is not None else H.K
    D_I_out = D_I_out if D_I_out is not None else H.D_I
    if (all(e.coeff_norm1() == 0.0 for e in tr.E)
            and all(f.coeff_norm1() == 0.0 for row in tr.F for f in row)
            and all(g.coeff_norm1() == 0.0 for g in tr.G)):
        out = _rebanded(H, K_out)
        if report is not None:
            report["aliasing_mass"] = 0.0
        return out
    base, first = _jet_shift_components(tr.E)
    scale = max(H.sup_coeff(), 1.0)
    Hs = compose_angle(H, base, first, K_out=K_out, report=report)
    Hs.prune_entries(1e-17 * scale)
    # substitution polynomials L_i = G_i + sum_j (delta_ij + F_ij) I_j;
    # F and G act at the preimage theta, so no angle composition here
    L = []
    for i in range(n):
        Li = FTSeries.zeros(n, K_out, D_I=1, D_w=H.D_w, n_w=H.n_w)
        for (m, w), arr in _rebanded(tr.G[i], K_out).blocks.items():
            Li.block(m, w)[...] += arr
        for j in range(n):
            ej = tuple(1 if a == j else 0 for a in range(n))
            for (m, w), arr in _rebanded(tr.F[i][j], K_out).blocks.items():
                Li.block(ej, w)[...] += arr
        ei = tuple(1 if a == i else 0 for a in range(n))
        Li.block(ei, (0,) * H.n_w)[tuple([K_out] * n)] += 1.0
        L.append(Li)
    out = FTSeries(n=n, K=K_out, D_I=D_I_out, D_w=H.D_w, n_w=H.n_w, s=H.s,
                   delta=H.delta, h=H.h, real=H.real)
    powers = {}

    def lpow(m):
        m = tuple(m)
        if m in powers:
            return powers[m]
        cur = None
        for i, mi in enumerate(m):
            for _ in range(mi):
                cur = L[i] if cur is None else product(cur, L[i], K_out=K_out,
                                                       D_I_out=D_I_out)
        powers[m] = cur
        return cur

    for (m, w), arr in Hs.blocks.items():
        piece = FTSeries.zeros(n, K_out, D_I=0, D_w=H.D_w, n_w=H.n_w)
        piece.block((0,) * n, w)[...] = arr
        if sum(m) == 0:
            term = piece
        else:
            term = product(piece, lpow(m), K_out=K_out, D_I_out=D_I_out)
        out = out + term
    out.s, out.delta, out.h = H.s, H.delta, H.h
    return out.prune_entries(1e-17 * scale)


def jet_param_substitute(f: FTSeries, shift, matrix) -> FTSeries:
    """Substitute the parameter jet w -> shift + matrix.w (degree-1 jets).

    Used to pull back omega-dependence through a frequency map phi:
    shift = phi_0 - omega_0 and matrix = Dphi."""
    if f.n_w == 0 or f.D_w == 0:
        return f.copy()
    shift = np.asarray(shift, dtype=float)
    matrix = np.asarray(matrix, dtype=float)
    out = FTSeries(n=f.n, K=f.K, D_I=f.D_I, D_w=f.D_w, n_w=f.n_w, s=f.s,
                   delta=f.delta, h=f.h, real=f.real)
    w0 = (0,) * f.n_w
    for (m, w), arr in f.blocks.items():
        if sum(w) == 0:
            out.block(m, w0)[...] += arr
        elif sum(w) == 1:
            a = int(np.argmax(w))
            out.block(m, w0)[...] += shift[a] * arr
            for b in range(f.n_w):
                if matrix[a, b] != 0.0:
                    wb = tuple(1 if x == b else 0 for x in range(f.n_w))
                    out.block(m, wb)[...] += matrix[a, b] * arr
        else:
            raise ParameterError("jet substitution implemented for D_w <= 1")
    return out.prune()


def compose_affine(outer: AffineTransform, inner: AffineTransform,
                   K_out: Optional[int] = None, phi_shift=None,
                   phi_matrix=None) -> AffineTransform:
    """outer o inner, again affine:

        E = E_in + E_out o V,   1 + F = (1 + F_out o V)(1 + F_in),
        G = (1 + F_out o V) G_in + G_out o V,

    with V = theta + E_in; if a parameter map is supplied the outer's jets
    are first pulled back through it."""
    n = outer.n
    K_out = K_out if K_out is not None else max(outer.E[0].K, inner.E[0].K)
    if phi_shift is not None:
        sub = lambda f: jet_param_substitute(f, phi_shift, phi_matrix)
    else:
        sub = lambda f: f
    base, first = _jet_shift_components(inner.E)
    comp = lambda f: compose_angle(sub(f), base, first, K_out=K_out)
    E = [_rebanded(inner.E[i], K_out) + comp(outer.E[i]) for i in range(n)]
    FoV = [[comp(outer.F[i][j]) for j in range(n)] for i in range(n)]
    GoV = [comp(outer.G[i]) for i in range(n)]
    Fin = [[_rebanded(inner.F[i][j], K_out) for j in range(n)] for i in range(n)]
    Gin = [_rebanded(inner.G[i], K_out) for i in range(n)]
    F = [[None] * n for _ in range(n)]
    G = [None] * n
    for i in range(n):
        gi = GoV[i].copy()
        for j in range(n):
            fij = Fin[i][j] + FoV[i][j]
            for l in range(n):
                fij = fij + product(FoV[i][l], Fin[l][j], K_out=K_out)
            F[i][j] = fij
            gi = gi + product(FoV[i][j], Gin[j], K_out=K_out)
        G[i] = gi + Gin[i]
    return AffineTransform(E=E, F=F, G=G, log=outer.log + inner.log)


def affine_flow_ode(C: FTSeries, D: list, t: float = 1.0, n_steps: int = 64,
                    K_out: Optional[int] = None,
                    oversample: float = 2.0) -> AffineTransform:
    """Collocation flow of X = C(theta) + D(theta).I for t in [0, 1].

    Per grid point, RK4 on the decoupled angle ODE and the linear
    variational equations
        E' = D(theta+E),  F' = -gradD(theta+E)(1+F),  G' = -gradC - gradD G.
    """
    n = C.n
    K_out = K_out if K_out is not None else max([C.K] + [d.K for d in D])
    N = int(math.ceil(oversample * (2 * K_out + 1)))
    axes = [np.arange(N) / N] * n
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    P = len(grid)

    gradC = [C.dtheta(i) for i in range(n)]
    gradD = [[D[j].dtheta(i) for j in range(n)] for i in range(n)]

    def rhs(E, F, G):
        pts = grid + E
        Dv = np.stack([_eval_block0(d, pts) for d in D], axis=-1)
        gC = np.stack([_eval_block0(g, pts) for g in gradC], axis=-1)
        gD = np.stack([np.stack([_eval_block0(gradD[i][j], pts) for j in range(n)],
                                axis=-1) for i in range(n)], axis=-2)
        dE = Dv
        eye = np.eye(n)
        dF = -np.einsum("pij,pjk->pik", gD, F + eye)
        dG = -gC - np.einsum("pij,pj->pi", gD, G)
        return dE, dF, dG

    E = np.zeros((P, n))
    F = np.zeros((P, n, n))
    G = np.zeros((P, n))
    h = t / n_steps
    for _ in range(n_steps):
        k1 = rhs(E, F, G)
        k2 = rhs(E + 0.5 * h * k1[0], F + 0.5 * h * k1[1], G + 0.5 * h * k1[2])
        k3 = rhs(E + 0.5 * h * k2[0], F + 0.5 * h * k2[1], G + 0.5 * h * k2[2])
        k4 = rhs(E + h * k3[0], F + h * k3[1], G + h * k3[2])
        E = E + (h / 6.0) * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        F = F + (h / 6.0) * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        G = G + (h / 6.0) * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2])

    def to_series(vals):
        out = FTSeries.zeros(n, K_out)
        coef = np.fft.fftn(vals.reshape((N,) * n)) / N ** n
        idx = np.arange(-K_out, K_out + 1) % N
        kept = coef[np.ix_(*([idx] * n))]
        flip = np.conj(kept[(slice(None, None, -1),) * n])
        out.block()[...] = 0.5 * (kept + flip)
        return out.prune()

    return AffineTransform(
        E=[to_series(E[:, i]) for i in range(n)],
        F=[[to_series(F[:, i, j]) for j in range(n)] for i in range(n)],
        G=[to_series(G[:, i]) for i in range(n)],
        log=[f"ode(t={t}, steps={n_steps})"])


def affine_flow_lie(C: FTSeries, D: list, t: float = 1.0, order: int = 24,
                    K_out: Optional[int] = None, tol: float = 1e-16,
                    noise_floor: float = 1e-18) -> AffineTransform:
    """Affine flow by Lie series on the coordinate functions.

    theta_i o Phi = theta_i + sum_r t^r/r! ad_X^(r)(theta_i) with
    ad_X(theta_i) = D_i and each further order a pure angle series;
    I o Phi stays affine in I.  Carries parameter jets.
    """
    n = C.n
    K_out = K_out if K_out is not None else max([C.K] + [d.K for d in D])
    n_w, D_w = C.n_w, C.D_w

    def zero():
        return FTSeries.zeros(n, K_out, D_I=0, D_w=D_w, n_w=n_w)

    E = [zero() for _ in range(n)]
    # angle chain: a_{r+1} = sum_j (dtheta_j a_r) D_j
    for i in range(n):
        a = D[i]
        fac = t
        r = 1
        while True:
            E[i] = E[i] + fac * a
            if a.coeff_norm1() * abs(fac) < tol or r >= order:
                break
            nxt = zero()
            for j in range(n):
                nxt = nxt + product(a.dtheta(j), D[j], K_out=K_out, D_w_out=D_w)
            a = nxt.prune_entries(noise_floor)
            r += 1
            fac = fac * t / r

    # action chain: b = beta(theta) + gamma(theta) I
    F = [[zero() for _ in range(n)] for _ in range(n)]
    G = [zero() for _ in range(n)]
    gradC = [C.dtheta(j) for j in range(n)]
    gradD = [[D[l].dtheta(j) for l in range(n)] for j in range(n)]
    for i in range(n):
        beta = zero()
        gamma = [zero() for _ in range(n)]
        gamma[i].block((0,) * n, (0,) * n_w)[tuple([K_out] * n)] = 1.0
        acc_beta = zero()
        acc_gamma = [zero() for _ in range(n)]
        fac = t
        r = 1
        while True:
            # ad_X(beta + gamma.I) = dth beta.D + (dth gamma_l. D) I_l
            #                       - gamma_j (dth_j C + dth_j D_l I_l)
            nb = zero()
            ng = [zero() for _ in range(n)]
            for j in range(n):
                nb = nb + product(beta.dtheta(j), D[j], K_out=K_out, D_w_out=D_w)
                nb = nb - product(gamma[j], gradC[j], K_out=K_out, D_w_out=D_w)
                for l in range(n):
                    ng[l] = ng[l] + product(gamma[l].dtheta(j), D[j],
                                            K_out=K_out, D_w_out=D_w)
                    ng[l] = ng[l] - product(gamma[j], gradD[j][l],
                                            K_out=K_out, D_w_out=D_w)
            beta = nb.prune_entries(noise_floor)
            gamma = [g.prune_entries(noise_floor) for g in ng]
            acc_beta = acc_beta + fac * beta
            for l in range(n):
                acc_gamma[l] = acc_gamma[l] + fac * gamma[l]
            size = beta.coeff_norm1() + sum(g.coeff_norm1() for g in gamma)
            if size * abs(fac) < tol or r >= order:
                break
            r += 1
            fac = fac * t / r
        G[i] = acc_beta.prune_entries(noise_floor)
        for l in range(n):
            F[i][l] = acc_gamma[l]
    return AffineTransform(E=E, F=F, G=G, log=[f"lie(t={t}, order<={order})"])


# ---------------------------------------------------------------------------
# general Lie flow
# ---------------------------------------------------------------------------

def lie_flow(Y: FTSeries, H: FTSeries, t: float = 1.0, max_order: int = 40,
             tol: float = 1e-16, K_out: Optional[int] = None,
             D_I_out: Optional[int] = None) -> FTSeries:
    """H o Phi_Y^t = sum_r (t^r/r!) ad_Y^r H at truncation.

    The tail is monitored; if term norms grow for three consecutive orders
    before reaching tol the series is declared divergent.
    """
    K_out = K_out if K_out is not None else max(Y.K, H.K)
    D_I_out = D_I_out if D_I_out is not None else max(H.D_I, Y.D_I)
    out = H.copy()
    term = H
    fac = 1.0
    grow = 0
    last = math.inf
    scale = max(H.coeff_norm1(), 1e-300)
    for r in range(1, max_order + 1):
        term = poisson_bracket(term, Y, K_out=K_out, D_I_out=D_I_out)
        fac = fac * t / r
        out = out + fac * term
        size = abs(fac) * term.coeff_norm1()
        if size < tol * scale:
            return out.prune()
        if size > last:
            grow += 1
            if grow >= 3:
                raise LieDivergence(
                    f"Lie tail growing at order {r} (term {size:.3e})")
        else:
            grow = 0
        last = size
    if size > 1e-9 * scale:
        raise LieDivergence(f"Lie tail {size:.3e} after {max_order} orders")
    return out.prune()


# ---------------------------------------------------------------------------
# numeric integration
# ---------------------------------------------------------------------------

@dataclass
class Trajectory:
    times: np.ndarray
    thetas: np.ndarray
    actions: np.ndarray
    energies: np.ndarray
    n_steps: int
    dt: float

    @property
    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.energies - self.energies[0])))

    def to_csv(self, path):
        from pathlib import Path
        th = np.atleast_2d(self.thetas.reshape(len(self.times), -1))
        ac = np.atleast_2d(self.actions.reshape(len(self.times), -1))
        n = th.shape[1]
        header = ["t"] + [f"theta{i+1}" for i in range(n)] \
            + [f"I{i+1}" for i in range(ac.shape[1])] + ["H"]
        lines = [",".join(header)]
        for i, t in enumerate(self.times):
            row = [repr(float(t))] + [repr(float(x)) for x in th[i]] \
                + [repr(float(x)) for x in ac[i]] + [repr(float(self.energies[i]))]
            lines.append(",".join(row))
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text("\n".join(lines) + "\n")


_Y4_W1 = 1.0 / (2.0 - 2.0 ** (1.0 / 3.0))
_Y4_W0 = 1.0 - 2.0 * _Y4_W1


def _leapfrog(theta, I, dt, grad_v):
    I = I - 0.5 * dt * grad_v(theta)
    theta = theta + dt * I
    I = I - 0.5 * dt * grad_v(theta)
    return theta, I


def _yoshida4(theta, I, dt, grad_v):
    for w in (_Y4_W1, _Y4_W0, _Y4_W1):
        theta, I = _leapfrog(theta, I, w * dt, grad_v)
    return theta, I


def integrate_mechanical(grad_v: Callable, theta0, I0, t_end: float,
                         dt: float = 1e-3, sample_every: int = 1,
                         energy: Optional[Callable] = None,
                         method: str = "yoshida4") -> Trajectory:
    """Splitting integration of H = |I|^2/2 + V(theta)."""
    stepper = _yoshida4 if method == "yoshida4" else _leapfrog
    n_steps = int(round(t_end / dt))
    theta = np.asarray(theta0, dtype=float).copy()
    I = np.asarray(I0, dtype=float).copy()
    ts, ths, Is, Es = [0.0], [theta.copy()], [I.copy()], []
    Es.append(energy(theta, I) if energy else 0.0)
    for step in range(1, n_steps + 1):
        theta, I = stepper(theta, I, dt, grad_v)
        if step % sample_every == 0 or step == n_steps:
            ts.append(step * dt)
            ths.append(theta.copy())
            Is.append(I.copy())
            Es.append(energy(theta, I) if energy else 0.0)
    return Trajectory(times=np.array(ts), thetas=np.array(ths),
                      actions=np.array(Is), energies=np.array(Es),
                      n_steps=n_steps, dt=dt)


def integrate_midpoint(grad_theta: Callable, grad_I: Callable, theta0, I0,
                       t_end: float, dt: float = 1e-2,
                       energy: Optional[Callable] = None, newton_tol: float = 1e-13,
                       max_inner: int = 60, sample_every: int = 1) -> Trajectory:
    """Implicit midpoint by fixed-point iteration (symplectic, 2nd order)."""
    n_steps = int(round(t_end / dt))
    theta = np.asarray(theta0, dtype=float).copy()
    I = np.asarray(I0, dtype=float).copy()
    ts, ths, Is, Es = [0.0], [theta.copy()], [I.copy()], []
    Es.append(energy(theta, I) if energy else 0.0)
    for step in range(1, n_steps + 1):
        th_new, I_new = theta, I
        for it in range(max_inner):
            th_mid = 0.5 * (theta + th_new)
            I_mid = 0.5 * (I + I_new)
            th_next = theta + dt * grad_I(th_mid, I_mid)
            I_next = I - dt * grad_theta(th_mid, I_mid)
            delta = np.max(np.abs(th_next - th_new)) + np.max(np.abs(I_next - I_new))
            th_new, I_new = th_next, I_next
            if delta < newton_tol:
                break
        else:
            raise StiffnessError(f"midpoint fixed point stalled at step {step}")
        theta, I = th_new, I_new
        if step % sample_every == 0 or step == n_steps:
            ts.append(step * dt)
            ths.append(theta.copy())
            Is.append(I.copy())
            Es.append(energy(theta, I) if energy else 0.0)
    return Trajectory(times=np.array(ts), thetas=np.array(ths),
                      actions=np.array(Is), energies=np.array(Es),
                      n_steps=n_steps, dt=dt)


def integrate_adaptive(grad_theta: Callable, grad_I: Callable, theta0, I0,
                       t_end: float, tol: float = 1e-10,
                       energy: Optional[Callable] = None,
                       sample_every: Optional[int] = None,
                       dt_min: float = 1e-9) -> Trajectory:
    """Implicit midpoint with the step chosen to meet a local tolerance.

    The local error is estimated by step doubling at the start (midpoint is
    second order, so one h-step vs two h/2-steps differ by ~3/4 of the
    local error); h is then fixed for the run and halved up front until the
    per-unit-time error estimate is below tol."""
    h = min(0.1, t_end)
    theta0 = np.asarray(theta0, dtype=float)
    I0 = np.asarray(I0, dtype=float)

    def probe(hh):
        one = integrate_midpoint(grad_theta, grad_I, theta0, I0, hh, dt=hh)
        two = integrate_midpoint(grad_theta, grad_I, theta0, I0, hh, dt=hh / 2)
        err = (np.max(np.abs(one.thetas[-1] - two.thetas[-1]))
               + np.max(np.abs(one.actions[-1] - two.actions[-1])))
        return err / hh

    while probe(h) > tol:
        h /= 2.0
        if h < dt_min:
            raise StiffnessError(f"step underflow below {dt_min:g}")
    n = max(1, int(math.ceil(t_end / h)))
    if sample_every is None:
        sample_every = max(1, n // 256)
    return integrate_midpoint(grad_theta, grad_I, theta0, I0, t_end,
                              dt=t_end / n, energy=energy,
                              sample_every=sample_every)


def integrate_series_hamiltonian(H: FTSeries, theta0, I0, t_end,
                                 dt=1e-2, sample_every=1) -> Trajectory:
    """Implicit midpoint driven by the gradients of a stored series."""
    gth = H.grad_theta()
    gI = H.grad_I()

    def grad_theta(th, I):
        return np.array([g.eval(th[None, :], I=I)[0] for g in gth])

    def grad_I(th, I):
        return np.array([g.eval(th[None, :], I=I)[0] for g in gI])

    def energy(th, I):
        return float(H.eval(th[None, :], I=I)[0])

    return integrate_midpoint(grad_theta, grad_I, theta0, I0, t_end, dt=dt,
                              energy=energy, sample_every=sample_every)


# ---------------------------------------------------------------------------
# pendulum rotation orbits
# ---------------------------------------------------------------------------

VARTHETA = -0.5 + (2.0 / math.pi) * math.atan(math.exp(math.pi))


@dataclass
class PendulumOrbit:
    """Rotation orbit of P = I^2/2 - cos(2 pi theta) through (0, I_B).

    I_B - 2 = eps = 16 e^{-2 pi B}(1 + o(1)) is exponentially small in the
    period, far below double resolution of I_B itself, so eps is the
    primary datum (log_eps once even eps underflows) and
    speed^2 = 4 cos^2(pi theta) + a2 with a2 = 4 eps + eps^2 is formed
    without cancellation.  For underflowed eps the orbit data coincide with
    the separatrix on the angular window used by the constructions.
    """

    B: float
    eps: float
    log_eps: Optional[float] = None

    @property
    def I_B(self) -> float:
        return 2.0 + self.eps

    @property
    def a2(self) -> float:
        return 4.0 * self.eps + self.eps ** 2

    def speed(self, theta):
        return np.sqrt(4.0 * np.cos(math.pi * np.asarray(theta)) ** 2 + self.a2)

    def tau(self, theta: float) -> float:
        """Time from theta = 0 along the orbit; odd, tau(1/2) = B/2."""
        if theta == 0.0:
            return 0.0
        sgn = 1.0 if theta > 0 else -1.0
        th = abs(theta)
        if th > 0.5:
            raise ParameterError("tau is defined on [-1/2, 1/2]")
        u_lo = 0.5 - th
        direct_hi = min(th, 0.25)
        val, _ = quad(lambda x: 1.0 / self.speed(x), 0.0, direct_hi,
                      epsabs=1e-15, epsrel=1e-13, limit=100)
        if th > 0.25:
            val += _sinh_piece(self.a2, u_lo, 0.25)
        return sgn * val

    def theta_of_t(self, t: float) -> float:
        """theta_B(t) in (-1/2, 1/2], inverting tau over one winding."""
        tm = t % self.B
        if tm > self.B / 2.0:
            return -self.theta_of_t(self.B - tm)
        if tm == 0.0:
            return 0.0
        half = self.B / 2.0
        if tm >= half:
            return 0.5
        hi = 0.5 if self.a2 > 0.0 else 0.5 - 1e-12
        if self.a2 == 0.0 and tm >= self.tau(hi):
            return 0.5
        return brentq(lambda x: self.tau(x) - tm, 0.0, hi, xtol=1e-15)


def _sinh_piece(a2: float, u_lo: float, u_hi: float) -> float:
    """int_{u_lo}^{u_hi} du / sqrt(4 sin^2(pi u) + a2).

    The substitution u = (a/2pi) sinh(t) flattens the 1/(2 pi u) tail into
    an O(1) smooth integrand on a logarithmic-length interval, which keeps
    the quadrature stable down to a ~ 1e-150.  At a2 = 0 (separatrix data,
    u_lo > 0 required) the log substitution u = e^v takes over.
    """
    if u_hi <= u_lo:
        return 0.0
    if a2 == 0.0:
        if u_lo <= 0.0:
            raise ParameterError("separatrix integrand diverges at u = 0")

        def h0(v):
            u = np.exp(v)
            return u / (2.0 * np.sin(math.pi * u))

        val, _ = quad(h0, math.log(u_lo), math.log(u_hi),
                      epsabs=1e-15, epsrel=1e-13, limit=200)
        return val
    a = math.sqrt(a2)
    t_lo = math.asinh(TWO_PI * u_lo / a)
    t_hi = math.asinh(TWO_PI * u_hi / a)

    def h(t):
        u = (a / TWO_PI) * np.sinh(t)
        return (a / TWO_PI) * np.cosh(t) / np.sqrt(4.0 * np.sin(math.pi * u) ** 2 + a2)

    val, _ = quad(h, t_lo, t_hi, epsabs=1e-15, epsrel=1e-13, limit=200)
    return val


def pendulum_period_of_eps(eps: float) -> float:
    """Winding time of the rotation orbit with I_B = 2 + eps."""
    if eps <= 0:
        raise ParameterError("rotation orbits require eps > 0")
    a2 = 4.0 * eps + eps ** 2
    direct, _ = quad(lambda x: 1.0 / np.sqrt(4.0 * np.cos(math.pi * x) ** 2 + a2),
                     0.0, 0.25, epsabs=1e-15, epsrel=1e-13, limit=100)
    return 2.0 * (direct + _sinh_piece(a2, 0.0, 0.25))


def pendulum_period(I_B: float) -> float:
    return pendulum_period_of_eps(I_B - 2.0)


def pendulum_periodic_point(B: float) -> PendulumOrbit:
    """The unique rotation orbit of period exactly B.

    Root-finds log(eps) for moderate B; past B ~ 100 the separatrix
    asymptotics eps_B = 16 e^{-2 pi B} is already exact to double
    precision (its relative correction is O(e^{-2 pi B})) and eventually
    the only representable description."""
    if B < 3:
        raise ParameterError("B >= 3 required")
    log_eps = math.log(16.0) - TWO_PI * B
    if B > 100.0:
        eps = math.exp(log_eps) if log_eps > -700.0 else 0.0
        return PendulumOrbit(B=float(B), eps=eps, log_eps=log_eps)
    f = lambda x: pendulum_period_of_eps(math.exp(x)) - B
    x = brentq(f, -700.0, math.log(5.0), xtol=1e-13, rtol=8.9e-16)
    return PendulumOrbit(B=float(B), eps=math.exp(x), log_eps=x)


def pendulum_exclusion_margin(orbit: PendulumOrbit, n_samples: int = 200) -> float:
    """min over t in [1/2, B-1/2] of |theta_B(t)| - vartheta.

    A positive margin certifies the exclusion window used by the
    coupled-map synchronization; equivalently tau(vartheta) < 1/2."""
    ts = np.linspace(0.5, orbit.B - 0.5, n_samples)
    margin = math.inf
    for t in ts:
        th = orbit.theta_of_t(float(t))
        margin = min(margin, abs(th) - VARTHETA)
    return margin


def tau_norm_certificate(orbit: PendulumOrbit, sp: ScaleProfile, s: float,
                         radius: float = 0.02, l_cap: int = 120,
                         n_circle: int = 256) -> float:
    """Certified upper bound for |tau_B|_{M,s} on [-vartheta, vartheta].

    tau_B' = 1/speed is analytic in a strip whose width is uniform in B:
    the complex turning points sit over theta = 1/2 +- i y_B, a distance
    > 1/2 - vartheta from the window.  Cauchy estimates off circles of the
    given radius bound every derivative, giving
        c * max( sup|tau|, sup_{l>=1} (l+1)^2 s^l (l-1)! Mg r^{1-l} / M_l ).
    """
    if radius >= 0.5 - VARTHETA:
        raise ParameterError("radius exceeds the uniform analyticity margin")
    xs = np.linspace(-VARTHETA, VARTHETA, 41)
    ang = np.exp(2j * math.pi * np.arange(n_circle) / n_circle)
    Mg = 0.0
    for x0 in xs:
        z = x0 + radius * ang
        g = 1.0 / np.sqrt(4.0 * np.cos(math.pi * z) ** 2 + orbit.a2)
        Mg = max(Mg, float(np.max(np.abs(g))))
    sup_tau = abs(orbit.tau(VARTHETA))
    l = np.arange(1, l_cap + 1, dtype=float)
    log_terms = (2.0 * np.log(l + 1.0) + l * math.log(s) + gammaln(l)
                 + math.log(Mg) + (1.0 - l) * math.log(radius)
                 - sp.ws.log_M[1:l_cap + 1])
    return C_NORM * max(sup_tau, float(np.exp(np.max(log_terms))))


def pendulum_time1_map(I_scale: float = 1.0, rtol: float = 1e-12):
    """Time-1 map of I^2/2 + I_scale^{-2} V(theta), V = -cos(2 pi theta).

    Uses the rescaling Phi^{P_A} = sigma_A^{-1} Phi_{1/A}^P sigma_A and a
    fixed-step Yoshida-4 pendulum flow (step chosen from rtol)."""
    A = I_scale

    def grad_v(theta):
        return TWO_PI * np.sin(TWO_PI * theta)

    def flow(theta, I):
        th = np.asarray(theta, dtype=float)
        J = np.asarray(I, dtype=float) * A
        t = 1.0 / A
        dt = min(1e-2, (rtol ** 0.25) / 4.0)
        n = max(1, int(math.ceil(t / dt)))
        h = t / n
        for _ in range(n):
            th, J = _yoshida4(th, J, h, grad_v)
        return th, J / A

    return flow
