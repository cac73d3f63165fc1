"""Normal-form algorithms at truncation.

Every routine here runs finitely many exact-at-truncation steps and
*measures* its remainders with norm certificates; theorem-style smallness
thresholds are evaluated and logged but never block execution (the
implicit dimensional constants are configuration inputs, default 1).

Contents: the single resonant averaging step, the iterated periodic normal
form with the one-big-then-uniform width schedule, the multi-frequency
loop, the local rescaled normal form, the parameterized affine KAM step
and its geometric-schedule iteration, a steep-case normal-form chain, and
closed-form stability-time predictors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import dioph
from .dioph import FrequencyProfile, PeriodicVector
from .flows import (AffineTransform, affine_flow_lie, apply_affine,
                    compose_affine, jet_param_substitute, lie_flow)
from .series import (FTSeries, average_periodic, norm_upper,
                     poisson_bracket, solve_homological_periodic)
from .weights import HorizonError, ParameterError, ScaleProfile


def linear_integrable(v, n, K, D_I=1, n_w=0, D_w=0) -> FTSeries:
    """L_v(I) = v . I as a series."""
    out = FTSeries.zeros(n, K, D_I=D_I, D_w=D_w, n_w=n_w)
    for i, vi in enumerate(v):
        if vi != 0.0:
            e = tuple(1 if a == i else 0 for a in range(n))
            out.set_mode((0,) * n, float(vi), m=e)
    return out


def integrable_part(H: FTSeries) -> FTSeries:
    """Modes with k = 0 (functions of I and w alone)."""
    out = FTSeries(n=H.n, K=H.K, D_I=H.D_I, D_w=H.D_w, n_w=H.n_w, s=H.s,
                   delta=H.delta, h=H.h, real=H.real)
    c = (H.K,) * H.n
    for key, arr in H.blocks.items():
        if arr[c] != 0:
            out.block(*key)[c] = arr[c]
    return out


def grad_cert(f: FTSeries, sp: ScaleProfile, s: float, wrt="I") -> float:
    """Certificate of the l1 action gradient (or angle gradient)."""
    total = 0.0
    for i in range(f.n):
        g = f.dI(i) if wrt == "I" else f.dtheta(i)
        total += norm_upper(g, sp, s).bound
    return total


@dataclass
class NFResult:
    """Outcome of a normal-form run."""

    generators: list            # Lie generators, innermost applied first
    resonant: FTSeries          # commutes with every declared resonance
    remainder: FTSeries
    hamiltonian: FTSeries       # full transformed Hamiltonian
    resonances: list            # PeriodicVectors the resonant part respects
    cert_before: float
    cert_after: float
    predicted_bound: Optional[float]
    final_width: float = 0.0
    schedule_log: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def commutation_defect(self, K_out=None) -> float:
        worst = 0.0
        n = self.resonant.n
        for pv in self.resonances:
            Lv = linear_integrable(pv.v, n, self.resonant.K, D_I=1,
                                   n_w=self.resonant.n_w, D_w=self.resonant.D_w)
            pb = poisson_bracket(self.resonant, Lv,
                                 K_out=K_out or self.resonant.K)
            worst = max(worst, pb.coeff_norm1())
        return worst


# ---------------------------------------------------------------------------
# periodic averaging
# ---------------------------------------------------------------------------

@dataclass
class PeriodicSplit:
    """H = L_v + S + R + G + F per the averaging lemma's bookkeeping.

    S, R integrable; {G, L_v} = 0; F the active remainder."""

    pv: PeriodicVector
    S: FTSeries
    R: FTSeries
    G: FTSeries
    F: FTSeries

    @property
    def n(self):
        return self.F.n

    def total(self) -> FTSeries:
        Lv = linear_integrable(self.pv.v, self.n, self.F.K, D_I=max(self.F.D_I, 1),
                               n_w=self.F.n_w, D_w=self.F.D_w)
        return Lv + self.S + self.R + self.G + self.F

    @classmethod
    def from_hamiltonian(cls, H: FTSeries, pv: PeriodicVector) -> "PeriodicSplit":
        """Split a full Hamiltonian: integrable -> L_v + S (+R=0), resonant
        nonintegrable -> G, rest -> F."""
        integ = integrable_part(H)
        Lv = linear_integrable(pv.v, H.n, H.K, D_I=max(H.D_I, 1),
                               n_w=H.n_w, D_w=H.D_w)
        S = integ - Lv
        rest = H - integ
        G = average_periodic(rest, pv)
        F = rest - G
        R = FTSeries.zeros(H.n, H.K, D_I=H.D_I, D_w=H.D_w, n_w=H.n_w)
        return cls(pv=pv, S=S, R=R, G=G, F=F)


def averaging_step(split: PeriodicSplit, sigma: float, sp: ScaleProfile,
                   s: float, K_out: Optional[int] = None,
                   D_I_out: Optional[int] = None,
                   first_integral: Optional[FTSeries] = None):
    """One resonant averaging step.

    Solves {Y, L_v} = F - [F]_v, pushes H through the time-1 flow of Y and
    regroups: the resonant average joins G, everything else is the new F.
    Returns (new_split, Y, report); report carries the measured remainder
    certificate and the second-order bound T nu (nu C(sigma)^2/s^2 +
    eta C(sigma)/s) it is compared against.  A supplied integrable first
    integral commuting with F stays a first integral of the resonant part
    and the new remainder; the report measures both defects.
    """
    pv = split.pv
    K_out = K_out if K_out is not None else split.F.K
    D_I_out = D_I_out if D_I_out is not None else max(split.F.D_I, split.R.D_I, 1)
    T = pv.T
    nu = norm_upper(split.F, sp, s).bound
    mu = grad_cert(split.S, sp, s)
    rho = grad_cert(split.R, sp, s)
    eta = max(mu, rho)
    Csig = sp.cauchy_c(sigma).value
    warnings = []
    if Csig ** 2 * T * nu > s ** 2:
        warnings.append(
            f"smallness C(sigma)^2 T nu = {Csig**2*T*nu:.3e} exceeds s^2 = {s**2:.3e}")

    F_res = average_periodic(split.F, pv)
    Y = solve_homological_periodic(split.F - F_res, pv)
    H_new = lie_flow(Y, split.total(), K_out=K_out, D_I_out=D_I_out)

    G_new = split.G + F_res
    Lv = linear_integrable(pv.v, split.n, K_out, D_I=max(D_I_out, 1),
                           n_w=split.F.n_w, D_w=split.F.D_w)
    F_new = H_new - Lv - split.S - split.R - G_new
    new = PeriodicSplit(pv=pv, S=split.S, R=split.R, G=G_new, F=F_new.prune(1e-300))
    bound = T * nu * (nu * Csig ** 2 / s ** 2 + eta * Csig / s)
    rep = {
        "nu": nu, "eta": eta, "sigma": sigma, "C_sigma": Csig,
        "remainder_cert": norm_upper(new.F, sp, s * (1 - sigma) ** 3).bound,
        "second_order_bound": bound,
        "warnings": warnings,
    }
    if bound > 0 and rep["remainder_cert"] > 0:
        rep["measured_constant"] = rep["remainder_cert"] / bound
    if first_integral is not None:
        rep["first_integral_defect_resonant"] = poisson_bracket(
            G_new, first_integral, K_out=K_out).coeff_norm1()
        rep["first_integral_defect_remainder"] = poisson_bracket(
            new.F, first_integral, K_out=K_out).coeff_norm1()
    return new, Y, rep


@dataclass
class NFSchedule:
    """Width schedule of the iterated periodic normal form.

    One big first loss sigma_1 = ln(xi)/24, then m-1 uniform losses
    sigma_m = ln(xi)/(24(m-1)); per-step remainder budgets nu_j = e^-j nu.
    """

    xi: float
    m: int
    sigma1: float
    sigma_m: float
    A: float
    nu_budgets: np.ndarray

    @property
    def kappa(self) -> float:
        return math.log(self.xi) / 24.0

    @classmethod
    def build(cls, xi: float, sp: ScaleProfile, s: float, T: float, eta: float,
              nu: float, A: float = 1.0, m_cap: int = 400) -> "NFSchedule":
        if xi <= 1.0:
            raise ParameterError("xi > 1 required")
        kappa = math.log(xi) / 24.0
        y = s / (A * T * eta) if eta > 0 else math.inf
        ci = sp.cauchy_c_inv(max(y, 1.0)) if math.isfinite(y) else sp.sigma_bar
        m = max(1, min(m_cap, int(math.ceil(kappa / ci))))
        sigma1 = kappa
        sigma_m = kappa / (m - 1) if m >= 2 else kappa
        budgets = nu * np.exp(-np.arange(1, m + 1, dtype=float))
        return cls(xi=xi, m=m, sigma1=sigma1, sigma_m=sigma_m, A=A,
                   nu_budgets=budgets)


def periodic_normal_form(H: FTSeries, pv: PeriodicVector, sp: ScaleProfile,
                         s: float, xi: float = 2.0, A: float = 1.0,
                         K_out: Optional[int] = None,
                         D_I_out: Optional[int] = None,
                         schedule: Optional[NFSchedule] = None,
                         first_integral: Optional[FTSeries] = None) -> NFResult:
    """Iterated averaging along one periodic vector (Neishtadt schedule).

    The remainder after m steps is expected below
    nu exp(-kappa_xi / C^-1(s/(A T eta))); each step's measured certificate
    is compared with its budget nu_j = e^-j nu and violations are logged,
    never fatal.
    """
    split = PeriodicSplit.from_hamiltonian(H, pv)
    nu0 = norm_upper(split.F, sp, s).bound
    eta = max(grad_cert(split.S, sp, s), grad_cert(split.R, sp, s))
    if schedule is None:
        schedule = NFSchedule.build(xi, sp, s, pv.T, eta, nu0, A=A)
    kappa = schedule.kappa
    y = s / (schedule.A * pv.T * eta) if eta > 0 else math.inf
    warnings = []
    if nu0 * sp.cauchy_c(min(kappa, sp.sigma_bar)).value > s * eta:
        warnings.append("threshold nu <= C(kappa)^-1 s eta violated")
    if math.isfinite(y):
        if y < 1.0 or sp.cauchy_c_inv(max(y, 1.0)) > kappa:
            warnings.append("threshold C^-1(s/(A T eta)) <= kappa violated")

    cur = split
    s_j = s
    log = []
    for j in range(1, schedule.m + 1):
        sigma = schedule.sigma1 if j == 1 else schedule.sigma_m
        cur, Yj, rep = averaging_step(cur, sigma, sp, s_j, K_out=K_out,
                                      D_I_out=D_I_out,
                                      first_integral=first_integral)
        s_j = s_j * (1.0 - sigma) ** 3
        within = rep["remainder_cert"] <= schedule.nu_budgets[j - 1]
        entry = {"step": j, "sigma": sigma, "width": s_j,
                 "remainder_cert": rep["remainder_cert"],
                 "budget": float(schedule.nu_budgets[j - 1]),
                 "within_budget": bool(within),
                 "generator": Yj}
        if first_integral is not None:
            entry["first_integral_defect"] = max(
                rep["first_integral_defect_resonant"],
                rep["first_integral_defect_remainder"])
        log.append(entry)
        warnings.extend(rep["warnings"])
    predicted = None
    if math.isfinite(y) and y >= 1.0:
        predicted = nu0 * math.exp(-kappa / sp.cauchy_c_inv(y))
    # the residual resonant content of the final hat-F belongs to the
    # resonant side (one more exact projection, free)
    F_res = average_periodic(cur.F, pv)
    G_fin = cur.G + F_res
    F_fin = (cur.F - F_res).prune(1e-300)
    Lv = linear_integrable(pv.v, split.n, cur.F.K, D_I=max(cur.F.D_I, 1),
                           n_w=H.n_w, D_w=H.D_w)
    resonant = (Lv + cur.S + cur.R + G_fin).prune(1e-300)
    return NFResult(generators=[entry["generator"] for entry in log],
                    resonant=resonant, remainder=F_fin,
                    hamiltonian=cur.total(), resonances=[pv],
                    cert_before=nu0,
                    cert_after=norm_upper(F_fin, sp, s_j).bound,
                    predicted_bound=predicted, final_width=s_j,
                    schedule_log=log, warnings=warnings)


def multifrequency_normal_form(H: FTSeries, basis: list, sp: ScaleProfile,
                               s: float, K_out: Optional[int] = None,
                               D_I_out: Optional[int] = None,
                               A: float = 1.0) -> NFResult:
    """Loop the periodic normal form over a basis with xi = 2^(1/d).

    The final resonant part commutes with every L_{v_j}; for a full
    unimodular basis that forces it to the zero-mode projection.
    """
    d = len(basis)
    xi = 2.0 ** (1.0 / d)
    cur = H
    gens = []
    logs = []
    warns = []
    cert0 = None
    s_j = s
    for stage, pv in enumerate(basis):
        res = periodic_normal_form(cur, pv, sp, s_j, xi=xi, A=A, K_out=K_out,
                                   D_I_out=D_I_out)
        if cert0 is None:
            cert0 = res.cert_before
        gens.extend(res.generators)
        logs.append({"stage": stage, "pv": pv.Tv,
                     "remainder_cert": res.cert_after,
                     "steps": len(res.schedule_log)})
        warns.extend(res.warnings)
        cur = res.hamiltonian
        s_j = res.final_width
    resonant = cur
    for pv in basis:
        resonant = average_periodic(resonant, pv)
    remainder = cur - resonant
    return NFResult(generators=gens, resonant=resonant, remainder=remainder,
                    hamiltonian=cur, resonances=list(basis), cert_before=cert0,
                    cert_after=norm_upper(remainder, sp, s_j).bound,
                    predicted_bound=None, final_width=s_j,
                    schedule_log=logs, warnings=warns)


# ---------------------------------------------------------------------------
# local normal form around an action point
# ---------------------------------------------------------------------------

def translate_actions(H: FTSeries, I1) -> FTSeries:
    """H(theta, I + I1): binomial shift of the action exponents."""
    I1 = np.asarray(I1, dtype=float)
    out = FTSeries(n=H.n, K=H.K, D_I=H.D_I, D_w=H.D_w, n_w=H.n_w, s=H.s,
                   delta=H.delta, h=H.h, real=H.real)
    for (m, w), arr in H.blocks.items():
        subs = [()]
        for mi in m:
            subs = [t + (j,) for t in subs for j in range(mi + 1)]
        for sub in subs:
            coef = 1.0
            for i, (mi, ji) in enumerate(zip(m, sub)):
                coef *= math.comb(mi, ji) * I1[i] ** (mi - ji)
            if coef != 0.0:
                out.block(sub, w)[...] += coef * arr
    return out.prune()


def scale_actions(H: FTSeries, rho: float, energy_scale: Optional[float] = None) -> FTSeries:
    """H(theta, rho I) [/ rho if energy_scale given]: per-block scaling."""
    fac_all = 1.0 if energy_scale is None else 1.0 / energy_scale
    out = H.copy()
    out.blocks = {}
    for (m, w), arr in H.blocks.items():
        out.block(m, w)[...] = arr * (rho ** sum(m)) * fac_all
    return out


def local_normal_form(h: FTSeries, f: FTSeries, I1, rho: float,
                      pv: PeriodicVector, sp: ScaleProfile, s: float,
                      K_out: Optional[int] = None, A: float = 1.0) -> dict:
    """Normal form near I1 with |grad h(I1) - v| small.

    Translate by I1, rescale actions by rho, expand the integrable part to
    second order implicitly (the series is already polynomial), and run the
    periodic normal form with xi = 2 at width s/2; everything is reported in
    rescaled coordinates together with the scale-back data.
    """
    H = h + f
    Ht = translate_actions(H, I1)
    Hr = scale_actions(Ht, rho, energy_scale=rho)
    # drop the constant term (irrelevant energy offset)
    c = (Hr.K,) * Hr.n
    key0 = ((0,) * Hr.n, (0,) * Hr.n_w)
    if key0 in Hr.blocks:
        Hr.blocks[key0][c] = 0.0
    res = periodic_normal_form(Hr, pv, sp, s / 2.0, xi=2.0, A=A, K_out=K_out)
    grad_h = np.array([h.dI(i).eval(np.zeros((1, h.n)), I=np.asarray(I1))[0]
                       for i in range(h.n)])
    res.warnings.append(
        f"|grad h(I1) - v| = {float(np.sum(np.abs(grad_h - np.asarray(pv.v)))):.3e}")
    return {"result": res, "I1": np.asarray(I1, dtype=float), "rho": rho,
            "grad_h": grad_h}


# ---------------------------------------------------------------------------
# KAM step and iteration (parameterized affine Hamiltonians)
# ---------------------------------------------------------------------------

@dataclass
class KamHamiltonian:
    """H = e(w) + w.I + A(theta,w) + B(theta,w).I + R(theta,I,w).

    Stored as one series over (theta, I, w = omega - omega_0) with jet
    degree D_w = 1; the block split is by inspection (k = 0 modes of the
    |m| <= 1 blocks are the normal form N)."""

    H: FTSeries
    omega0: np.ndarray

    @property
    def n(self):
        return len(self.omega0)

    def parts(self):
        n, K = self.H.n, self.H.K
        c = (K,) * n
        e0, e1 = 0.0, np.zeros(n)
        A = FTSeries.zeros(n, K, D_I=0, D_w=1, n_w=n)
        B = [FTSeries.zeros(n, K, D_I=0, D_w=1, n_w=n) for _ in range(n)]
        R = FTSeries.zeros(n, K, D_I=self.H.D_I, D_w=1, n_w=n)
        omega_dev = np.zeros((n, 1 + n))  # zero modes of m=e_i blocks
        for (m, w), arr in self.H.blocks.items():
            dm = sum(m)
            if dm == 0:
                rest = arr.copy()
                if sum(w) == 0:
                    e0 = float(arr[c].real)
                else:
                    e1[int(np.argmax(w))] = float(arr[c].real)
                rest[c] = 0.0
                if np.max(np.abs(rest)) > 0:
                    A.block((0,) * n, w)[...] += rest
            elif dm == 1:
                i = int(np.argmax(m))
                rest = arr.copy()
                col = 0 if sum(w) == 0 else 1 + int(np.argmax(w))
                omega_dev[i, col] = float(arr[c].real)
                rest[c] = 0.0
                if np.max(np.abs(rest)) > 0:
                    B[i].block((0,) * n, w)[...] += rest
            else:
                R.block(m, w)[...] += arr
        return {"e0": e0, "e1": e1, "A": A.prune(), "B": [b.prune() for b in B],
                "R": R.prune(), "omega_diag": omega_dev}

    def certs(self, sp: ScaleProfile, s: float):
        p = self.parts()
        certA = norm_upper(p["A"], sp, s).bound
        certB = sum(norm_upper(b, sp, s).bound for b in p["B"])
        certR = norm_upper(p["R"], sp, s).bound
        return {"A": certA, "B": certB, "R": certR}


def kam_hamiltonian_from_mechanical(f: FTSeries, eps: float, omega0,
                                    K: int, D_I: int = 2) -> KamHamiltonian:
    """Parameterize H = |I|^2/2 + eps f(theta) around omega = grad h.

    With I = omega + J:  H = e(omega) + omega.J + |J|^2/2 + eps f, where
    e(omega) = |omega|^2/2 enters only through its jet (degree <= 1 here;
    e never drives the dynamics)."""
    omega0 = np.asarray(omega0, dtype=float)
    n = len(omega0)
    H = FTSeries.zeros(n, K, D_I=D_I, D_w=1, n_w=n)
    c = (K,) * n
    H.block((0,) * n, (0,) * n)[c] = 0.5 * float(omega0 @ omega0)
    for a in range(n):
        wa = tuple(1 if x == a else 0 for x in range(n))
        H.block((0,) * n, wa)[c] = omega0[a]
    for i in range(n):
        ei = tuple(1 if x == i else 0 for x in range(n))
        H.block(ei, (0,) * n)[c] = omega0[i]
        wi = tuple(1 if x == i else 0 for x in range(n))
        H.block(ei, wi)[c] = 1.0
        e2 = tuple(2 if x == i else 0 for x in range(n))
        H.block(e2, (0,) * n)[c] = 0.5
    for (m, w), arr in f.blocks.items():
        H.block(m, (0,) * n)[...] += eps * arr
    return KamHamiltonian(H=H, omega0=omega0)


@dataclass
class KamStepReport:
    Q: float
    sigma: float
    basis: list
    certs_before: dict
    certs_after: dict
    conditions: dict
    phi_shift: np.ndarray
    phi_matrix: np.ndarray


def kam_step(kh: KamHamiltonian, fp: FrequencyProfile, Q: float, sigma: float,
             sp: ScaleProfile, s: float, c2: float = 1.0,
             mu_cond: Optional[float] = None, h_cond: Optional[float] = None,
             r_cond: Optional[float] = None, delta_cond: Optional[float] = None):
    """One affine KAM step: n successive rational averagings + counterterm.

    Produces the composed transform (E, F, G) with its frequency map phi
    solved exactly at jet level, the pulled-back Hamiltonian, and measured
    contraction certificates (|A+| vs eps/16, |B+| vs mu/4 when the
    preconditions hold)."""
    n = kh.n
    H = kh.H
    K = H.K
    zb = dioph.zbasis_approx(fp, Q)
    basis = zb.vectors
    parts = kh.parts()
    certs0 = kh.certs(sp, s)
    eps_c, mu_c = certs0["A"], certs0["B"]
    cond = {
        "sqrt_eps<=mu": math.sqrt(max(eps_c, 0.0)) <= max(mu_c, math.sqrt(eps_c)),
        "h<=1/(Q Psi Q)": (h_cond or 0.0) <= 1.0 / fp.delta(Q),
        "r mu<=delta/(Q Psi)": True if r_cond is None or delta_cond is None
        else r_cond * mu_c <= delta_cond / fp.delta(Q),
        "QsC^-1": (1.0 + certs0["R"]) <= Q * s / sp.cauchy_c(sigma).value / c2,
    }

    Hc = H
    tr_total = None
    for pv in basis:
        p_cur = KamHamiltonian(H=Hc, omega0=kh.omega0).parts()
        Cj = solve_homological_periodic(p_cur["A"], pv)
        Dj = [solve_homological_periodic(b, pv) for b in p_cur["B"]]
        tr = affine_flow_lie(Cj, Dj, t=1.0, K_out=K)
        Hc = apply_affine(Hc, tr, K_out=K, D_I_out=H.D_I)
        tr_total = tr if tr_total is None else compose_affine(tr_total, tr, K_out=K)

    # frequency counterterm: zero modes of the m = e_i blocks define
    # b(w) = w + [B](w); solve b(phi(w)) = w exactly at jet degree 1
    pm = KamHamiltonian(H=Hc, omega0=kh.omega0).parts()
    od = pm["omega_diag"]
    b0 = od[:, 0] - kh.omega0          # [B] constant part
    B1 = od[:, 1:] - np.eye(n)         # [B] linear part
    M1 = np.eye(n) + B1
    phi_matrix = np.linalg.solve(M1, np.eye(n))
    phi_shift = -phi_matrix @ b0       # phi_0 - omega_0
    Hn = jet_param_substitute(Hc, phi_shift, phi_matrix)
    new = KamHamiltonian(H=Hn.prune(1e-300), omega0=kh.omega0)
    certs1 = new.certs(sp, s)
    report = KamStepReport(Q=Q, sigma=sigma, basis=basis,
                           certs_before=certs0, certs_after=certs1,
                           conditions=cond, phi_shift=phi_shift,
                           phi_matrix=phi_matrix)
    return new, tr_total, report


@dataclass
class KamSchedule:
    """Geometric schedules of the iteration: eps_i = 16^-i eps,
    mu_i = 4^-i mu, delta_i = 2^-i-2 r, h_i = 2^-i h, Delta_i = 2^i
    Delta(Q0), Q_i = Delta*(Delta_i), sigma_i = C^-1(c2(1+eta)^-1 s Q_i)."""

    Q0: float
    sigmas: np.ndarray
    Qs: np.ndarray
    budget: float
    product_lower: float

    @classmethod
    def build(cls, sp: ScaleProfile, fp: FrequencyProfile, s: float, n: int,
              eta: float = 0.0, c2: float = 1.0, i_max: int = 12,
              Q0: Optional[float] = None) -> "KamSchedule":
        if Q0 is None:
            rep = dioph.br_test(sp, fp, s=s, eta=eta, n=n, i_max=max(i_max, 20),
                                c2=c2)
            if rep.verdict != "ConvergedWithinBudget":
                raise HorizonError(f"no admissible Q0: {rep.verdict}")
            Q0 = rep.Q0
        Qs, sigmas = dioph._dyadic_sigmas(sp, fp, Q0, s, eta, i_max, c2)
        budget = math.log(2.0) / (4.0 * n + 2.0)
        prod = float(np.exp((2 * n + 1) * np.sum(np.log1p(-sigmas))))
        return cls(Q0=Q0, sigmas=sigmas, Qs=Qs, budget=budget,
                   product_lower=prod)


@dataclass
class KamIterateResult:
    transform: AffineTransform
    omega_star: np.ndarray
    defects: list
    cert_log: list
    embedding_theta: list   # series: theta + E*(theta) at omega_0
    embedding_I: list       # series: G*(theta) (+ action offset by caller)
    converged: bool


def kam_iterate(kh: KamHamiltonian, fp: FrequencyProfile, sp: ScaleProfile,
                s: float, n_iter: int = 6, schedule: Optional[KamSchedule] = None,
                eta: float = 0.0, c2: float = 1.0, defect_fn=None,
                tol: float = 1e-9) -> KamIterateResult:
    """Iterate the KAM step with the geometric schedules.

    The transforms accumulate by the groupoid composition (outer jets pulled
    through each step's frequency map); the invariance defect is measured by
    the caller-supplied defect_fn(E*, G*, omega_star) each iteration."""
    n = kh.n
    if schedule is None:
        schedule = KamSchedule.build(sp, fp, s, n, eta=eta, c2=c2,
                                     i_max=max(n_iter + 2, 8))
    tr_total = None
    phi0_total = kh.omega0.copy()
    phi1_total = np.eye(n)
    cur = kh
    defects = []
    certs = []
    converged = False
    for i in range(n_iter):
        Q_i, sig_i = float(schedule.Qs[i]), float(schedule.sigmas[i])
        cur, tr_i, rep = kam_step(cur, fp, Q_i, sig_i, sp, s, c2=c2)
        if tr_total is None:
            tr_total = tr_i
        else:
            tr_total = compose_affine(tr_total, tr_i, K_out=kh.H.K,
                                      phi_shift=rep.phi_shift,
                                      phi_matrix=rep.phi_matrix)
        # phi* = phi^i o phi_{i+1}
        phi0_total = phi0_total + phi1_total @ rep.phi_shift
        phi1_total = phi1_total @ rep.phi_matrix
        certs.append({"iter": i, "Q": Q_i, "sigma": sig_i,
                      "A": rep.certs_after["A"], "B": rep.certs_after["B"],
                      "conditions": rep.conditions})
        if defect_fn is not None:
            E0, _ = _jet_base(tr_total.E)
            G0, _ = _jet_base(tr_total.G)
            d = defect_fn(E0, G0, phi0_total)
            defects.append(d)
            if d <= tol:
                converged = True
                break
    E0, _ = _jet_base(tr_total.E)
    G0, _ = _jet_base(tr_total.G)
    return KamIterateResult(transform=tr_total, omega_star=phi0_total,
                            defects=defects, cert_log=certs,
                            embedding_theta=E0, embedding_I=G0,
                            converged=converged)


def _jet_base(series_list):
    from .flows import _jet_shift_components
    return _jet_shift_components(series_list)


def mechanical_defect_fn(f: FTSeries, eps: float, omega0, n_grid: int = 64):
    """Invariance defect for H = |I|^2/2 + eps f(theta).

    The embedding is Theta(theta) = (theta + E*(theta), omega* + G*(theta));
    the defect is max over a grid of
        |(Id + dE*) omega_0 - (omega* + G*)|  and  |dG* omega_0 + eps grad f|."""
    omega0 = np.asarray(omega0, dtype=float)
    n = len(omega0)
    axes = [np.arange(n_grid) / n_grid] * n
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
    gradf = f.grad_theta()

    def defect(E0, G0, omega_star):
        Ev = np.stack([e.eval(grid) for e in E0], axis=-1)
        Gv = np.stack([g.eval(grid) for g in G0], axis=-1)
        dE = np.stack([np.stack([E0[i].dtheta(j).eval(grid) for j in range(n)],
                                axis=-1) for i in range(n)], axis=-2)
        dG = np.stack([np.stack([G0[i].dtheta(j).eval(grid) for j in range(n)],
                                axis=-1) for i in range(n)], axis=-2)
        pts = grid + Ev
        gf = np.stack([g.eval(pts) for g in gradf], axis=-1)
        d_theta = (omega0[None, :] + np.einsum("pij,j->pi", dE, omega0)
                   - (omega_star[None, :] + Gv))
        d_I = np.einsum("pij,j->pi", dG, omega0) + eps * gf
        return float(max(np.max(np.abs(d_theta)), np.max(np.abs(d_I))))

    return defect


# ---------------------------------------------------------------------------
# steep-case chain and dichotomy probe
# ---------------------------------------------------------------------------

def nekhoroshev_chain(H: FTSeries, stages: list, sp: ScaleProfile, s: float,
                      K_out: Optional[int] = None) -> NFResult:
    """Chain periodic normal forms over stage vectors v_j, ..., v_1.

    stages: list of PeriodicVector, processed last-to-first per the
    induction (each later stage preserves the commutations already won,
    because averaging preserves commutation with integrable invariants).
    The final resonant part commutes with every stage vector.
    """
    cur = H
    gens, logs, warns = [], [], []
    cert0 = None
    s_j = s
    for stage, pv in enumerate(reversed(stages)):
        res = periodic_normal_form(cur, pv, sp, s_j, xi=2.0, K_out=K_out)
        if cert0 is None:
            cert0 = res.cert_before
        gens.extend(res.generators)
        logs.append({"stage": len(stages) - stage, "pv": pv.Tv,
                     "remainder_cert": res.cert_after})
        warns.extend(res.warnings)
        cur = res.hamiltonian
        s_j = res.final_width
    resonant = cur
    for pv in stages:
        resonant = average_periodic(resonant, pv)
    remainder = cur - resonant
    return NFResult(generators=gens, resonant=resonant, remainder=remainder,
                    hamiltonian=cur, resonances=list(stages),
                    cert_before=cert0,
                    cert_after=norm_upper(remainder, sp, s_j).bound,
                    predicted_bound=None, final_width=s_j,
                    schedule_log=logs, warnings=warns)


def steep_exponents(n: int, p: float):
    """a_j = (np)^(n-j) and the Q_j = eps^(-1/(2 n a_j)) exponent ladder."""
    return [float((n * p) ** (n - j)) for j in range(1, n + 1)]


def dichotomy_probe(traj_actions: np.ndarray, Lambda_perp_basis: np.ndarray,
                    rho: float) -> dict:
    """Exit-time vs transverse-drift probe for a normal-form orbit.

    Given sampled actions and an orthonormal basis of Lambda_j^perp,
    reports the first exit index from the rho/2 ball and the max drift of
    the Lambda^perp projection up to that time."""
    dI = traj_actions - traj_actions[0]
    norms = np.sum(np.abs(dI), axis=1)
    exits = np.flatnonzero(norms >= rho / 2.0)
    i_exit = int(exits[0]) if len(exits) else len(norms) - 1
    proj = dI[: i_exit + 1] @ Lambda_perp_basis.T
    return {"exit_index": i_exit, "exited": bool(len(exits)),
            "max_perp_drift": float(np.max(np.abs(proj))) if proj.size else 0.0}


def almost_plane_curve_probe(h: FTSeries, curve_pts: np.ndarray,
                             Lambda_basis: np.ndarray, rho: float, L: float,
                             p: float) -> dict:
    """max over the polygonal curve of |Pi_Lambda grad h| vs L rho^p."""
    n = h.n
    grads = [h.dI(i) for i in range(n)]
    worst = 0.0
    for I in curve_pts:
        g = np.array([gi.eval(np.zeros((1, n)), I=I)[0] for gi in grads])
        worst = max(worst, float(np.sum(np.abs(Lambda_basis @ g))))
    return {"max_proj_grad": worst, "bound": L * rho ** p,
            "steep_witnessed": worst > L * rho ** p}


# ---------------------------------------------------------------------------
# stability-time predictors
# ---------------------------------------------------------------------------

def stability_time_predict(regime: str, sp: ScaleProfile,
                           fp: Optional[FrequencyProfile], s: float,
                           eps: float, n: int, rho: Optional[float] = None,
                           p: float = 2.0, r: Optional[float] = None,
                           constants: Optional[dict] = None) -> dict:
    """Evaluate the radius/time formulas of the four stability regimes.

    All dimensional constants default to 1 and are configuration inputs;
    the returned numbers are shapes to compare across parameters, not
    certified bounds."""
    c = {"c1": 1.0, "c2": 1.0, "c3": 1.0, "c4": 1.0, "ct": 1.0}
    if constants:
        c.update(constants)
    out = {"regime": regime, "eps": eps, "s": s, "n": n}
    if regime == "linear":
        if fp is None:
            raise ParameterError("linear regime needs a frequency profile")
        Q = fp.delta_star(c["c2"] * s / eps)
        out["Q"] = Q
        rr = r if r is not None else min(2 * c["c1"] * fp.psi_envelope(Q) * eps, 0.25)
        out["radius"] = 2.0 * rr
        out["time"] = (c["ct"] * rr * s / eps
                       * math.exp(c["c3"] / sp.cauchy_c_inv(max(c["c4"] * s * Q, 1.0))))
    elif regime == "nonlinear-local":
        if fp is None or rho is None:
            raise ParameterError("nonlinear-local regime needs fp and rho")
        Q = fp.delta_star(c["c2"] * s / rho)
        rr = r if r is not None else rho / 4.0
        out["Q"] = Q
        out["radius"] = 2.0 * rr
        out["time"] = (c["ct"] * rr * s / eps
                       * math.exp(c["c3"] / sp.cauchy_c_inv(max(c["c4"] * s * Q, 1.0))))
    elif regime == "quasiconvex":
        out["radius"] = c["c1"] * s * (eps / s ** 2) ** (1.0 / (2 * n))
        y = c["c3"] * s * (s ** 2 / eps) ** (1.0 / (2 * n))
        out["time"] = c["ct"] * s * math.exp(c["c2"] / sp.cauchy_c_inv(max(y, 1.0)))
    elif regime == "steep":
        a = (n * p) ** (n - 1)
        out["a"] = a
        out["radius"] = c["c1"] * eps ** (1.0 / (2 * n * a))
        y = c["c3"] * s * eps ** (-1.0 / (2 * n * a))
        out["time"] = s * math.exp(c["c2"] / sp.cauchy_c_inv(max(y, 1.0)))
    else:
        raise ParameterError(f"unknown regime {regime!r}")
    return out
