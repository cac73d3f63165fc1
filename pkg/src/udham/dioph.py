"""Small-denominator profiles and rational approximation.

For a nonresonant frequency vector omega the profile

    Psi_omega(Q) = max { |k . omega|^-1 : k integer, 0 < |k|_1 <= Q }

is a nondecreasing staircase; Delta(Q) = Q Psi(Q) and its generalized
inverse Delta* drive every quantitative statement downstream.  |k| always
means the l1 norm here (isolated in :func:`knorm`).

Profiles come from three interchangeable sources:

* brute-force lattice enumeration (exact, budget-guarded, small Q);
* continued fractions of omega_bar for n = 2 (exact at any Q, the values
  agree bit-for-bit with brute force run on the same float);
* prescribed convergents (Liouville-type constructions, exact integers).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from .weights import HorizonError, ParameterError, ScaleProfile


class ResonanceError(ValueError):
    """An exact resonance k.omega = 0 was found; carries the resonant k."""

    def __init__(self, msg, k):
        super().__init__(msg)
        self.k = tuple(int(x) for x in k)


class BudgetError(RuntimeError):
    """Enumeration budget exceeded."""


class UnsupportedError(RuntimeError):
    """Requested construction is outside the implemented range."""


def knorm(k) -> float:
    """The |k| used throughout: l1 norm."""
    return float(np.sum(np.abs(k)))


GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0


def named_value(name: str) -> float:
    if name == "golden":
        return GOLDEN
    if name == "sqrt2":
        return math.sqrt(2.0)
    if name == "e-2":
        return math.e - 2.0
    raise ParameterError(f"unknown symbolic frequency {name!r}")


def convergents_of_float(x: float, q_max: int = 10**15):
    """Exact continued-fraction convergents of the double x.

    Works on Fraction(x), which represents the float exactly, so the output
    is bit-consistent with any other computation on the same double.
    Returns a list of (p, q, e) with e = q*x - p exact, |e| decreasing.
    """
    frac = Fraction(x)
    out = []
    p0, q0, p1, q1 = 1, 0, int(math.floor(frac)), 1
    rem = frac - int(math.floor(frac))
    while q1 <= q_max:
        e = q1 * frac - p1
        out.append((p1, q1, float(e)))
        if rem == 0 or e == 0:
            break
        rem = 1 / rem
        a = int(math.floor(rem))
        rem -= a
        p0, p1 = p1, a * p1 + p0
        q0, q1 = q1, a * q1 + q0
    return out


# ---------------------------------------------------------------------------
# periodic vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PeriodicVector:
    """v with T v integer for minimal period T > 0."""

    v: tuple
    T: float
    Tv: tuple

    def __post_init__(self):
        tv = np.asarray(self.Tv, dtype=object)
        approx = self.T * np.asarray(self.v, dtype=float)
        if np.max(np.abs(approx - np.asarray(self.Tv, dtype=float))) > 1e-10:
            raise ParameterError("T*v is not integer to 1e-10")
        g = 0
        for m in self.Tv:
            g = math.gcd(g, int(m))
        if g != 1:
            raise ParameterError(f"period not minimal: gcd(Tv) = {g}")

    @property
    def dim(self) -> int:
        return len(self.v)


def periodic_from_rational(num, den) -> PeriodicVector:
    """Periodic vector v = num/den (componentwise integer num, common den)."""
    num = [int(x) for x in num]
    den = int(den)
    g = 0
    for x in num:
        g = math.gcd(g, x)
    g = math.gcd(g, den)
    num = [x // g for x in num]
    den //= g
    return PeriodicVector(v=tuple(x / den for x in num), T=float(den), Tv=tuple(num))


# ---------------------------------------------------------------------------
# Psi oracles and the frequency profile
# ---------------------------------------------------------------------------

def psi_brute(omega, Q: float, budget: int = 20_000_000,
              resonance_rtol: float = 1e-14):
    """Exact max of |k.omega|^-1 over 0 < |k|_1 <= Q by lattice enumeration.

    Returns (value, k) with k the lexicographically smallest maximizer.
    """
    omega = np.asarray(omega, dtype=float)
    n = len(omega)
    Qi = int(math.floor(Q))
    if Qi < 1:
        raise ParameterError("psi requires Q >= 1")
    if n > 4 or Qi > 1000:
        raise BudgetError("brute-force psi limited to n <= 4, Q <= 1000")
    if (2 * Qi + 1) ** n > budget:
        raise BudgetError(f"lattice ball of size ~{(2*Qi+1)**n:.2e} exceeds budget")
    rngs = [np.arange(-Qi, Qi + 1)] * n
    K = np.stack(np.meshgrid(*rngs, indexing="ij"), axis=-1).reshape(-1, n)
    norms = np.sum(np.abs(K), axis=1)
    K = K[(norms > 0) & (norms <= Qi)]
    dots = np.abs(K @ omega)
    scale = np.sum(np.abs(K), axis=1) * np.max(np.abs(omega))
    res = dots <= resonance_rtol * scale
    if np.any(res):
        k_res = K[np.argmax(res)]
        raise ResonanceError(f"exact resonance at k={tuple(k_res)}", k_res)
    best = np.min(dots)
    winners = K[dots <= best * (1.0 + 1e-12)]
    k = min(map(tuple, winners))
    return 1.0 / best, tuple(int(x) for x in k)


def psi_brute_table(omega, Q_max: int, budget: int = 20_000_000):
    """Psi_omega(Q) for all integer Q = 1..Q_max in one enumeration pass."""
    omega = np.asarray(omega, dtype=float)
    n = len(omega)
    if (2 * Q_max + 1) ** n > budget:
        raise BudgetError("lattice ball exceeds budget")
    rngs = [np.arange(-Q_max, Q_max + 1)] * n
    K = np.stack(np.meshgrid(*rngs, indexing="ij"), axis=-1).reshape(-1, n)
    norms = np.sum(np.abs(K), axis=1)
    sel = (norms > 0) & (norms <= Q_max)
    K, norms = K[sel], norms[sel]
    dots = np.abs(K @ omega)
    if np.any(dots == 0.0):
        k_res = K[np.argmax(dots == 0.0)]
        raise ResonanceError(f"exact resonance at k={tuple(k_res)}", k_res)
    vals = np.empty(Q_max)
    ks = []
    best = math.inf
    best_k = None
    for Q in range(1, Q_max + 1):
        shell = norms == Q
        if np.any(shell):
            i = np.argmin(dots + np.where(shell, 0.0, math.inf))
            if dots[i] < best:
                best, best_k = dots[i], tuple(int(x) for x in K[i])
                mk = tuple(int(-x) for x in K[i])
                if mk < best_k:
                    best_k = mk
        vals[Q - 1] = 1.0 / best
        ks.append(best_k)
    return vals, ks


@dataclass
class FrequencyProfile:
    """Psi staircase of a frequency vector, stored as breakpoints.

    ``breaks`` are the integer Q where Psi jumps; on [breaks[i], breaks[i+1])
    the value is exp(log_psi[i]) and it is achieved by ``ks[i]``.  The
    continuous envelope rises linearly only on the last unit interval before
    each jump, which keeps Psi_omega(Q) <= Psi(Q) <= Psi_omega(Q+1).
    """

    omega: np.ndarray
    d: int                       # leading nonresonant components (omega = (bar, 0))
    breaks: list                 # increasing ints, breaks[0] == 1
    log_psi: list
    ks: list
    horizon: float
    extender: Optional[object] = None  # callable Q -> extends the table
    convergents: Optional[list] = None
    label: str = ""

    # -- staircase lookups ---------------------------------------------------

    def _ensure(self, Q: float):
        while Q > self.horizon and self.extender is not None:
            self.extender(self)
        if Q > self.horizon:
            raise HorizonError(f"Psi horizon {self.horizon:g} < Q={Q:g}")

    def _idx(self, Q: float) -> int:
        self._ensure(Q)
        return int(np.searchsorted(np.asarray(self.breaks, dtype=float), Q, side="right") - 1)

    def psi(self, Q: float):
        """(Psi_omega(Q), achieving k) on the staircase."""
        if Q < 1:
            raise ParameterError("psi requires Q >= 1")
        i = self._idx(Q)
        return math.exp(self.log_psi[i]), self.ks[i]

    def log_psi_at(self, Q: float) -> float:
        if Q < 1:
            raise ParameterError("psi requires Q >= 1")
        return self.log_psi[self._idx(Q)]

    def psi_envelope(self, Q: float) -> float:
        """Continuous nondecreasing envelope with Psi_w(Q) <= env <= Psi_w(Q+1)."""
        i = self._idx(Q)
        if i + 1 < len(self.breaks) and Q > self.breaks[i + 1] - 1:
            t = Q - (self.breaks[i + 1] - 1)
            lo, hi = math.exp(self.log_psi[i]), math.exp(self.log_psi[i + 1])
            return lo + t * (hi - lo)
        return math.exp(self.log_psi[i])

    # -- Delta and its generalized inverse ------------------------------------

    def log_delta(self, Q: float) -> float:
        return math.log(Q) + self.log_psi_at(Q)

    def delta(self, Q: float) -> float:
        return math.exp(self.log_delta(Q))

    def delta_star(self, x: float, log: bool = False) -> float:
        """sup { Q >= 1 : Delta(Q) <= x } on the staircase.

        ``log=True`` interprets x as ln(x) (needed once Delta overflows).
        """
        log_x = x if log else math.log(x)
        if log_x < self.log_delta(1.0) - 1e-15:
            raise ParameterError("delta_star argument below Delta(1) = Psi(1)")
        self._ensure_delta(log_x)
        starts = np.log(np.asarray(self.breaks, dtype=float)) + np.asarray(self.log_psi)
        i = int(np.searchsorted(starts, log_x + 1e-15, side="right") - 1)
        log_q_free = log_x - self.log_psi[i]
        if i + 1 < len(self.breaks):
            log_next = math.log(self.breaks[i + 1])
            return math.exp(min(log_q_free, log_next))
        return math.exp(log_q_free)

    def _ensure_delta(self, log_x: float):
        while self.extender is not None:
            last_start = math.log(self.breaks[-1]) + self.log_psi[-1]
            if last_start > log_x:
                return
            self.extender(self)
        if math.log(self.horizon) + self.log_psi[-1] < log_x:
            raise HorizonError(f"Delta horizon insufficient for ln x = {log_x:g}")


def profile_from_brute(omega, Q_max: int, d: Optional[int] = None) -> FrequencyProfile:
    """Profile by exhaustive enumeration up to Q_max (small dimensions)."""
    omega = np.asarray(omega, dtype=float)
    if d is None:
        nz = np.flatnonzero(omega != 0.0)
        d = int(nz[-1]) + 1 if len(nz) else 0
    vals, ks = psi_brute_table(omega[:d], Q_max)
    breaks, log_psi, kk = [], [], []
    for Q in range(1, Q_max + 1):
        lv = math.log(vals[Q - 1])
        if not log_psi or lv > log_psi[-1] + 1e-15:
            breaks.append(Q)
            log_psi.append(lv)
            kk.append(ks[Q - 1] + (0,) * (len(omega) - d))
    return FrequencyProfile(omega=omega, d=d, breaks=breaks, log_psi=log_psi,
                            ks=kk, horizon=float(Q_max), label="brute")


def _cf_breakpoints(omega, convergents, d):
    """Staircase of (1, w) for w > 0 from convergents of w.

    The feasibility map q -> q + round(q w) is strictly increasing, so the
    minimizing k over |k|_1 <= Q is the convergent (p_j, -q_j) with the
    largest p_j + q_j <= Q; at Q = 1 the candidates are (1,0) and (0,1).
    """
    pad = (0,) * (len(omega) - 2)
    w = float(omega[1])
    if w < 1.0:
        breaks, log_psi = [1], [-math.log(w)]
        ks = [(0, -1) + pad]
    else:
        breaks, log_psi = [1], [0.0]
        ks = [(-1, 0) + pad]
    for (p, q, e) in convergents:
        if e is None or e == 0.0:
            break
        Qb = p + q
        lv = -math.log(abs(e))
        if lv > log_psi[-1] + 1e-15 and Qb > breaks[-1]:
            breaks.append(Qb)
            log_psi.append(lv)
            k = (p, -q) if (-p, q) > (p, -q) else (-p, q)
            ks.append(tuple(k) + pad)
    return breaks, log_psi, ks


def profile_from_cf(omega, n_convergents: int = 64, d: Optional[int] = None,
                    label: str = "cf") -> FrequencyProfile:
    """Exact profile for omega = (1, w, 0...) via continued fractions of w."""
    omega = np.asarray(omega, dtype=float)
    if abs(omega[0] - 1.0) > 1e-15 or omega[1] <= 0.0:
        raise UnsupportedError("cf profile requires omega = (1, w) with w > 0")
    if d is None:
        nz = np.flatnonzero(omega != 0.0)
        d = int(nz[-1]) + 1 if len(nz) else 0
    if d != 2:
        raise UnsupportedError("cf profile is exact only for d = 2")
    conv = convergents_of_float(float(omega[1]))[: n_convergents]
    breaks, log_psi, ks = _cf_breakpoints(omega, conv, d)
    return FrequencyProfile(omega=omega, d=d, breaks=breaks, log_psi=log_psi,
                            ks=ks, horizon=float(breaks[-1] + conv[-1][1]),
                            convergents=conv, label=label)


def golden_profile(n: int = 2) -> FrequencyProfile:
    """omega = (1, phi, 0...) with exact Fibonacci convergents, lazy horizon.

    |F_{j+1} phi - F_{j+2}| = phi^-(j+1) exactly, so the staircase extends to
    arbitrary Q without precision loss.
    """
    omega = np.array([1.0, GOLDEN] + [0.0] * (n - 2))
    pad = (0,) * (n - 2)
    state = {"p": 2, "q": 1, "j": 1}  # convergent p/q = F_{j+3}/F_{j+2}
    log_phi = math.log(GOLDEN)

    def extender(fp: FrequencyProfile):
        # e_j = q_j phi - p_j = (-1)^j phi^-(j+1), |k|_1 at the jump = p_j+q_j
        for _ in range(8):
            p, q, j = state["p"], state["q"], state["j"]
            fp.convergents.append((p, q, (-1.0) ** j * GOLDEN ** (-(j + 1))))
            Qb = p + q
            lv = (j + 1) * log_phi
            if lv > fp.log_psi[-1] + 1e-15 and Qb > fp.breaks[-1]:
                fp.breaks.append(Qb)
                fp.log_psi.append(lv)
                fp.ks.append((-p, q) + pad)
            state["p"], state["q"], state["j"] = p + q, p, j + 1
        fp.horizon = float(fp.breaks[-1] + state["q"])

    conv0 = [(1, 1, GOLDEN - 1.0)]  # j=0 convergent 1/1, e = phi - 1 = 1/phi
    breaks, log_psi, ks = [1], [0.0], [(-1,) + (0,) * (n - 1)]
    breaks.append(2)
    log_psi.append(log_phi)
    ks.append((-1, 1) + pad)
    fp = FrequencyProfile(omega=omega, d=2, breaks=breaks, log_psi=log_psi,
                          ks=ks, horizon=3.0, extender=extender,
                          convergents=conv0, label="golden")
    extender(fp)
    return fp


def profile_linf(fp: FrequencyProfile) -> FrequencyProfile:
    """The companion staircase over |k|_inf <= Q (d = 2 only).

    Breakpoints move from |k|_1 = p_j + q_j to |k|_inf = max(p_j, q_j); this
    is the convention under which the classical convergent sandwiches
    Delta(q_j) ~ 1/eps_j are exact, used by the diffusion constructions.
    """
    if fp.convergents is None or fp.d != 2:
        raise UnsupportedError("linf profile needs convergents and d = 2")
    w = float(fp.omega[1])
    breaks, log_psi = [1], [-math.log(w) if w < 1.0 else 0.0]
    pad = (0,) * (len(fp.omega) - 2)
    ks = [((0, -1) if w < 1.0 else (-1, 0)) + pad]
    for (p, q, e) in fp.convergents:
        if e is None or e == 0.0:
            break
        Qb = max(abs(p), q)
        lv = -math.log(abs(e))
        if lv <= log_psi[-1] + 1e-15:
            continue
        k = (p, -q) if (-p, q) > (p, -q) else (-p, q)
        if Qb == breaks[-1]:
            log_psi[-1] = lv           # sharper value at the same ball size
            ks[-1] = tuple(k) + pad
        elif Qb > breaks[-1]:
            breaks.append(Qb)
            log_psi.append(lv)
            ks.append(tuple(k) + pad)
    out = FrequencyProfile(omega=fp.omega, d=fp.d, breaks=breaks,
                           log_psi=log_psi, ks=ks,
                           horizon=float(breaks[-1] + fp.convergents[-1][1]),
                           convergents=fp.convergents, label=fp.label + "-linf")
    if fp.extender is not None:
        def ext(self):
            fp.extender(fp)
            pad2 = (0,) * (len(self.omega) - 2)
            for (p, q, e) in fp.convergents:
                if e is None or e == 0.0:
                    continue
                Qb = max(abs(p), q)
                lv = -math.log(abs(e))
                if lv > self.log_psi[-1] + 1e-15 and Qb > self.breaks[-1]:
                    self.breaks.append(Qb)
                    self.log_psi.append(lv)
                    k = (p, -q) if (-p, q) > (p, -q) else (-p, q)
                    self.ks.append(tuple(k) + pad2)
            self.horizon = float(self.breaks[-1] + fp.convergents[-1][1])
        out.extender = ext
    return out


def profile_from_prescribed(convergents, n: int = 2, label: str = "prescribed",
                            omega_value: Optional[float] = None) -> FrequencyProfile:
    """Profile from externally constructed convergents (p, q, e)."""
    w = omega_value if omega_value is not None else convergents[-1][0] / convergents[-1][1]
    omega = np.array([1.0, w] + [0.0] * (n - 2))
    breaks, log_psi, ks = _cf_breakpoints(omega, convergents, 2)
    last_q = convergents[-1][1]
    return FrequencyProfile(omega=omega, d=2, breaks=breaks, log_psi=log_psi,
                            ks=ks, horizon=float(breaks[-1] + last_q),
                            convergents=list(convergents), label=label)


def named_profile(name: str, n: int = 2, n_convergents: int = 48) -> FrequencyProfile:
    if name == "golden":
        return golden_profile(n)
    w = named_value(name)
    omega = np.array([1.0, w] + [0.0] * (n - 2))
    return profile_from_cf(omega, n_convergents=n_convergents, d=2, label=name)


# ---------------------------------------------------------------------------
# rational approximations
# ---------------------------------------------------------------------------

@dataclass
class DirichletResult:
    pv: PeriodicVector
    pivot: int
    err: float          # |omega - v|_1
    err_bound: float    # (n-1)/(TQ)
    T_bounds: tuple     # (|omega|^-1, n |omega|^-1 Q^(n-1))


def dirichlet_approx(omega, Q: float, q_budget: int = 10**7) -> DirichletResult:
    """T-periodic v with |omega - v| <= (n-1)/(TQ), T <= n|omega|^-1 Q^{n-1}.

    Factors out a pivot component; the first component is preferred when the
    certified bounds hold for it, otherwise the max-abs component is used.
    """
    omega = np.asarray(omega, dtype=float)
    n = len(omega)
    if np.all(omega == 0.0):
        raise ParameterError("dirichlet_approx requires omega != 0")
    q_cap = int(math.ceil(Q ** (n - 1)))
    if q_cap > q_budget:
        raise BudgetError(f"denominator scan {q_cap} exceeds budget")

    def attempt(pivot):
        # best q in range (smallest max-norm error; smallest q on ties);
        # Dirichlet's box principle guarantees error <= 1/Q somewhere in range
        a = omega[pivot]
        if a == 0.0:
            return None
        x = np.delete(omega, pivot) / a
        best = None
        for q in range(1, q_cap + 1):
            p = np.round(q * x)
            err = float(np.max(np.abs(q * x - p))) if len(x) else 0.0
            if best is None or err < best[0] - 1e-15:
                best = (err, q, p)
        err, q, p = best
        if err > 1.0 / Q + 1e-12:
            return None
        v = np.empty(n)
        v[pivot] = a
        v[np.arange(n) != pivot] = a * p / q
        tv = np.empty(n)
        tv[pivot] = q * np.sign(a)
        tv[np.arange(n) != pivot] = p * np.sign(a)
        g = 0
        for m in tv:
            g = math.gcd(g, int(round(m)))
        return PeriodicVector(v=tuple(v), T=q / abs(a) / g,
                              Tv=tuple(int(round(m)) // g for m in tv))

    norm1 = float(np.sum(np.abs(omega)))
    norm_inf = float(np.max(np.abs(omega)))
    pivot_max = int(np.argmax(np.abs(omega)))
    order = [0, pivot_max] if (omega[0] != 0.0 and pivot_max != 0) else [pivot_max]
    last = None
    for pivot in order:
        pv = attempt(pivot)
        if pv is None:
            continue
        err = float(np.sum(np.abs(omega - np.asarray(pv.v))))
        bound = (n - 1) / (pv.T * Q)
        # T-bound in the |omega|_inf form (which the pivot construction
        # actually delivers; the l1 statement follows from |w|_1 <= n|w|_inf)
        T_hi = n / norm_inf * Q ** (n - 1)
        res = DirichletResult(pv=pv, pivot=pivot, err=err, err_bound=bound,
                              T_bounds=(1.0 / norm1, T_hi))
        last = res
        if err <= bound + 1e-15 and 1.0 / norm1 - 1e-12 <= pv.T <= T_hi + 1e-12:
            return res
    if last is not None:
        return last
    raise BudgetError("no Dirichlet approximation found within the scan")


@dataclass
class ZBasisResult:
    vectors: list       # n PeriodicVector
    det: int
    c_err: float        # max over j of q_j * Q * |omega - v_j|
    c_den: float        # max over j of q_j / Psi(Q)


def zbasis_approx(fp: FrequencyProfile, Q: float, q_budget: int = 10**6) -> ZBasisResult:
    """n periodic vectors whose integer vectors T_j v_j form a Z-basis.

    n = 2: consecutive convergents of omega_bar (exact, unimodular by the
    classical recurrence).  n = 3: bounded brute force.  n >= 4 is not
    implemented (BF13 gap).
    """
    omega = fp.omega
    n = len(omega)
    if n == 2:
        return _zbasis_convergents(fp, Q)
    if n == 3 and fp.d == 3:
        return _zbasis_brute3(omega, Q, q_budget)
    if fp.d == 2:
        base = _zbasis_convergents(fp, Q)
        return base
    raise UnsupportedError("Z-basis approximations implemented for n <= 3 only")


def _zbasis_convergents(fp: FrequencyProfile, Q: float) -> ZBasisResult:
    if fp.convergents is None:
        raise UnsupportedError("profile carries no convergents")
    psi_q = fp.psi(Q)[0]
    while fp.extender is not None and fp.convergents[-1][1] <= psi_q:
        fp.extender(fp)
    pairs = [(p, q) for (p, q, _e) in fp.convergents]
    w = float(fp.omega[1])
    # largest consecutive pair with both denominators <= Psi(Q)
    j = max(i for i in range(len(pairs) - 1) if pairs[i + 1][1] <= psi_q) \
        if any(pairs[i + 1][1] <= psi_q for i in range(len(pairs) - 1)) else 0
    sel = [pairs[j], pairs[j + 1]] if j + 1 < len(pairs) else [pairs[j - 1], pairs[j]]
    vecs, cerr, cden = [], 0.0, 0.0
    for (p, q) in sel:
        pv = periodic_from_rational((q, p), q)
        vecs.append(pv)
        cerr = max(cerr, q * Q * abs(w - p / q))
        cden = max(cden, q / psi_q)
    det = sel[0][1] * sel[1][0] - sel[0][0] * sel[1][1]
    if abs(det) != 1:
        raise UnsupportedError(f"consecutive convergents not unimodular: det={det}")
    return ZBasisResult(vectors=vecs, det=int(det), c_err=cerr, c_den=cden)


def _zbasis_brute3(omega, Q, q_budget):
    w = omega / omega[0]
    cands = []
    for q in range(1, min(int(q_budget), 4000) + 1):
        p = np.round(q * w[1:])
        err = float(np.max(np.abs(q * w[1:] - p)))
        cands.append((err * Q * q, q, tuple(int(x) for x in p)))
    cands.sort()
    top = cands[:40]
    for trip in itertools.combinations(top, 3):
        M = np.array([[q, pk[0], pk[1]] for (_s, q, pk) in trip], dtype=object)
        det = int(round(float(np.linalg.det(np.asarray(M, dtype=float)))))
        if abs(det) == 1:
            vecs = [periodic_from_rational((q, pk[0], pk[1]), q) for (_s, q, pk) in trip]
            cerr = max(q * Q * knorm(np.asarray(v.v) - omega / omega[0])
                       for (_s, q, pk), v in zip(trip, vecs))
            return ZBasisResult(vectors=vecs, det=det, c_err=float(cerr), c_den=math.nan)
    raise BudgetError("no unimodular triple found within budget (BF13 gap)")


# ---------------------------------------------------------------------------
# the dyadic Bruno-Russmann test
# ---------------------------------------------------------------------------

@dataclass
class BRReport:
    verdict: str                # ConvergedWithinBudget | DivergenceDiagnosed | Inconclusive
    Q0: Optional[float]
    sigmas: np.ndarray
    Q_list: np.ndarray
    partial_sums: np.ndarray
    budget: float               # ln 2 / (4n + 2)
    total_with_tail: float
    tail_ratio: float           # late-term ratio sigma_{i+1}/sigma_i
    tail_slope: float           # d ln sigma / d i over the last half
    product_lower: float        # prod (1 - sigma_i)^(2n+1) over computed terms
    n: int
    s: float
    eta: float
    c2: float
    notes: str = ""


def _dyadic_sigmas(sp: ScaleProfile, fp: FrequencyProfile, Q0: float, s: float,
                   eta: float, i_max: int, c2: float):
    """sigma_i = C^-1(c2 (1+eta)^-1 s Q_i), Q_i = Delta*(2^i Delta(Q0))."""
    scale = c2 * s / (1.0 + eta)
    log_d0 = fp.log_delta(float(Q0))
    Qs, sigmas = [], []
    for i in range(i_max + 1):
        Qi = float(Q0) if i == 0 else fp.delta_star(log_d0 + i * math.log(2.0), log=True)
        y = scale * Qi
        if y < 1.0:
            sigmas.append(sp.sigma_bar)
        else:
            sigmas.append(sp.cauchy_c_inv(y))
        Qs.append(Qi)
        if sigmas[-1] < 1e-15:
            break
    return np.array(Qs), np.array(sigmas)


def _sum_with_tail(sigmas: np.ndarray):
    total = float(np.sum(sigmas))
    if len(sigmas) < 6:
        return total, math.inf, 0.0
    r = sigmas[1:] / sigmas[:-1]
    tail_r = float(np.max(r[-4:]))
    tail = sigmas[-1] * tail_r / (1.0 - tail_r) if tail_r < 1.0 else math.inf
    half = len(sigmas) // 2
    slope = float(np.polyfit(np.arange(half, len(sigmas)),
                             np.log(sigmas[half:]), 1)[0])
    return total + tail, tail_r, slope


def br_test(sp: ScaleProfile, fp: FrequencyProfile, s: float = 1.0,
            eta: float = 0.0, n: int = 2, i_max: int = 30, c2: float = 1.0,
            Q0_cap: float = 1e9) -> BRReport:
    """Dyadic convergence test for the arithmetic condition.

    Searches the minimal Q0 >= n+2 with
        sigma_0 + sum_{i>=1} sigma_i <= ln(2)/(4n+2),
    tail-extrapolated beyond i_max.  Geometrically decaying sigma_i yield
    ConvergedWithinBudget; sigma_i ~ 1/i (partial sums ~ ln i) yield
    DivergenceDiagnosed.
    """
    budget = math.log(2.0) / (4.0 * n + 2.0)

    def total(Q0):
        _, sig = _dyadic_sigmas(sp, fp, Q0, s, eta, i_max, c2)
        return _sum_with_tail(sig)

    lo = n + 2
    t_lo = total(lo)
    if t_lo[0] <= budget:
        Q0 = float(lo)
    else:
        hi = lo
        while total(hi)[0] > budget and hi < Q0_cap:
            hi *= 2
        if hi >= Q0_cap:
            Qs, sig = _dyadic_sigmas(sp, fp, lo, s, eta, i_max, c2)
            tot, tail_r, slope = _sum_with_tail(sig)
            psums = np.cumsum(sig)
            verdict = "DivergenceDiagnosed" if slope > -0.05 or not math.isfinite(tot) \
                else "Inconclusive"
            prod = float(np.exp((2 * n + 1) * np.sum(np.log1p(-sig)))) \
                if np.all(sig < 1.0) else 0.0
            return BRReport(verdict=verdict, Q0=None, sigmas=sig, Q_list=Qs,
                            partial_sums=psums, budget=budget,
                            total_with_tail=tot, tail_ratio=tail_r,
                            tail_slope=slope, product_lower=prod, n=n, s=s,
                            eta=eta, c2=c2,
                            notes=f"no Q0 <= {Q0_cap:g} meets the budget")
        a, b = hi // 2, hi
        while b - a > 1:
            mid = (a + b) // 2
            if total(mid)[0] <= budget:
                b = mid
            else:
                a = mid
        Q0 = float(b)

    Qs, sig = _dyadic_sigmas(sp, fp, Q0, s, eta, i_max, c2)
    tot, tail_r, slope = _sum_with_tail(sig)
    psums = np.cumsum(sig)
    prod = float(np.exp((2 * n + 1) * np.sum(np.log1p(-sig))))
    return BRReport(verdict="ConvergedWithinBudget", Q0=Q0, sigmas=sig,
                    Q_list=Qs, partial_sums=psums, budget=budget,
                    total_with_tail=tot, tail_ratio=tail_r, tail_slope=slope,
                    product_lower=prod, n=n, s=s, eta=eta, c2=c2)


# ---------------------------------------------------------------------------
# Liouville-type probes and constructions
# ---------------------------------------------------------------------------

def liouville_probe(sp: ScaleProfile, fp: FrequencyProfile, c_grid,
                    Q_list=None) -> dict:
    """Sampled ln Psi_omega(Q) / Omega(cQ) per c; a diagnostic, not a limit.

    Ratios staying bounded below along a subsequence indicate the
    destruction-condition regime; decay to zero is consistent with the
    cohomological-regularity condition.
    """
    if Q_list is None:
        Q_list = [float(b) for b in fp.breaks[1:]]
    out = {"Q": np.array(Q_list, dtype=float), "ratios": {}, "notes": []}
    for c in c_grid:
        vals = []
        for Q in Q_list:
            num = fp.log_psi_at(Q)
            try:
                den = sp.omega_value(c * Q)
                vals.append(num / den if den > 0 else math.nan)
            except HorizonError:
                vals.append(math.nan)
                out["notes"].append(f"Omega horizon reached at cQ={c*Q:g}")
        arr = np.array(vals)
        fin = arr[np.isfinite(arr)]
        out["ratios"][c] = arr
        out.setdefault("running_max", {})[c] = float(np.max(fin)) if len(fin) else math.nan
        out.setdefault("running_min", {})[c] = float(np.min(fin)) if len(fin) else math.nan
    return out


def liouville_convergents(sp: ScaleProfile, s0: float, n_steps: int,
                          growth=None):
    """Convergents with q_{j+1} = ceil(exp(Omega(4 q_j s0))) (clamped up by
    the CF recurrence), which force the exponential-Liouville condition."""
    import mpmath

    p0, q0, p1, q1 = 1, 0, 0, 1  # start from x in (0,1): a0 = 0
    terms = []
    pq = [(p1, q1)]
    for _ in range(n_steps):
        # q_{j+1} >= exp(Omega(4 q_j s0)) forces the exponential-Liouville
        # condition; growth is doubly exponential, so the Omega horizon ends
        # the construction after a handful of steps.
        try:
            target = growth(q1) if growth is not None else \
                int(math.ceil(math.exp(sp.omega_value(4.0 * q1 * s0)))) + 1
        except (HorizonError, OverflowError):
            break
        a = max(1, int(math.ceil((target - q0) / q1)))
        terms.append(a)
        p0, p1 = p1, a * p1 + p0
        q0, q1 = q1, a * q1 + q0
        pq.append((p1, q1))
    if not terms:
        raise HorizonError("Omega horizon too small for even one Liouville step")
    # a generic all-ones tail keeps the value irrational so every reported
    # residual satisfies the strict convergent inequalities
    mpmath.mp.dps = max(40, 2 * len(str(q1)) + 40)
    x = mpmath.mpf(0)
    for a in reversed(terms + [1] * 64):
        x = 1 / (a + x)
    conv = []
    for (p, q) in pq[:-1]:
        e = float(q * x - p)
        conv.append((p, q, e))
    conv.append((pq[-1][0], pq[-1][1], None))
    return conv[1:], float(x)
