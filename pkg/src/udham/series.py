"""Truncated Fourier-Taylor series on T^n x (action ball) x (parameter ball).

The common currency of every normal-form computation: finite sums

    f(theta, I, w) = sum c_{k,m,w} e^{2 pi i k.theta} I^m w^w'

with |k|_inf <= K, |m| <= D_I, |w'| <= D_w.  Coefficients are held per
action/parameter monomial as dense (2K+1)^n complex arrays, so angle
convolutions run through zero-padded FFTs (exact linear convolution up to
roundoff, then truncation back to K with a discarded-mass monitor).

Torus convention: T^n = R^n/Z^n with basis e^{2 pi i k.theta}; every
frequency-dependent constant is routed through rho(k) = 2 pi |k|_1.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .weights import C_NORM, ParameterError, ScaleProfile

TWO_PI = 2.0 * math.pi


class DomainMismatch(ValueError):
    """Incompatible dimensions between two series."""


class ConsistencyError(ValueError):
    """A resonant mode survived where the construction requires none."""


@dataclass
class FTSeries:
    """Truncated Fourier-Taylor series; immutable by convention.

    blocks maps (m, w) exponent tuples to complex arrays of shape
    (2K+1,)*n, mode k stored at index k + K per axis.
    """

    n: int
    K: int
    D_I: int
    D_w: int
    n_w: int = 0
    s: float = 1.0
    delta: float = 1.0
    h: float = 0.0
    real: bool = True
    blocks: dict = field(default_factory=dict)

    # -- construction ---------------------------------------------------------

    @classmethod
    def zeros(cls, n, K, D_I=0, D_w=0, n_w=0, **kw):
        return cls(n=n, K=K, D_I=D_I, D_w=D_w, n_w=n_w, **kw)

    def _shape(self):
        return (2 * self.K + 1,) * self.n

    def block(self, m=None, w=None) -> np.ndarray:
        m = tuple(m) if m is not None else (0,) * self.n
        w = tuple(w) if w is not None else (0,) * self.n_w
        key = (m, w)
        if key not in self.blocks:
            self.blocks[key] = np.zeros(self._shape(), dtype=complex)
        return self.blocks[key]

    def set_mode(self, k, value, m=None, w=None):
        b = self.block(m, w)
        b[tuple(np.asarray(k) + self.K)] = value
        return self

    def get_mode(self, k, m=None, w=None) -> complex:
        m = tuple(m) if m is not None else (0,) * self.n
        w = tuple(w) if w is not None else (0,) * self.n_w
        key = (m, w)
        if key not in self.blocks:
            return 0.0 + 0.0j
        return complex(self.blocks[key][tuple(np.asarray(k) + self.K)])

    def add_cos(self, k, amp=1.0, m=None, w=None):
        """amp * cos(2 pi k.theta) * I^m w^w."""
        self.set_mode(k, self.get_mode(k, m, w) + amp / 2.0, m, w)
        self.set_mode([-x for x in k], self.get_mode([-x for x in k], m, w) + amp / 2.0, m, w)
        return self

    def add_sin(self, k, amp=1.0, m=None, w=None):
        self.set_mode(k, self.get_mode(k, m, w) + amp / 2.0j, m, w)
        self.set_mode([-x for x in k], self.get_mode([-x for x in k], m, w) - amp / 2.0j, m, w)
        return self

    def copy(self) -> "FTSeries":
        out = FTSeries(n=self.n, K=self.K, D_I=self.D_I, D_w=self.D_w,
                       n_w=self.n_w, s=self.s, delta=self.delta, h=self.h,
                       real=self.real)
        out.blocks = {k: v.copy() for k, v in self.blocks.items()}
        return out

    def prune(self, tol=0.0) -> "FTSeries":
        self.blocks = {k: v for k, v in self.blocks.items()
                       if np.max(np.abs(v)) > tol}
        return self

    def prune_entries(self, floor: float) -> "FTSeries":
        """Zero every coefficient below the absolute floor (noise control)."""
        for arr in self.blocks.values():
            arr[np.abs(arr) < floor] = 0.0
        return self.prune(0.0)

    # -- basic queries ---------------------------------------------------------

    def _kgrid(self):
        r = np.arange(-self.K, self.K + 1)
        return np.stack(np.meshgrid(*([r] * self.n), indexing="ij"), axis=-1)

    def coeff_norm1(self) -> float:
        return float(sum(np.sum(np.abs(v)) for v in self.blocks.values()))

    def sup_coeff(self) -> float:
        return float(max((np.max(np.abs(v)) for v in self.blocks.values()), default=0.0))

    def terms(self):
        """Yield (k, m, w, coeff) over nonzero coefficients."""
        for (m, w), arr in sorted(self.blocks.items()):
            nz = np.argwhere(np.abs(arr) > 0)
            for idx in nz:
                k = tuple(int(i) - self.K for i in idx)
                yield k, m, w, complex(arr[tuple(idx)])

    def check_reality(self, tol=1e-14) -> float:
        """Max |c_{-k} - conj(c_k)| over blocks."""
        worst = 0.0
        for arr in self.blocks.values():
            flipped = np.conj(arr[(slice(None, None, -1),) * self.n])
            worst = max(worst, float(np.max(np.abs(arr - flipped))))
        return worst

    # -- linear structure ------------------------------------------------------

    def _check_compat(self, other):
        if self.n != other.n or self.n_w != other.n_w:
            raise DomainMismatch("series dimensions differ")

    def __add__(self, other):
        return self._axpy(other, 1.0)

    def __sub__(self, other):
        return self._axpy(other, -1.0)

    def _axpy(self, other, a):
        self._check_compat(other)
        K = max(self.K, other.K)
        out = FTSeries(n=self.n, K=K, D_I=max(self.D_I, other.D_I),
                       D_w=max(self.D_w, other.D_w), n_w=self.n_w, s=min(self.s, other.s),
                       delta=min(self.delta, other.delta), h=max(self.h, other.h),
                       real=self.real and other.real)
        for src, fac in ((self, 1.0), (other, a)):
            pad = K - src.K
            for key, arr in src.blocks.items():
                tgt = out.block(*key)
                sl = (slice(pad, pad + 2 * src.K + 1),) * src.n
                tgt[sl] += fac * arr
        return out

    def __mul__(self, a):
        if isinstance(a, FTSeries):
            return product(self, a)
        out = self.copy()
        for arr in out.blocks.values():
            arr *= a
        return out

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    # -- derivatives -----------------------------------------------------------

    def dtheta(self, i) -> "FTSeries":
        """d/d theta_i; brings down 2 pi i k_i."""
        out = self.copy()
        shape = [1] * self.n
        shape[i] = 2 * self.K + 1
        mult = (TWO_PI * 1j) * np.arange(-self.K, self.K + 1).reshape(shape)
        for arr in out.blocks.values():
            arr *= mult
        return out

    def dI(self, i) -> "FTSeries":
        out = FTSeries(n=self.n, K=self.K, D_I=max(self.D_I - 1, 0), D_w=self.D_w,
                       n_w=self.n_w, s=self.s, delta=self.delta, h=self.h, real=self.real)
        for (m, w), arr in self.blocks.items():
            if m[i] >= 1:
                m2 = list(m)
                m2[i] -= 1
                out.block(tuple(m2), w)[...] += m[i] * arr
        return out

    def dw(self, i) -> "FTSeries":
        out = FTSeries(n=self.n, K=self.K, D_I=self.D_I, D_w=max(self.D_w - 1, 0),
                       n_w=self.n_w, s=self.s, delta=self.delta, h=self.h, real=self.real)
        for (m, w), arr in self.blocks.items():
            if w[i] >= 1:
                w2 = list(w)
                w2[i] -= 1
                out.block(m, tuple(w2))[...] += w[i] * arr
        return out

    def grad_theta(self):
        return [self.dtheta(i) for i in range(self.n)]

    def grad_I(self):
        return [self.dI(i) for i in range(self.n)]

    # -- evaluation --------------------------------------------------------------

    def eval_blocks(self, theta_pts) -> dict:
        """Evaluate each (m, w) angle block at arbitrary points (P, n)."""
        theta_pts = np.atleast_2d(np.asarray(theta_pts, dtype=float))
        zs = [np.exp(TWO_PI * 1j * theta_pts[:, i]) for i in range(self.n)]
        keys = list(self.blocks.keys())
        if not keys:
            return {}
        stacked = np.stack([self.blocks[k] for k in keys])
        vals = _horner(stacked, zs, self.K)
        return {k: vals[i] for i, k in enumerate(keys)}

    def eval(self, theta_pts, I=None, w=None) -> np.ndarray:
        """f(theta, I, w) at points; I and w fixed vectors (default 0)."""
        I = np.zeros(self.n) if I is None else np.asarray(I, dtype=float)
        wv = np.zeros(self.n_w) if w is None else np.asarray(w, dtype=float)
        theta_pts = np.atleast_2d(np.asarray(theta_pts, dtype=float))
        vals = self.eval_blocks(theta_pts)
        out = np.zeros(len(theta_pts), dtype=complex)
        for (m, ww), v in vals.items():
            out += v * np.prod(I ** np.array(m)) * \
                (np.prod(wv ** np.array(ww)) if self.n_w else 1.0)
        return out.real if self.real else out

    def grid_values(self, N=None) -> dict:
        """Per-block values on the uniform N^n grid via inverse FFT."""
        N = N if N is not None else 2 * self.K + 2
        if N < 2 * self.K + 1:
            raise ParameterError("grid too small for the stored bandwidth")
        out = {}
        for key, arr in self.blocks.items():
            buf = np.zeros((N,) * self.n, dtype=complex)
            idx = np.arange(-self.K, self.K + 1) % N
            buf[np.ix_(*([idx] * self.n))] = arr
            out[key] = np.fft.ifftn(buf) * N ** self.n
        return out

    # -- serialization ------------------------------------------------------------

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write("ftseries 1\n")
        buf.write(f"{self.n} {self.K} {self.D_I} {self.n_w} {self.D_w} "
                  f"{self.s!r} {self.delta!r} {self.h!r} {int(self.real)}\n")
        for k, m, w, c in self.terms():
            fields = list(k) + list(m) + list(w) + [repr(c.real), repr(c.imag)]
            buf.write(" ".join(str(x) for x in fields) + "\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "FTSeries":
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines or not lines[0].startswith("ftseries"):
            raise ParameterError("not an ftseries file")
        hdr = lines[1].split()
        n, K, D_I, n_w, D_w = (int(x) for x in hdr[:5])
        s, delta, h = (float(x) for x in hdr[5:8])
        real = bool(int(hdr[8]))
        out = cls(n=n, K=K, D_I=D_I, D_w=D_w, n_w=n_w, s=s, delta=delta, h=h, real=real)
        for ln in lines[2:]:
            parts = ln.split()
            k = tuple(int(x) for x in parts[:n])
            m = tuple(int(x) for x in parts[n:2 * n])
            w = tuple(int(x) for x in parts[2 * n:2 * n + n_w])
            re_, im_ = float(parts[-2]), float(parts[-1])
            out.set_mode(k, re_ + 1j * im_, m, w)
        return out


def _vandermonde(z, L, K):
    """V[j, p] = z_p^(j - K) built by cumulative products."""
    V = np.empty((L, len(z)), dtype=complex)
    V[0] = z ** (-K)
    for j in range(1, L):
        V[j] = V[j - 1] * z
    return V


def _horner(arr, zs, K):
    """sum_k arr[k] prod z_i^(k_i - K), vectorized over the points axis.

    The trailing len(zs) axes of arr are angle axes, leading axes are batch.
    n <= 2 goes through BLAS (Vandermonde matmul + weighted contraction);
    higher n falls back to a Horner sweep from the last axis to the first.
    """
    na = len(zs)
    L = arr.shape[-1]
    if na == 1:
        return arr @ _vandermonde(zs[0], L, K)
    if na == 2:
        V2 = _vandermonde(zs[1], L, K)
        W = (arr.reshape(-1, L) @ V2).reshape(arr.shape[:-1] + (len(zs[1]),))
        V1 = _vandermonde(zs[0], arr.shape[-2], K)
        return np.einsum("...kp,kp->...p", W, V1)
    z = zs[na - 1]
    acc = arr[..., -1:] * np.ones_like(z)
    for j in range(L - 2, -1, -1):
        acc = acc * z + arr[..., j:j + 1]
    vals = acc * z ** (-K)                      # (..., (2K+1)^(na-1), P)
    for axis in range(na - 2, -1, -1):
        z = zs[axis]
        L2 = vals.shape[-2]
        acc = vals[..., L2 - 1, :]
        for j in range(L2 - 2, -1, -1):
            acc = acc * z + vals[..., j, :]
        vals = acc * z ** (-K)
    return vals


def product(f: FTSeries, g: FTSeries, K_out: Optional[int] = None,
            D_I_out: Optional[int] = None, D_w_out: Optional[int] = None,
            report: Optional[dict] = None) -> FTSeries:
    """Coefficient product; angle part by zero-padded FFT (exact), action
    and parameter parts by exponent convolution truncated to D_I/D_w.

    report, if given, receives 'discarded_fourier' and 'discarded_action'
    l1 masses.
    """
    f._check_compat(g)
    K_full = f.K + g.K
    K_out = K_out if K_out is not None else max(f.K, g.K)
    D_I_out = D_I_out if D_I_out is not None else f.D_I + g.D_I
    D_w_out = D_w_out if D_w_out is not None else max(f.D_w, g.D_w)
    L = 2 * K_full + 1
    n = f.n

    def pad_fft(src):
        out = {}
        for key, arr in src.blocks.items():
            buf = np.zeros((L,) * n, dtype=complex)
            sl = tuple(slice(0, 2 * src.K + 1) for _ in range(n))
            buf[sl] = arr
            out[key] = np.fft.fftn(buf)
        return out

    F, G = pad_fft(f), pad_fft(g)
    acc = {}
    disc_action = 0.0
    for (m1, w1), Fh in F.items():
        for (m2, w2), Gh in G.items():
            m = tuple(a + b for a, b in zip(m1, m2))
            w = tuple(a + b for a, b in zip(w1, w2))
            if sum(w) > D_w_out:
                continue  # jet truncation: silent by design
            prod_h = Fh * Gh
            if sum(m) > D_I_out:
                disc_action += float(np.sum(np.abs(np.fft.ifftn(prod_h))))
                continue
            if (m, w) in acc:
                acc[(m, w)] += prod_h
            else:
                acc[(m, w)] = prod_h.copy()

    out = FTSeries(n=n, K=K_out, D_I=D_I_out, D_w=D_w_out, n_w=f.n_w,
                   s=min(f.s, g.s), delta=min(f.delta, g.delta),
                   h=max(f.h, g.h), real=f.real and g.real)
    disc_fourier = 0.0
    for key, hat in acc.items():
        # linear convolution: mode k sits at position k + K_full, no wrap
        full = np.fft.ifftn(hat)
        if K_out >= K_full:
            pad = K_out - K_full
            kept = np.zeros((2 * K_out + 1,) * n, dtype=complex)
            kept[(slice(pad, pad + 2 * K_full + 1),) * n] = full
            mass = 0.0
        else:
            keep = slice(K_full - K_out, K_full + K_out + 1)
            kept = full[(keep,) * n]
            mass = float(np.sum(np.abs(full)) - np.sum(np.abs(kept)))
        disc_fourier += mass
        if np.max(np.abs(kept)) > 0:
            out.block(*key)[...] = kept
    if report is not None:
        report["discarded_fourier"] = disc_fourier
        report["discarded_action"] = disc_action
    if out.real:
        for arr in out.blocks.values():
            flipped = np.conj(arr[(slice(None, None, -1),) * n])
            arr[...] = 0.5 * (arr + flipped)
    return out.prune()


def poisson_bracket(f: FTSeries, g: FTSeries, K_out: Optional[int] = None,
                    D_I_out: Optional[int] = None) -> FTSeries:
    """{f,g} = sum_i dtheta_i f dI_i g - dI_i f dtheta_i g."""
    f._check_compat(g)
    if f.D_I < 1 and g.D_I < 1:
        raise DomainMismatch("poisson bracket needs action dependence")
    K_out = K_out if K_out is not None else max(f.K, g.K)
    D_I_out = D_I_out if D_I_out is not None else max(f.D_I + g.D_I - 1, 0)
    out = None
    for i in range(f.n):
        t1 = product(f.dtheta(i), g.dI(i), K_out=K_out, D_I_out=D_I_out)
        t2 = product(f.dI(i), g.dtheta(i), K_out=K_out, D_I_out=D_I_out)
        term = t1 - t2
        out = term if out is None else out + term
    return out.prune(1e-300)


# ---------------------------------------------------------------------------
# resonant projections and the homological equation
# ---------------------------------------------------------------------------

def _resonance_mask(series: FTSeries, Tv) -> np.ndarray:
    Tv = np.asarray(Tv, dtype=np.int64)
    kg = series._kgrid()
    return kg @ Tv == 0


def average_periodic(f: FTSeries, pv) -> FTSeries:
    """[f]_v: keep modes with k.(Tv) = 0 (exact integer test); idempotent."""
    mask = _resonance_mask(f, pv.Tv)
    out = f.copy()
    for arr in out.blocks.values():
        arr[~mask] = 0.0
    return out.prune()


def average_zero_mode(f: FTSeries) -> FTSeries:
    """[f]: the theta-average."""
    out = FTSeries(n=f.n, K=f.K, D_I=f.D_I, D_w=f.D_w, n_w=f.n_w, s=f.s,
                   delta=f.delta, h=f.h, real=f.real)
    c = (f.K,) * f.n
    for key, arr in f.blocks.items():
        if arr[c] != 0:
            out.block(*key)[c] = arr[c]
    return out


def solve_homological_periodic(f: FTSeries, pv, remove_average=True,
                               tol=1e-13) -> FTSeries:
    """Y with {Y, L_v} = f - [f]_v, solved modewise: Y_k = f_k/(2 pi i k.v).

    Equals the time-average formula T int_0^1 (f-[f]_v)(theta+tTv) t dt
    coefficientwise, via int_0^1 t e^{2 pi i m t} dt = 1/(2 pi i m).
    """
    mask = _resonance_mask(f, pv.Tv)
    kg = f._kgrid()
    kdotv = (kg @ np.asarray(pv.Tv, dtype=float)) / pv.T
    out = f.copy()
    top = f.sup_coeff()
    for arr in out.blocks.values():
        if not remove_average and np.any(np.abs(arr[mask]) > tol * max(top, 1.0)):
            raise ConsistencyError("resonant amplitude present; average first")
        arr[mask] = 0.0
        arr[~mask] /= (TWO_PI * 1j) * kdotv[~mask]
    return out.prune()


def homological_integral_oracle(f: FTSeries, pv, n_t=160) -> FTSeries:
    """Direct quadrature of T int_0^1 (f - [f]_v)(theta + t T v) t dt.

    Independent check of the divisor formula: the time shift acts modewise
    as e^{2 pi i t k.Tv}, integrated by Gauss-Legendre (spectrally exact for
    the oscillation orders reachable at the stored truncation)."""
    g = f - average_periodic(f, pv)
    kg = g._kgrid()
    kTv = kg @ np.asarray(pv.Tv, dtype=float)
    ts, wts = np.polynomial.legendre.leggauss(n_t)
    ts = 0.5 * (ts + 1.0)
    wts = 0.5 * wts
    out = g.copy()
    phase = np.tensordot(np.exp(TWO_PI * 1j * np.multiply.outer(ts, kTv)),
                         wts * ts, axes=(0, 0))
    for arr in out.blocks.values():
        arr *= pv.T * phase
    return out.prune()


# ---------------------------------------------------------------------------
# norm certificates
# ---------------------------------------------------------------------------

@dataclass
class NormCertificate:
    bound: float
    s: float
    n_terms: int
    worst_term: float
    constants: dict

    def __float__(self):
        return self.bound


def norm_upper(f: FTSeries, sp: ScaleProfile, s: Optional[float] = None) -> NormCertificate:
    """Certified upper bound for |f|_{M,s} on the unit polydomain.

    Each monomial e^{2 pi i k.theta} I^m w^w has all mixed partials bounded
    by rho^|a| with rho = 2 pi |k|_1 + |m| + |w|, so its norm is at most
    c exp(Omega(4 s rho)) using (|a|+1)^2 <= 4^|a|.
    """
    s = s if s is not None else f.s
    total = 0.0
    worst = 0.0
    count = 0
    for (m, w), arr in f.blocks.items():
        nz = np.argwhere(np.abs(arr) > 0)
        if len(nz) == 0:
            continue
        k1 = np.sum(np.abs(nz - f.K), axis=1)
        rho = TWO_PI * k1 + sum(m) + sum(w)
        om = sp.omega_values(4.0 * s * rho)
        amps = np.abs(arr[tuple(nz.T)])
        terms = C_NORM * amps * np.exp(om)
        total += float(np.sum(terms))
        worst = max(worst, float(np.max(terms)))
        count += len(nz)
    return NormCertificate(bound=total, s=s, n_terms=count, worst_term=worst,
                           constants={"c": C_NORM, "freq_scale": "2pi|k|_1 + |m| + |w|"})


def decay_check(f: FTSeries, sp: ScaleProfile, s: Optional[float] = None,
                bound: Optional[float] = None) -> dict:
    """Check |f_k| <= (bound/c) exp(-Omega(2 pi s |k|_inf)) modewise."""
    s = s if s is not None else f.s
    if bound is None:
        bound = norm_upper(f, sp, s).bound
    worst_margin = math.inf
    worst_k = None
    rows = []
    agg = {}
    for (m, w), arr in f.blocks.items():
        nz = np.argwhere(np.abs(arr) > 0)
        for idx in nz:
            k = tuple(int(i) - f.K for i in idx)
            agg[k] = max(agg.get(k, 0.0), float(abs(arr[tuple(idx)])))
    for k, amp in sorted(agg.items()):
        kinf = max(abs(x) for x in k) if k else 0
        allowed = (bound / C_NORM) * math.exp(-sp.omega_value(TWO_PI * s * kinf))
        margin = math.log(allowed + 1e-300) - math.log(amp)
        rows.append((k, amp, allowed, margin))
        if margin < worst_margin:
            worst_margin, worst_k = margin, k
    return {"rows": rows, "worst_margin": worst_margin, "worst_k": worst_k,
            "passed": worst_margin >= -1e-9}
