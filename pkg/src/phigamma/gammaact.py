"""The cyclotomic Gamma-action on the level tower.

Gamma = Z_p^x is presented by two generators: the Teichmuller torsion part
omega(g0) (g0 the least primitive root mod p) and the pro-p generator 1+p.
A group element (t, c) has cyclotomic character chi = omega(g0)^t (1+p)^c,
and acts on every level by T_m -> (1+T_m)^chi - 1, expanded as the p-adic
binomial series; this commutes with phi on the nose.  Binomial
coefficients of a p-adic exponent are computed from an integer
representative carrying enough extra precision to absorb val_p(l!).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

from phigamma.errors import NotContracting, ValidationError
from phigamma.periodring import LevelSeries, RingContext, _min_hi


@lru_cache(maxsize=None)
def least_primitive_root(p: int) -> int:
    for g in range(2, p):
        seen, x = set(), 1
        for _ in range(p - 1):
            x = x * g % p
            seen.add(x)
        if len(seen) == p - 1:
            return g
    raise ValidationError(f"no primitive root mod {p}?")


@lru_cache(maxsize=None)
def teichmuller_char(p: int, g: int, prec: int) -> int:
    """omega(g) mod p^prec by Hensel iteration g -> g^(p^n)."""
    return pow(g % p, p ** (prec - 1), p**prec)


@dataclass(frozen=True)
class GammaElt:
    """chi(gamma) = omega(g0)^t * (1+p)^c; c is an exact integer (a truncated
    p-adic exponent is passed as its canonical representative)."""

    p: int
    t: int = 0
    c: int = 0

    def __post_init__(self):
        object.__setattr__(self, "t", self.t % (self.p - 1))

    @classmethod
    def identity(cls, p: int) -> "GammaElt":
        return cls(p, 0, 0)

    def is_identity(self) -> bool:
        return self.t == 0 and self.c == 0

    def compose(self, other: "GammaElt") -> "GammaElt":
        return GammaElt(self.p, self.t + other.t, self.c + other.c)

    def inverse(self) -> "GammaElt":
        return GammaElt(self.p, -self.t, -self.c)

    def power(self, k: int) -> "GammaElt":
        return GammaElt(self.p, self.t * k, self.c * k)

    def chi(self, prec: int) -> int:
        """chi(gamma) mod p^prec, as a canonical nonnegative representative."""
        q = self.p**prec
        w = teichmuller_char(self.p, least_primitive_root(self.p), prec)
        return pow(w, self.t, q) * pow((1 + self.p) % q, self.c, q) % q

    def n_of(self):
        """val_p(chi - 1): 0 on the torsion part, 1 + val_p(c) on the pro-p
        part (p odd), +inf for the identity."""
        if self.t != 0:
            return 0
        if self.c == 0:
            return math.inf
        c, v = abs(self.c), 0
        while c % self.p == 0:
            c //= self.p
            v += 1
        return 1 + v

    def to_json(self) -> dict:
        return {"t": self.t, "c": {"kind": "int", "value": self.c}}

    @classmethod
    def from_json(cls, p: int, data: dict) -> "GammaElt":
        c = data["c"]
        return cls(p, int(data["t"]), int(c["value"]) if isinstance(c, dict) else int(c))


def chi(gamma: GammaElt, prec: int) -> int:
    return gamma.chi(prec)


def n_of(gamma: GammaElt):
    return gamma.n_of()


def _binomial_excess(span: int, p: int) -> int:
    # val_p(l!) <= (l-1)/(p-1) for l <= span
    return max(span - 1, 0) // (p - 1) + 1


def binomial_row(gamma: GammaElt, a: int, L: int) -> list:
    """[C(chi, l) mod p^a for l = 0..L], computed incrementally mod
    p^(a + val_p(L!) + 1); exact because C(chi, l) depends on chi only to
    that much extra precision, and the p-part of l! divides the running
    numerator product exactly."""
    p = gamma.p
    big = a + _binomial_excess(L + 1, p) + 1
    P = p**big
    q = p**a
    rep = gamma.chi(big)
    out = [1 % q]
    run = 1
    vfac = 0
    ufac = 1
    for l in range(1, L + 1):
        run = run * ((rep - (l - 1)) % P) % P
        e, u = 0, l
        while u % p == 0:
            u //= p
            e += 1
        vfac += e
        ufac = ufac * u % P
        c = (run // p**vfac) * pow(ufac, -1, P) % q
        out.append(c)
    return out


class _GammaTable:
    """Cached powers of B = (1+T)^chi - 1 for one group element."""

    def __init__(self, ctx: RingContext, gamma: GammaElt, a_eff: int):
        self.ctx = ctx
        self.gamma = gamma
        self.a_eff = a_eff
        self.hi = 0
        self._pow = {}
        self._inv = None

    def _build(self, hi: int):
        ctx = self.ctx
        row = binomial_row(self.gamma, self.a_eff, hi)
        terms = {l: row[l] for l in range(1, hi + 1)}
        one = LevelSeries.one(ctx, 0, self.a_eff)
        B = LevelSeries.from_terms(ctx, terms, 0, self.a_eff, hi=hi + 1)
        self._pow = {0: one, 1: B}
        self._inv = None
        self.hi = hi

    def power(self, j: int, hi: int) -> LevelSeries:
        if not self._pow or hi > self.hi:
            self._build(max(hi, self.ctx.window_hi))
        if j >= 0:
            top = max(k for k in self._pow if k >= 0)
            while top < j:
                self._pow[top + 1] = self._pow[top].mul(self._pow[1]).with_ledger(hi=self.hi + 1)
                top += 1
            return self._pow[j]
        if self._inv is None:
            self._inv = self._pow[1].inverse()
            self._pow[-1] = self._inv
        bot = min(self._pow)
        while bot > j:
            self._pow[bot - 1] = self._pow[bot].mul(self._pow[-1]).with_ledger(hi=self.hi + 1)
            bot -= 1
        return self._pow[j]


def act(gamma: GammaElt, x: LevelSeries, hi: Optional[int] = None) -> LevelSeries:
    """Semilinear Gamma-action: substitute T_m -> (1+T_m)^chi - 1.

    Degree-triangular with unit diagonal chi^j, so the window and the
    p-adic ledger pass through unchanged; an exact input acquires the
    context window (the binomial series is infinite).
    """
    import numpy as np

    ctx = x.ctx
    if gamma.is_identity():
        return x if hi is None else x.with_ledger(hi=hi)
    hi_out = _min_hi(x.hi, hi)
    if hi_out is None:
        # exact input: truncate one level-0 window above the data; the
        # binomial tail above that is jointly discarded by every consumer
        top = max(x.support(), default=x.lo)
        hi_out = min(ctx.hi_at(x.level), max(top, 0) + ctx.window_hi + 1)
    table = ctx.cache(("gamma", gamma.t, gamma.c, x.a_eff), lambda: _GammaTable(ctx, gamma, x.a_eff))
    need = hi_out - min(x.lo, 0) + 2
    supp = x.support()
    if not supp or hi_out <= x.lo:
        return LevelSeries.zero(ctx, x.level, x.a_eff, hi=hi_out)
    # the action is degree-triangular with unit diagonal: out floor = x floor
    lo_out = supp[0]
    acc = np.zeros((hi_out - lo_out, ctx.ring.nfactors), dtype=np.int64)
    for j in supp:
        pw = table.power(j, need)
        c = np.array(x.coeff(j), dtype=np.int64)
        a0 = max(pw.lo, lo_out)
        a1 = min(pw.lo + len(pw.coeffs), hi_out)
        if a1 <= a0:
            continue
        acc[a0 - lo_out : a1 - lo_out] += pw.coeffs[a0 - pw.lo : a1 - pw.lo] * c
    return LevelSeries(ctx, x.level, x.a_eff, lo_out, hi_out, acc)


def act_matrix(gamma: GammaElt, mat, hi: Optional[int] = None):
    return [[act(gamma, entry, hi) for entry in row] for row in mat]


def gamma_power_series(gamma: GammaElt, a: int, x: LevelSeries, k: int = 0,
                       max_terms: int = 64) -> LevelSeries:
    """gamma^(p^k a)(x) = sum_n C(a, n) (gamma^(p^k) - 1)^n (x).

    Valid when gamma^(p^k) - 1 is topologically nilpotent on x's layer; the
    series is truncated once a summand vanishes at the ledger, and a failure
    to vanish within max_terms raises NotContracting.  For a >= 0 this
    agrees with the integer-power action.
    """
    g = gamma.power(gamma.p**k)
    excess = _binomial_excess(max_terms, gamma.p)
    big = gamma.p ** (x.a_eff + excess)
    rep = a % big
    if rep < max_terms:
        rep += big
    term = x
    out = x
    for n in range(1, max_terms + 1):
        term = act(g, term).sub(term)  # (gamma^(p^k) - 1)^n (x)
        if term.is_zero():
            return out
        out = out.add(term.scale(math.comb(rep, n) % gamma.p**x.a_eff))
    raise NotContracting(f"(gamma^(p^{k}) - 1) did not contract within {max_terms} terms")
