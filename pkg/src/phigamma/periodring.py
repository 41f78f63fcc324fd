"""Characteristic-0 layer: the level tower of truncated Laurent series.

An element at level m is a Laurent polynomial over A in the variable T_m,
which stands for phi^-m(T) = [eps^(1/p^m)] - 1.  Level 0 is the imperfect
ring of the cyclotomic tower; the union over levels, at finite precision,
stands in for the perfect ring.  The representation is exact modulo
(p^a_eff, T_m^hi), with coefficients known to vanish below lo: every
operation propagates the (a_eff, window) ledger pessimistically so that an
unknown tail never masquerades as zero.

Frobenius is a relabelling T_m -> T_(m-1) for m > 0 and the substitution
T -> (1+T)^p - 1 at level 0; phi-inverse is the relabelling up the tower.
Teichmuller digits and the generalized section of the torsion basis are
derived operations on top of this, and the mixed valuation val^(0,r] is
computed from the digits with weight p/((p-1) r) per p-power.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Optional

import numpy as np

from phigamma.coeff import CoeffRing, TorsionBasis, torsion_filtration
from phigamma.errors import (
    EmptyWindowError,
    LevelOverflow,
    NonUnitError,
    PrecisionError,
    ValidationError,
)
from phigamma.perfseries import INF, PerfSeries, val_normalization


def _min_hi(*his):
    vals = [h for h in his if h is not None]
    return min(vals) if vals else None


@dataclass
class RingContext:
    """Shared read-only configuration for one tower of computations.

    window_hi caps the series expansions whose exact result is infinite
    (gamma action, inverses); m_max bounds the tower level reachable by
    phi-inverses and Teichmuller roots.  All window-margin formulas use
    a_margin (default: the ring's a_max) rather than per-element precision,
    so that runs at different p-adic precision shrink windows identically.
    """

    ring: CoeffRing
    m_max: int = 4
    window_lo: int = -40
    window_hi: int = 60
    a_margin: Optional[int] = None
    basis: Optional[TorsionBasis] = None

    def __post_init__(self):
        if self.a_margin is None:
            self.a_margin = self.ring.a_max
        if self.basis is None:
            self.basis = torsion_filtration(self.ring)
        self._caches = {}

    @property
    def p(self) -> int:
        return self.ring.p

    def hi_at(self, level: int) -> int:
        """Window ceiling in T_level-degrees: a level-m series occupies
        degrees scaled by p^m relative to level 0."""
        return self.window_hi * self.p**level

    def cache(self, key, build):
        store = self._caches
        if key not in store:
            store[key] = build()
        return store[key]


class LevelSeries:
    """Laurent polynomial over A in T_level, exact mod (p^a_eff, T^hi).

    coeffs[j - lo] holds the canonical residue tuple of the T^j
    coefficient; hi = None means the element is exact to all orders.
    """

    __slots__ = ("ctx", "level", "a_eff", "lo", "hi", "coeffs")

    def __init__(self, ctx, level, a_eff, lo, hi, coeffs):
        if a_eff < 1:
            raise PrecisionError("a_eff must stay >= 1")
        if level < 0 or level > ctx.m_max:
            raise LevelOverflow(f"level {level} outside [0, m_max={ctx.m_max}]")
        if hi is not None and hi <= lo:
            raise EmptyWindowError(f"window [{lo}, {hi}) is empty")
        self.ctx = ctx
        self.level = level
        self.a_eff = a_eff
        self.lo = lo
        self.hi = hi
        mods = self._mods(ctx, a_eff)
        self.coeffs = np.asarray(coeffs, dtype=np.int64) % mods
        self._trim()

    @staticmethod
    def _mods(ctx, a_eff) -> np.ndarray:
        return np.minimum(ctx.ring.moduli_array(), ctx.p**a_eff)

    def _trim(self):
        # drop known-zero leading coefficients; keep at least one slot
        nz = np.nonzero(self.coeffs.any(axis=1))[0]
        if len(nz) == 0:
            self.coeffs = self.coeffs[:1] * 0
            return
        first = int(nz[0])
        if first:
            self.lo += first
            self.coeffs = self.coeffs[first:]
        if self.hi is None:
            last = int(nz[-1]) - first
            self.coeffs = self.coeffs[: last + 1]

    # -- constructors ------------------------------------------------------------

    @classmethod
    def from_terms(cls, ctx, terms: dict, level=0, a_eff=None, hi=None) -> "LevelSeries":
        a_eff = ctx.ring.a_max if a_eff is None else a_eff
        if terms:
            lo = min(terms)
            top = max(terms)
        elif hi is not None:
            lo, top = hi - 1, hi - 1
        else:
            lo, top = 0, 0
        if hi is not None:
            top = max(min(top, hi - 1), lo)
            lo = min(lo, hi - 1)
        arr = np.zeros((top - lo + 1, ctx.ring.nfactors), dtype=np.int64)
        for j, c in terms.items():
            if hi is not None and j >= hi:
                continue
            if isinstance(c, int):
                c = ctx.ring.from_int(c)
            arr[j - lo] = c
        return cls(ctx, level, a_eff, lo, hi, arr)

    @classmethod
    def zero(cls, ctx, level=0, a_eff=None, hi=None) -> "LevelSeries":
        return cls.from_terms(ctx, {}, level, a_eff, hi)

    @classmethod
    def constant(cls, ctx, c, level=0, a_eff=None) -> "LevelSeries":
        return cls.from_terms(ctx, {0: c}, level, a_eff)

    @classmethod
    def one(cls, ctx, level=0, a_eff=None) -> "LevelSeries":
        return cls.constant(ctx, 1, level, a_eff)

    @classmethod
    def variable(cls, ctx, level=0, a_eff=None) -> "LevelSeries":
        """T_level, the level-m tower variable."""
        return cls.from_terms(ctx, {1: 1}, level, a_eff)

    @classmethod
    def random(cls, ctx, rng: random.Random, level=0, a_eff=None, lo=-2, width=6) -> "LevelSeries":
        terms = {}
        for j in range(lo, lo + width):
            terms[j] = ctx.ring.random_elt(rng)
        return cls.from_terms(ctx, terms, level, a_eff)

    # -- queries ---------------------------------------------------------------------

    @property
    def p(self) -> int:
        return self.ctx.p

    def coeff(self, j: int) -> tuple:
        if j < self.lo or j - self.lo >= len(self.coeffs):
            return self.ctx.ring.zero()
        return tuple(int(v) for v in self.coeffs[j - self.lo])

    def support(self):
        return [self.lo + int(i) for i in np.nonzero(self.coeffs.any(axis=1))[0]]

    def is_zero(self) -> bool:
        return not self.coeffs.any()

    def t_order(self):
        """Least degree with a nonzero stored coefficient (INF if none)."""
        s = self.support()
        return s[0] if s else INF

    def copy(self) -> "LevelSeries":
        return LevelSeries(self.ctx, self.level, self.a_eff, self.lo, self.hi, self.coeffs.copy())

    # -- window plumbing -----------------------------------------------------------------

    def with_ledger(self, a_eff=None, hi=None) -> "LevelSeries":
        """Weaken the ledger (never strengthens): new a_eff/hi within current."""
        a_new = self.a_eff if a_eff is None else min(a_eff, self.a_eff)
        hi_new = self.hi if hi is None else (_min_hi(self.hi, hi))
        if hi_new is not None:
            keep = self.coeffs[: max(0, hi_new - self.lo)]
            if len(keep) == 0:
                keep = np.zeros((1, self.ctx.ring.nfactors), dtype=np.int64)
                return LevelSeries(self.ctx, self.level, a_new, hi_new - 1, hi_new, keep)
            return LevelSeries(self.ctx, self.level, a_new, self.lo, hi_new, keep)
        return LevelSeries(self.ctx, self.level, a_new, self.lo, hi_new, self.coeffs)

    def _aligned(self, other: "LevelSeries"):
        lo = min(self.lo, other.lo)
        his = [h for h in (self.hi, other.hi) if h is not None]
        hi = min(his) if his else None
        top = (hi - 1) if hi is not None else max(
            self.lo + len(self.coeffs) - 1, other.lo + len(other.coeffs) - 1
        )
        width = top - lo + 1
        out = []
        for x in (self, other):
            arr = np.zeros((width, self.ctx.ring.nfactors), dtype=np.int64)
            n = min(len(x.coeffs), width - (x.lo - lo))
            if n > 0:
                arr[x.lo - lo : x.lo - lo + n] = x.coeffs[:n]
            out.append(arr)
        return lo, hi, out[0], out[1]

    # -- ring operations ---------------------------------------------------------------------

    def _binary_level(self, other: "LevelSeries"):
        if self.level == other.level:
            return self, other
        m = max(self.level, other.level)
        return self.embed_level(m), other.embed_level(m)

    def add(self, other: "LevelSeries") -> "LevelSeries":
        a, b = self._binary_level(other)
        lo, hi, xa, xb = a._aligned(b)
        return LevelSeries(self.ctx, a.level, min(a.a_eff, b.a_eff), lo, hi, xa + xb)

    def neg(self) -> "LevelSeries":
        return LevelSeries(self.ctx, self.level, self.a_eff, self.lo, self.hi, -self.coeffs)

    def sub(self, other: "LevelSeries") -> "LevelSeries":
        return self.add(other.neg())

    def mul(self, other: "LevelSeries") -> "LevelSeries":
        a, b = self._binary_level(other)
        if a.is_zero() and a.hi is None:
            return a.with_ledger(a_eff=min(a.a_eff, b.a_eff))
        if b.is_zero() and b.hi is None:
            return b.with_ledger(a_eff=min(a.a_eff, b.a_eff))
        hi = _min_hi(
            None if a.hi is None else a.hi + b.t_order_or_lo(),
            None if b.hi is None else b.hi + a.t_order_or_lo(),
        )
        lo = a.lo + b.lo
        F = self.ctx.ring.nfactors
        width = len(a.coeffs) + len(b.coeffs) - 1
        arr = np.zeros((width, F), dtype=np.int64)
        mods = self._mods(self.ctx, min(a.a_eff, b.a_eff))
        for f in range(F):
            arr[:, f] = np.convolve(a.coeffs[:, f], b.coeffs[:, f]) % mods[f]
        if hi is not None:
            arr = arr[: max(0, hi - lo)]
            if len(arr) == 0:
                raise EmptyWindowError("product window is empty")
        return LevelSeries(self.ctx, a.level, min(a.a_eff, b.a_eff), lo, hi, arr)

    def t_order_or_lo(self):
        t = self.t_order()
        return self.lo if t is INF else t

    def scale(self, c) -> "LevelSeries":
        if isinstance(c, int):
            c = self.ctx.ring.from_int(c)
        arr = self.coeffs * np.array(c, dtype=np.int64)
        return LevelSeries(self.ctx, self.level, self.a_eff, self.lo, self.hi, arr)

    def shift(self, k: int) -> "LevelSeries":
        """Multiply by T^k (exact)."""
        return LevelSeries(
            self.ctx,
            self.level,
            self.a_eff,
            self.lo + k,
            None if self.hi is None else self.hi + k,
            self.coeffs,
        )

    def mul_p(self) -> "LevelSeries":
        # p * (exact mod p^a) is exact mod p^(a+1)
        return LevelSeries(
            self.ctx, self.level, self.a_eff + 1, self.lo, self.hi, self.coeffs * self.p
        )

    def div_p(self) -> "LevelSeries":
        """Exact division by p; costs one p-adic digit of the ledger."""
        if self.a_eff <= 1:
            raise PrecisionError("division by p exhausts the p-adic ledger")
        if (self.coeffs % self.p).any():
            raise ValidationError("element is not divisible by p at this precision")
        return LevelSeries(
            self.ctx, self.level, self.a_eff - 1, self.lo, self.hi, self.coeffs // self.p
        )

    def reduce_mod_pN(self, N: int) -> "LevelSeries":
        """Coefficient-wise reduction; a ring homomorphism onto the mod-p^N layer."""
        if N < 1 or N > self.a_eff:
            raise ValidationError(f"N = {N} outside [1, a_eff = {self.a_eff}]")
        return LevelSeries(self.ctx, self.level, N, self.lo, self.hi, self.coeffs)

    def eq_at_ledger(self, other: "LevelSeries") -> bool:
        a, b = self._binary_level(other)
        return a.sub(b).is_zero()

    # -- tower maps --------------------------------------------------------------------

    def _relabel(self, level: int) -> "LevelSeries":
        return LevelSeries(self.ctx, level, self.a_eff, self.lo, self.hi, self.coeffs)

    def phi(self) -> "LevelSeries":
        """Frobenius: down one level, or the substitution T -> (1+T)^p - 1."""
        if self.level > 0:
            return self._relabel(self.level - 1)
        table = _subst_table(self.ctx, self.p, 1)
        return _substitute(self, table, 0)

    def phi_inverse(self) -> "LevelSeries":
        if self.level + 1 > self.ctx.m_max:
            raise LevelOverflow(f"phi-inverse would exceed m_max = {self.ctx.m_max}")
        return self._relabel(self.level + 1)

    def phi_pow(self, k: int) -> "LevelSeries":
        out = self
        for _ in range(k):
            out = out.phi()
        for _ in range(-k):
            out = out.phi_inverse()
        return out

    def embed_level(self, target: int) -> "LevelSeries":
        """Canonical embedding into a deeper level: T_m = (1+T_m')^(p^(m'-m)) - 1."""
        if target == self.level:
            return self
        if target < self.level:
            raise ValidationError("embed_level goes up the tower only")
        if target > self.ctx.m_max:
            raise LevelOverflow(f"embed target {target} exceeds m_max")
        q = self.p ** (target - self.level)
        table = _subst_table(self.ctx, q, target - self.level)
        return _substitute(self._relabel(target), table, target - self.level)

    # -- reduction to characteristic p --------------------------------------------------

    def to_perf(self) -> PerfSeries:
        """Reduction mod p as a perfected series (exponents j / p^level)."""
        q = self.p**self.level
        terms = {}
        for i, j in enumerate(range(self.lo, self.lo + len(self.coeffs))):
            c = self.ctx.ring.reduce_mod_p(tuple(int(v) for v in self.coeffs[i]))
            if any(c):
                terms[Fraction(j, q)] = c
        cap = None if self.hi is None else Fraction(self.hi, q)
        return PerfSeries.make(self.ctx.ring, terms, cap)

    # -- inversion ---------------------------------------------------------------------

    def inverse(self) -> "LevelSeries":
        """Newton inversion in the truncated Laurent ring, factor by factor.

        Each factor needs a unit coefficient within the window; the unit
        degree may differ across factors (the ring is a product), so the
        Newton seed is assembled from per-factor leading-monomial inverses.
        """
        ring = self.ctx.ring
        p = self.p
        e = []
        for f in range(ring.nfactors):
            rows = np.nonzero(self.coeffs[:, f] % p != 0)[0]
            if len(rows) == 0:
                raise NonUnitError(
                    "no unit coefficient in window: cannot certify invertibility"
                )
            e.append(self.lo + int(rows[0]))
        unit_rows = np.nonzero((self.coeffs % p != 0).all(axis=1))[0]
        if self.hi is None and len(unit_rows) == 1:
            supp = self.support()
            top = supp[-1]
            below_divisible = not (self.coeffs[: top - self.lo] % p).any()
            if self.lo + int(unit_rows[0]) == top and below_divisible:
                # unit leading term over a p-divisible tail: the Neumann
                # series terminates and the inverse is an exact finite object
                s_inv = LevelSeries.from_terms(
                    self.ctx, {-top: ring.inv(self.coeff(top))}, self.level, self.a_eff
                )
                n = self.mul(s_inv).sub(LevelSeries.one(self.ctx, self.level, self.a_eff))
                out = LevelSeries.one(self.ctx, self.level, self.a_eff)
                powr = LevelSeries.one(self.ctx, self.level, self.a_eff)
                for _ in range(self.a_eff):
                    powr = powr.mul(n).neg()
                    if powr.is_zero():
                        break
                    out = out.add(powr)
                return out.mul(s_inv)
        A = self.ctx.a_margin
        seed_terms = {}
        for f, ef in enumerate(e):
            c = self.coeff(ef)[f]
            cf_inv = pow(int(c), -1, int(ring.moduli[f]))
            prev = seed_terms.get(-ef, (0,) * ring.nfactors)
            seed_terms[-ef] = tuple(
                cf_inv if t == f else prev[t] for t in range(ring.nfactors)
            )
        y = LevelSeries.from_terms(self.ctx, seed_terms, self.level, self.a_eff)
        e_max = max(e)
        if len(self.support()) == 1 and self.hi is None and len(set(e)) == 1:
            return y
        if self.hi is None:
            hi_y = self.ctx.hi_at(self.level)
        else:
            hi_y = self.hi - 2 * max(e_max - self.lo, 0) - e_max + min(0, self.lo)
        one = LevelSeries.one(self.ctx, self.level, self.a_eff)
        target_hi = None if hi_y is None else hi_y + max(e_max, 0) + A
        for _ in range(64):
            prod = self.mul(y).with_ledger(hi=target_hi)
            err = one.sub(prod)
            if err.is_zero():
                break
            y = y.add(y.mul(err)).with_ledger(hi=target_hi)
        else:
            raise NonUnitError("Newton inversion did not stabilize")
        out = y.with_ledger(hi=hi_y)
        check = self.mul(out)
        if not one.sub(check).is_zero():
            raise NonUnitError("inverse verification failed at the ledger")
        return out

    # -- serialization -------------------------------------------------------------------

    def to_json(self) -> dict:
        terms = []
        for j in self.support():
            terms.append({"exp": j, "coeff": list(self.coeff(j))})
        return {
            "level": self.level,
            "window": [self.lo, self.hi],
            "a_eff": self.a_eff,
            "terms": terms,
        }

    @classmethod
    def from_json(cls, ctx, data: dict) -> "LevelSeries":
        terms = {int(t["exp"]): tuple(t["coeff"]) for t in data["terms"]}
        lo, hi = data["window"]
        out = cls.from_terms(ctx, terms, data["level"], data["a_eff"], hi)
        out.lo = min(out.lo, lo)
        return out

    def __repr__(self):
        supp = self.support()
        body = ", ".join(f"{j}:{self.coeff(j)}" for j in supp[:5])
        more = "..." if len(supp) > 5 else ""
        return (
            f"LevelSeries(m={self.level}, a={self.a_eff}, [{self.lo},{self.hi}), "
            f"{{{body}{more}}})"
        )


# -- substitution engine ----------------------------------------------------------------


class _SubstTable:
    """Powers of an exact substitution polynomial B = (1+T)^q - 1."""

    def __init__(self, ctx, q: int, nu: int):
        self.ctx = ctx
        self.q = q
        self.nu = nu  # val_p(q): drives the visibility margin
        base = {l: math.comb(q, l) for l in range(1, q + 1)}
        self.B = LevelSeries.from_terms(ctx, base, 0, ctx.ring.a_max)
        self._pow = {0: LevelSeries.one(ctx, 0, ctx.ring.a_max), 1: self.B}
        self._inv_pow = {}
        self._inv_hi = None

    def power(self, j: int, hi) -> LevelSeries:
        # powers are exact finite objects; callers window the raw data
        if j >= 0:
            top = max(self._pow)
            while top < j:
                self._pow[top + 1] = self._pow[top].mul(self.B)
                top += 1
            return self._pow[j]
        # B has a unit top coefficient over a p-divisible tail, so its
        # inverse is an exact finite object
        if not self._inv_pow:
            self._inv_pow = {-1: self.B.inverse()}
        top = min(self._inv_pow)
        while top > j:
            self._inv_pow[top - 1] = self._inv_pow[top].mul(self._inv_pow[-1])
            top -= 1
        return self._inv_pow[j]


def _subst_table(ctx, q: int, nu: int) -> _SubstTable:
    return ctx.cache(("subst", q), lambda: _SubstTable(ctx, q, nu))


def _subst_hi(hi, q: int, nu: int, A: int):
    """Output window of the substitution T -> (1+T)^q - 1.

    An unknown input tail c_j T^j (j >= hi) lands at output degrees
    >= j + (q-1) max(0, j - ceil(A/nu)) for j > 0 (the coefficients below
    the top of B^j are p-divisible with divisibility growing linearly),
    and >= q j - (A-1)(q-1) in general.
    """
    if hi is None:
        return None
    if nu == 0:
        return q * hi
    if hi > 0:
        need = -(-A // nu)  # ceil
        return hi + (q - 1) * max(0, hi - need)
    return q * hi - (A - 1) * (q - 1)


def _substitute(x: LevelSeries, table: _SubstTable, levels_down: int) -> LevelSeries:
    """Evaluate x at T := B, where B is the table's substitution polynomial.

    The result lives at x's own level; callers arrange the level tag.
    Accumulation runs on one raw buffer: coefficients are bounded by
    mod^2 * support, far inside int64.
    """
    ctx = x.ctx
    hi_out = _subst_hi(x.hi, table.q, table.nu, ctx.a_margin)
    supp = x.support()
    if not supp:
        return LevelSeries.zero(ctx, x.level, x.a_eff, hi=hi_out)
    pows = [table.power(j, hi_out) for j in supp]
    lo_out = min(pw.lo for pw in pows)
    top = hi_out - 1 if hi_out is not None else max(pw.lo + len(pw.coeffs) - 1 for pw in pows)
    if top < lo_out:
        raise EmptyWindowError("window exhausted in level substitution")
    acc = np.zeros((top - lo_out + 1, ctx.ring.nfactors), dtype=np.int64)
    for j, pw in zip(supp, pows):
        c = np.array(x.coeff(j), dtype=np.int64)
        a0 = pw.lo
        a1 = min(pw.lo + len(pw.coeffs), top + 1)
        if a1 <= a0:
            continue
        acc[a0 - lo_out : a1 - lo_out] += pw.coeffs[: a1 - a0] * c
    return LevelSeries(ctx, x.level, x.a_eff, lo_out, hi_out, acc)


# -- spec surface ------------------------------------------------------------------------


def ls_arith(x: LevelSeries, y: LevelSeries, which: str) -> LevelSeries:
    if which == "add":
        return x.add(y)
    if which == "mul":
        return x.mul(y)
    if which == "inv":
        del y
        return x.inverse()
    raise ValidationError(f"unknown operation {which!r}")


def phi(x: LevelSeries) -> LevelSeries:
    return x.phi()


def phi_inverse(x: LevelSeries) -> LevelSeries:
    return x.phi_inverse()


def embed_level(x: LevelSeries, target: int) -> LevelSeries:
    return x.embed_level(target)


def reduce_mod_pN(x: LevelSeries, N: int) -> LevelSeries:
    return x.reduce_mod_pN(N)


# -- Teichmuller machinery ------------------------------------------------------------------


def teich_section(ctx: RingContext, xbar: PerfSeries, basis: Optional[TorsionBasis] = None,
                  prec: Optional[int] = None) -> LevelSeries:
    """The generalized multiplicative section A/p-layer -> A-layer.

    Decomposes xbar over the factor idempotents, lifts each F_p-coefficient
    series by root / coefficient-Teichmuller / power (exact mod p^prec), and
    recombines against the chosen lifts of the idempotents.  Commutes with
    phi exactly and reduces to xbar mod p.
    """
    basis = basis or ctx.basis
    prec = prec if prec is not None else ctx.ring.a_max
    ring = ctx.ring
    p = ctx.p
    if xbar.is_zero():
        lvl = min(xbar.m + prec - 1, ctx.m_max)
        cap = xbar.cap
        hi = None if cap is None else int(np.floor(cap * p**lvl))
        if hi is not None and hi <= 0:
            hi = 1
        return LevelSeries.zero(ctx, lvl, prec, hi=hi)
    level = xbar.m + prec - 1
    if level > ctx.m_max:
        raise LevelOverflow(
            f"Teichmuller root needs level {level} > m_max = {ctx.m_max}"
        )
    total = None
    for i in range(ring.nfactors):
        comp = {a: c[i] % p for a, c in xbar.terms.items() if c[i] % p}
        if not comp:
            continue
        terms = {}
        for alpha, c in comp.items():
            # T_level-degree of w^(alpha / p^(prec-1)); integral by construction
            d = Fraction(alpha) * p**level / p ** (prec - 1)
            assert d.denominator == 1
            tcoeff = pow(int(c), p ** (prec - 1), p**prec) if prec > 1 else int(c)
            terms[int(d)] = ring.from_int(tcoeff)
        cap = xbar.cap
        hi = None
        if cap is not None:
            h = cap * p**level / p ** (prec - 1)
            hi = int(np.floor(h)) + (1 if h.denominator != 1 else 0)
        root = LevelSeries.from_terms(ctx, terms, level, prec, hi=hi)
        lifted = _ls_pow(root, p ** (prec - 1))
        lifted = lifted.scale(basis.lifts[i])
        total = lifted if total is None else total.add(lifted)
    return total


def _ls_pow(x: LevelSeries, k: int) -> LevelSeries:
    result = LevelSeries.one(x.ctx, x.level, x.a_eff)
    base = x
    while k:
        if k & 1:
            result = result.mul(base)
        k >>= 1
        if k:
            base = base.mul(base)
    return result


def teich_digits(x: LevelSeries, basis: Optional[TorsionBasis] = None) -> list:
    """Digits x_0..x_(a_eff-1) with x = sum p^k [x_k] mod p^a_eff.

    Digit k is exact mod p at its own (shrunken) cap; the k-th extraction
    costs one p-adic digit and may raise the working level by prec-1.
    """
    ctx = x.ctx
    basis = basis or ctx.basis
    digits = []
    cur = x
    for k in range(x.a_eff):
        d = cur.to_perf()
        digits.append(d)
        if k == x.a_eff - 1:
            break
        lift = teich_section(ctx, d, basis, prec=cur.a_eff)
        cur = cur.sub(lift).div_p()
    return digits


def reassemble_digits(ctx, digits, basis=None, a_eff=None) -> LevelSeries:
    """sum_k p^k [x_k]; inverse of teich_digits at the ledger."""
    a = a_eff or len(digits)
    total = None
    for k, d in enumerate(digits):
        if d.is_zero():
            continue
        lift = teich_section(ctx, d, basis, prec=a - k)
        term = lift
        for _ in range(k):
            term = term.mul_p()
        total = term if total is None else total.add(term)
    if total is None:
        return LevelSeries.zero(ctx, 0, a)
    return total


# -- mixed valuation ---------------------------------------------------------------------


def digit_weight(p: int, r) -> Fraction:
    """Weight of one p-power in val^(0,r]: p/((p-1) r); 0 for r = infinity.

    Pinned by three corners of the source material: phi maps the radius-r
    layer to radius r/p, the r = infinity layer is the integral one (all
    digits nonnegative), and T/[w] is a unit for every r < 1.
    """
    if r is None:
        return Fraction(0)
    r = Fraction(r)
    if not (0 < r < 1):
        raise ValidationError("radius must satisfy 0 < r < 1 (or None for infinity)")
    return val_normalization(p) / r


def val_0r(x: LevelSeries, r=None, basis=None):
    """Certified lower bound for val^(0,r] at the ledger: the digit formula
    inf_k [ val(x_k) + weight(r) k ].  +inf means zero at this precision."""
    w = digit_weight(x.p, r)
    best = INF
    for k, d in enumerate(teich_digits(x, basis)):
        v = d.val()
        if v is INF:
            continue
        best = min(best, v + w * k)
    return best


def val_0r_matrix(mat, r=None, basis=None):
    best = INF
    for row in mat:
        for entry in row:
            best = min(best, val_0r(entry, r, basis))
    return best


def certify_overconvergent(recipe: Callable[[int], LevelSeries], r=None, basis=None):
    """Desk-scale overconvergence: the val^(0,r] bound is stable when the
    element is recomputed at doubled window and precision.

    recipe(scale) must rebuild the element at `scale` times the base window
    and p-adic precision (scale in {1, 2}).
    """
    base = recipe(1)
    doubled = recipe(2)
    b0 = val_0r(base, r, basis)
    b1 = val_0r(doubled, r, basis)
    return b0, (b0 == b1 and b0 is not INF) or (b0 is INF and b1 is INF)
