"""Characteristic-p layer: perfected truncated Laurent series over A/p.

A PerfSeries is a finite sum  sum_alpha  c_alpha * w^alpha  with exponents
alpha in Z[1/p] (denominator dividing p^m) and coefficients in A/p, plus a
precision cap: terms with alpha >= cap are unknown.  The symbol w stands
for the tilted pseudouniformizer eps - 1, normalized so that
val(w) = p/(p-1).  Because A/p is a product of F_p, Frobenius fixes
coefficients and acts on exponents alone, so p-th powers and p-th roots
are exact and mutually inverse.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from phigamma.coeff import CoeffRing
from phigamma.errors import LevelOverflow, NonUnitError, ValidationError

INF = float("inf")

VAL_NORM_NUM = "p/(p-1)"  # documentation constant; see val()


def val_normalization(p: int) -> Fraction:
    return Fraction(p, p - 1)


def _denpow(alpha: Fraction, p: int) -> int:
    d = alpha.denominator
    k = 0
    while d % p == 0:
        d //= p
        k += 1
    if d != 1:
        raise ValidationError(f"exponent {alpha} has a non-{p}-power denominator")
    return k


@dataclass(frozen=True)
class PerfSeries:
    ring: CoeffRing
    terms: dict  # Fraction -> mod-p coefficient tuple, no zero values
    m: int  # all exponents have denominator dividing p^m
    cap: Optional[Fraction]  # None means exact

    @property
    def p(self) -> int:
        return self.ring.p

    # -- constructors ---------------------------------------------------------

    @classmethod
    def make(cls, ring: CoeffRing, terms: dict, cap=None) -> "PerfSeries":
        p = ring.p
        cap = None if cap is None else Fraction(cap)
        clean = {}
        m = 0
        for alpha, c in terms.items():
            alpha = Fraction(alpha)
            if cap is not None and alpha >= cap:
                continue
            c = tuple(int(v) % p for v in c)
            if any(c):
                clean[alpha] = c
                m = max(m, _denpow(alpha, p))
        return cls(ring, clean, m, cap)

    @classmethod
    def zero(cls, ring: CoeffRing, cap=None) -> "PerfSeries":
        return cls.make(ring, {}, cap)

    @classmethod
    def monomial(cls, ring: CoeffRing, coeff, alpha, cap=None) -> "PerfSeries":
        return cls.make(ring, {Fraction(alpha): tuple(coeff)}, cap)

    @classmethod
    def pseudouniformizer(cls, ring: CoeffRing, cap=None) -> "PerfSeries":
        return cls.monomial(ring, ring.one(), 1, cap)

    # -- basic queries ----------------------------------------------------------

    def is_zero(self) -> bool:
        return not self.terms

    def lo(self):
        """Least exponent with a nonzero coefficient; cap (or +inf) if none."""
        if self.terms:
            return min(self.terms)
        return self.cap if self.cap is not None else INF

    def val(self):
        """(p/(p-1)) * least exponent carrying any nonzero coefficient.

        +inf for the zero series.  A tail above the cap can only add higher
        exponents, so on a nonzero series this is exact at the ledger.
        """
        if not self.terms:
            return INF
        return val_normalization(self.p) * min(self.terms)

    def coeff(self, alpha) -> tuple:
        return self.terms.get(Fraction(alpha), self.ring.zero())

    def support(self):
        return sorted(self.terms)

    # -- ring operations ----------------------------------------------------------

    def _common_cap(self, other):
        caps = [c for c in (self.cap, other.cap) if c is not None]
        return min(caps) if caps else None

    def add(self, other: "PerfSeries") -> "PerfSeries":
        if self.ring is not other.ring and self.ring != other.ring:
            raise ValidationError("coefficient ring mismatch")
        p = self.p
        out = dict(self.terms)
        for alpha, c in other.terms.items():
            s = tuple((a + b) % p for a, b in zip(out.get(alpha, self.ring.zero()), c))
            if any(s):
                out[alpha] = s
            else:
                out.pop(alpha, None)
        return PerfSeries.make(self.ring, out, self._common_cap(other))

    def neg(self) -> "PerfSeries":
        p = self.p
        return PerfSeries.make(
            self.ring, {a: tuple((-v) % p for v in c) for a, c in self.terms.items()}, self.cap
        )

    def sub(self, other: "PerfSeries") -> "PerfSeries":
        return self.add(other.neg())

    def mul(self, other: "PerfSeries") -> "PerfSeries":
        if self.ring != other.ring:
            raise ValidationError("coefficient ring mismatch")
        p = self.p
        # unknown tails: x*y = known + O(w^(cap_x + lo_y)) + O(w^(cap_y + lo_x))
        caps = []
        if self.cap is not None and other.lo() != INF:
            caps.append(self.cap + other.lo())
        if other.cap is not None and self.lo() != INF:
            caps.append(other.cap + self.lo())
        cap = min(caps) if caps else None
        out = {}
        for a1, c1 in self.terms.items():
            for a2, c2 in other.terms.items():
                a = a1 + a2
                if cap is not None and a >= cap:
                    continue
                prev = out.get(a)
                prod = tuple((x * y) % p for x, y in zip(c1, c2))
                if prev is None:
                    out[a] = prod
                else:
                    out[a] = tuple((x + y) % p for x, y in zip(prev, prod))
        return PerfSeries.make(self.ring, out, cap)

    def scale(self, coeff) -> "PerfSeries":
        p = self.p
        return PerfSeries.make(
            self.ring,
            {a: tuple((x * y) % p for x, y in zip(c, coeff)) for a, c in self.terms.items()},
            self.cap,
        )

    def frobenius(self, direction: int = 1, m_max: Optional[int] = None) -> "PerfSeries":
        """Exponent scaling by p (direction +1) or 1/p (direction -1).

        Coefficients are fixed since A/p is a product of F_p.  The two
        directions compose to the identity exactly.
        """
        if direction not in (1, -1):
            raise ValidationError("direction must be +1 or -1")
        q = Fraction(self.p) if direction == 1 else Fraction(1, self.p)
        if direction == -1 and m_max is not None and self.m + 1 > m_max:
            raise LevelOverflow(f"p-th root needs denominator exponent {self.m + 1} > m_max")
        return PerfSeries.make(
            self.ring,
            {a * q: c for a, c in self.terms.items()},
            None if self.cap is None else self.cap * q,
        )

    def pow(self, k: int) -> "PerfSeries":
        if k < 0:
            return self.inverse().pow(-k)
        result = PerfSeries.monomial(self.ring, self.ring.one(), 0, None)
        base = self
        while k:
            if k & 1:
                result = result.mul(base)
            k >>= 1
            if k:
                base = base.mul(base)
        return result

    def proj_level(self, n: int) -> "PerfSeries":
        """Keep exactly the terms whose exponent lies in p^-n Z."""
        if n < 0:
            raise ValidationError("level must be >= 0")
        q = self.p**n
        return PerfSeries.make(
            self.ring,
            {a: c for a, c in self.terms.items() if (a * q).denominator == 1},
            self.cap,
        )

    def inverse(self) -> "PerfSeries":
        """Newton inversion, factor by factor.

        Each factor needs a unit (nonzero mod p) leading coefficient; the
        leading exponent may differ across factors.  Relative precision is
        preserved: the output cap is cap - 2*lo(x)."""
        if self.is_zero():
            raise NonUnitError("cannot invert zero")
        F = self.ring.nfactors
        leads = []
        for f in range(F):
            exps = [a for a, c in self.terms.items() if c[f] % self.p]
            if not exps:
                raise NonUnitError(f"factor {f} has no unit coefficient")
            leads.append(min(exps))
        alpha = max(leads)
        seed = {}
        for f, af in enumerate(leads):
            cf = self.terms[af][f]
            prev = seed.get(-af, self.ring.zero())
            seed[-af] = tuple(
                pow(int(cf), -1, self.p) if t == f else prev[t] for t in range(F)
            )
        lead_inv = PerfSeries.make(self.ring, seed, None)
        if self.cap is None and len(self.terms) == 1 and len(set(leads)) == 1:
            return lead_inv
        out_cap = None if self.cap is None else self.cap - 2 * alpha
        # rel_target: once 1 - x*y has lo >= target the remaining error
        # falls above the output cap
        rel_target = None if out_cap is None else out_cap + alpha
        y = lead_inv
        one = PerfSeries.monomial(self.ring, self.ring.one(), 0, None)
        if rel_target is None:
            # exact Laurent polynomial inverse exists only for monomials
            # times units of finite support; iterate until stable
            rel_target = INF
        for _ in range(64):
            e = one.sub(self.mul(y))
            if e.is_zero() or (rel_target is not INF and e.lo() >= rel_target):
                break
            y = y.add(y.mul(e))
        else:
            raise NonUnitError("Newton inversion failed to stabilize")
        return PerfSeries.make(self.ring, y.terms, out_cap)

    # -- serialization -----------------------------------------------------------

    def to_json(self) -> dict:
        items = []
        for a in sorted(self.terms):
            k = _denpow(a, self.p)
            items.append({"num": int(a * self.p**k), "denpow": k, "coeff": list(self.terms[a])})
        cap = None if self.cap is None else [self.cap.numerator, self.cap.denominator]
        return {"terms": items, "cap": cap, "m": self.m}

    @classmethod
    def from_json(cls, ring: CoeffRing, data: dict) -> "PerfSeries":
        terms = {}
        for it in data["terms"]:
            alpha = Fraction(int(it["num"]), ring.p ** int(it["denpow"]))
            terms[alpha] = tuple(it["coeff"])
        cap = data.get("cap")
        cap = None if cap is None else Fraction(cap[0], cap[1])
        return cls.make(ring, terms, cap)

    def __repr__(self):
        body = " + ".join(f"{c}*w^{a}" for a, c in sorted(self.terms.items())[:6])
        more = "..." if len(self.terms) > 6 else ""
        return f"PerfSeries({body or '0'}{more}; cap={self.cap}, m={self.m})"


def ps_arith(x: PerfSeries, y: PerfSeries, which: str) -> PerfSeries:
    """Spec-surface dispatcher for the binary ring operations."""
    if which == "add":
        return x.add(y)
    if which == "mul":
        return x.mul(y)
    raise ValidationError(f"unknown operation {which!r}")


def ps_frobenius(x: PerfSeries, direction: int, m_max: Optional[int] = None) -> PerfSeries:
    return x.frobenius(direction, m_max=m_max)


def ps_val(x: PerfSeries):
    return x.val()


def ps_proj_level(x: PerfSeries, n: int) -> PerfSeries:
    return x.proj_level(n)
