"""Finite coefficient rings A = prod_i Z/p^{a_i}.

A factor is either honestly finite (Z/p^a) or a rank-one torsion-free chain
truncated at a working precision; the distinction matters only for the
torsion bookkeeping, where torsion-free factors are flagged as never killed
by any power of p.  Elements are tuples of canonical residues, one per
factor.  The mod-p quotient A/p is a product of F_p, so the coefficient
Frobenius in characteristic p is the identity; this is what makes p-th
roots in the perfected series layer exact.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

import numpy as np

from phigamma.errors import NonUnitError, ValidationError

FINITE = "finite"
TORSIONFREE = "torsionfree"

Elt = tuple  # one canonical residue per factor


def _is_prime(n: int) -> bool:
    if n < 2:
        return False
    d = 2
    while d * d <= n:
        if n % d == 0:
            return False
        d += 1
    return True


@dataclass(frozen=True)
class Factor:
    kind: str
    a: int

    def __post_init__(self):
        if self.kind not in (FINITE, TORSIONFREE):
            raise ValidationError(f"unknown factor kind {self.kind!r}")
        if self.a < 1:
            raise ValidationError("factor exponent must be >= 1")


@dataclass(frozen=True)
class CoeffRing:
    """A = prod of Z/p^{a_i}, with torsion-free factors truncated at a_i."""

    p: int
    profile: tuple

    def __post_init__(self):
        if self.p == 2:
            raise ValidationError("p = 2 is out of scope")
        if not _is_prime(self.p):
            raise ValidationError(f"p = {self.p} is not prime")
        if not self.profile:
            raise ValidationError("empty factor profile")

    @property
    def nfactors(self) -> int:
        return len(self.profile)

    @property
    def a_max(self) -> int:
        return max(f.a for f in self.profile)

    @property
    def moduli(self) -> tuple:
        return tuple(self.p ** f.a for f in self.profile)

    def moduli_array(self) -> np.ndarray:
        return np.array(self.moduli, dtype=np.int64)

    # -- element constructors ------------------------------------------------

    def zero(self) -> Elt:
        return (0,) * self.nfactors

    def one(self) -> Elt:
        return (1,) * self.nfactors

    def from_int(self, n: int) -> Elt:
        return tuple(n % m for m in self.moduli)

    def basis_idempotent(self, i: int) -> Elt:
        return tuple(1 if j == i else 0 for j in range(self.nfactors))

    def random_elt(self, rng: random.Random) -> Elt:
        return tuple(rng.randrange(m) for m in self.moduli)

    def random_unit(self, rng: random.Random) -> Elt:
        out = []
        for m in self.moduli:
            r = rng.randrange(m)
            while r % self.p == 0:
                r = rng.randrange(m)
            out.append(r)
        return tuple(out)

    # -- arithmetic ------------------------------------------------------------

    def add(self, x: Elt, y: Elt) -> Elt:
        return tuple((a + b) % m for a, b, m in zip(x, y, self.moduli))

    def sub(self, x: Elt, y: Elt) -> Elt:
        return tuple((a - b) % m for a, b, m in zip(x, y, self.moduli))

    def neg(self, x: Elt) -> Elt:
        return tuple((-a) % m for a, m in zip(x, self.moduli))

    def mul(self, x: Elt, y: Elt) -> Elt:
        return tuple((a * b) % m for a, b, m in zip(x, y, self.moduli))

    def is_unit(self, x: Elt) -> bool:
        return all(a % self.p != 0 for a in x)

    def inv(self, x: Elt) -> Elt:
        if not self.is_unit(x):
            raise NonUnitError(f"{x} is not a unit of {self}")
        return tuple(pow(int(a), -1, m) for a, m in zip(x, self.moduli))

    def val_p(self, x: Elt) -> tuple:
        """Per-factor p-valuation; a factor exponent means 'zero there'."""
        out = []
        for a, f in zip(x, self.profile):
            if a == 0:
                out.append(f.a)
            else:
                v = 0
                while a % self.p == 0:
                    a //= self.p
                    v += 1
                out.append(v)
        return tuple(out)

    def reduce_mod_p(self, x: Elt) -> Elt:
        return tuple(a % self.p for a in x)

    def teichmuller(self, c: Elt, prec: int) -> Elt:
        """Multiplicative lift of a mod-p residue, factor-wise, mod p^prec.

        pow(c, p^(prec-1)) stabilizes to the (p-1)-th root of unity
        congruent to c mod p.
        """
        out = []
        for a, f in zip(c, self.profile):
            m = self.p ** min(prec, f.a)
            out.append(pow(int(a % self.p), self.p ** (prec - 1), m) % m if a % self.p else 0)
        return tuple(out)

    def describe(self) -> str:
        parts = []
        for f in self.profile:
            if f.kind == FINITE:
                parts.append(f"Z/{self.p}^{f.a}")
            else:
                parts.append(f"(Z_{self.p} trunc {f.a})")
        return " x ".join(parts)


def ring_make(p: int, profile) -> CoeffRing:
    """Build a coefficient ring from a factor list.

    Each entry is an int a (finite factor Z/p^a), a Factor, or a pair
    (kind, a) / {"kind":..., "a":...}.
    """
    factors = []
    for item in profile:
        if isinstance(item, Factor):
            factors.append(item)
        elif isinstance(item, int):
            factors.append(Factor(FINITE, item))
        elif isinstance(item, dict):
            factors.append(Factor(item["kind"], int(item["a"])))
        else:
            kind, a = item
            factors.append(Factor(kind, int(a)))
    return CoeffRing(p, tuple(factors))


def bounded_torsion_exponent(ring: CoeffRing) -> int:
    """Smallest N with A[p^N] = A[p^infinity]: the largest finite exponent."""
    finite = [f.a for f in ring.profile if f.kind == FINITE]
    return max(finite) if finite else 0


@dataclass(frozen=True)
class TorsionBasis:
    """Basis bookkeeping for A/p used by the generalized Teichmuller section.

    A/p is a product of F_p with basis the factor idempotents e_i.  Write
    pi_n: A/p -> p^n A / p^(n+1) for multiplication by p^n.  The kernel
    filtration W_n = ker(pi_n) is spanned by the idempotents of finite
    factors with exponent a_i <= n; torsion-free idempotents are never
    killed and span the complement U.  `lifts` are the chosen lifts of the
    e_i to A (defaults: the exact idempotents; a seeded variant perturbs
    them by a multiple of p, which is every freedom the section has).
    """

    ring: CoeffRing
    entry_level: tuple  # per factor: a_i for finite, None for torsion-free
    lifts: tuple  # per factor: an Elt of A reducing to e_i mod p

    def in_W(self, i: int, n: int) -> bool:
        lvl = self.entry_level[i]
        return lvl is not None and lvl <= n

    def W_indices(self, n: int) -> tuple:
        return tuple(i for i in range(self.ring.nfactors) if self.in_W(i, n))

    def U_indices(self) -> tuple:
        return tuple(i for i, lvl in enumerate(self.entry_level) if lvl is None)


def torsion_filtration(ring: CoeffRing, lift_seed=None) -> TorsionBasis:
    """Compute the W_n filtration and choose lifts of the A/p basis.

    With lift_seed given, lifts are e_i + p * (random element); any such
    choice is a legal section input and exercises the noncanonicity.
    """
    levels = tuple(f.a if f.kind == FINITE else None for f in ring.profile)
    if lift_seed is None:
        lifts = tuple(ring.basis_idempotent(i) for i in range(ring.nfactors))
    else:
        rng = random.Random(lift_seed)
        lifts = []
        for i in range(ring.nfactors):
            noise = tuple((ring.p * rng.randrange(max(m // ring.p, 1))) % m for m in ring.moduli)
            lifts.append(ring.add(ring.basis_idempotent(i), noise))
        lifts = tuple(lifts)
    return TorsionBasis(ring, levels, lifts)
