"""Descent of etale phi-modules from the perfect layer to its
overconvergent subring: the twisted-equation solver, the digit-by-digit
Frobenius descent, regularity certification, phi-invariants, and the
projective-module reductions.

The engine exploits the contraction of phi-inverse on valuations: a
telescoping series solves X^-1 phi(U) X - U = Y - V in characteristic p
with val(V) as close to (val X + val X^-1)/(p-1) as requested, and the
characteristic-0 descent reduces digit by digit to that equation through
the generalized Teichmuller section.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np

from phigamma import modlin
from phigamma.coeff import TorsionBasis
from phigamma.errors import (
    CapExceeded,
    HypothesisViolated,
    LevelOverflow,
    PrecisionError,
    ValidationError,
)
from phigamma.matops import (
    identity_like,
    mat_inv,
    mat_is_zero,
    mat_map,
    mat_mul,
    mat_sub,
    mat_val,
)
from phigamma.perfseries import INF, PerfSeries
from phigamma.periodring import (
    LevelSeries,
    RingContext,
    reassemble_digits,
    teich_section,
    val_0r_matrix,
)


@dataclass
class PhiModule:
    """Free or idempotent-presented phi-module: Mat(phi) on a ring layer."""

    ctx: RingContext
    rank: int
    mat_phi: list  # d x d LevelSeries
    tag: str = "perfect"
    radius: Optional[Fraction] = None
    idempotent: Optional[list] = None  # e in ambient M_d: e^2 = e, e X = X phi(e)

    def to_json(self) -> dict:
        out = {
            "rank": self.rank,
            "tag": self.tag,
            "radius": None
            if self.radius is None
            else [self.radius.numerator, self.radius.denominator],
            "mat_phi": [[e.to_json() for e in row] for row in self.mat_phi],
        }
        if self.idempotent is not None:
            out["idempotent"] = [[e.to_json() for e in row] for row in self.idempotent]
        return out

    @classmethod
    def from_json(cls, ctx, data: dict) -> "PhiModule":
        mat = [[LevelSeries.from_json(ctx, e) for e in row] for row in data["mat_phi"]]
        idem = None
        if data.get("idempotent") is not None:
            idem = [[LevelSeries.from_json(ctx, e) for e in row] for row in data["idempotent"]]
        radius = data.get("radius")
        return cls(
            ctx,
            int(data["rank"]),
            mat,
            data.get("tag", "perfect"),
            None if radius is None else Fraction(radius[0], radius[1]),
            idem,
        )


# -- the twisted equation in characteristic p ----------------------------------------------


def solve_twisted(X, Y, c, m_max: Optional[int] = None, n_cap: int = 24):
    """Solve X^-1 phi(U) X - U = Y - V over the perfected mod-p layer.

    Returns (U, V) with val(V) >= c; requires
    c < (val X + val X^-1)/(p-1).  U is the telescoping sum
    sum_{i=1..N} P_i phi^-i(Y) P_i^-1, P_i = phi^-1(X)...phi^-i(X), and V
    its i = N term; N is chosen from the valuation budget.  CapExceeded is
    raised when the bound is unreachable within the denominator bound m_max
    or the iteration cap.
    """
    p = X[0][0].p
    ring = X[0][0].ring
    if all(e.is_zero() for row in Y for e in row):
        zero = [[PerfSeries.zero(ring) for _ in row] for row in Y]
        return [row[:] for row in zero], zero
    Xinv = mat_inv(X)
    s = mat_val(X) + mat_val(Xinv)
    limit = s / (p - 1)
    if c >= limit:
        raise ValidationError(
            f"target c = {c} is not below (val X + val X^-1)/(p-1) = {limit}"
        )
    vy = mat_val(Y)
    mden = max(
        max(e.m for row in X for e in row), max(e.m for row in Y for e in row)
    )
    N = 1
    while True:
        lower = s * Fraction(p**N - 1, p**N * (p - 1)) + vy / Fraction(p**N)
        if lower >= c:
            break
        N += 1
        if N > n_cap or (m_max is not None and mden + N > m_max):
            raise CapExceeded(f"val(V) >= {c} unreachable within N = {N - 1} phi-inverses")

    def inv_frob(M):
        return mat_map(M, lambda e: e.frobenius(-1, m_max))

    W, Winv, Yc = X, Xinv, Y
    P = identity_like(X)
    Pinv = identity_like(X)
    U = None
    term = None
    for _ in range(N):
        W, Winv, Yc = inv_frob(W), inv_frob(Winv), inv_frob(Yc)
        P = mat_mul(P, W)
        Pinv = mat_mul(Winv, Pinv)
        term = mat_mul(P, mat_mul(Yc, Pinv))
        U = term if U is None else [[a.add(b) for a, b in zip(r1, r2)] for r1, r2 in zip(U, term)]
    return U, term


def twisted_residual(X, Y, U, V):
    """X^-1 phi(U) X - U - Y + V; zero at the ledger when the solve is good."""
    Xinv = mat_inv(X)
    phiU = mat_map(U, lambda e: e.frobenius(1))
    lhs = mat_sub(mat_mul(Xinv, mat_mul(phiU, X)), U)
    return mat_sub(mat_sub(lhs, Y), mat_map(V, lambda e: e.neg()))


# -- digit-by-digit Frobenius descent -----------------------------------------------------


def _mat_reassemble(ctx, digit_mats, basis, a):
    d = len(digit_mats[0])
    e = len(digit_mats[0][0])
    out = []
    for i in range(d):
        row = []
        for j in range(e):
            digits = [dm[i][j] for dm in digit_mats]
            row.append(reassemble_digits(ctx, digits, basis, a_eff=a))
        out.append(row)
    return out


def descend_phi_perfect(X, basis: Optional[TorsionBasis] = None, c=None,
                        n_cap: int = 24):
    """Find U invertible with C = U^-1 X phi(U) of certified finite
    val^(0,infty), digit by digit.

    The mod-p equation at digit k is solved by solve_twisted against the
    digit-0 matrix; the resulting bound depends only on X mod p.  Returns
    (U, C, transcript).
    """
    ctx = X[0][0].ctx
    basis = basis or ctx.basis
    a = min(e.a_eff for row in X for e in row)
    X0 = [[e.to_perf() for e in row] for row in X]
    X0inv = mat_inv(X0)
    s = mat_val(X0) + mat_val(X0inv)
    limit = Fraction(s, ctx.p - 1) if s is not INF else INF
    if c is None:
        c = limit - 1
    if c >= limit:
        raise ValidationError(f"bound target c = {c} >= {limit}")
    one_p = identity_like(X0)
    U_digits = [one_p]
    C_digits = [X0]
    per_digit_bounds = [mat_val(X0)]
    for k in range(1, a):
        U_acc = _mat_reassemble(ctx, U_digits, basis, a)
        C_acc = _mat_reassemble(ctx, C_digits, basis, a)
        D = mat_mul(mat_inv(U_acc), mat_mul(X, mat_map(U_acc, lambda e: e.phi())))
        R = mat_sub(D, C_acc)
        Yk = R
        for _ in range(k):
            Yk = mat_map(Yk, lambda e: e.div_p())
        Ybar = [[e.to_perf() for e in row] for row in Yk]
        Ylem = mat_map(mat_mul(Ybar, X0inv), lambda e: e.neg())
        Uk, Vlem = solve_twisted(X0inv, Ylem, c, m_max=ctx.m_max, n_cap=n_cap)
        Ck = mat_map(mat_mul(Vlem, X0), lambda e: e.neg())
        U_digits.append(Uk)
        C_digits.append(Ck)
        per_digit_bounds.append(mat_val(Ck))
    U = _mat_reassemble(ctx, U_digits, basis, a)
    C = _mat_reassemble(ctx, C_digits, basis, a)
    resid = mat_sub(mat_mul(mat_inv(U), mat_mul(X, mat_map(U, lambda e: e.phi()))), C)
    if not mat_is_zero(resid):
        raise PrecisionError("digit descent residual nonzero at the ledger")
    bound = min(per_digit_bounds)
    transcript = {
        "digits": a,
        "bound": str(bound),
        "per_digit_bounds": [str(b) for b in per_digit_bounds],
        "target_c": str(c),
        "residual_zero": True,
    }
    return U, C, transcript


# -- regularity certification (the phi(U) = X U Y principle) -------------------------------


def certify_regularity(X, Y, U, r, recipe=None, max_steps: Optional[int] = None):
    """Certify that a solution of phi(U) = X U Y is overconvergent.

    Iterating the equation gives U = X_N phi^-N(U) Y_N, so
    val(U) >= val(X_N) + val(Y_N) + p^-N val(U); the returned bound is the
    best such over the levels reachable within m_max.  The stability flag
    recomputes through `recipe(scale)` when supplied, else requires the
    bound trend to be nondecreasing.
    """
    ctx = U[0][0].ctx
    p = ctx.p
    phiU = mat_map(U, lambda e: e.phi())
    rhs = mat_mul(X, mat_mul(U, Y))
    if not mat_is_zero(mat_sub(phiU, rhs)):
        raise HypothesisViolated("phi(U) = X U Y fails at the ledger")
    vU = val_0r_matrix(U, r)
    if vU is INF:
        return INF, True
    bounds = []
    XN = None
    YN = None
    Wx, Wy = X, Y
    steps = 0
    while True:
        try:
            Wx = mat_map(Wx, lambda e: e.phi_inverse())
            Wy = mat_map(Wy, lambda e: e.phi_inverse())
        except LevelOverflow:
            break
        XN = Wx if XN is None else mat_mul(XN, Wx)
        YN = Wy if YN is None else mat_mul(Wy, YN)
        steps += 1
        b = val_0r_matrix(XN, r) + val_0r_matrix(YN, r) + vU / Fraction(p**steps)
        bounds.append(b)
        if max_steps is not None and steps >= max_steps:
            break
    if not bounds:
        bounds = [vU]
    bound = max(bounds)
    if recipe is not None:
        other = recipe(2)
        stable = other == bound
    else:
        stable = all(bounds[i] <= bounds[i + 1] for i in range(len(bounds) - 1))
    return bound, stable


# -- phi-invariants and Hom ------------------------------------------------------------------


def _vector_kernel(ctx, op_vec, d, level, lo, hi, a):
    """Generators of {v : op(v) = 0} on the windowed d-vector space.

    op_vec maps a list of d LevelSeries to a list of d LevelSeries (levels
    may rise); rows are taken on the intersection of reliable ledgers at
    the maximal output level.  Returns a list of generators, each a list
    of d LevelSeries, factor-placed.
    """
    ring = ctx.ring
    ref = int(np.argmax([f.a for f in ring.profile]))
    one = ring.one()
    width = hi - lo
    images = []
    for i in range(d):
        for j in range(lo, hi):
            vec = [
                LevelSeries.from_terms(ctx, {j: one} if t == i else {}, level, a, hi=hi)
                for t in range(d)
            ]
            images.append(op_vec(vec))
    out_level = max(e.level for img in images for e in img)
    embedded = [[e.embed_level(out_level) for e in img] for img in images]
    out_hi = min((e.hi for img in embedded for e in img if e.hi is not None), default=hi)
    out_lo = min(
        (min(e.support(), default=out_hi - 1) for img in embedded for e in img),
        default=lo,
    )
    out_lo = min(out_lo, out_hi - 1)
    out_w = out_hi - out_lo
    mat = np.zeros((d * out_w, d * width), dtype=np.int64)
    for col, img in enumerate(embedded):
        for t, e in enumerate(img):
            for jj in e.support():
                if out_lo <= jj < out_hi:
                    mat[t * out_w + (jj - out_lo), col] = e.coeff(jj)[ref]
    gens = []
    for fi, f in enumerate(ring.profile):
        cc = min(f.a, a)
        K = modlin.kernel_mod(mat, ctx.p, cc)
        for rowvec in K:
            vec = []
            for t in range(d):
                terms = {}
                for jj in range(width):
                    v = int(rowvec[t * width + jj]) % ctx.p**cc
                    if v:
                        coeff = tuple(v if fj == fi else 0 for fj in range(ring.nfactors))
                        terms[lo + jj] = coeff
                vec.append(LevelSeries.from_terms(ctx, terms, level, a, hi=hi))
            if any(not e.is_zero() for e in vec):
                gens.append(vec)
    return gens


def phi_invariants(M: PhiModule, level: int = 0, lo: int = -4, hi: int = 12):
    """A-module generators of the phi-fixed vectors: solutions of
    phi(v) = X^-1 v on the truncated window at the given tower level."""
    Xinv = mat_inv(M.mat_phi)
    d = M.rank

    def op(vec):
        pv = [v.phi() for v in vec]
        xv = [None] * d
        for i in range(d):
            acc = Xinv[i][0].mul(vec[0])
            for t in range(1, d):
                acc = acc.add(Xinv[i][t].mul(vec[t]))
            xv[i] = acc
        return [a.sub(b) for a, b in zip(pv, xv)]

    a = min(e.a_eff for row in M.mat_phi for e in row)
    return _vector_kernel(M.ctx, op, d, level, lo, hi, a)


def hom_phi(M: PhiModule, N: PhiModule, level: int = 0, lo: int = -4, hi: int = 12):
    """Basis of phi-equivariant maps M -> N, via the fixed points of the
    dual-tensor structure: F with phi(F) = X_N^-1 F X_M."""
    if M.tag != N.tag:
        raise ValidationError("source and target live on different ring layers")
    XNinv = mat_inv(N.mat_phi)
    dm, dn = M.rank, N.rank

    def op(vec):
        F = [[vec[i * dm + j] for j in range(dm)] for i in range(dn)]
        pF = mat_map(F, lambda e: e.phi())
        rhs = mat_mul(XNinv, mat_mul(F, M.mat_phi))
        diff = mat_sub(pF, rhs)
        return [diff[i][j] for i in range(dn) for j in range(dm)]

    a = min(e.a_eff for row in M.mat_phi for e in row)
    gens = _vector_kernel(M.ctx, op, dm * dn, level, lo, hi, a)
    return [
        [[g[i * dm + j] for j in range(dm)] for i in range(dn)] for g in gens
    ]


def span_contains(gens_a, gens_b, level, lo, hi) -> bool:
    """Every generator in gens_b lies in the span of gens_a, coefficient-
    windowed at the common level; both sets are lists of d-vectors."""
    if not gens_b:
        return True
    if not gens_a:
        return all(all(e.is_zero() for e in g) for g in gens_b)
    ctx = gens_a[0][0].ctx
    ring = ctx.ring
    d = len(gens_a[0])
    width = hi - lo
    a = min(e.a_eff for g in gens_a + gens_b for e in g)
    lvl = max(
        level, max(e.level for g in gens_a + gens_b for e in g)
    )
    ok = True
    for fi, f in enumerate(ring.profile):
        cc = min(f.a, a)
        q = ctx.p**cc

        def flat(g):
            out = np.zeros(d * width, dtype=np.int64)
            for t, e in enumerate(g):
                ee = e.embed_level(lvl)
                for jj in ee.support():
                    if lo <= jj < hi:
                        out[t * width + (jj - lo)] = ee.coeff(jj)[fi] % q
            return out

        A = np.array([flat(g) for g in gens_a], dtype=np.int64).T
        form = modlin.row_form(A, ctx.p, cc)
        for g in gens_b:
            if modlin.solve(form, flat(g)) is None:
                ok = False
        if not ok:
            break
    return ok


# -- projective machinery ---------------------------------------------------------------------


def descend_phi_projective(M: PhiModule, basis=None, c=None):
    """Descend an idempotent-presented projective module: descend the free
    ambient, transport the idempotent, return the summand presentation."""
    if M.idempotent is None:
        U, C, transcript = descend_phi_perfect(M.mat_phi, basis, c)
        return PhiModule(M.ctx, M.rank, C, "overconvergent"), U, transcript
    U, C, transcript = descend_phi_perfect(M.mat_phi, basis, c)
    e_new = mat_mul(mat_inv(U), mat_mul(M.idempotent, U))
    # transported idempotent must satisfy C phi(e') = e' C (phi-endomorphism)
    lhs = mat_mul(C, mat_map(e_new, lambda x: x.phi()))
    rhs = mat_mul(e_new, C)
    if not mat_is_zero(mat_sub(lhs, rhs)):
        raise PrecisionError("transported idempotent fails phi-equivariance")
    sq = mat_sub(mat_mul(e_new, e_new), e_new)
    if not mat_is_zero(sq):
        raise PrecisionError("transported idempotent fails e^2 = e at the ledger")
    out = PhiModule(M.ctx, M.rank, C, "overconvergent", idempotent=e_new)
    return out, U, transcript
