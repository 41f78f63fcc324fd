"""The Tate-Sen decompletion engine over a Tate ring, with the
pseudouniformizer f = T standing in for p.

The engine is written against a small instance interface: a valuation,
the projector family R_n with its complement inverse of (gamma - 1), the
Gamma-action, and the quantitative constants (c1, c2, c3).  H is trivial
in the shipped tower, so the cocycle-trivialization phase is skipped; the
interface keeps the hook (`descend_cocycle` takes the full generator
list) and raises if a nontrivial-H instance is ever supplied.

One decompletion step conjugates U = 1 + f^k U1 + f^k U2 (U1 over
Lambda_n, U2 in the complement) by M = 1 + f^k V, where
V = f^-k (1-gamma)^-1 (1-R_n)(f^k U2); the non-Lambda_n part gains at
least delta in valuation per step, and iteration pushes it below the
precision ceiling.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from phigamma.errors import HypothesisViolated, PrecisionError, ValidationError
from phigamma.gammaact import GammaElt, act, act_matrix
from phigamma.matops import (
    identity_like,
    mat_inv,
    mat_is_zero,
    mat_map,
    mat_mul,
    mat_sub,
)
from phigamma.perfseries import INF
from phigamma.periodring import LevelSeries, val_0r, val_0r_matrix
from phigamma.traces import TraceContext, gamma_minus_one_inverse, normalized_trace


@dataclass
class SemilinearRep:
    """Finite free semilinear representation: one matrix per generator."""

    rank: int
    gens: list  # [(GammaElt, matrix)]

    def matrix_of(self, gamma: GammaElt):
        for g, m in self.gens:
            if g == gamma:
                return m
        raise ValidationError("generator not present in the representation")


def f_pow(ctx, k: int) -> LevelSeries:
    """T^k as an exact level-0 Laurent monomial."""
    return LevelSeries.from_terms(ctx, {k: 1}, 0, ctx.ring.a_max)


def lemma_inverse(U, max_terms: int = 64):
    """Neumann inverse for val(U - 1) > 0: sum (1-U)^n, stabilized."""
    one = identity_like(U)
    E = mat_sub(one, U)
    acc = one
    term = one
    for _ in range(max_terms):
        term = mat_mul(term, E)
        if mat_is_zero(term):
            return acc
        acc = [[a.add(b) for a, b in zip(r1, r2)] for r1, r2 in zip(acc, term)]
    raise PrecisionError("Neumann series for U^-1 did not terminate at the ledger")


def _trace_split(B, n: int):
    """Entrywise (R_n(B), (1 - R_n)(B)) with the trace part at level n."""
    lam = mat_map(B, lambda e: normalized_trace(e, n))
    comp = mat_sub(B, lam)
    return lam, comp


def _mat_val(mat, r):
    return val_0r_matrix(mat, r)


def decompletion_step(U, k: int, gamma: GammaElt, delta, tctx: TraceContext,
                      check_hypotheses: bool = True):
    """One Lemma-4.5 step: returns (V1, V2, M) with M^-1 U gamma(M) =
    1 + f^k V1 + f^k V2, V1 over Lambda_n, and the V2 part improved by
    delta.  Hypothesis failures name the violated inequality."""
    ctx = U[0][0].ctx
    n = tctx.n
    r = tctx.r
    c1, c2, c3 = tctx.constants()
    one = identity_like(U)
    fk = f_pow(ctx, k)
    fmk = f_pow(ctx, -k)
    B = mat_sub(U, one)
    lam, comp = _trace_split(B, n)
    # measured on f^k U1 and f^k U2 directly: a = val(f^k U1), b = val(f^k U2)
    a_val = _mat_val(lam, r)
    b_val = _mat_val(comp, r)
    if check_hypotheses:
        if a_val is not INF and a_val < c2 + c3 + delta:
            raise HypothesisViolated(
                f"val(f^k U1) = {a_val} < c2 + c3 + delta = {c2 + c3 + delta}"
            )
        if b_val is not INF:
            need = 2 * c2 + 2 * c3 + delta
            if a_val is not INF:
                need = max(a_val + c2, need)
            if b_val < need:
                raise HypothesisViolated(
                    f"val(f^k U2) = {b_val} < max(a + c2, 2c2 + 2c3 + delta) = {need}"
                )
    if mat_is_zero(comp):
        U1 = mat_map(lam, lambda e: e.mul(fmk))
        return U1, mat_map(comp, lambda e: e.mul(fmk)), one
    V = mat_map(
        comp,
        lambda e: gamma_minus_one_inverse(e, gamma, tctx, check_val=False).neg().mul(fmk),
    )
    M = [[a.add(b.mul(fk)) for a, b in zip(r1, r2)] for r1, r2 in zip(one, V)]
    # the canonical split makes R_n(U2) = 0, so V1 is just U1
    V1 = mat_map(lam, lambda e: e.mul(fmk))
    Unew = mat_mul(mat_inv(M), mat_mul(U, act_matrix(gamma, M)))
    resid = mat_sub(mat_sub(Unew, one), mat_map(V1, lambda e: e.mul(fk)))
    V2 = mat_map(resid, lambda e: e.mul(fmk))
    return V1, V2, M


def decomplete_matrix(U, gamma: GammaElt, tctx: TraceContext, delta=None,
                      max_iters: int = 12, k: int = 0):
    """Iterate decompletion steps until the non-Lambda_n part vanishes at
    the ledger; returns (M, U_n) with M^-1 U gamma(M) = U_n over Lambda_n.
    """
    ctx = U[0][0].ctx
    r = tctx.r
    c1, c2, c3 = tctx.constants()
    one = identity_like(U)
    B = mat_sub(U, one)
    b_val = _mat_val(B, r)
    if delta is None:
        if b_val is INF:
            delta = Fraction(1)
        else:
            slack = b_val - 2 * c2 - 2 * c3
            if slack <= 0:
                raise HypothesisViolated(
                    f"val(U - 1) = {b_val} leaves no slack over 2c2 + 2c3 = {2 * (c2 + c3)}"
                )
            delta = slack / 2
    M_total = one
    cur = U
    prev_val = None
    for _ in range(max_iters):
        _, comp = _trace_split(mat_sub(cur, one), tctx.n)
        if mat_is_zero(comp):
            break
        cval = _mat_val(comp, r)
        if prev_val is not None and cval is not INF and cval <= prev_val:
            raise HypothesisViolated(
                f"no progress: complement valuation stalled at {cval}"
            )
        prev_val = cval
        _, _, M = decompletion_step(cur, k, gamma, delta, tctx, check_hypotheses=False)
        if mat_is_zero(mat_sub(M, one)):
            break
        M_total = mat_mul(M_total, M)
        cur = mat_mul(mat_inv(M), mat_mul(cur, act_matrix(gamma, M)))
    else:
        _, comp = _trace_split(mat_sub(cur, one), tctx.n)
        if not mat_is_zero(comp):
            raise HypothesisViolated("complement part still visible after max_iters")
    # represent the result at level n and verify the conjugation identity
    U_n = mat_map(cur, lambda e: normalized_trace(e, tctx.n))
    check = mat_sub(mat_mul(mat_inv(M_total), mat_mul(U, act_matrix(gamma, M_total))), U_n)
    if not mat_is_zero(check):
        raise PrecisionError("decompletion identity fails at the ledger")
    return M_total, U_n


def matrix_descends_check(B, V1, V2, gamma: GammaElt, tctx: TraceContext) -> bool:
    """Lemma-4.7 test: gamma(B) = V1 B V2 with V_i over Lambda_n and
    val(V_i - 1) > c3 forces B over Lambda_n; we verify the relation and
    answer whether B is entrywise R_n-fixed at the ledger."""
    rel = mat_sub(act_matrix(gamma, B), mat_mul(V1, mat_mul(B, V2)))
    if not mat_is_zero(rel):
        raise HypothesisViolated("relation gamma(B) = V1 B V2 fails at the ledger")
    for row in B:
        for e in row:
            if not normalized_trace(e, tctx.n).eq_at_ledger(e):
                return False
    return True


def descend_cocycle(gens, tctx: TraceContext, subgroup_gamma: GammaElt,
                    delta=None, max_iters: int = 12):
    """Prop-4.8 descent for trivial H: decomplete the designated pro-p
    generator's matrix and transport the rest of the cocycle.

    gens: [(GammaElt, matrix)].  Returns (M, descended gens).  Every
    transported matrix must be Lambda_n-valued at the ledger.
    """
    c1, c2, c3 = tctx.constants()
    mat_sub_g = None
    for g, mat in gens:
        if g == subgroup_gamma:
            mat_sub_g = mat
    if mat_sub_g is None:
        raise ValidationError("designated subgroup generator missing from cocycle")
    one = identity_like(mat_sub_g)
    bval = _mat_val(mat_sub(mat_sub_g, one), tctx.r)
    if bval is not INF and bval <= c1 + 2 * c2 + 2 * c3:
        raise HypothesisViolated(
            f"val(U_gamma - 1) = {bval} <= c1 + 2c2 + 2c3 = {c1 + 2 * (c2 + c3)}"
        )
    M, Un = decomplete_matrix(mat_sub_g, subgroup_gamma, tctx, delta, max_iters)
    out = []
    Minv = mat_inv(M)
    for g, mat in gens:
        if g == subgroup_gamma:
            out.append((g, Un))
            continue
        V = mat_mul(Minv, mat_mul(mat, act_matrix(g, M)))
        for row in V:
            for e in row:
                if not normalized_trace(e, tctx.n).eq_at_ledger(e):
                    raise PrecisionError(
                        "transported cocycle entry is not Lambda_n-valued; raise n"
                    )
        out.append((g, mat_map(V, lambda e: normalized_trace(e, tctx.n))))
    return M, out


def compute_DHn(rep: SemilinearRep, tctx: TraceContext, subgroup_gamma: GammaElt,
                delta=None, max_iters: int = 12):
    """Prop-4.9 lattice: a Lambda_n^+-descended basis for a plus-part
    semilinear representation whose subgroup matrices contract below
    c1 + 2c2 + 2c3.

    Returns (M, descended SemilinearRep); the new basis is e_i = M v_i,
    the output matrices are Lambda_n-valued with val(Mat - 1) > c3 for the
    subgroup generator, and base change by M recovers the input.
    """
    c1, c2, c3 = tctx.constants()
    M, new_gens = descend_cocycle(rep.gens, tctx, subgroup_gamma, delta, max_iters)
    for g, mat in new_gens:
        if g == subgroup_gamma:
            one = identity_like(mat)
            v = _mat_val(mat_sub(mat, one), tctx.r)
            if v is not INF and v <= c3:
                raise PrecisionError(f"descended basis is not c3-fixed: val = {v}")
    return M, SemilinearRep(rep.rank, new_gens)
