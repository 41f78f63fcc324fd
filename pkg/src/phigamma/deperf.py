"""Radius localization, Gamma-descent down the level tower, deperfection,
and the end-to-end descent pipeline with round-trip verification.

The pipeline composes: base change to the perfect layer -> digit-by-digit
Frobenius descent -> radius localization -> subgroup/level selection ->
Tate-Sen Gamma-descent onto the level-n lattice -> phi^n relabelling onto
the imperfect overconvergent layer.  Every stage records residuals and
valuation bounds into a certificate, and the final module is base-changed
back and compared with the input coefficient by coefficient.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from phigamma.errors import (
    HypothesisViolated,
    NonUnitError,
    PrecisionError,
    ValidationError,
)
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
from phigamma.periodring import LevelSeries, RingContext, val_0r, val_0r_matrix
from phigamma.phidescent import certify_regularity, descend_phi_perfect
from phigamma.tatesen import SemilinearRep, compute_DHn, matrix_descends_check
from phigamma.traces import TraceContext, normalized_trace


def default_radius_lattice(p: int):
    return [Fraction(1, p), Fraction(1, p**2), Fraction(1, p**3)]


@dataclass
class PhiGammaModule:
    """Free (phi, Gamma)-module: Mat(phi), Mat(gamma0), optional torsion
    generator matrix, on a tagged ring layer."""

    ctx: RingContext
    rank: int
    mat_phi: list
    mat_gamma: list
    mat_tor: Optional[list] = None
    tag: str = "imperfect"
    radius: Optional[Fraction] = None
    idempotent: Optional[list] = None

    @property
    def gamma0(self) -> GammaElt:
        return GammaElt(self.ctx.p, 0, 1)

    @property
    def gamma_tor(self) -> GammaElt:
        return GammaElt(self.ctx.p, 1, 0)

    def tor_matrix(self):
        if self.mat_tor is not None:
            return self.mat_tor
        return identity_like(self.mat_phi)

    def commutation_residual(self):
        """X phi(G) - G gamma(X); zero iff the two actions commute."""
        X, G = self.mat_phi, self.mat_gamma
        lhs = mat_mul(X, mat_map(G, lambda e: e.phi()))
        rhs = mat_mul(G, act_matrix(self.gamma0, X))
        return mat_sub(lhs, rhs)

    def check_etale(self):
        try:
            mat_inv(self.mat_phi)
            mat_inv(self.mat_gamma)
        except NonUnitError as exc:
            raise ValidationError(f"module is not etale at this precision: {exc}")
        if not mat_is_zero(self.commutation_residual()):
            raise ValidationError("phi/gamma commutation fails at the ledger")

    def reduce_mod_p(self) -> "PhiGammaModule":
        red = lambda m: mat_map(m, lambda e: e.reduce_mod_pN(1))  # noqa: E731
        return PhiGammaModule(
            self.ctx,
            self.rank,
            red(self.mat_phi),
            red(self.mat_gamma),
            None if self.mat_tor is None else red(self.mat_tor),
            self.tag,
            self.radius,
            None if self.idempotent is None else red(self.idempotent),
        )

    def to_json(self) -> dict:
        out = {
            "rank": self.rank,
            "tag": self.tag,
            "radius": None
            if self.radius is None
            else [self.radius.numerator, self.radius.denominator],
            "mat_phi": [[e.to_json() for e in row] for row in self.mat_phi],
            "mat_gamma": [[e.to_json() for e in row] for row in self.mat_gamma],
        }
        if self.mat_tor is not None:
            out["mat_tor"] = [[e.to_json() for e in row] for row in self.mat_tor]
        if self.idempotent is not None:
            out["idempotent"] = [[e.to_json() for e in row] for row in self.idempotent]
        return out

    @classmethod
    def from_json(cls, ctx, data: dict) -> "PhiGammaModule":
        load = lambda m: [[LevelSeries.from_json(ctx, e) for e in row] for row in m]  # noqa: E731
        radius = data.get("radius")
        return cls(
            ctx,
            int(data["rank"]),
            load(data["mat_phi"]),
            load(data["mat_gamma"]),
            load(data["mat_tor"]) if data.get("mat_tor") is not None else None,
            data.get("tag", "imperfect"),
            None if radius is None else Fraction(radius[0], radius[1]),
            load(data["idempotent"]) if data.get("idempotent") is not None else None,
        )


# -- instance generator ----------------------------------------------------------------------


def random_gl(ctx, rank: int, rng: random.Random, lo: int = -2, width: int = 5):
    """Random element of GL_d over the level-0 Laurent ring: unit lower- and
    upper-triangular factors, so invertibility is structural."""
    one = LevelSeries.one(ctx)
    zero = LevelSeries.zero(ctx)

    def tri(upper: bool):
        M = [[one if i == j else zero for j in range(rank)] for i in range(rank)]
        for i in range(rank):
            for j in range(rank):
                if (j > i) if upper else (j < i):
                    M[i][j] = LevelSeries.random(ctx, rng, 0, lo=lo, width=width)
        return M

    diag = [[LevelSeries.from_terms(ctx, {rng.randrange(-1, 2): ctx.ring.random_unit(rng)})
             if i == j else zero for j in range(rank)] for i in range(rank)]
    return mat_mul(tri(False), mat_mul(diag, tri(True)))


def generate_instance(ctx, rank: int, seed: int, lo: int = -2, width: int = 5):
    """Seeded etale (phi, Gamma)-module over the imperfect level-0 layer:
    a constant unit phi-matrix and the trivial Gamma-structure, conjugated
    by a random basis change U (X = U^-1 X0 phi(U), G = U^-1 gamma(U)).

    Commutation is exact by construction; U is returned as ground truth.
    """
    if rank < 1:
        raise ValidationError("rank must be >= 1")
    rng = random.Random(seed)
    ring = ctx.ring
    X0 = [[LevelSeries.constant(ctx, ring.random_unit(rng)) if i == j else
           LevelSeries.constant(ctx, tuple(ring.p * v for v in ring.random_elt(rng)))
           for j in range(rank)] for i in range(rank)]
    U = random_gl(ctx, rank, rng, lo=lo, width=width)
    Uinv = mat_inv(U)
    g0 = GammaElt(ctx.p, 0, 1)
    gt = GammaElt(ctx.p, 1, 0)
    X = mat_mul(Uinv, mat_mul(X0, mat_map(U, lambda e: e.phi())))
    G = mat_mul(Uinv, act_matrix(g0, U))
    Gt = mat_mul(Uinv, act_matrix(gt, U))
    mod = PhiGammaModule(ctx, rank, X, G, Gt, tag="imperfect")
    return mod, U


# -- stage operations -------------------------------------------------------------------------


def radius_certified(x: LevelSeries, r) -> bool:
    """A desk certificate that the digit-val series of x is trending into
    the (0,r] layer: the minimum of val(x_k) + weight(r) k must not be
    uniquely set by the final digit (a falling tail means divergence)."""
    from phigamma.periodring import digit_weight, teich_digits

    w = digit_weight(x.p, r)
    scores = []
    for k, d in enumerate(teich_digits(x)):
        v = d.val()
        scores.append(INF if v is INF else v + w * k)
    finite = [s for s in scores if s is not INF]
    if not finite:
        return True
    best = min(finite)
    attained = [k for k, s in enumerate(scores) if s == best]
    return attained != [len(scores) - 1] or len(scores) == 1


def _certify_matrix(mat, r):
    best = INF
    for row in mat:
        for e in row:
            if not radius_certified(e, r):
                return None
            v = val_0r(e, r)
            best = min(best, v)
    return best


def localize_radius(X, G, lattice=None):
    """First radius in the shipped lattice at which Mat(phi), Mat(gamma)
    and their inverses carry certified valuation bounds at the ledger.

    Returns (r, bounds); raises PrecisionError when no shipped radius
    certifies (the NoRadius condition)."""
    ctx = X[0][0].ctx
    lattice = lattice or default_radius_lattice(ctx.p)
    try:
        Xi, Gi = mat_inv(X), mat_inv(G)
    except NonUnitError as exc:
        raise ValidationError(f"matrices not invertible: {exc}")
    for r in lattice:
        vals = [_certify_matrix(m, r) for m in (X, Xi, G, Gi)]
        if all(v is not None for v in vals):
            bounds = {
                "phi": str(vals[0]),
                "phi_inv": str(vals[1]),
                "gamma": str(vals[2]),
                "gamma_inv": str(vals[3]),
            }
            return r, bounds
    raise PrecisionError("no radius in the shipped lattice certifies the module")


def cocycle_power(G, gamma: GammaElt, e: int):
    """Mat(gamma^e) from Mat(gamma) by the semilinear square-and-multiply:
    Mat(gamma^(m+m')) = Mat(gamma^m) gamma^m(Mat(gamma^m'))."""
    result = None
    res_pow = 0
    base = G
    base_pow = 1
    g_base = gamma
    while e:
        if e & 1:
            if result is None:
                result, res_pow = base, base_pow
            else:
                result = mat_mul(result, act_matrix(gamma.power(res_pow), base))
                res_pow += base_pow
        e >>= 1
        if e:
            base = mat_mul(base, act_matrix(g_base, base))
            g_base = g_base.power(2)
            base_pow *= 2
    return result


def choose_subgroup_level(G, tctx_proto: TraceContext, k_max: int = 6,
                          lattice=None):
    """Smallest k with val(Mat(gamma0^(p^k)) - 1) above the Tate-Sen
    threshold, and the working level n = n(gamma0^(p^k)) = k + 1.

    The search runs jointly over the radius sub-lattice at or below the
    certified radius: shrinking the radius is always legitimate (the
    overconvergent layers grow as r drops) and the p-adic part of the
    contraction is worth more valuation there, so smaller k and hence a
    cheaper deperfection level may become available."""
    ctx = G[0][0].ctx
    p = ctx.p
    c1, c2, c3 = tctx_proto.constants()
    threshold = c1 + 2 * c2 + 2 * c3
    gamma0 = tctx_proto.gamma0
    one = identity_like(G)
    radii = [r for r in (lattice or default_radius_lattice(p)) if r <= tctx_proto.r]
    if not radii:
        radii = [tctx_proto.r]
    for k in range(k_max + 1):
        gsub = gamma0.power(p**k)
        Gk = cocycle_power(G, gamma0, p**k)
        diff = mat_sub(Gk, one)
        for r in radii:
            v = val_0r_matrix(diff, r)
            if v is INF or v > threshold:
                n = max(k + 1, tctx_proto.n)
                return k, n, gsub, Gk, r
    raise PrecisionError(f"contraction not visible within k <= {k_max} at this window")


def descend_gamma(X, G, Gtor, r, k, n, tctx: TraceContext):
    """Tate-Sen descent of the Gamma-structure onto the level-n lattice,
    with the phi-matrix transported and certified Lambda_n-valued.

    Returns (M, X_n, G_n, Gtor_n, transcript)."""
    ctx = X[0][0].ctx
    p = ctx.p
    gamma0 = tctx.gamma0
    gsub = gamma0.power(p**k)
    Gsub = cocycle_power(G, gamma0, p**k)
    gens = [(gsub, Gsub)]
    if gamma0 != gsub:
        gens.append((gamma0, G))
    gens.append((tctx.gamma_tor, Gtor))
    rep = SemilinearRep(len(X), gens)
    M, rep_n = compute_DHn(rep, tctx, gsub)
    X_n = mat_mul(mat_inv(M), mat_mul(X, mat_map(M, lambda e: e.phi())))
    # Lemma 4.7 route: gamma(X_n) = G_n^-1 X_n phi(G_n) with Lambda_n-valued
    # c3-fixed conjugators forces X_n into Lambda_n
    G_n = rep_n.matrix_of(gsub)
    ok = matrix_descends_check(X_n, mat_inv(G_n), mat_map(G_n, lambda e: e.phi()), gsub, tctx)
    if not ok:
        raise PrecisionError("phi-matrix did not descend to Lambda_n; raise n")
    X_n = mat_map(X_n, lambda e: normalized_trace(e, n))
    G0_n = rep_n.matrix_of(gamma0) if gamma0 != gsub else G_n
    Gtor_n = rep_n.matrix_of(tctx.gamma_tor)
    transcript = {
        "k": k,
        "n": n,
        "val_M_minus_1": str(val_0r_matrix(mat_sub(M, identity_like(M)), r)),
        "subgroup_val": str(
            val_0r_matrix(mat_sub(G_n, identity_like(G_n)), r)
        ),
    }
    return M, X_n, G0_n, Gtor_n, transcript


def deperfect_module(X_n, G_n, Gtor_n, n: int, r, ctx) -> PhiGammaModule:
    """phi^n takes the level-n lattice onto the imperfect level-0 layer at
    radius r p^-n; etaleness and commutation are re-checked there."""
    down = lambda m: mat_map(m, lambda e: e.phi_pow(n))  # noqa: E731

    def to_level_n(mat):
        out = []
        for row in mat:
            new_row = []
            for e in row:
                en = normalized_trace(e, n)
                if not en.eq_at_ledger(e):
                    raise PrecisionError("entry not at level n; deperfection impossible")
                new_row.append(en)
            out.append(new_row)
        return out

    X0 = down(to_level_n(X_n))
    G0 = down(to_level_n(G_n))
    T0 = down(to_level_n(Gtor_n))
    out = PhiGammaModule(
        ctx, len(X0), X0, G0, T0, tag="overconvergent", radius=r / ctx.p**n
    )
    out.check_etale()
    return out


# -- full pipeline ---------------------------------------------------------------------------


def full_pipeline(mod: PhiGammaModule, tctx_proto: Optional[TraceContext] = None,
                  lattice=None, collect_matrices: bool = True) -> dict:
    """Thm-6.2 route: descend an etale (phi, Gamma)-module over the
    imperfect layer to the overconvergent subring and verify the round
    trip.  Returns a transcript dict (see certs.make_certificate)."""
    ctx = mod.ctx
    stages = {}
    mod.check_etale()
    stages["validate"] = {"etale": True}

    X, G, Gtor = mod.mat_phi, mod.mat_gamma, mod.tor_matrix()
    gamma0 = mod.gamma0

    # stage 1: Frobenius descent over the perfect layer
    U_phi, C, tr = descend_phi_perfect(X)
    G1 = mat_mul(mat_inv(U_phi), mat_mul(G, act_matrix(gamma0, U_phi)))
    T1 = mat_mul(mat_inv(U_phi), mat_mul(Gtor, act_matrix(mod.gamma_tor, U_phi)))
    comm = mat_sub(
        mat_mul(C, mat_map(G1, lambda e: e.phi())), mat_mul(G1, act_matrix(gamma0, C))
    )
    if not mat_is_zero(comm):
        raise PrecisionError("commutation lost after phi-descent")
    stages["phi_descent"] = tr

    # stage 2: radius localization
    r, bounds = localize_radius(C, G1, lattice)
    stages["radius"] = {"r": [r.numerator, r.denominator], "bounds": bounds}

    # stage 3: the Gamma-matrix is overconvergent by uniqueness; certify it
    # through the regularity principle phi(G1) = C^-1 G1 gamma(C)
    gbound, gstable = certify_regularity(mat_inv(C), act_matrix(gamma0, C), G1, r)
    stages["gamma_regularity"] = {"bound": str(gbound), "stable": bool(gstable)}

    # stage 4: subgroup and level selection (jointly with a working radius
    # at or below the certified one)
    proto = tctx_proto or TraceContext(ctx, r, 1)
    proto = TraceContext(ctx, r, proto.n, c1=proto.c1, c2=proto.c2, c3=proto.c3,
                         provenance=proto.provenance)
    k, n, gsub, Gsub, r_ts = choose_subgroup_level(G1, proto, lattice=lattice)
    stages["subgroup"] = {"k": k, "n": n, "r_ts": [r_ts.numerator, r_ts.denominator]}

    # stage 5: Tate-Sen descent to the level-n lattice, searching n upward
    # when a transported entry refuses to land in Lambda_n
    last_exc = None
    for n_try in range(n, min(n + 3, ctx.m_max) + 1):
        tctx = TraceContext(ctx, r_ts, n_try, c1=proto.c1, c2=proto.c2, c3=proto.c3,
                            provenance=proto.provenance)
        try:
            M_ts, X_n, G_n, T_n, ts_tr = descend_gamma(C, G1, T1, r_ts, k, n_try, tctx)
            n = n_try
            break
        except PrecisionError as exc:
            last_exc = exc
    else:
        raise PrecisionError(f"Tate-Sen stage failed up to n = {n + 3}: {last_exc}")
    stages["tate_sen"] = ts_tr

    # stage 6: deperfection
    final = deperfect_module(X_n, G_n, T_n, n, r_ts, ctx)
    stages["deperfect"] = {
        "radius": [final.radius.numerator, final.radius.denominator],
        "etale": True,
    }

    # stage 7: round trip: X phi(W) = W phi^-n(X-dagger), etc.  The residual
    # windows are capped just above the operands' supports: the identity is
    # then checked on every degree the data can reach, without paying for
    # the full level-scaled default window of the gamma-action.
    W = mat_mul(U_phi, M_ts)
    up = lambda m: mat_map(m, lambda e: e.phi_pow(-n))  # noqa: E731
    tops = [
        max(e.support(), default=0)
        for mat in (W, X, G, Gtor, final.mat_phi, final.mat_gamma, final.mat_tor)
        for row in mat
        for e in row
    ]
    hi_rt = max(tops) + ctx.p
    rt1 = mat_sub(mat_mul(X, mat_map(W, lambda e: e.phi())), mat_mul(W, up(final.mat_phi)))
    rt2 = mat_sub(
        mat_mul(G, act_matrix(gamma0, W, hi=hi_rt)), mat_mul(W, up(final.mat_gamma))
    )
    rt3 = mat_sub(
        mat_mul(Gtor, act_matrix(mod.gamma_tor, W, hi=hi_rt)), mat_mul(W, up(final.mat_tor))
    )
    round_trip = mat_is_zero(rt1) and mat_is_zero(rt2) and mat_is_zero(rt3)
    if not round_trip:
        raise PrecisionError("round-trip base change does not recover the input")
    stages["round_trip"] = {"residual_zero": True}

    out = {
        "stages": stages,
        "module": final,
        "base_change": W if collect_matrices else None,
        "constants": [str(c) for c in tctx.constants()],
        "r": r,
        "n": n,
        "k": k,
    }
    return out


def embed_free_gamma_rep(mod: PhiGammaModule, k_probe: int = 6):
    """Free Gamma-representation containing the given projective one as a
    direct summand, with its projector.

    Idempotent-presented modules already sit inside their free ambient, so
    the ambient is returned with the idempotent as the projector, after
    verifying e^2 = e, the Gamma-equivariance e G = G gamma(e), and that
    some gamma^(p^k) - 1 acts topologically nilpotently (the hypothesis
    under which the Z_p-power binomial extension of the action converges).
    """
    from phigamma.errors import NotContracting
    from phigamma.gammaact import gamma_power_series

    ctx = mod.ctx
    e = mod.idempotent
    if e is None:
        return mod, identity_like(mod.mat_phi)
    sq = mat_sub(mat_mul(e, e), e)
    if not mat_is_zero(sq):
        raise ValidationError("projector fails e^2 = e at the ledger")
    equiv = mat_sub(mat_mul(e, mod.mat_gamma), mat_mul(mod.mat_gamma, act_matrix(mod.gamma0, e)))
    if not mat_is_zero(equiv):
        raise ValidationError("projector is not Gamma-equivariant")
    # contraction probe: gamma^(p^k) - 1 must vanish at the ledger on a
    # window probe for some k <= k_probe
    probe = LevelSeries.random(ctx, random.Random(0), 0, lo=-1, width=3)
    for k in range(k_probe + 1):
        g = mod.gamma0.power(ctx.p**k)
        diff = act(g, probe).sub(probe)
        if diff.is_zero() or val_0r(diff, Fraction(1, ctx.p)) > 0:
            gamma_power_series(mod.gamma0, 1, probe, k=k)  # exercise the extension
            return mod, e
    raise NotContracting("no gamma^(p^k) contracts on the probe window")
