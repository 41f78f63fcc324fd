"""Dense matrix helpers over the series rings (d <= 4).

Both PerfSeries and LevelSeries expose add/sub/mul/neg/is_zero/inverse, so
the same routines serve the characteristic-p and characteristic-0 layers.
Inverses go through the adjugate, which is exact whenever the determinant
is invertible in the coefficient ring.
"""

from __future__ import annotations

from phigamma.errors import ValidationError


def dim(A):
    return len(A)


def mat_map(A, f):
    return [[f(entry) for entry in row] for row in A]


def mat_add(A, B):
    return [[a.add(b) for a, b in zip(ra, rb)] for ra, rb in zip(A, B)]


def mat_sub(A, B):
    return [[a.sub(b) for a, b in zip(ra, rb)] for ra, rb in zip(A, B)]


def mat_neg(A):
    return mat_map(A, lambda x: x.neg())


def mat_mul(A, B):
    n, k, m = len(A), len(B), len(B[0])
    if len(A[0]) != k:
        raise ValidationError("matrix dimension mismatch")
    out = []
    for i in range(n):
        row = []
        for j in range(m):
            acc = A[i][0].mul(B[0][j])
            for t in range(1, k):
                acc = acc.add(A[i][t].mul(B[t][j]))
            row.append(acc)
        out.append(row)
    return out


def mat_identity(one, zero, d):
    return [[(one if i == j else zero) for j in range(d)] for i in range(d)]


def identity_like(A):
    probe = A[0][0]
    one = _one_like(probe)
    zero = _zero_like(probe)
    return mat_identity(one, zero, len(A))


def _one_like(x):
    from phigamma.perfseries import PerfSeries
    from phigamma.periodring import LevelSeries

    if isinstance(x, LevelSeries):
        return LevelSeries.one(x.ctx, x.level, x.a_eff)
    if isinstance(x, PerfSeries):
        return PerfSeries.monomial(x.ring, x.ring.one(), 0)
    raise ValidationError(f"unsupported element type {type(x)}")


def _zero_like(x):
    from phigamma.perfseries import PerfSeries
    from phigamma.periodring import LevelSeries

    if isinstance(x, LevelSeries):
        return LevelSeries.zero(x.ctx, x.level, x.a_eff)
    if isinstance(x, PerfSeries):
        return PerfSeries.zero(x.ring)
    raise ValidationError(f"unsupported element type {type(x)}")


def mat_det(A):
    d = len(A)
    if d == 1:
        return A[0][0]
    if d == 2:
        return A[0][0].mul(A[1][1]).sub(A[0][1].mul(A[1][0]))
    # cofactor expansion along the first row; d <= 4 in practice
    det = None
    for j in range(d):
        minor = [[A[i][k] for k in range(d) if k != j] for i in range(1, d)]
        term = A[0][j].mul(mat_det(minor))
        if j % 2:
            term = term.neg()
        det = term if det is None else det.add(term)
    return det


def mat_inv(A):
    d = len(A)
    det_inv = mat_det(A).inverse()
    if d == 1:
        return [[det_inv]]
    adj = []
    for i in range(d):
        row = []
        for j in range(d):
            minor = [[A[r][c] for c in range(d) if c != i] for r in range(d) if r != j]
            cof = mat_det(minor)
            if (i + j) % 2:
                cof = cof.neg()
            row.append(cof.mul(det_inv))
        adj.append(row)
    return adj


def mat_is_zero(A) -> bool:
    return all(entry.is_zero() for row in A for entry in row)


def mat_eq(A, B) -> bool:
    return mat_is_zero(mat_sub(A, B))


def mat_val(A):
    """Minimum of the entry valuations (PerfSeries layer)."""
    best = None
    for row in A:
        for entry in row:
            v = entry.val()
            best = v if best is None else min(best, v)
    return best


def mat_scale(A, c):
    return mat_map(A, lambda x: x.scale(c))
