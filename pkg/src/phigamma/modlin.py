"""Exact linear algebra over Z/p^c.

Everything here works with int64 numpy vectors of canonical residues.  The
workhorse is a Howell-style echelon form of the row module spanned by
(A w, w) pairs: it yields, from one elimination, a deterministic solver for
A x = y with a p-valuation loss ledger, and a generating set of ker(A)
including the p-power torsion generators that plain Gaussian elimination
misses.  Pivots are chosen by minimal p-valuation then first-come order,
so the computation is reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def pval(x: int, p: int, c: int) -> int:
    x = int(x)
    if x == 0:
        return c
    v = 0
    while x % p == 0 and v < c:
        x //= p
        v += 1
    return v


@dataclass
class RowForm:
    """Echelon rows of the module spanned by (A w, w), w in (Z/p^c)^n.

    pivots[i] = (column, valuation) for rows[i]; rows are ordered by pivot
    column; every surviving row with zero watch-block is a kernel witness.
    """

    p: int
    c: int
    nwatch: int
    ncols: int
    rows: list  # np.ndarray, length nwatch + ncols
    pivots: list  # (col, val) aligned with rows
    kernel_rows: list  # witness parts (length ncols) of rows with watch == 0


def row_form(A: np.ndarray, p: int, c: int) -> RowForm:
    """Howell-style form for the map w -> A w over Z/p^c."""
    q = p**c
    A = np.asarray(A, dtype=np.int64) % q
    m, n = A.shape
    aug = np.hstack([A.T, np.eye(n, dtype=np.int64)]) % q
    active = [aug[i].copy() for i in range(n)]
    rows, pivots = [], []
    for col in range(m):
        best, best_val = None, c
        for idx, r in enumerate(active):
            v = pval(r[col], p, c)
            if v < best_val:
                best, best_val = idx, v
        if best is None:
            continue
        piv = active.pop(best)
        u = int(piv[col]) // p**best_val
        piv = (piv * pow(u, -1, q)) % q  # pivot entry becomes p^val exactly
        step = p**best_val
        for idx, r in enumerate(active):
            e = int(r[col])
            if e:
                active[idx] = (r - (e // step) * piv) % q
        rows.append(piv)
        pivots.append((col, best_val))
        if best_val > 0:
            # close the row module under p-power torsion
            ghost = (piv * p ** (c - best_val)) % q
            if ghost.any():
                active.append(ghost)
    # normalize entries above each pivot, for a canonical-looking form
    for i in range(len(rows)):
        for j in range(i + 1, len(rows)):
            col, val = pivots[j]
            e = int(rows[i][col])
            if e:
                rows[i] = (rows[i] - (e // p**val) * rows[j]) % q
    kernel_rows = [r[m:].copy() for r in active if not r[:m].any() and r[m:].any()]
    return RowForm(p, c, m, n, rows, pivots, kernel_rows)


def solve(form: RowForm, y: np.ndarray):
    """Solve A x = y from a precomputed RowForm.

    Returns (x, loss) where loss is the largest pivot valuation engaged, or
    None when y is not in the column span at full precision.
    """
    q = form.p**form.c
    y = np.asarray(y, dtype=np.int64) % q
    m = form.nwatch
    rem = y.copy()
    acc = np.zeros(m + form.ncols, dtype=np.int64)
    loss = 0
    for (col, val), row in zip(form.pivots, form.rows):
        e = int(rem[col])
        if e == 0:
            continue
        if e % form.p**val != 0:
            return None
        k = e // form.p**val
        rem = (rem - k * row[:m]) % q
        acc = (acc + k * row) % q
        loss = max(loss, val)
    if rem.any():
        return None
    return acc[m:] % q, loss


def kernel_basis(form: RowForm) -> np.ndarray:
    """Generators of ker(A) as rows; may be empty (shape (0, n))."""
    if form.kernel_rows:
        return np.array(form.kernel_rows, dtype=np.int64)
    return np.zeros((0, form.ncols), dtype=np.int64)


def solve_mod(A: np.ndarray, y: np.ndarray, p: int, c: int):
    """One-shot A x = y solve; returns (x, loss, kernel rows) or None."""
    form = row_form(A, p, c)
    got = solve(form, y)
    if got is None:
        return None
    x, loss = got
    return x, loss, kernel_basis(form)


def kernel_mod(A: np.ndarray, p: int, c: int) -> np.ndarray:
    return kernel_basis(row_form(A, p, c))
