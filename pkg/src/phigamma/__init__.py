"""Exact finite-precision arithmetic in p-adic period rings, with the full
Frobenius / Tate-Sen descent pipeline for etale phi/Gamma-modules over
coefficient rings that may have p-torsion.

Every value carries an explicit precision ledger (p-adic digits, series
window, tower level) and every descent run emits a machine-checkable
certificate.
"""

from phigamma.coeff import CoeffRing, TorsionBasis, ring_make, torsion_filtration
from phigamma.periodring import LevelSeries, RingContext

__all__ = [
    "CoeffRing",
    "TorsionBasis",
    "ring_make",
    "torsion_filtration",
    "LevelSeries",
    "RingContext",
]

__version__ = "0.1.0"
