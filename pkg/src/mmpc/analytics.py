"""Closed-form rates, the replication baseline, upper bounds and sweeps.

Everything is computed with :class:`fractions.Fraction`; decimals only
appear when rendering CSV.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from itertools import product
from typing import Iterable, Sequence

from .errors import BadParams
from .planner import plan_summary


def pc_capacity(N: int, K: int) -> Fraction:
    """Capacity ``(1 - 1/N) / (1 - N**-K)`` of single-function private computation.

    Raises:
        BadParams: unless ``N >= 2`` and ``K >= 1``.
    """
    if N < 2 or K < 1:
        raise BadParams(f"need N >= 2 and K >= 1, got N={N}, K={K}")
    return (1 - Fraction(1, N)) / (1 - Fraction(1, N**K))


@dataclass(frozen=True)
class BaselineRate:
    """Rate of the baseline that repeats a single-function scheme.

    ``C_mmP`` is ``None`` when its closed form is not available (``P < M/2``).
    """

    R1: Fraction
    Delta: Fraction
    C_mmP: Fraction | None


def baseline_rate(M: int, K: int, P: int, N: int) -> BaselineRate:
    """Baseline rate: repeated private computation plus extra decodable symbols.

    ``Delta = (P-1)(N-1) / (N**M (1 - N**-K))``.  When ``P >= M/2`` the
    multi-message retrieval capacity ``1 / (1 + (M-P)/(P N))`` is also
    available and ``R1`` is the larger of the two.

    Raises:
        BadParams: unless ``1 <= P <= K <= M`` and ``N >= 2``.
    """
    if not (1 <= P <= K <= M and N >= 2):
        raise BadParams(f"need 1 <= P <= K <= M and N >= 2, got M={M}, K={K}, P={P}, N={N}")
    delta = Fraction((P - 1) * (N - 1), N**M) / (1 - Fraction(1, N**K))
    first = pc_capacity(N, K) + delta
    c_mm = None
    if 2 * P >= M:
        c_mm = 1 / (1 + Fraction(M - P, P * N))
    return BaselineRate(max(first, c_mm) if c_mm is not None else first, delta, c_mm)


def upper_bound(K: int, P: int, N: int) -> Fraction:
    """Capacity upper bound used for the order-optimality gap.

    Raises:
        BadParams: unless ``1 <= P <= K`` and ``N >= 2``.
    """
    if not (1 <= P <= K and N >= 2):
        raise BadParams(f"need 1 <= P <= K and N >= 2, got K={K}, P={P}, N={N}")
    if 2 * P <= K:
        return (1 - Fraction(1, N)) / (1 - Fraction(1, N ** (K // P)))
    return 1 / (1 + Fraction(K - P, P * N))


@dataclass(frozen=True)
class GapCheck:
    R_upper: Fraction
    ratio: Fraction
    within2: bool


def gap_check(K: int, P: int, N: int, R_achieved: Fraction) -> GapCheck:
    """Ratio of the upper bound to an achieved rate.

    Raises:
        BadParams: if the achieved rate is not positive.
    """
    R_achieved = Fraction(R_achieved)
    if R_achieved <= 0:
        raise BadParams("the achieved rate must be positive")
    ru = upper_bound(K, P, N)
    ratio = ru / R_achieved
    return GapCheck(ru, ratio, ratio <= 2)


def scheme_rate(M: int, K: int, P: int, N: int) -> Fraction:
    """Rate of the proposed scheme; ``P == K`` falls back to downloading everything."""
    if P == K:
        return Fraction(P, K)
    return plan_summary(M, K, P, N).R2


@dataclass(frozen=True)
class RatePoint:
    M: int
    K: int
    P: int
    N: int
    R1: Fraction
    R2: Fraction
    C_pc: Fraction
    Delta: Fraction
    C_mmP: Fraction | None
    R_upper: Fraction
    gap: Fraction


def rate_point(M: int, K: int, P: int, N: int) -> RatePoint:
    base = baseline_rate(M, K, P, N)
    R2 = scheme_rate(M, K, P, N)
    ru = upper_bound(K, P, N)
    return RatePoint(M, K, P, N, base.R1, R2, pc_capacity(N, K), base.Delta, base.C_mmP, ru, ru / max(base.R1, R2))


def sweep(
    Ms: Iterable[int], Ks: Iterable[int], Ps: Iterable[int], Ns: Iterable[int], skip_invalid: bool = True
) -> list[RatePoint]:
    """One :class:`RatePoint` per admissible ``(M, K, P, N)`` in the grid."""
    out = []
    for M, K, P, N in product(list(Ms), list(Ks), list(Ps), list(Ns)):
        if not (1 <= P <= K <= M and N >= 2):
            if skip_invalid:
                continue
            raise BadParams(f"invalid grid point M={M}, K={K}, P={P}, N={N}")
        out.append(rate_point(M, K, P, N))
    return out


CSV_COLUMNS = ("M", "K", "P", "N", "R1", "R2", "C_pc", "Delta", "C_mmP", "R_upper", "gap")


def _render(v) -> str:
    if v is None:
        return "NA"
    if isinstance(v, Fraction):
        return f"{float(v):.6f}"
    return str(v)


def to_csv(points: Sequence[RatePoint]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for p in points:
        w.writerow([_render(getattr(p, c)) for c in CSV_COLUMNS])
    return buf.getvalue()
