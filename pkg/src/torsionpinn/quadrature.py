"""Adaptive Simpson quadrature."""
from __future__ import annotations

import math
from typing import Callable

from .errors import QuadratureError


def _simpson(fa: float, fm: float, fb: float, a: float, b: float) -> float:
    return (b - a) / 6.0 * (fa + 4.0 * fm + fb)


def adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float = 1e-10,
                     max_intervals: int = 200_000, max_depth: int = 60) -> float:
    """Integrate ``f`` over ``[a, b]`` to absolute tolerance ``tol``.

    Classic recursive Simpson with the ``|S2 - S1| <= 15 tol`` acceptance test
    and Richardson correction, run on an explicit stack.  Raises
    :class:`QuadratureError` when the subdivision budget runs out.
    """
    if not a < b:
        if a == b:
            return 0.0
        raise ValueError("need a < b")
    if tol <= 0:
        raise ValueError("tol must be positive")
    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = _simpson(fa, fm, fb, a, b)
    stack = [(a, b, fa, fm, fb, whole, tol, 0)]
    total = 0.0
    intervals = 0
    while stack:
        a, b, fa, fm, fb, whole, eps, depth = stack.pop()
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = _simpson(fa, flm, fm, a, m)
        right = _simpson(fm, frm, fb, m, b)
        delta = left + right - whole
        intervals += 1
        if abs(delta) <= 15.0 * eps or depth >= max_depth:
            if depth >= max_depth and abs(delta) > 15.0 * eps:
                raise QuadratureError(f"no convergence on [{a}, {b}] at depth {depth}")
            total += left + right + delta / 15.0
            continue
        if intervals > max_intervals:
            raise QuadratureError(f"subdivision budget of {max_intervals} intervals exceeded")
        if not (math.isfinite(left) and math.isfinite(right)):
            raise QuadratureError(f"non-finite integrand on [{a}, {b}]")
        stack.append((m, b, fm, frm, fb, right, 0.5 * eps, depth + 1))
        stack.append((a, m, fa, flm, fm, left, 0.5 * eps, depth + 1))
    return total


def cumulative_simpson(f: Callable[[float], float], nodes, tol: float = 1e-10) -> list[float]:
    """Running integrals ``int_{nodes[0]}^{nodes[i]} f`` with tol split over pieces."""
    nodes = [float(x) for x in nodes]
    out = [0.0]
    piece_tol = tol / max(len(nodes) - 1, 1)
    acc = 0.0
    for lo, hi in zip(nodes[:-1], nodes[1:]):
        acc += adaptive_simpson(f, lo, hi, piece_tol)
        out.append(acc)
    return out
