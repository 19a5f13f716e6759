"""Bounded Levenshtein distance."""

from __future__ import annotations


def levenshtein(a: str, b: str, max_distance: int | None = None) -> int:
    """Unit-cost edit distance between ``a`` and ``b``.

    With ``max_distance`` set, only a diagonal band of width
    ``2 * max_distance + 1`` is filled and any distance above the bound is
    reported as ``max_distance + 1``.
    """
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    n, m = len(a), len(b)
    if max_distance is None:
        max_distance = n
    if n - m > max_distance:
        return max_distance + 1
    if m == 0:
        return n

    over = max_distance + 1
    prev = [j if j <= max_distance else over for j in range(m + 1)]
    for i in range(1, n + 1):
        lo = max(1, i - max_distance)
        hi = min(m, i + max_distance)
        curr = [over] * (m + 1)
        curr[0] = i if i <= max_distance else over
        ca = a[i - 1]
        row_min = curr[0]
        for j in range(lo, hi + 1):
            cost = 0 if ca == b[j - 1] else 1
            best = prev[j - 1] + cost
            if prev[j] + 1 < best:
                best = prev[j] + 1
            if curr[j - 1] + 1 < best:
                best = curr[j - 1] + 1
            curr[j] = best if best < over else over
            if curr[j] < row_min:
                row_min = curr[j]
        if row_min > max_distance:
            return over
        prev = curr
    return prev[m] if prev[m] <= max_distance else over
