"""Brute-force per-cell oracles.

Everything here works on a uniform grid of N cells [i/N, (i+1)/N) and plain Python ints and
Fractions.  None of it calls the engine's set algebra; the only inputs taken from the engine
are construction *choices* (tower bases, block permutations), never derived quantities.
"""

from __future__ import annotations

from collections import Counter
from fractions import Fraction
from math import lcm


def odometer_perm(depth: int, radix: int = 2, grid_depth: int | None = None) -> list[int]:
    """Adding machine on the first `depth` digits, acting on a grid of radix**grid_depth cells.

    Cell i has digits d_1..d_D (most significant first); the map adds 1 to d_1 and carries
    toward d_depth.  Digits below `depth` ride along unchanged.
    """
    D = depth if grid_depth is None else grid_depth
    N = radix ** D
    low = radix ** (D - depth)
    out = []
    for i in range(N):
        top, rest = divmod(i, low)
        digits = [(top // radix ** (depth - 1 - j)) % radix for j in range(depth)]
        j = 0
        while j < depth:
            digits[j] += 1
            if digits[j] < radix:
                break
            digits[j] = 0
            j += 1
        new_top = sum(d * radix ** (depth - 1 - j) for j, d in enumerate(digits))
        out.append(new_top * low + rest)
    return out


def grid_for(values, start: int = 1) -> int:
    """Smallest multiple of `start` that puts every rational in `values` on the grid."""
    n = start
    for v in values:
        n = lcm(n, Fraction(v).denominator)
    return n


def cells_of(intervals, N: int) -> list[int]:
    out = []
    for lo, hi in intervals:
        a, b = Fraction(lo) * N, Fraction(hi) * N
        assert a.denominator == 1 and b.denominator == 1, "set is not aligned to the grid"
        out.extend(range(int(a), int(b)))
    return out


def refine_perm(perm: list[int], factor: int) -> list[int]:
    """A cell permutation on N cells viewed on N*factor cells (each cell translated rigidly)."""
    return [perm[i // factor] * factor + i % factor for i in range(len(perm) * factor)]


def power(perm: list[int], k: int) -> list[int]:
    n = len(perm)
    if k < 0:
        inv = [0] * n
        for i, j in enumerate(perm):
            inv[j] = i
        perm, k = inv, -k
    out = list(range(n))
    for _ in range(k):
        out = [perm[i] for i in out]
    return out


def blocked_action(R: list[int], base: list[int], height: int, L: int,
                   tables: dict[int, list[tuple[int, ...]]]) -> list[int]:
    """The next action obtained by reordering every column of the tower over `base`.

    tables[b][q] is the block-q permutation table (old position w ↦ new position, 1-based)
    for base cell b.  Inside a column the new action visits cells in new-position order;
    leaving the top, or stepping off the tower, follows R and enters the next column at its
    first new position.
    """
    N = len(R)
    base_set = set(base)
    cols, seq = column_orders(R, base, height, L, tables)
    in_tower = {x for col in cols.values() for x in col}

    def enter(y: int) -> int:
        return seq[y][0] if y in base_set else y

    S = [-1] * N
    for b in base:
        s = seq[b]
        for a, c in zip(s, s[1:]):
            S[a] = c
        top = R[power_col_top(R, b, height)]
        S[s[-1]] = enter(top)
    for x in range(N):
        if x not in in_tower:
            S[x] = enter(R[x])
    assert sorted(S) == list(range(N)), "derived action is not a permutation"
    return S


def column_orders(R: list[int], base: list[int], height: int, L: int,
                  tables: dict[int, list[tuple[int, ...]]]) -> tuple[dict[int, list[int]], dict[int, list[int]]]:
    """Old columns (R order) and the same cells listed in new-position order, per base cell."""
    cols, seq = {}, {}
    for b in base:
        col = [b]
        for _ in range(height - 1):
            col.append(R[col[-1]])
        order = []
        for q, table in enumerate(tables[b]):
            inv = {r: w for w, r in enumerate(table, start=1)}
            order.extend(col[q * L + inv[r] - 1] for r in range(1, L + 1))
        cols[b], seq[b] = col, order
    return cols, seq


def walk(perm: list[int], x: int, steps: int) -> list[int]:
    out = [x]
    for _ in range(steps):
        out.append(perm[out[-1]])
    return out


def power_col_top(R: list[int], b: int, height: int) -> int:
    x = b
    for _ in range(height - 1):
        x = R[x]
    return x


def orbit_index(perm: list[int], x: int, y: int, window: int) -> int | None:
    """The j with |j| ≤ window and perm^j x = y, smallest |j| first (positive wins ties)."""
    n = len(perm)
    inv = [0] * n
    for i, j in enumerate(perm):
        inv[j] = i
    f = b = x
    if x == y:
        return 0
    for j in range(1, window + 1):
        f, b = perm[f], inv[b]
        if f == y:
            return j
        if b == y:
            return -j
    return None


def cocycle_table(S: list[int], Sn: list[int], k: int, window: int) -> list[int | None]:
    """α(x, k): the j with S^k x = Sn^j x, cell by cell."""
    Sk = power(S, k)
    return [orbit_index(Sn, x, Sk[x], window) for x in range(len(S))]


def inverse_cocycle_table(S: list[int], Sn: list[int], k: int, window: int) -> list[int | None]:
    """β(x, k): the m with Sn^k x = S^m x, cell by cell."""
    Snk = power(Sn, k)
    return [orbit_index(S, x, Snk[x], window) for x in range(len(S))]


def fixed_stage_cells(tables: list[list[int | None]], through: int) -> dict[int, list[int]]:
    """D_n: cells whose value agrees with the last table from stage n on but not from n-1.

    tables[m-1] holds the values after stage m, m = 1..top.
    """
    top = len(tables)
    N = len(tables[0])
    first = []
    for x in range(N):
        n = top
        while n > 1 and tables[n - 2][x] == tables[top - 1][x]:
            n -= 1
        first.append(n)
    return {n: [x for x in range(N) if first[x] == n] for n in range(1, min(through, top) + 1)}


def joint_counts(labels_p: list[str], labels_q: list[str]) -> dict[str, Fraction]:
    N = len(labels_p)
    c = Counter(f"{a}|{b}" for a, b in zip(labels_p, labels_q))
    return {k: Fraction(v, N) for k, v in c.items()}


def entropy_bits(masses) -> float:
    from math import log
    return -sum(float(m) * log(float(m)) for m in masses if m)
