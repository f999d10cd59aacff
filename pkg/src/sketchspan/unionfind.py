"""Disjoint-set forest with path halving and union by size."""

from __future__ import annotations


class UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        parent = self.parent
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    def union(self, a: int, b: int) -> bool:
        """Merge the sets of ``a`` and ``b``; False if already merged."""
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True

    def labels(self) -> list[int]:
        """Smallest member of each element's set."""
        smallest: dict[int, int] = {}
        roots = [self.find(x) for x in range(len(self.parent))]
        for x, r in enumerate(roots):
            smallest.setdefault(r, x)
        return [smallest[r] for r in roots]

    def groups(self) -> list[list[int]]:
        """All sets as sorted lists, ordered by smallest member."""
        out: dict[int, list[int]] = {}
        for x, label in enumerate(self.labels()):
            out.setdefault(label, []).append(x)
        return list(out.values())
