"""Dinic max-flow on float capacities with an explicit zero threshold.

Residual capacities at or below ``eps`` are treated as saturated, both while
augmenting and when reading off the cut, so that near-ties resolve the same
way in the flow and in the reported cut.
"""

from __future__ import annotations

from collections import deque


class FlowNetwork:
    def __init__(self, n: int):
        self.n = n
        self.head = [-1] * n
        self.to: list[int] = []
        self.cap: list[float] = []
        self.nxt: list[int] = []
        self.eps = 0.0

    def add_edge(self, u: int, v: int, cap: float, rev_cap: float = 0.0) -> None:
        """Arc u->v with capacity ``cap`` and v->u with ``rev_cap``."""
        for a, b, c in ((u, v, cap), (v, u, rev_cap)):
            self.to.append(b)
            self.cap.append(float(c))
            self.nxt.append(self.head[a])
            self.head[a] = len(self.to) - 1

    def _levels(self, s: int, t: int) -> list[int] | None:
        level = [-1] * self.n
        level[s] = 0
        q = deque([s])
        head, to, cap, nxt, eps = self.head, self.to, self.cap, self.nxt, self.eps
        while q:
            u = q.popleft()
            e = head[u]
            while e != -1:
                v = to[e]
                if level[v] < 0 and cap[e] > eps:
                    level[v] = level[u] + 1
                    q.append(v)
                e = nxt[e]
        return level if level[t] >= 0 else None

    def _blocking_flow(self, s: int, t: int, level: list[int]) -> float:
        head, to, cap, nxt, eps = self.head, self.to, self.cap, self.nxt, self.eps
        it = list(head)
        total = 0.0
        while True:
            # iterative DFS from s along the level graph
            path: list[int] = []
            u = s
            while u != t:
                e = it[u]
                while e != -1:
                    v = to[e]
                    if cap[e] > eps and level[v] == level[u] + 1:
                        break
                    e = nxt[e]
                it[u] = e
                if e == -1:
                    if u == s:
                        return total
                    # dead end: retreat and skip the arc that led here
                    level[u] = -1
                    e_back = path.pop()
                    u = to[e_back ^ 1]
                    it[u] = nxt[it[u]]
                    continue
                path.append(e)
                u = to[e]
            f = min(cap[e] for e in path)
            for e in path:
                cap[e] -= f
                cap[e ^ 1] += f
            total += f

    def max_flow(self, s: int, t: int, eps: float = 0.0) -> float:
        self.eps = eps
        flow = 0.0
        while True:
            level = self._levels(s, t)
            if level is None:
                return flow
            flow += self._blocking_flow(s, t, level)

    def reachable_from(self, s: int) -> list[bool]:
        """Nodes reachable from ``s`` through unsaturated residual arcs."""
        seen = [False] * self.n
        seen[s] = True
        stack = [s]
        while stack:
            u = stack.pop()
            e = self.head[u]
            while e != -1:
                v = self.to[e]
                if not seen[v] and self.cap[e] > self.eps:
                    seen[v] = True
                    stack.append(v)
                e = self.nxt[e]
        return seen

    def reaching(self, t: int) -> list[bool]:
        """Nodes that can still push residual flow into ``t``."""
        seen = [False] * self.n
        seen[t] = True
        stack = [t]
        while stack:
            v = stack.pop()
            e = self.head[v]
            while e != -1:
                # arc e is v->u; its twin e^1 is u->v
                u = self.to[e]
                if not seen[u] and self.cap[e ^ 1] > self.eps:
                    seen[u] = True
                    stack.append(u)
                e = self.nxt[e]
        return seen
