"""Shared helpers and independent oracles.

The oracles here deliberately avoid the package's vectorized code paths:
energies are summed term by term and MAP states found by plain itertools
enumeration, so they can catch errors in the optimized implementations.
"""

from __future__ import annotations

import itertools
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from pandemic_gm.model import Graph, IsingModel

TESTS = Path(__file__).parent
GOLDEN = TESTS / "golden"


def oracle_energy(edges, J, h, x) -> float:
    e = 0.0
    for a, ha in enumerate(h):
        e -= ha * x[a]
    for (a, b), j in zip(edges, J):
        e -= j * x[a] * x[b]
    return e


def oracle_map(edges, J, h, seeds):
    """Minimum-energy clamped state; ties: fewest +1, then lexicographic."""
    n = len(h)
    best = None
    for x in itertools.product((-1, 1), repeat=n):
        if any(x[s] != 1 for s in seeds):
            continue
        key = (oracle_energy(edges, J, h, x), sum(v == 1 for v in x), x)
        if best is None or key < best:
            best = key
    return best[2], best[0]


def random_graph(rng: np.random.Generator, n: int, m: int | None = None) -> Graph:
    pairs = list(itertools.combinations(range(n), 2))
    if m is None:
        m = int(rng.integers(0, len(pairs) + 1))
    pick = sorted(rng.choice(len(pairs), size=m, replace=False).tolist()) if m else []
    return Graph(n, tuple(pairs[i] for i in pick))


def random_model(rng, n, m=None, j_max=2.0, h_lo=-2.0, h_hi=0.0, dyadic=False) -> IsingModel:
    g = random_graph(rng, n, m)
    if dyadic:
        # exact binary fractions make ties and boundaries common
        J = rng.integers(0, 2 * 4 + 1, g.edge_count) / 4.0
        h = -rng.integers(0, 2 * 4 + 1, n) / 4.0
    else:
        J = rng.uniform(0.0, j_max, g.edge_count)
        h = rng.uniform(h_lo, h_hi, n)
    return IsingModel(g, J, h)


def run_cli(*args, env=None, cwd=None):
    """Run the console entry point in a subprocess."""
    full_env = dict(os.environ)
    full_env.update(env or {})
    return subprocess.run(
        [sys.executable, "-m", "pandemic_gm.cli", *map(str, args)],
        capture_output=True,
        text=True,
        env=full_env,
        cwd=cwd,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"AC{number:<2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s[2:4])):
            terminalreporter.write_line(line)
