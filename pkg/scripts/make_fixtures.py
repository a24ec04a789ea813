"""Regenerate the bundled fixtures in src/pandemic_gm/data.

The 20-region city is synthetic: region centroids on a 12 km x 20 km strip,
populations and a downtown attraction hub, and gravity-model visit counts
with Poisson noise. Couplings come from the linear mobility proxy in
``pandemic_gm.ingest``.
"""

from pathlib import Path

import numpy as np

from pandemic_gm.ingest import MobilityTable, build_model_from_mobility, save_mobility_csv, save_model
from pandemic_gm.model import Graph, IsingModel

DATA = Path(__file__).resolve().parents[1] / "src" / "pandemic_gm" / "data"
CITY_SEED = 20221
CITY_SCALE = 6.0


def city_mobility(n: int = 20, seed: int = CITY_SEED) -> MobilityTable:
    rng = np.random.default_rng(seed)
    xy = np.column_stack([rng.uniform(0, 12, n), rng.uniform(0, 20, n)])
    xy[0] = (6.0, 10.0)  # downtown
    pop = rng.lognormal(mean=np.log(5000), sigma=0.4, size=n)
    attract = rng.lognormal(mean=0.0, sigma=0.5, size=n)
    attract[0] = 8.0
    dist = np.linalg.norm(xy[:, None] - xy[None, :], axis=-1)
    rate = 0.02 * pop[:, None] * attract[None, :] / (1.0 + (dist / 6.0) ** 2)
    counts = rng.poisson(rate)
    o, d = np.nonzero(~np.eye(n, dtype=bool))
    c = counts[o, d]
    keep = c > 0
    return MobilityTable(o[keep], d[keep], c[keep], n)


def main():
    DATA.mkdir(parents=True, exist_ok=True)
    table = city_mobility()
    save_mobility_csv(table, DATA / "seattle20_mobility.csv")
    save_model(build_model_from_mobility(table, scale=CITY_SCALE, h0=-1.0), DATA / "seattle20.json")

    k3 = Graph.complete(3)
    save_model(IsingModel(k3, [1.0, 1.0, 1.0], [-1.0, -1.0, -1.0]), DATA / "k3.json")
    save_model(IsingModel(Graph.path(2), [3.0], [-1.0, -1.0]), DATA / "path2.json")
    # strongly bonded pairs joined by weak links: two-mode constraints pass,
    # yet a seed drags its partner along
    chain = Graph.path(6)
    save_model(IsingModel(chain, [3.0, 2.6, 3.0, 0.5, 3.0], [-1.0] * 6), DATA / "chain6_adversarial.json")
    save_model(IsingModel(Graph.grid(3, 3), [0.5] * 12, [-1.0] * 9), DATA / "grid3x3.json")


if __name__ == "__main__":
    main()
