"""Freeze oracle MAP states for the bundled fixtures into tests/golden/.

Every entry is computed by exhaustive enumeration (map_bruteforce), never by
the min-cut path that the golden tests check. Rerun only when a fixture
changes.
"""

import json
from pathlib import Path

from pandemic_gm import ingest
from pandemic_gm.inference import classify_map, map_bruteforce

FIXTURES = ["k3", "path2", "chain6_adversarial", "grid3x3", "seattle20"]
OUT = Path(__file__).resolve().parents[1] / "tests" / "golden" / "map_states.json"


def main():
    golden = {}
    for name in FIXTURES:
        m = ingest.load_model(ingest.bundled(f"{name}.json"))
        rows = []
        for a in range(m.node_count):
            r = map_bruteforce(m, {a})
            rows.append(
                {
                    "seeds": [a],
                    "state": [int(x) for x in r.state],
                    "energy": r.energy,
                    "class": classify_map(r, {a}).value,
                }
            )
        golden[name] = rows
        print(name, "done")
    OUT.parent.mkdir(exist_ok=True)
    OUT.write_text(json.dumps(golden, indent=1) + "\n")


if __name__ == "__main__":
    main()
