"""Regenerates the bundled fixtures (numpy). Output is committed; rerun only
to change them."""
import json

import numpy as np


def write_csv(path, m, names):
    with open(path, "w") as f:
        f.write(",".join(names) + "\n")
        for r in np.atleast_2d(m):
            f.write(",".join(f"{v:.10f}" for v in r) + "\n")


def toy():
    # Groups a and c active, b inactive; exhaustive BIC search over the
    # eight group subsets picks {a, c} on this draw.
    rng = np.random.default_rng(2)
    n = 40
    x = rng.standard_normal((n, 6))
    beta = np.array([1.5, -1.0, 0, 0, 0.8, 1.2])
    y = x @ beta + 0.5 * rng.standard_normal(n)
    write_csv("toy/x.csv", x, [f"x{j + 1}" for j in range(6)])
    write_csv("toy/y.csv", y[:, None], ["y"])
    groups = [{"name": g, "start": 2 * k + 1, "end": 2 * k + 2} for k, g in enumerate("abc")]
    with open("toy/groups.json", "w") as f:
        json.dump(groups, f, indent=2)


def additive():
    # Components 1-5 active with strong signal, 6-8 pure noise.
    rng = np.random.default_rng(20240611)
    rng.standard_normal((40, 6))
    rng.standard_normal(40)
    n, k = 200, 8
    x = rng.uniform(-2, 2, (n, k))
    f = [3 * np.sin(x[:, 0]), 2 * x[:, 1] ** 2, -1.5 * x[:, 2], np.exp(x[:, 3]), np.log(np.abs(x[:, 4]) + 1)]
    y = sum(f) + 0.2 * rng.standard_normal(n)
    write_csv("additive/x.csv", x, [f"v{j + 1}" for j in range(k)])
    write_csv("additive/y.csv", y[:, None], ["y"])


if __name__ == "__main__":
    toy()
    additive()
