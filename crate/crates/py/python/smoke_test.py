"""Smoke test for the pychsurf extension module.

Build first with `cargo build --release -p chsurf-py`, then run
`python3 crates/py/python/smoke_test.py`. The module is loaded straight
from the cargo target directory; set PYCHSURF_LIB to override the path.
"""

import importlib.machinery
import importlib.util
import json
import math
import os
import pathlib
import sys
import tempfile

import numpy as np

ROOT = pathlib.Path(__file__).resolve().parents[3]


def load():
    candidates = [os.environ.get("PYCHSURF_LIB")] + [
        ROOT / "target" / profile / "libpychsurf.so" for profile in ("release", "debug")
    ]
    for path in filter(None, candidates):
        if pathlib.Path(path).exists():
            loader = importlib.machinery.ExtensionFileLoader("pychsurf", str(path))
            spec = importlib.util.spec_from_loader("pychsurf", loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("libpychsurf.so not found; run cargo build --release -p chsurf-py")


def dense(csr, n):
    indptr, indices, data = csr
    a = np.zeros((n, n))
    for i in range(n):
        for k in range(indptr[i], indptr[i + 1]):
            a[i, indices[k]] = data[k]
    return a


def main():
    ch = load()

    sphere = ch.Surface.sphere(1.0)
    m = ch.mesh(2, sphere)
    n = m.node_count()
    assert n == 162, n
    assert len(m.elements) == 320
    nodes = np.array(m.nodes)
    assert np.allclose(np.linalg.norm(nodes, axis=1), 1.0)

    mass, stiff = dense(m.mass(), n), dense(m.stiffness(), n)
    assert np.allclose(mass, mass.T) and np.allclose(stiff, stiff.T)
    assert abs(mass.sum() - m.area()) < 1e-12
    assert 0.98 * 4 * math.pi < m.area() < 4 * math.pi
    assert np.abs(stiff.sum(axis=1)).max() < 1e-12
    # static surface: no mass change
    assert np.abs(dense(m.mass_derivative(), n)).max() < 1e-10

    delta, gamma = ch.bdf_coefficients(2)
    assert np.allclose(delta, [1.5, -2.0, 0.5]) and np.allclose(gamma, [2.0, -1.0])
    exact_delta, _ = ch.bdf_coefficients_exact(3)
    assert exact_delta == [(11, 6), (-3, 1), (3, 2), (-1, 3)]

    # Ritz map beats the interpolant in the energy norm
    field = ch.Field.decaying_product(0.0)
    ritz = m.ritz_map(field)
    inter = m.interpolate(field)
    h1 = lambda e: math.hypot(*e)
    assert h1(m.error(field, ritz)) < h1(m.error(field, inter))
    assert abs(np.dot(mass.sum(axis=0), ritz)) < 1e-3

    ellipsoid = ch.Surface.ellipsoid(1.0, 0.25, 1.0)
    moved = ch.mesh(2, ellipsoid).evolve(0.25, 4)
    assert moved.time == 0.25
    x = np.array(moved.nodes)
    assert np.abs(x[:, 0] ** 2 / 1.25 + x[:, 1] ** 2 + x[:, 2] ** 2 - 1).max() < 1e-6

    config = """
[surface]
kind = "sphere"
radius = 1.0

[problem]
epsilon = 0.5

[problem.exact]
kind = "decaying_product"
rate = 6.0

[discretization]
levels = [2]
order = 2
tau = [0.05]
final_time = 0.1
"""
    canonical, digest = ch.check_config(config)
    assert ch.check_config(canonical)[1] == digest
    with tempfile.TemporaryDirectory() as out:
        report = json.loads(ch.run_config(config, "run", out))
        assert report["schema_version"] == 1 and report["complete"]
        run = report["runs"][0]
        assert run["nodes"] == 162 and run["steps"] == 2
        assert max(run["solver"]["max_residual_u"], run["solver"]["max_residual_w"]) < 1e-10
        assert pathlib.Path(out, "summary.json").exists()

    try:
        ch.check_config(config.replace("epsilon", "epsilom"))
    except ValueError:
        pass
    else:
        raise AssertionError("unknown key accepted")

    print("pychsurf smoke test passed")


if __name__ == "__main__":
    main()
