"""Smoke test for the joulefem Python module.

Build and run from the repository root:

    cargo build --release -p joulefem-py --features extension-module
    python3 python/smoke_test.py
"""

import glob
import os
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load():
    libs = glob.glob(os.path.join(ROOT, "target", "*", "libjoulefem_py.so"))
    if not libs:
        sys.exit("libjoulefem_py.so not found; build the joulefem-py crate first")
    lib = max(libs, key=os.path.getmtime)
    tmp = tempfile.mkdtemp()
    shutil.copy(lib, os.path.join(tmp, "joulefem.so"))
    sys.path.insert(0, tmp)
    import joulefem

    return joulefem


DECOUPLED = """
[mesh]
builtin = "box"
n = 4

[boundary]
phi_dirichlet = ["x", "x - 1"]
u_dirichlet = ["x", "x - 1"]

[space]
l = 2

[data]
g_phi = "x"
"""


def main():
    jf = load()
    print("joulefem", jf.__version__)

    r = jf.solve(DECOUPLED)
    assert r["converged"] and r["iterations"] <= 3, r["iterations"]
    assert abs(max(r["u"]) - 0.125) < 1e-12, max(r["u"])
    for (x, _), phi in zip(r["points"], r["phi"]):
        assert abs(phi - x) < 1e-12
    assert r["estimator_total"] < 1e-8
    print("solve: u max %.6f, estimator %.2e" % (max(r["u"]), r["estimator_total"]))

    try:
        jf.solve(DECOUPLED, ["data.g_phi=x+*y"])
    except ValueError as e:
        assert "position 2" in str(e), e
    else:
        raise AssertionError("malformed expression accepted")

    assert jf.mark_dorfler([4.0, 2.0, 1.0, 1.0], 0.6) == [0, 1]
    assert jf.cutoff(2.0, 0.0, 0.0, 1.0) == 1.0
    assert jf.cutoff(0.5, 0.0, 0.0, 1.0) == 0.5
    assert abs(jf.evaluate("sin(pi*x)", 0.5) - 1.0) < 1e-15

    with tempfile.TemporaryDirectory() as d:
        cfg = os.path.join(d, "run.toml")
        with open(cfg, "w") as f:
            f.write(DECOUPLED)
        out = os.path.join(d, "out")
        assert jf.run("estimate", cfg, output=out) == 0
        assert os.path.exists(os.path.join(out, "estimators.csv"))
        assert jf.run("solve", cfg, ["solver.damping=2"], output=out) == 2
        assert jf.run("solve", cfg, ["solver.maxit=0"], output=out) == 3

    print("smoke test passed")


if __name__ == "__main__":
    main()
