"""Smoke test for the helivort_py extension module.

Build and install first:

    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml

then run ``python python/smoke_test.py``.
"""

import math

import helivort_py as hv

CONFIG = """
t_final = 0.05

[blob]
center_x = 1.0
center_y = 0.0
eps = 0.05
gamma = 1.0
particles = 300
"""


def main():
    (a11, a12), (_, a22) = hv.k_matrix(1.0, 2.0, h=1.0)
    # K(x) has eigenvalues 1 and h^2 / (|x|^2 + h^2)
    assert abs(a11 + a22 - (1.0 + 1.0 / 6.0)) < 1e-12
    assert abs(a11 * a22 - a12 * a12 - 1.0 / 6.0) < 1e-12

    tx, ty = hv.diffeo(math.sqrt(3.0), 0.0)
    assert abs(tx - 2.0 * math.e / 3.0 * math.sqrt(3.0)) < 1e-12 and ty == 0.0

    nu = hv.nu((1.0, 0.0), 1.0)
    assert abs(nu + 1.0 / (4.0 * math.pi * math.sqrt(2.0))) < 1e-15

    ok, table = hv.kernel_check(samples=500)
    assert ok, table

    levels, orders = hv.solver_check([33, 65])
    assert len(levels) == 2 and orders[0] > 1.5, (levels, orders)

    run = hv.simulate(CONFIG)
    cols = run["columns"]
    assert list(cols)[:3] == ["t", "b_x_0", "b_y_0"]
    assert cols["t"][0] == 0.0 and cols["t"][-1] == 0.05
    j2 = cols["J2_0"]
    assert abs(j2[-1] - j2[0]) < 1e-6
    assert run["summary"]["blob0.nu_theory"].startswith("-0.0562")

    try:
        hv.simulate("h = -1\n[blob]\ncenter_x = 1\ncenter_y = 0\neps = 0.05\ngamma = 1\n")
    except ValueError:
        pass
    else:
        raise AssertionError("negative pitch accepted")

    print(f"helivort_py {hv.__version__}: {run['steps']} steps, dt={run['dt']:.3e}, smoke test ok")


if __name__ == "__main__":
    main()
