"""Smoke test for the moire_radiance extension module.

Build and install first:

    pip install --no-build-isolation ./crates/python
    python python/smoke_test.py
"""

import math

import moire_radiance as mr


def close(a, b, tol):
    assert abs(a - b) <= tol, f"{a} vs {b}"


def main():
    assert "third" in mr.PATTERNS

    base = mr.Lattice(3, 3, 0.05)
    assert len(base) == 9 and base.f_x == 0.0
    full = base.ordered("full")
    third = base.ordered("third")
    assert sum(third.occupancy) == 3
    doped = base.doped("third")
    assert sum(doped.blocked) == 6 and doped.n_active == 3
    again = mr.Lattice.from_json(third.to_json())
    assert again.occupancy == third.occupancy
    r1, r2 = base.random(0.5, 11), base.random(0.5, 11)
    assert r1.occupancy == r2.occupancy

    c = mr.Couplings(full, eps_dd=1.0)
    g = c.gamma
    assert all(abs(g[i][i] - 1.0) < 1e-12 for i in range(9))
    assert all(abs(g[i][j] - g[j][i]) < 1e-12 for i in range(9) for j in range(9))
    # trace of the one-exciton decay operator is sum of gamma_ii
    close(sum(c.decay_rates(1)), 9.0, 1e-9)

    single = mr.Lattice(1, 1, 0.05).ordered("full")
    tr = mr.evolve_exact(single, t_max=2.0, rtol=1e-10, atol=1e-12)
    for t, n in zip(tr.times, tr.total_excitons):
        close(n, math.exp(-t), 1e-8)
    assert all(abs(x - 1.0) < 1e-9 for x in tr.gamma_rate)

    small = mr.Lattice(1, 3, 0.05).ordered("full")
    ex = mr.evolve_exact(small, eps_dd=2.0, t_max=1.0, rtol=1e-10, atol=1e-12)
    cu = mr.evolve_cumulant_closure(small, eps_dd=2.0, order=3, t_max=1.0, rtol=1e-10, atol=1e-12)
    close(ex.gamma_rate[0], 1.0, 1e-12)
    assert len(ex) == len(cu)
    assert max(abs(a - b) for a, b in zip(ex.gamma_rate, cu.gamma_rate)) < 1e-6

    free = mr.evolve_exact(mr.Lattice(2, 2, 0.05).ordered("full"), t_max=2.0)
    strong = mr.evolve_exact(mr.Lattice(2, 2, 0.05).ordered("full"), eps_dd=5.0, t_max=2.0)
    g0, t0 = free.gamma_max()
    assert g0 > 1.0 and t0 > 0.0, "four close emitters should burst"
    close(mr.eta(free, free), 1.0, 0.0)
    assert mr.eta(strong, free) < 1.0
    assert free.to_csv().splitlines()[-1].count(",") == 2

    mean = mr.disorder_average([free, free])
    close(mean.gamma_max()[0], g0, 1e-12)

    fit = mr.finite_size_fit([(n, 0.8 + 1.0 / n) for n in (9, 16, 25, 36)])
    close(fit["inf"], 0.8, 1e-12)
    close(fit["alpha"], 1.0, 1e-10)

    try:
        base.ordered("sixth")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown pattern accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
