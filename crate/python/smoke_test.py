"""Smoke test for the pymobflow bindings.

Build and install first, e.g.
    pip install maturin && pip install --no-build-isolation ./crates/python
then run `python python/smoke_test.py`.
"""

import math

import pymobflow as mf


def cosine(n, amplitude=0.5):
    h = 1.0 / n
    u = [1.0 + amplitude * math.cos(math.pi * (i + 0.5) * h) for i in range(n)]
    mass = sum(u) * h
    return [x / mass for x in u]


def main():
    print("pymobflow", mf.__version__)
    assert mf.classify_regime(1.5, 0.5, 1) == "Thm11"
    assert abs(mf.u_epsilon(1.0, 0.5, 1.0) - 0.437903) < 1e-6

    rho, w = mf.prox_action(1.0, [0.0], 0.1)
    assert rho == 1.0 and w == [0.0]

    n = 32
    flat = [1.0] * n
    bumped = cosine(n, 0.1)
    d = mf.solve_distance(flat, bumped, [1.0], [n], mobility_kind="constant", n_t=8, tol=1e-6)
    print("W (constant mobility):", d["value"], "converged:", d["converged"])
    assert d["converged"] and d["value"] > 0.0

    u0 = cosine(n)
    traj = mf.jko_run(u0, u0, [1.0], [n], tau=2e-3, t_end=0.01)
    energy = traj["energy"]
    print("JKO energies:", [round(e, 6) for e in energy])
    assert traj["aborted"] is None
    assert all(b <= a + 1e-8 for a, b in zip(energy, energy[1:]))
    assert all(abs(m - 1.0) < 1e-8 for m in traj["mass"])

    ref = mf.reference_run(u0, u0, [1.0], [n], t_end=0.01, every=2e-3)
    print("reference steps:", ref["steps"], "snapshots:", len(ref["times"]))
    l1 = sum(abs(a - b) for a, b in zip(traj["u"][-1], ref["u"][-1])) / n
    print("final L1 discrepancy:", l1)
    assert l1 < 0.05

    try:
        mf.jko_run(u0, u0, [1.0], [n], tau=-1.0, t_end=0.01)
    except ValueError as e:
        print("rejected bad tau:", e)
    else:
        raise AssertionError("negative tau accepted")
    print("smoke test passed")


if __name__ == "__main__":
    main()
