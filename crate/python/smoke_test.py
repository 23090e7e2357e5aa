"""Smoke test for the curloop extension module.

Build and run:
    cargo build -p curloop-py --release
    cp target/release/libcurloop_py.so python/curloop.so
    python3 python/smoke_test.py
"""

import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import curloop  # noqa: E402


def close(a, b, tol):
    assert abs(a - b) <= tol, (a, b)


def main():
    ex = curloop.GaussianSystem.example_text_image()
    rep = ex.sensitivity_report()
    close(rep["rho_p"], math.sqrt(0.5), 1e-12)
    close(rep["inner_product_p"], -0.5, 1e-10)
    assert rep["decisive_p"] is False

    sys_ = curloop.GaussianSystem.reference(0.2, lambda_cur=0.4)
    assert sys_.dim == 24
    theta, phi = sys_.fixed_point()
    assert len(theta) == 24 and len(phi) == 24
    traj = sys_.simulate(iterations=100)
    tail = [sum(col) / 20 for col in zip(*traj["theta"][80:100])]
    close(max(abs(a - b) for a, b in zip(tail, theta)), 0.0, 1e-6)

    djp, djq = sys_.dj_dlambda()
    assert djp > 0 and djq > 0
    _, djq9 = curloop.GaussianSystem.reference(0.9).dj_dlambda()
    assert djq9 < 0

    c = curloop.RegularityConstants(1.0, 1.0, 1.0, 1.0, 0.2, 0.2)
    close(c.kappa(), 0.75, 4 * 2.220446049250313e-16)
    tau, real = c.tau()
    assert 0 < tau < 1 and abs(tau + real - 1) < 1e-15

    p = curloop.bradley_terry_probabilities([0.0, math.log(3.0)])
    close(p[1], 0.75, 1e-12)
    counts = curloop.bradley_terry_counts([0.0, math.log(3.0)], 10000, seed=7)
    assert sum(counts) == 10000 and abs(counts[1] / 10000 - 0.75) < 0.02

    h, s, v = curloop.rgb_to_hsv(1.0, 0.0, 0.0)
    assert h == 0.0 and v == 1.0
    close(s, 1.0, 1e-7)
    red = [1.0] * 4 + [-1.0] * 8
    close(curloop.band_score(red, 2, 2, "warm"), 1.0, 1e-6)
    close(curloop.band_score(red, 2, 2, "cool"), 0.0, 1e-6)
    rt, rp = curloop.hue_rewards(red, 2, 2, [0.0] * 3, [1.0] * 3)
    assert rt > rp

    try:
        curloop.GaussianSystem.reference(0.2, lambda_cur=1.5)
    except ValueError:
        pass
    else:
        raise AssertionError("expected ValueError")

    print("curloop", curloop.__version__, "smoke test ok")


if __name__ == "__main__":
    main()
