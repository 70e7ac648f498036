"""Smoke test for the stqn extension module.

Build first, e.g. `maturin develop -m crates/python/Cargo.toml`, or
`cargo build --release -p stqn-py --features extension-module` and put
target/release/libstqn.so on PYTHONPATH as stqn.so.
"""

import math

import stqn


def main():
    sd = stqn.Density("gauss-lrd:beta=0.5")
    mh = stqn.Wavelet("mexican-hat")
    assert sd(1.0) > 0.0
    re, im = mh.psi_hat(0.0)
    assert abs(re) < 1e-12 and im == 0.0

    rep = stqn.assumptions(sd, mh)
    assert all(c["passed"] for c in rep["checks"]), rep

    path = stqn.synthesize(sd, 4096, 0.25, 7)
    assert len(path) == 4096
    t = stqn.t_transform(path, mh, [0, 2])
    u = stqn.stqn(path, mh, [0, 2])
    worst = max(abs(b - a * a) / max(abs(b), 1e-300) for a, b in zip(t.values, u.values))
    assert worst <= 1e-10, worst

    lim = stqn.limits(sd, mh, [0], 2, rel_tol=1e-6)
    assert abs(lim["kappa"] - math.pi / 3) < 1e-5, lim["kappa"]
    assert abs(lim["limit_variance"] - 2 * math.pi**2 / 3) < 1e-4, lim["limit_variance"]

    value, err = stqn.tv_bound(sd, mh, 0, 8)
    assert 0.0 < value < 1.0 and err >= 0.0

    d = stqn.chi2_distance([x * x for x in t.values[::97]], resamples=500, seed=1)
    assert 0.0 <= d["ks"] <= 1.0

    print("stqn smoke test OK: kappa=%.6f, tv_bound(0,8)=%.4f" % (lim["kappa"], value))


if __name__ == "__main__":
    main()
