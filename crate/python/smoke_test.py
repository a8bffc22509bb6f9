"""Smoke test for the spatial_heckit extension module.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`.
"""

import math
import random

import spatial_heckit as sh


def make_dataset(seed=3, locations=12, subs=3, size=6):
    rng = random.Random(seed)
    cols = {k: [] for k in ("obs_id", "location", "sublocation", "selected", "y2", "x", "z")}
    for j in range(locations):
        for a in range(subs):
            effect = 5.0 * (j + 1) * (a + 1)
            for i in range(size):
                x = rng.gauss(0, 1)
                z = rng.random()
                e1 = rng.gauss(0, 1)
                sel = 0.2 * z + e1 > 0
                y = x + effect + 0.7 * e1 + rng.gauss(0, 1)
                cols["obs_id"].append(f"{j}-{a}-{i}")
                cols["location"].append(str(j))
                cols["sublocation"].append(str(a))
                cols["selected"].append(sel)
                cols["y2"].append(y if sel else None)
                cols["x"].append([x])
                cols["z"].append([z])
    return sh.Dataset(**cols)


def main():
    lam, dee = sh.inverse_mills(0.0)
    assert abs(lam - 0.7978845608) < 1e-10 and abs(dee - 0.3633802277) < 1e-10
    assert abs(sh.normal_cdf(1.959963985) - 0.975) < 1e-10

    ds = make_dataset()
    assert ds.n_obs == len(ds) == 216 and ds.n_locations == 12

    fit = sh.fit(ds, op="fixed-effect", rule="sublocation")
    assert fit.names == ["x1", "lambda"]
    assert all(math.isfinite(v) for v in fit.theta + fit.std_errors)
    assert abs(fit.coef("x1") - 1.0) < 0.5, fit.coef("x1")

    a = fit.bootstrap("x1", null=1.0, replications=199, seed=7)
    b = fit.bootstrap("x1", null=1.0, replications=199, seed=7)
    assert a.p_value == b.p_value and 0.0 < a.p_value <= 1.0

    pw = sh.fit(ds, op="pairwise", rule="location", variance="residual-augmented")
    assert pw.m_rows > fit.m_rows

    try:
        sh.fit(ds, rule="distance")
    except ValueError as e:
        assert "d" in str(e)
    else:
        raise AssertionError("distance rule without d accepted")

    rows = sh.simulate_cell(5, 2, 3, replications=100, seed=1)
    assert [r["estimator"] for r in rows] == ["No-differencing", "Location Differencing", "Sub-location Differencing"]
    print("smoke test passed:", fit.report().splitlines()[0], f"p_boot={a.p_value:.3f}")


if __name__ == "__main__":
    main()
