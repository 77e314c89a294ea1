"""Smoke test for the Python bindings.

Build the extension first, for example with
`maturin develop -m crates/python/Cargo.toml`, then run
`python python/smoke_test.py`.
"""

import csv
import math
import os
import tempfile

import rdlasso_py as rd


def main():
    consts = rd.kernel_constants("triangular")
    assert abs(consts["bias_constant"] - 0.8) < 1e-12
    assert abs(consts["variance_constant"] - 4.8) < 1e-12

    data = rd.generate(seed=7, n=1000, p=200)
    assert (data.n, data.p) == (1000, 200)

    est = rd.estimate_sharp(data, rd.PipelineConfig(lambda_method="bch"))
    print(est)
    assert est.ci_lower < est.tau_hat < est.ci_upper
    assert est.to_dict()["n_selected"] == len(est.selected)

    baseline = rd.estimate_sharp(data, rd.PipelineConfig(lambda_method="inf"))
    assert baseline.selected == []
    assert abs(baseline.tau_hat - rd.fit_jump(data, baseline.h)) < 1e-12

    fuzzy_input = rd.Dataset(data.y, data.x, None, [1.0 if v >= 0 else 0.0 for v in data.x])
    fuzzy = rd.estimate_fuzzy(fuzzy_input)
    assert fuzzy.tau_t == 1.0

    rows = rd.balance_tests(rd.generate(seed=8, n=1000, p=10))
    assert len(rows) == 10 and all(0.0 <= r["p_value"] <= 1.0 for r in rows)

    assert rd.benjamini_hochberg([0.001, 0.5, 0.02], 0.05) == [True, False, True]

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "sample.csv")
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["score", "outcome", "z1"])
            for i in range(300):
                x = -1 + 2 * (i + 0.5) / 300
                w.writerow([x + 36, math.sin(3 * x) + (0.4 if x >= 0 else 0.0), math.cos(7 * i)])
        loaded = rd.load_csv(path, outcome="outcome", running="score", cutoff=36.0)
        assert loaded.p == 1 and loaded.covariate_names == ["z1"]
        print(rd.estimate_sharp(loaded))

    try:
        rd.PipelineConfig(kernel="gaussian")
    except ValueError as e:
        assert "triangular" in str(e)
    else:
        raise AssertionError("unknown kernel accepted")

    table = rd.simulate(reps=3, seed=1, n=500, p=20, estimators=["bch", "none"])
    assert [r["estimator"] for r in table] == ["Lasso (BCH)", "No covariates"]
    print("smoke test passed")


if __name__ == "__main__":
    main()
