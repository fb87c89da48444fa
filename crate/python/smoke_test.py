"""Smoke test for the compiled extension: build the extension, then `python python/smoke_test.py`."""

import json
import math

import implicit_em as ie

CONFIG = {
    "regime": "unsupervised",
    "train": {"k": 2, "steps": 200, "seed": 7},
    "data": {"generator": "clusters", "centers": [[-3.0, 0.0], [3.0, 0.0]],
             "stds": [0.5, 0.5], "counts": [100, 100], "seed": 42},
    "output_dir": "unused",
}


def close(a, b, tol=1e-12):
    return all(abs(x - y) <= tol for x, y in zip(a, b))


def main():
    assert abs(ie.log_sum_exp([0.0, 0.0]) - math.log(2)) < 1e-15

    d = [0.0, math.log(3)]
    sa = ie.soft_assign(d)
    assert close(sa.r, [0.75, 0.25])
    assert sa.argmax() == 0
    assert close(ie.lse_gradient(d), [-0.75, -0.25])
    assert abs(sum(ie.nll_gradient(d)) - 1.0) < 1e-12
    assert close(ie.cross_entropy_gradient([0.0, 0.0], 0), [-0.5, 0.5])
    assert close(ie.responsibilities_from_gradient(ie.lse_gradient(d), "lse"), sa.r)
    assert close(ie.correntropy_gradient([100.0, 100.0], 1.0), [0.0, 0.0])

    passed, lines = ie.verify(7)
    assert passed, lines

    report, trace, params = ie.train(json.dumps(CONFIG))
    report = json.loads(report)
    assert max(report["summary"]["center_errors"]) < 0.2
    assert trace.splitlines()[0] == "step,loss,entropy,collapse_score,score_drift,value_drift,r_y_mean"
    assert json.loads(params)["kind"] == "squared_euclidean"
    diag = json.loads(ie.diagnose(trace))
    assert len(diag["steps"]) == 200

    cmp = json.loads(ie.compare_em(json.dumps(CONFIG)))["comparison"]
    assert cmp["gd_gradient_norm_at_em"] < 1e-8

    bad = dict(CONFIG, extra=1)
    try:
        ie.train(json.dumps(bad))
    except ie.ConfigError as e:
        assert "extra" in str(e)
    else:
        raise AssertionError("unknown key accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
