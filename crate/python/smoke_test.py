"""Smoke test for the detcal Python bindings.

Build and install first:  pip install --no-build-isolation -e crates/python
Run:                      python python/smoke_test.py
"""

import json
import math
import pathlib

import detcal

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "crates" / "core" / "tests" / "fixtures"


def close(a, b, tol=1e-12):
    return abs(a - b) <= tol


def main():
    a = detcal.BoundingBox(0, 0, 10, 10)
    b = detcal.BoundingBox.from_xywh(5, 0, 10, 10)
    assert close(detcal.iou(a, b), 1 / 3)
    assert close(detcal.dice(a, b), 0.5)

    link = detcal.LinkSpec("threshold:0.5")
    assert link(0.7) == 1.0 and link(0.3) == 0.0 and link.is_binary

    assert close(detcal.beta_kernel(0.5, 0.5, 1.0), 4 / math.pi)

    cfg = detcal.KdeConfig(0.1)
    assert close(detcal.estimate_ce([0.2, 0.8], [1.0, 0.0], cfg), 0.2)
    value, grad = detcal.estimate_ce_gradient([0.2, 0.8], [1.0, 0.0], cfg)
    assert close(value, 0.2) and close(grad[0], 0.5) and close(grad[1], -0.5)
    assert close(detcal.conditional_expectation([0.3, 0.6, 0.9], [0.4] * 3, 0.5, cfg), 0.4)

    data = detcal.generate(3000, 0.6, 0.6, seed=1)
    assert len(data["score"]) == 3000
    seq = detcal.estimate_ce(data["score"], data["label"], detcal.KdeConfig(0.05))
    par = detcal.estimate_ce(data["score"], data["label"], detcal.KdeConfig(0.05, parallel=True))
    assert abs(seq - par) <= 1e-10
    assert 0.0 < detcal.d_ece(data["score"], data["label"]) < 0.2
    assert abs(detcal.fit_temperature(data["score"], data["label"]) - 1 / 0.6) < 0.15
    assert abs(detcal.ground_truth_ce(0.6, 0.6) - 0.0607) < 0.002
    assert detcal.select_bandwidth([0.5, 0.5], grid=[0.01, 0.5]) == 0.01

    report = json.loads(
        detcal.evaluate(FIXTURES / "detections.json", FIXTURES / "ground_truth.json", bandwidth=0.1)
    )
    metrics = {m["name"]: m["value"] for m in report["metrics"]}
    assert report["samples"] == 7
    assert close(metrics["CE_50"], 0.4192665791660788, 1e-10)
    assert close(metrics["D-ECE_50"], 0.3775, 1e-10)
    assert close(metrics["LaECE"], 0.36, 1e-10)

    for bad in (lambda: detcal.KdeConfig(-1.0), lambda: detcal.LinkSpec("sigmoid"),
                lambda: detcal.estimate_ce([0.5], [1.0], cfg)):
        try:
            bad()
        except ValueError:
            pass
        else:
            raise AssertionError("expected ValueError")
    try:
        detcal.evaluate("/nonexistent.json", FIXTURES / "ground_truth.json")
    except OSError:
        pass
    else:
        raise AssertionError("expected OSError")

    print("python smoke test: ok")


if __name__ == "__main__":
    main()
