"""Smoke test for the esn2d_py extension module.

Build and run from the repository root:

    cargo build --release -p esn2d-py --features extension-module
    cp target/release/libesn2d_py.so python/esn2d_py.so
    python3 python/smoke_test.py
"""

import json
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import esn2d_py as e  # noqa: E402


def main():
    img, truth = e.generate_road(900, seed=3, anomalies=[("loose_texture", 600, 900)])
    assert len(img) == 64 and len(img[0]) == 900
    assert truth == [(600, 900, "loose_texture")]

    pre = e.preprocess(img)
    res = e.Reservoir(n_units=20, ridge_lambda=10.0, seed=1)
    points = res.fit_windows(pre, width=300, stride=50)
    assert all(len(p.phi) == 2 * 20 + 1 for p in points)
    assert points[0].distance(points[0]) == 0.0

    normal = [p for p in points if p.window_span[1] <= 600]
    loose = [p for p in points if p.window_span[0] >= 600 - 150]
    oc = e.Ocsvm.train(normal, nu=0.1, gamma_scale=0.1)
    inlier, score = oc.classify(normal[0])
    assert isinstance(inlier, bool) and isinstance(score, float)
    assert not oc.classify(points[-1])[0], "pure anomaly window must be rejected"

    for p in normal:
        p.label = "normal"
    for p in loose:
        p.label = "loose_texture"
    knn = e.Knn(normal + loose, k=1)
    assert knn.classify(points[-1]) == "loose_texture"

    try:
        e.Reservoir(n_units=0)
    except ValueError as err:
        assert str(err).startswith("E_PARAM")
    else:
        raise AssertionError("n_units=0 must fail")

    cfg = json.dumps({"reservoir": {"ridge_lambda": 10.0, "n_units": 20},
                      "window": {"width_cols": 300, "stride_cols": 50}})
    summary = json.loads(e.diagnose(img, (0, 600), cfg))
    assert summary["timing"]["windows"] == summary["windows"]
    print("smoke test ok:", summary["label_counts"])


if __name__ == "__main__":
    main()
