"""Smoke test for the sic_py extension module.

Build and install first, e.g. `pip install maturin && maturin develop --release`
from the repository root, or copy target/release/libsic_py.so to sic_py.so on
PYTHONPATH after `cargo build --release -p sic-py --features extension-module`.
"""

import math
import os
import tempfile

import sic_py


def main():
    s = sic_py.CorrespondenceSet.pose1(spacing=16.0)
    assert len(s) > 10_000

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "pose1.csv")
        s.save(path)
        assert len(sic_py.CorrespondenceSet.load(path)) == len(s)

    stages = sic_py.calibrate(s, mode="mb")
    assert [r.stage for r in stages] == ["step1", "step2", "step3a"]
    fx, fy, u0, v0 = stages[-1].intrinsics
    assert abs(fx - 9285.7) < 1e-3 and abs(fy - 9278.6) < 1e-3
    assert abs(u0 - 1609.0) < 1e-3 and abs(v0 - 1353.0) < 1e-3
    k1, k2, k3 = stages[-1].k
    assert abs(k1 + 1.3) < 1e-6

    curve = sic_py.RadialCurve((10.0, 20.0), [(0.0, 0.0), (100.0, 100.0)])
    pts, flags = curve.undistort([(40.0, 60.0), (500.0, 20.0)])
    assert math.dist(pts[0], (40.0, 60.0)) < 1e-12
    assert flags == [False, True]

    h = sic_py.homography(s.target[:100], s.ideal[:100])
    assert abs(h[2][2] - 1.0) < 1e-12

    print("sic_py smoke test passed:", stages[-1])


if __name__ == "__main__":
    main()
