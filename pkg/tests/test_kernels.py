"""Backend selection and numba/numpy kernel agreement."""
import os
import subprocess
import sys

import numpy as np
import pytest

from ppboost.kernels import BACKEND, numba_backend, numpy_backend
from ppboost.rng import rng_from


def test_env_flag_forces_numpy_backend():
    env = dict(os.environ, PPBOOST_KERNELS="numpy")
    out = subprocess.run(
        [sys.executable, "-c", "from ppboost.kernels import BACKEND; print(BACKEND)"],
        capture_output=True,
        text=True,
        env=env,
        check=True,
    )
    assert out.stdout.strip() == "numpy"


@pytest.mark.skipif(
    os.environ.get("PPBOOST_KERNELS", "auto") != "auto",
    reason="backend forced by env",
)
def test_default_backend_is_numba_here():
    assert BACKEND == "numba"


def test_backends_agree_on_random_workloads():
    rng = rng_from(60)
    for _ in range(5):
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        src = rng.normal(0, 1, (h, w))
        oh, ow = int(rng.integers(1, 20)), int(rng.integers(1, 20))
        assert np.allclose(
            numpy_backend.upsample_bilinear(src, oh, ow),
            numba_backend.upsample_bilinear(src, oh, ow),
            atol=1e-12,
        )
        assert np.array_equal(
            numpy_backend.upsample_nearest(src, oh, ow),
            numba_backend.upsample_nearest(src, oh, ow),
        )

    boxes = np.abs(rng.normal(0, 10, (60, 4))) + np.array([0, 0, 1, 1])
    assert np.array_equal(
        numpy_backend.nms_keep(np.ascontiguousarray(boxes), 0.4),
        numba_backend.nms_keep(np.ascontiguousarray(boxes), 0.4),
    )

    feats = np.ascontiguousarray(rng.normal(0, 1, (6, 7, 2)))
    for k in (1, 3, 5):
        u1, v1 = numpy_backend.window_design(feats, k)
        u2, v2 = numba_backend.window_design(feats, k)
        assert np.allclose(u1, u2, atol=1e-12) and np.allclose(v1, v2, atol=1e-12)

        dim = u1.shape[1]
        w_obj = rng.normal(0, 0.5, dim)
        w_box = rng.normal(0, 0.5, (4, dim))
        s1, d1 = numpy_backend.scores_deltas(u1, v1, w_obj, w_box)
        s2, d2 = numba_backend.scores_deltas(u1, v1, w_obj, w_box)
        assert np.allclose(s1, s2, atol=1e-12) and np.allclose(d1, d2, atol=1e-12)

        pos = (rng.random(u1.shape[0]) < 0.3).astype(np.float64)
        targets = rng.normal(0, 1, (u1.shape[0], 4))
        out1 = numpy_backend.detection_loss_grad(u1, v1, w_obj, w_box, pos, targets, 1.3)
        out2 = numba_backend.detection_loss_grad(u1, v1, w_obj, w_box, pos, targets, 1.3)
        for a, b in zip(out1, out2):
            assert np.allclose(a, b, atol=1e-10)

    pa = np.ascontiguousarray(rng.integers(0, 40, (50, 2)).astype(np.float64))
    pb = np.ascontiguousarray(rng.integers(0, 40, (45, 2)).astype(np.float64))
    for tol in (0.0, 1.5, 3.0):
        assert numpy_backend.count_within_tol(pa, pb, tol) == numba_backend.count_within_tol(
            pa, pb, tol
        )
