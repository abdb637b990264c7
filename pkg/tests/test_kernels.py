import json
import os
import subprocess
import sys

import numpy as np

from ctxmine import _kernels


def _backend_under(flag):
    env = {**os.environ, "BTF_NUMBA": flag}
    out = subprocess.run([sys.executable, "-c", "import ctxmine; print(ctxmine.backend())"],
                         capture_output=True, text=True, env=env, check=True)
    return out.stdout.strip()


def test_env_flag_selects_backend():
    assert _backend_under("0") == "numpy"
    expected = "numba" if _kernels.HAVE_NUMBA else "numpy"
    assert _backend_under("1") == expected


def test_numpy_fallback_gives_same_classifier(tmp_path):
    script = (
        "import numpy as np, json\n"
        "from ctxmine.classify import gb_fit, svm_fit, threshold_fit\n"
        "rng = np.random.default_rng(0)\n"
        "X = rng.normal(size=(80, 3)); y = (X[:, 0] + X[:, 1] ** 2 > 0.5).astype(int)\n"
        "gb = gb_fit(X, y, rounds=10)\n"
        "sv = svm_fit(X, y)\n"
        "th = threshold_fit(X[:, 0], y)\n"
        "print(json.dumps([gb.to_dict(), sv.coef.tolist(), sv.bias, th.t]))\n"
    )
    outs = []
    for flag in ("0", "1"):
        env = {**os.environ, "BTF_NUMBA": flag}
        outs.append(subprocess.run([sys.executable, "-c", script], capture_output=True, text=True, env=env,
                                   check=True).stdout)
    a, b = (json.loads(o) for o in outs)
    assert a[0] == b[0]
    np.testing.assert_allclose(a[1], b[1], atol=1e-10)
    assert abs(a[2] - b[2]) < 1e-10
    assert a[3] == b[3]
