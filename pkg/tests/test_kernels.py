import json
import os
import subprocess
import sys

import numpy as np

from diffattn import kernels

SCRIPT = """
import json, numpy as np
from diffattn import BACKEND
from diffattn.exemplars import EmbeddingStore, ExemplarIndex
pts = np.random.default_rng(0).normal(size=(300, 6))
ix = ExemplarIndex.build(EmbeddingStore.from_array(pts), 5, seed=1)
print(json.dumps({"backend": BACKEND, "knn": [ix.neighbours(i, 4).tolist() for i in range(0, 300, 17)],
                  "clusters": ix.clusters.assignment.tolist()}))
"""


def _run(env_extra):
    env = dict(os.environ, **env_extra)
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, check=True)
    return json.loads(out.stdout)


def test_backend_is_reported():
    assert kernels.BACKEND in ("cython", "python")


def test_forced_fallback_matches_default():
    fallback = _run({"DIFFATTN_PURE_PYTHON": "1"})
    default = _run({})
    assert fallback["backend"] == "python"
    assert fallback["knn"] == default["knn"]
    assert fallback["clusters"] == default["clusters"]


def test_assign_nearest_ties_go_to_lower_centroid():
    pts = np.array([[0.0, 0.0], [2.0, 0.0]])
    cents = np.array([[1.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
    idx, d = kernels.assign_nearest(pts, cents)
    assert idx.tolist() == [0, 0] and d.tolist() == [1.0, 1.0]
