import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hierec import kernels

from . import oracles

BACKENDS = ["numba", "numpy"]


@st.composite
def impressions(draw):
    n = draw(st.integers(1, 20))
    labels = draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
    # a small score alphabet makes ties common
    scores = draw(st.lists(st.sampled_from([-1.0, 0.0, 0.25, 0.5, 2.0, 3.5]) | st.floats(-5, 5),
                           min_size=n, max_size=n))
    return labels, scores


@pytest.mark.parametrize("backend", BACKENDS)
@given(st.lists(impressions(), min_size=1, max_size=6), st.booleans())
def test_impression_metrics_match_oracles(backend, imps, tie_half):
    labels = np.concatenate([np.array(y) for y, _ in imps])
    scores = np.concatenate([np.array(s, dtype=float) for _, s in imps])
    offsets = np.concatenate([[0], np.cumsum([len(y) for y, _ in imps])])
    a, m, n = kernels.impression_metrics(labels, scores, offsets, (1, 5, 10), tie_half, backend=backend)
    for i, (y, s) in enumerate(imps):
        if 0 < sum(y) < len(y):
            assert a[i] == pytest.approx(oracles.auc(y, s, tie_half), abs=1e-12)
        else:
            assert np.isnan(a[i])
        if sum(y):
            assert m[i] == pytest.approx(oracles.mrr(y, s), abs=1e-12)
            for j, k in enumerate((1, 5, 10)):
                assert n[i, j] == pytest.approx(oracles.ndcg(y, s, k), abs=1e-12)
        else:
            assert np.isnan(m[i]) and np.isnan(n[i]).all()


@pytest.mark.parametrize("backend", BACKENDS)
@given(st.lists(st.lists(st.floats(-3, 3), min_size=3, max_size=3), min_size=1, max_size=12))
def test_cumulative_ilad_matches_oracle(backend, rows):
    x = np.array(rows)
    got = kernels.cumulative_ilad(x, backend=backend)
    assert np.isnan(got[0])
    for k in range(2, len(rows) + 1):
        assert got[k - 1] == pytest.approx(oracles.ilad(rows[:k]), abs=1e-9)


@pytest.mark.parametrize("backend", BACKENDS)
@given(st.integers(1, 4), st.integers(1, 15), st.integers(1, 20), st.integers(0, 2**16))
def test_round_robin_matches_oracle(backend, channels, pool, k, seed):
    rng = np.random.default_rng(seed)
    rankings = np.stack([rng.permutation(pool) for _ in range(channels)])
    got = kernels.round_robin_merge(rankings, k, backend=backend).tolist()
    assert got == oracles.round_robin(rankings.tolist(), k)
    assert len(got) == min(k, pool) and len(set(got)) == len(got)


def test_backends_agree_on_large_input():
    rng = np.random.default_rng(0)
    sizes = rng.integers(2, 30, size=300)
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    labels = (rng.random(offsets[-1]) < 0.2).astype(int)
    scores = rng.normal(size=offsets[-1])
    a = kernels.impression_metrics(labels, scores, offsets, backend="numba")
    b = kernels.impression_metrics(labels, scores, offsets, backend="numpy")
    for x, y in zip(a, b):
        assert np.allclose(x, y, equal_nan=True, atol=1e-12)


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels.cumulative_ilad(np.ones((2, 2)), backend="cuda")
    with pytest.raises(ValueError):
        kernels.cumulative_ilad(np.ones(3))


def test_env_var_selects_backend():
    import subprocess
    import sys

    code = "from hierec import kernels; print(kernels.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], env={"HIEREC_KERNELS": "numpy", "PATH": ""},
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    bad = subprocess.run([sys.executable, "-c", code], env={"HIEREC_KERNELS": "gpu", "PATH": ""},
                         capture_output=True, text=True)
    assert bad.returncode != 0
