import math

import numpy as np
import pytest

from vocalign.cooccurrence import CoocTable
from vocalign.embedding import EmbeddingMatrix
from vocalign.glove import (GloveConfig, GloveDivergence, GloveParams, drop_rare, fit_glove,
                            glove_loss, train_glove)


def one_entry(x):
    return CoocTable.from_dense(np.array([[0.0, x], [0.0, 0.0]]))


def params_with_residual(t, r, dim=2):
    p = GloveParams.init(2, dim, np.random.default_rng(0))
    p.w[:] = 0
    p.w_tilde[:] = 0
    p.b[:] = 0
    p.b_tilde[:] = 0
    p.b[0] = math.log(t.vals[0]) + r
    return p


def test_loss_examples():
    cfg = GloveConfig(dim=2)
    assert glove_loss(params_with_residual(one_entry(100.0), 0.0), one_entry(100.0), cfg) == 0.0
    assert glove_loss(params_with_residual(one_entry(100.0), 1.5), one_entry(100.0), cfg) == \
        pytest.approx(2.25, rel=1e-12)
    assert glove_loss(params_with_residual(one_entry(1.0), 2.0), one_entry(1.0), cfg) == \
        pytest.approx(0.12649, abs=1e-5)


def test_config_validation():
    for bad in ({"iterations": 0}, {"dim": 0}, {"alpha": 0}, {"alpha": 1.5}, {"x_max": 0},
                {"min_count": 0}, {"vector": "both"}):
        with pytest.raises(ValueError):
            GloveConfig(**bad)


def test_two_token_convergence():
    t = CoocTable.from_dense(np.array([[0.0, math.e], [math.e, 0.0]]))
    p, _ = fit_glove(t, GloveConfig(dim=5, iterations=2000, seed=3))
    assert p.w[0] @ p.w_tilde[1] + p.b[0] + p.b_tilde[1] == pytest.approx(1.0, abs=1e-2)


def random_table(rng, n=40):
    dense = np.where(rng.random((n, n)) < 0.3, rng.uniform(0.2, 30, (n, n)), 0)
    return CoocTable.from_dense(dense + dense.T)


def test_deterministic(rng):
    t = random_table(rng)
    assert train_glove(t, GloveConfig(dim=10, seed=4)) == train_glove(t, GloveConfig(dim=10, seed=4))
    assert train_glove(t, GloveConfig(dim=10, seed=4)) != train_glove(t, GloveConfig(dim=10, seed=5))


def test_loss_trend(rng):
    _, history = fit_glove(random_table(rng), GloveConfig(dim=10, iterations=20))
    assert history[-1] <= history[0]
    assert all(b <= a * 1.05 for a, b in zip(history, history[1:]))


def test_untrained_rows_flagged():
    dense = np.zeros((4, 4))
    dense[0, 1] = dense[1, 0] = 3.0
    emb = train_glove(CoocTable.from_dense(dense), GloveConfig(dim=3))
    assert emb.untrained.tolist() == [False, False, True, True]
    assert not emb.vectors[2:].any()


def test_min_count_cut(rng):
    t = random_table(rng, 10)
    counts = np.arange(10)
    cut = drop_rare(t, counts, 5)
    assert set(cut.rows.tolist()) <= set(range(5, 10))
    emb = train_glove(t, GloveConfig(dim=3, min_count=5), counts=counts)
    assert emb.untrained[:5].all()
    with pytest.raises(ValueError, match="counts"):
        train_glove(t, GloveConfig(dim=3, min_count=5))


def test_vector_choice(rng):
    t = random_table(rng, 12)
    p, _ = fit_glove(t, GloveConfig(dim=4, iterations=2, seed=1))
    center = train_glove(t, GloveConfig(dim=4, iterations=2, seed=1, vector="center"))
    np.testing.assert_array_equal(center.vectors, p.w.astype(np.float32))


def test_divergence_reported():
    t = CoocTable.from_dense(np.array([[0.0, 1e300], [1e300, 0.0]]))
    with pytest.raises(GloveDivergence, match="epoch"):
        fit_glove(t, GloveConfig(dim=2, learning_rate=1e300, grad_clip=1e308))


def test_empty_table():
    with pytest.raises(ValueError):
        train_glove(CoocTable.empty(3))


def test_parallel_mode_runs(rng):
    emb = train_glove(random_table(rng), GloveConfig(dim=8, threads=3))
    assert np.isfinite(emb.vectors).all()


def test_embedding_file_round_trip(tmp_path, rng):
    emb = train_glove(random_table(rng, 15), GloveConfig(dim=6))
    emb.untrained[3] = True
    emb.save(tmp_path / "e.emb")
    assert (tmp_path / "e.emb").read_bytes()[:4] == b"EMB1"
    assert EmbeddingMatrix.load(tmp_path / "e.emb") == emb
    emb.save_text(tmp_path / "e.txt", [f"t{i}" for i in range(15)])
    lines = (tmp_path / "e.txt").read_text().splitlines()
    assert len(lines) == 14 and lines[0].startswith("t0\t")
