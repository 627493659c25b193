import numpy as np
import pytest

from oracles import brute_cooc
from vocalign.cooccurrence import CoocTable, count_cooc, count_cooc_sharded, merge_tables
from vocalign.tokenizer import TokenStream


def seg(*segments):
    return TokenStream.from_segments(segments)


def test_hand_examples():
    x = count_cooc(seg([0, 1, 0]), 2, 2).to_dense()
    assert x[0, 1] == x[1, 0] == 2.0
    assert x[0, 0] == 1.0
    assert count_cooc(seg([3, 3]), 1, 4).get(3, 3) == 2.0
    assert len(count_cooc(seg(), 15, 5)) == 0


def test_segments_are_isolated():
    x = count_cooc(seg([0, 1], [2, 3]), 5, 4)
    assert x.get(1, 2) == 0 and x.get(0, 3) == 0


def test_symmetry_and_mass(rng):
    ids = rng.integers(0, 20, 300)
    x = count_cooc(seg(ids[:120], ids[120:]), 5, 20).to_dense()
    assert np.array_equal(x, x.T)
    mass = sum(2.0 / d for n in (120, 180) for d in range(1, 6) for _ in range(n - d))
    assert np.isclose(x.sum(), mass, rtol=0, atol=1e-9)


def test_rejects_bad_input():
    with pytest.raises(ValueError, match="position 1"):
        count_cooc(seg([0, 9]), 2, 5)
    with pytest.raises(ValueError):
        count_cooc(seg([0]), 0, 5)


def test_sparse_path_matches_oracle(monkeypatch, rng):
    import vocalign.cooccurrence as cooc
    monkeypatch.setattr(cooc, "DENSE_CELL_LIMIT", 0)
    segs = [rng.integers(0, 30, n).tolist() for n in (50, 7, 200)]
    got = count_cooc(seg(*segs), 4, 30).to_dense()
    assert np.abs(got - brute_cooc(segs, 4, 30)).max() <= 1e-12


def test_merge_identities(rng):
    a = count_cooc(seg(rng.integers(0, 10, 50)), 3, 10)
    b = count_cooc(seg(rng.integers(0, 10, 50)), 3, 10)
    assert merge_tables(a, CoocTable.empty(10)) == a
    assert merge_tables(a, b) == merge_tables(b, a)
    with pytest.raises(ValueError):
        merge_tables(a, CoocTable.empty(11))


def test_sharded_equals_whole(rng):
    stream = seg(*[rng.integers(0, 25, int(n)) for n in rng.integers(1, 40, 30)])
    whole = count_cooc(stream, 5, 25)
    sharded = count_cooc_sharded(stream, 5, 25, n_shards=4)
    assert np.abs(whole.to_dense() - sharded.to_dense()).max() <= 1e-12
    assert sharded.total_tokens == whole.total_tokens


def test_save_load_round_trip(tmp_path, rng):
    t = count_cooc(seg(rng.integers(0, 12, 80)), 15, 12)
    t.save(tmp_path / "x.coc")
    data = (tmp_path / "x.coc").read_bytes()
    assert data[:4] == b"COC1"
    again = CoocTable.load(tmp_path / "x.coc")
    assert again == t and again.vals.tobytes() == t.vals.tobytes()
