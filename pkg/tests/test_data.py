import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from glocalk import data as D
from glocalk.numkit import ConfigurationError, make_rng


def write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def small_dataset(n=100, seed=0):
    rng = np.random.default_rng(seed)
    seen, triplets = set(), []
    while len(triplets) < n:
        u, i = int(rng.integers(1, 30)), int(rng.integers(1, 40))
        if (u, i) in seen:
            continue
        seen.add((u, i))
        triplets.append(D.RatingTriplet(u, i, float(rng.integers(1, 6))))
    return D.RatingDataset("toy", triplets)


def test_parse_100k_line(tmp_path):
    ds = D.parse_movielens_100k(write(tmp_path, "u1.base", "196\t242\t3\t881250949\n"))
    assert ds.triplets == [D.RatingTriplet(196, 242, 3.0)]
    assert ds.user_index == {196: 0} and ds.item_index == {242: 0}


def test_parse_100k_empty(tmp_path):
    assert len(D.parse_movielens_100k(write(tmp_path, "e", ""))) == 0


def test_parse_100k_out_of_range(tmp_path):
    with pytest.raises(D.ValidationError):
        D.parse_movielens_100k(write(tmp_path, "bad", "1\t1\t9\t0\n"))


def test_parse_100k_malformed_reports_line(tmp_path):
    path = write(tmp_path, "bad", "1\t1\t3\t0\n1\t2\n")
    with pytest.raises(D.ParseError, match=":2:"):
        D.parse_movielens_100k(path)


def test_parse_1m(tmp_path):
    ds = D.parse_movielens_1m(write(tmp_path, "ratings.dat", "1::1193::5::978300760\n"))
    assert ds.triplets == [D.RatingTriplet(1, 1193, 5.0)]
    with pytest.raises(D.ParseError):
        D.parse_movielens_1m(write(tmp_path, "bad.dat", "1::1193::5\n"))
    assert len(D.parse_movielens_1m(write(tmp_path, "empty.dat", ""))) == 0


def test_parse_triplet_csv(tmp_path):
    assert D.parse_triplet_csv(write(tmp_path, "a.csv", "3,7,4\n")).triplets == [
        D.RatingTriplet(3, 7, 4.0)]
    with_header = D.parse_triplet_csv(write(tmp_path, "b.csv", "user,item,rating\n3,7,4\n1,2,5\n"))
    assert [t.user_id for t in with_header.triplets] == [3, 1]
    with pytest.raises(D.ParseError):
        D.parse_triplet_csv(write(tmp_path, "c.csv", "3,7,abc\n"))


def test_csv_round_trip(tmp_path):
    ds = small_dataset(50)
    path = str(tmp_path / "out.csv")
    D.write_triplet_csv(ds, path)
    back = D.parse_triplet_csv(path)
    assert back.triplets == ds.triplets
    assert back.user_index == ds.user_index and back.item_index == ds.item_index


def test_build_matrix_single():
    ds = D.RatingDataset("one", [D.RatingTriplet(10, 20, 5.0)])
    M = D.build_matrix(ds, 2, 2)
    assert np.array_equal(M.dense, [[5, 0], [0, 0]])
    assert np.array_equal(M.mask, [[1, 0], [0, 0]])


def test_build_matrix_empty():
    M = D.build_matrix(D.RatingDataset("e", []), 3, 2)
    assert not M.dense.any() and not M.mask.any()


def test_build_matrix_out_of_bounds():
    ds = D.RatingDataset("two", [D.RatingTriplet(1, 1, 3.0), D.RatingTriplet(2, 2, 3.0)])
    with pytest.raises(D.ValidationError):
        D.build_matrix(ds, 1, 2)


def test_build_matrix_duplicates_last_wins(caplog):
    ds = D.RatingDataset("dup", [D.RatingTriplet(1, 1, 2.0), D.RatingTriplet(1, 1, 4.0)])
    M = D.build_matrix(ds)
    assert M.dense[0, 0] == 4.0 and M.mask.sum() == 1
    assert "duplicate" in caplog.text


def test_mask_counts_distinct_pairs():
    ds = small_dataset(120, seed=3)
    M = D.build_matrix(ds)
    assert M.mask.sum() == len({(t.item_id, t.user_id) for t in ds.triplets})
    assert set(np.unique(M.mask)) <= {0.0, 1.0}
    assert np.all(M.mask[M.dense != 0] == 1)


def test_random_split_contract():
    ds = small_dataset(100)
    train, test = D.random_split(ds, 0.1, make_rng(0))
    assert (len(train), len(test)) == (90, 10)
    again = D.random_split(ds, 0.1, make_rng(0))
    assert again[1].triplets == test.triplets
    assert sorted(train.triplets + test.triplets, key=repr) == sorted(ds.triplets, key=repr)
    assert train.user_index is ds.user_index


@pytest.mark.parametrize("frac", [0.0, 1.0, -0.1, 1.5])
def test_random_split_degenerate(frac):
    with pytest.raises(ConfigurationError):
        D.random_split(small_dataset(10), frac, make_rng(0))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 1.0))
def test_subsample_cardinality(seed, ratio):
    ds = small_dataset(80)
    sub = D.subsample_train(ds, ratio, make_rng(seed))
    assert len(sub) == round(ratio * len(ds))
    assert set(sub.triplets) <= set(ds.triplets)


def test_subsample_identity_and_determinism():
    ds = small_dataset(100)
    assert D.subsample_train(ds, 1.0, make_rng(0)).triplets == ds.triplets
    a = D.subsample_train(ds, 0.2, make_rng(5))
    b = D.subsample_train(ds, 0.2, make_rng(5))
    assert len(a) == 20 and a.triplets == b.triplets
    with pytest.raises(ConfigurationError):
        D.subsample_train(ds, 0.0, make_rng(0))


def test_dataset_stats():
    ds = D.RatingDataset("s", [D.RatingTriplet(1, 1, 3.0), D.RatingTriplet(2, 1, 4.0),
                               D.RatingTriplet(2, 3, 1.0)])
    assert D.dataset_stats(ds) == {"users": 2, "items": 2, "ratings": 3, "density": 0.75}
    with pytest.raises(D.ValidationError):
        D.dataset_stats(D.RatingDataset("e", []))


def test_merge_index_shares_maps():
    a = D.RatingDataset("a", [D.RatingTriplet(5, 9, 3.0)])
    b = D.RatingDataset("b", [D.RatingTriplet(6, 9, 2.0), D.RatingTriplet(5, 8, 1.0)])
    a2, b2 = D.merge_index(a, b)
    assert a2.user_index is b2.user_index
    assert a2.n_users == 2 and a2.n_items == 2
    items, users, _ = b2.arrays()
    assert list(items) == [0, 1] and list(users) == [1, 0]
