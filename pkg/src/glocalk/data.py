"""Rating file parsing, id re-mapping, dense matrix construction and splits.

The rating matrix is oriented items x users: row ``i`` is one item's vector
of ratings across all users. Unobserved cells hold 0 and are excluded from
training through a binary mask.
"""

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .numkit import ConfigurationError

logger = logging.getLogger(__name__)

RATING_MIN = 1.0
RATING_MAX = 5.0


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class RatingTriplet:
    user_id: int
    item_id: int
    rating: float


@dataclass
class RatingDataset:
    """Observed ratings with contiguous id maps.

    ``user_index`` and ``item_index`` map raw ids to ``[0, n)`` and ``[0, m)``
    in order of first appearance. Datasets derived from one another (splits,
    subsamples) share the parent's maps so their indices stay compatible.
    """

    name: str
    triplets: list
    user_index: dict = field(default_factory=dict)
    item_index: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.user_index and not self.item_index:
            self.user_index, self.item_index = _index_ids(self.triplets)

    def __len__(self):
        return len(self.triplets)

    @property
    def n_users(self):
        return len(self.user_index)

    @property
    def n_items(self):
        return len(self.item_index)

    def derive(self, triplets, name=None):
        return RatingDataset(name or self.name, list(triplets),
                             self.user_index, self.item_index)

    def arrays(self):
        """Return ``(item_idx, user_idx, ratings)`` as numpy arrays."""
        if not self.triplets:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty.copy(), np.zeros(0)
        items = np.fromiter((self.item_index[t.item_id] for t in self.triplets),
                            dtype=np.int64, count=len(self.triplets))
        users = np.fromiter((self.user_index[t.user_id] for t in self.triplets),
                            dtype=np.int64, count=len(self.triplets))
        ratings = np.fromiter((t.rating for t in self.triplets),
                              dtype=np.float64, count=len(self.triplets))
        return items, users, ratings


@dataclass
class RatingMatrix:
    dense: np.ndarray
    mask: np.ndarray

    @property
    def shape(self):
        return self.dense.shape

    @property
    def n_items(self):
        return self.dense.shape[0]

    @property
    def n_users(self):
        return self.dense.shape[1]

    @property
    def density(self):
        return float(self.mask.sum() / self.mask.size) if self.mask.size else 0.0


def _index_ids(triplets):
    users, items = {}, {}
    for t in triplets:
        users.setdefault(t.user_id, len(users))
        items.setdefault(t.item_id, len(items))
    return users, items


def _make_triplet(fields, lineno, path, rating_range):
    try:
        user, item = int(fields[0]), int(fields[1])
        rating = float(fields[2])
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}:{lineno}: cannot parse {fields!r}") from exc
    if user < 1 or item < 1:
        raise ValidationError(f"{path}:{lineno}: ids must be positive, got {user}, {item}")
    lo, hi = rating_range
    if not lo <= rating <= hi:
        raise ValidationError(f"{path}:{lineno}: rating {rating} outside [{lo}, {hi}]")
    return RatingTriplet(user, item, rating)


def _parse_delimited(path, sep, nfields, name, rating_range):
    triplets = []
    with open(path, encoding="latin-1") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            fields = line.split(sep)
            if len(fields) != nfields:
                raise ParseError(f"{path}:{lineno}: expected {nfields} fields, got {len(fields)}")
            triplets.append(_make_triplet(fields, lineno, path, rating_range))
    return RatingDataset(name, triplets)


def parse_movielens_100k(path, rating_range=(RATING_MIN, RATING_MAX)):
    """Parse ``user<TAB>item<TAB>rating<TAB>timestamp`` lines (timestamp dropped)."""
    return _parse_delimited(path, "\t", 4, os.path.basename(path), rating_range)


def parse_movielens_1m(path, rating_range=(RATING_MIN, RATING_MAX)):
    """Parse ``UserID::MovieID::Rating::Timestamp`` lines."""
    return _parse_delimited(path, "::", 4, os.path.basename(path), rating_range)


def parse_triplet_csv(path, rating_range=(RATING_MIN, RATING_MAX)):
    """Parse ``user,item,rating`` rows; a leading non-numeric header row is skipped."""
    triplets = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            if not row or not any(cell.strip() for cell in row):
                continue
            row = [cell.strip() for cell in row]
            if lineno == 1 and not row[0].lstrip("-").isdigit():
                continue
            if len(row) != 3:
                raise ParseError(f"{path}:{lineno}: expected 3 fields, got {len(row)}")
            triplets.append(_make_triplet(row, lineno, path, rating_range))
    return RatingDataset(os.path.basename(path), triplets)


def merge_index(*datasets):
    """Re-index datasets jointly so that they share one user map and one item map."""
    users, items = {}, {}
    for ds in datasets:
        for t in ds.triplets:
            users.setdefault(t.user_id, len(users))
            items.setdefault(t.item_id, len(items))
    return [RatingDataset(ds.name, ds.triplets, users, items) for ds in datasets]


def build_matrix(train, m=None, n=None):
    """Scatter ``train`` into a zero-imputed ``m x n`` matrix plus observation mask."""
    m = train.n_items if m is None else m
    n = train.n_users if n is None else n
    dense = np.zeros((m, n))
    mask = np.zeros((m, n))
    items, users, ratings = train.arrays()
    if items.size:
        if items.max() >= m or users.max() >= n:
            raise ValidationError(
                f"index out of bounds for a {m}x{n} matrix "
                f"(max item {items.max()}, max user {users.max()})")
        flat = items * n + users
        n_dup = flat.size - np.unique(flat).size
        if n_dup:
            logger.warning("%d duplicate (item, user) pairs in %s; last one wins",
                           n_dup, train.name)
        # numpy fancy assignment keeps the last write for repeated indices
        dense[items, users] = ratings
        mask[items, users] = 1.0
    return RatingMatrix(dense, mask)


def random_split(ds, test_fraction, rng):
    """Shuffle and split into ``(train, test)`` with ``round(fraction * len)`` test rows."""
    if not 0.0 < test_fraction < 1.0:
        raise ConfigurationError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    n_test = int(round(test_fraction * len(ds)))
    perm = rng.permutation(len(ds))
    test_idx = np.sort(perm[:n_test])
    train_idx = np.sort(perm[n_test:])
    train = ds.derive([ds.triplets[i] for i in train_idx], f"{ds.name}/train")
    test = ds.derive([ds.triplets[i] for i in test_idx], f"{ds.name}/test")
    return train, test


def subsample_train(train, ratio, rng):
    """Uniformly keep ``round(ratio * len(train))`` training ratings, without replacement."""
    if not 0.0 < ratio <= 1.0:
        raise ConfigurationError(f"ratio must lie in (0, 1], got {ratio}")
    if ratio == 1.0:
        return train
    k = int(round(ratio * len(train)))
    keep = np.sort(rng.choice(len(train), size=k, replace=False))
    return train.derive([train.triplets[i] for i in keep], f"{train.name}@{ratio:g}")


def dataset_stats(ds):
    if not len(ds):
        raise ValidationError("dataset is empty")
    users = {t.user_id for t in ds.triplets}
    items = {t.item_id for t in ds.triplets}
    return {
        "users": len(users),
        "items": len(items),
        "ratings": len(ds),
        "density": len(ds) / (len(users) * len(items)),
    }


def write_triplet_csv(ds, path, header=True):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        if header:
            writer.writerow(["user", "item", "rating"])
        for t in ds.triplets:
            writer.writerow([t.user_id, t.item_id, f"{t.rating:g}"])
