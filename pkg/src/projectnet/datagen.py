"""Reproducible synthetic datasets and CSV ingestion for load series.

All randomness comes from numpy's PCG64 bit generator seeded explicitly; the
algorithm name is stored with every dataset so it can be regenerated
elsewhere.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import os
from dataclasses import dataclass, field

import numpy as np

RNG_ALGORITHM = "numpy.PCG64"
DEFAULT_SPLIT = (0.7, 0.1, 0.2)


def make_rng(seed):
    return np.random.Generator(np.random.PCG64(seed))


@dataclass
class DecisionDataset:
    X: np.ndarray
    U: np.ndarray
    splits: dict
    spec: dict
    seed: int | None = None
    rng_algorithm: str = RNG_ALGORITHM
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float)
        self.U = np.asarray(self.U, dtype=float)
        if self.X.shape[0] != self.U.shape[0]:
            raise ValueError("X and U have different numbers of rows")
        idx = np.sort(np.concatenate([np.asarray(v, dtype=int) for v in self.splits.values()]))
        if not np.array_equal(idx, np.arange(len(self.X))):
            raise ValueError("splits must be disjoint and cover every row")

    def __len__(self):
        return len(self.X)

    def part(self, name):
        i = np.asarray(self.splits[name], dtype=int)
        return self.X[i], self.U[i]

    def to_csv(self, path):
        """Rows ``x_0..x_{p-1},u_0..u_{d-1}`` plus a ``.json`` sidecar."""
        p, d = self.X.shape[1], self.U.shape[1]
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow([f"x_{i}" for i in range(p)] + [f"u_{i}" for i in range(d)])
            for x, u in zip(self.X, self.U):
                wr.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in u])
        side = {"spec": self.spec, "seed": self.seed, "rng_algorithm": self.rng_algorithm,
                "splits": {k: np.asarray(v).tolist() for k, v in self.splits.items()}, "p": p, "d": d}
        with open(os.path.splitext(path)[0] + ".json", "w") as fh:
            json.dump(side, fh, indent=1)

    @classmethod
    def from_csv(cls, path):
        with open(os.path.splitext(path)[0] + ".json") as fh:
            side = json.load(fh)
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        p = side["p"]
        return cls(data[:, :p], data[:, p:], side["splits"], side["spec"], side["seed"], side["rng_algorithm"])


def make_splits(N, rng, fractions=DEFAULT_SPLIT):
    if N < 1:
        raise ValueError("N must be >= 1")
    perm = rng.permutation(N)
    fr = np.asarray(fractions, dtype=float)
    fr = fr / fr.sum()
    n_train = max(1, int(round(fr[0] * N)))
    n_val = int(round(fr[1] * N)) if N - n_train > 1 else 0
    n_val = min(n_val, N - n_train)
    return {"train": np.sort(perm[:n_train]), "val": np.sort(perm[n_train:n_train + n_val]),
            "test": np.sort(perm[n_train + n_val:])}


def _check_pos(**kw):
    for k, v in kw.items():
        if int(v) < 1:
            raise ValueError(f"{k} must be >= 1")


def gen_newsvendor(N=500, p=5, K=20, seed=0, hidden=16, scale=5.0, fractions=DEFAULT_SPLIT):
    """Gaussian features with random means in [-1, 1] and identity covariance;
    demand is a fixed random 2-layer max(., 0) network of the features."""
    _check_pos(N=N, p=p, K=K)
    rng = make_rng(seed)
    mu = rng.uniform(-1, 1, size=p)
    W1 = rng.standard_normal((hidden, p)) / np.sqrt(p)
    b1 = rng.standard_normal(hidden) * 0.5
    W2 = rng.standard_normal((K, hidden)) / np.sqrt(hidden)
    b2 = np.abs(rng.standard_normal(K))
    X = mu + rng.standard_normal((N, p))
    U = scale * np.maximum(np.maximum(X @ W1.T + b1, 0) @ W2.T + b2, 0)
    spec = {"generator": "newsvendor", "N": N, "p": p, "K": K, "hidden": hidden, "scale": scale}
    return DecisionDataset(X, U, make_splits(N, rng, fractions), spec, seed)


def gen_crossfulfill(N=300, p=5, m=3, seed=0, fractions=DEFAULT_SPLIT):
    """Demands d_j = (q_j . x)^2 with q drawn once per seed."""
    _check_pos(N=N, p=p, m=m)
    rng = make_rng(seed)
    q = rng.standard_normal((p, m)) / np.sqrt(p)
    X = rng.standard_normal((N, p))
    U = (X @ q) ** 2
    spec = {"generator": "crossfulfill", "N": N, "p": p, "m": m}
    ds = DecisionDataset(X, U, make_splits(N, rng, fractions), spec, seed)
    ds.extra["q"] = q
    return ds


def crossfulfill_demand(X, q):
    return (np.asarray(X) @ q) ** 2


def gen_quad_newsvendor(N=500, p=5, support=(1, 2, 3, 4, 5), seed=0, hidden=16, fractions=DEFAULT_SPLIT):
    """Features and a demand drawn from a softmax over the support whose
    logits are a fixed random 2-layer max(., 0) network of the features
    (``hidden=0`` gives linear logits).

    U holds one-hot rows over the support; ``extra["demand"]`` the realized value.
    """
    K = len(support)
    _check_pos(N=N, p=p, K=K)
    rng = make_rng(seed)
    X = rng.standard_normal((N, p))
    if hidden:
        W1 = rng.standard_normal((hidden, p)) / np.sqrt(p)
        b1 = rng.standard_normal(hidden) * 0.5
        W2 = rng.standard_normal((K, hidden)) * 3.0 / np.sqrt(hidden)
        logits = np.maximum(X @ W1.T + b1, 0) @ W2.T
    else:
        logits = X @ (rng.standard_normal((K, p)) * 1.5).T
    P = np.exp(logits - logits.max(axis=1, keepdims=True))
    P /= P.sum(axis=1, keepdims=True)
    cum = np.cumsum(P, axis=1)
    k = np.minimum((rng.uniform(size=(N, 1)) > cum).sum(axis=1), K - 1)
    U = np.eye(K)[k]
    spec = {"generator": "quadratic-newsvendor", "N": N, "p": p, "hidden": hidden,
            "support": list(map(float, support))}
    ds = DecisionDataset(X, U, make_splits(N, rng, fractions), spec, seed)
    ds.extra["demand"] = np.asarray(support, dtype=float)[k]
    return ds


def gen_cost_vectors(N, d, seed=0, low=0.0, high=1.0, fractions=DEFAULT_SPLIT):
    """Featureless uniform cost vectors (matching weights, toy polytopes)."""
    _check_pos(N=N, d=d)
    rng = make_rng(seed)
    U = rng.uniform(low, high, size=(N, d))
    spec = {"generator": "uniform-costs", "N": N, "d": d, "low": low, "high": high}
    return DecisionDataset(np.zeros((N, 0)), U, make_splits(N, rng, fractions), spec, seed)


def gen_grid_costs(N=200, side=5, p=8, seed=0, fractions=DEFAULT_SPLIT):
    """Synthetic terrain: features x, vertex costs = softplus of a random
    linear map of x plus a fixed terrain offset."""
    _check_pos(N=N, side=side, p=p)
    rng = make_rng(seed)
    V = side * side
    B = rng.standard_normal((V, p)) / np.sqrt(p)
    base = rng.uniform(0.5, 1.5, size=V)
    X = rng.standard_normal((N, p))
    U = base + np.logaddexp(0.0, X @ B.T)
    spec = {"generator": "grid-costs", "N": N, "side": side, "p": p}
    return DecisionDataset(X, U, make_splits(N, rng, fractions), spec, seed)


def gen_circle_costs(M):
    """u^m = (cos(m pi / 2M), sin(m pi / 2M)), m = 0..M."""
    if M < 1:
        raise ValueError("M must be >= 1")
    a = np.arange(M + 1) * np.pi / (2 * M)
    return np.stack([np.cos(a), np.sin(a)], axis=1)


def gen_load_series(days=60, seed=0, base=3.0, daily=1.0, weekly=0.3, noise=0.1, start="2020-01-01"):
    """Hourly synthetic load: daily sinusoid, weekly modulation, Gaussian noise.

    Returns (timestamps, load, temp) lists ready for :func:`write_series_csv`.
    """
    rng = make_rng(seed)
    n = 24 * days
    t = np.arange(n)
    temp = 10 + 8 * np.sin(2 * np.pi * (t / 24 - 8) / 24) + rng.standard_normal(n)
    load = (base + daily * np.sin(2 * np.pi * (t % 24 - 6) / 24)
            + weekly * np.cos(2 * np.pi * t / (24 * 7)) + noise * rng.standard_normal(n))
    t0 = dt.datetime.fromisoformat(start)
    stamps = [(t0 + dt.timedelta(hours=int(i))).isoformat() for i in t]
    return stamps, np.maximum(load, 0.0), temp


def write_series_csv(path, stamps, load, temp=None):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["timestamp", "load"] + (["temp"] if temp is not None else []))
        for i, s in enumerate(stamps):
            wr.writerow([s, repr(float(load[i]))] + ([repr(float(temp[i]))] if temp is not None else []))


TRANSFORMS = ("sinusoidal-yearly", "weekend-onehot", "holiday-onehot", "temp", "temp-squared", "temp-cubed")
# fixed-date holidays only; movable ones are left to a user-supplied list
_HOLIDAYS = {(1, 1), (7, 4), (12, 25), (12, 31)}


class SeriesFormatError(ValueError):
    pass


def load_series_csv(path, horizon=24, stride=None, transforms=("sinusoidal-yearly", "weekend-onehot", "temp"),
                    seed=0, fractions=DEFAULT_SPLIT, holidays=None):
    """Windows of ``horizon`` consecutive loads become U rows; features come
    from the window's first timestamp and the preceding-day temperatures.

    ``stride`` defaults to 1.  Gaps larger than one step are reported in
    ``extra["gaps"]`` and windows spanning them are dropped.
    """
    for t in transforms:
        if t not in TRANSFORMS:
            raise ValueError(f"unknown transform {t!r}; choose from {TRANSFORMS}")
    stride = 1 if stride is None else int(stride)
    hol = _HOLIDAYS if holidays is None else set(holidays)
    stamps, load, temp = [], [], []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or header[:2] != ["timestamp", "load"]:
            raise SeriesFormatError(f"{path}: line 1: header must start with timestamp,load")
        has_temp = len(header) > 2 and header[2] == "temp"
        for ln, row in enumerate(rd, start=2):
            if not row:
                continue
            try:
                stamps.append(dt.datetime.fromisoformat(row[0]))
                load.append(float(row[1]))
                temp.append(float(row[2]) if has_temp else np.nan)
            except (ValueError, IndexError) as e:
                raise SeriesFormatError(f"{path}: line {ln}: malformed row {row!r} ({e})") from None
    if any(t in transforms for t in ("temp", "temp-squared", "temp-cubed")) and not has_temp:
        raise SeriesFormatError(f"{path}: temperature transforms need a temp column")
    load = np.asarray(load)
    temp = np.asarray(temp)
    steps = np.diff([s.timestamp() for s in stamps])
    unit = np.median(steps) if len(steps) else 3600.0
    gaps = [i + 1 for i, s in enumerate(steps) if s > unit * 1.5]
    if any(s <= 0 for s in steps):
        raise SeriesFormatError(f"{path}: rows are not time-ordered")
    X, U = [], []
    gapset = np.zeros(len(load) + 1, dtype=int)
    for g in gaps:
        gapset[g] = 1
    gcum = np.cumsum(gapset)
    for s in range(0, len(load) - horizon + 1, stride):
        if gcum[s + horizon - 1] - gcum[s] > 0:
            continue
        U.append(load[s:s + horizon])
        X.append(_features(stamps[s], temp[s:s + horizon], transforms, hol))
    if not U:
        raise SeriesFormatError(f"{path}: fewer than horizon={horizon} contiguous rows")
    X = np.asarray(X, dtype=float)
    U = np.asarray(U, dtype=float)
    spec = {"generator": "series-csv", "path": os.path.basename(path), "horizon": horizon, "stride": stride,
            "transforms": list(transforms)}
    ds = DecisionDataset(X, U, make_splits(len(U), make_rng(seed), fractions), spec, seed)
    ds.extra["gaps"] = gaps
    return ds


def _features(t0, temps, transforms, hol):
    f = []
    for t in transforms:
        if t == "sinusoidal-yearly":
            a = 2 * np.pi * t0.timetuple().tm_yday / 365.25
            f += [np.sin(a), np.cos(a)]
        elif t == "weekend-onehot":
            f += [float(t0.weekday() >= 5)]
        elif t == "holiday-onehot":
            f += [float((t0.month, t0.day) in hol)]
        elif t == "temp":
            f += list(temps)
        elif t == "temp-squared":
            f += list(np.asarray(temps) ** 2)
        elif t == "temp-cubed":
            f += list(np.asarray(temps) ** 3)
    return f


def gen_electricity(days=60, horizon=24, seed=0, fractions=DEFAULT_SPLIT, stride=24, **kw):
    """Synthetic load series windowed like :func:`load_series_csv` (no file)."""
    stamps, load, temp = gen_load_series(days=days, seed=seed, **kw)
    X, U = [], []
    ts = [dt.datetime.fromisoformat(s) for s in stamps]
    for s in range(0, len(load) - horizon + 1, stride):
        U.append(load[s:s + horizon])
        X.append(_features(ts[s], temp[s:s + horizon], ("sinusoidal-yearly", "weekend-onehot", "temp"), _HOLIDAYS))
    X, U = np.asarray(X), np.asarray(U)
    spec = {"generator": "electricity", "days": days, "horizon": horizon, "stride": stride}
    return DecisionDataset(X, U, make_splits(len(U), make_rng(seed + 1), fractions), spec, seed)
