"""From-scratch regression learners: CART trees, bagged forests, gradient-boosted
trees, and the fold-based target encoder that gives boosting native-categorical
behavior. Every fit is a pure function of (data, config, seed)."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Hashable, Mapping, Sequence

import numpy as np

from .errors import ConfigInvalid, EmptyInput, LengthMismatch, SchemaMismatch

_GAIN_ATOL = 1e-12


# ---------------------------------------------------------------------------
# Target encoding


@dataclass(frozen=True)
class TargetEncoder:
    """Fold-based smoothed mean encoder.

    Fold assignment of row i is the i-th draw from a stream keyed by the
    seed alone, so it depends only on (seed, row ordinal). Train-mode
    encodings for category c in fold f use (sum_y + a*y_mean)/(n + a) over
    the category's rows outside f; infer mode uses all fitted rows.
    """

    prior: float
    n_folds: int
    seed: int
    y_mean: float
    folds: np.ndarray = field(repr=False)
    categories: tuple[Hashable, ...] = field(repr=False)
    fold_sums: np.ndarray = field(repr=False)
    fold_counts: np.ndarray = field(repr=False)
    n_rows: int = 0

    def _index_of(self, cat: Hashable) -> int | None:
        idx = self._cat_index.get(cat)
        return idx

    @property
    def _cat_index(self) -> dict:
        # Built lazily; dataclass frozen, so cache via object.__setattr__.
        cached = self.__dict__.get("_cat_index_cache")
        if cached is None:
            cached = {c: i for i, c in enumerate(self.categories)}
            object.__setattr__(self, "_cat_index_cache", cached)
        return cached

    def infer_value(self, cat: Hashable) -> float:
        idx = self._index_of(cat)
        if idx is None:
            return self.y_mean
        total = self.fold_sums[idx].sum()
        count = self.fold_counts[idx].sum()
        return _smoothed(total, count, self.prior, self.y_mean)


def _smoothed(total: float, count: float, prior: float, y_mean: float) -> float:
    denom = count + prior
    if denom <= 0:
        return y_mean
    return (total + prior * y_mean) / denom


def fit_target_encoder(
    categories: Sequence[Hashable],
    targets: Sequence[float],
    prior: float = 5.0,
    n_folds: int = 5,
    seed: int = 0,
) -> TargetEncoder:
    """Fit per-category, per-fold target statistics on training rows."""
    cats = list(categories)
    y = np.asarray(targets, dtype=np.float64)
    if len(cats) != len(y):
        raise LengthMismatch(f"{len(cats)} categories vs {len(y)} targets")
    if len(cats) == 0:
        raise EmptyInput("cannot fit a target encoder on zero rows")
    if n_folds < 2:
        raise ConfigInvalid(f"fold count must be >= 2, got {n_folds}")
    if prior < 0:
        raise ConfigInvalid(f"prior weight must be >= 0, got {prior}")
    folds = np.random.default_rng(seed).integers(0, n_folds, size=len(cats))
    uniq = tuple(dict.fromkeys(cats))
    index = {c: i for i, c in enumerate(uniq)}
    fold_sums = np.zeros((len(uniq), n_folds))
    fold_counts = np.zeros((len(uniq), n_folds))
    for i, c in enumerate(cats):
        fold_sums[index[c], folds[i]] += y[i]
        fold_counts[index[c], folds[i]] += 1.0
    return TargetEncoder(
        prior=float(prior),
        n_folds=n_folds,
        seed=seed,
        y_mean=float(y.mean()),
        folds=folds,
        categories=uniq,
        fold_sums=fold_sums,
        fold_counts=fold_counts,
        n_rows=len(cats),
    )


def apply_target_encoder(
    encoder: TargetEncoder,
    categories: Sequence[Hashable],
    mode: str = "infer",
) -> np.ndarray:
    """Encode a categorical column.

    ``train`` mode is out-of-fold and only valid for the rows the encoder
    was fitted on (same length and order); ``infer`` mode uses the full
    fitted statistics and maps unseen categories to the training mean.
    """
    if mode not in ("train", "infer"):
        raise ConfigInvalid(f"mode must be train or infer, got {mode!r}")
    cats = list(categories)
    out = np.empty(len(cats), dtype=np.float64)
    if mode == "infer":
        for i, c in enumerate(cats):
            out[i] = encoder.infer_value(c)
        return out
    if len(cats) != encoder.n_rows:
        raise LengthMismatch(
            f"train-mode encoding needs the {encoder.n_rows} fitted rows, got {len(cats)}"
        )
    totals = encoder.fold_sums.sum(axis=1)
    counts = encoder.fold_counts.sum(axis=1)
    for i, c in enumerate(cats):
        idx = encoder._index_of(c)
        if idx is None:
            out[i] = encoder.y_mean
            continue
        f = encoder.folds[i]
        total = totals[idx] - encoder.fold_sums[idx, f]
        count = counts[idx] - encoder.fold_counts[idx, f]
        out[i] = _smoothed(total, count, encoder.prior, encoder.y_mean)
    return out


# ---------------------------------------------------------------------------
# CART regression trees


@dataclass(frozen=True)
class TreeConfig:
    max_depth: int = 6
    min_leaf: int = 5

    def __post_init__(self):
        if self.max_depth < 0:
            raise ConfigInvalid(f"max_depth must be >= 0, got {self.max_depth}")
        if self.min_leaf < 1:
            raise ConfigInvalid(f"min_leaf must be >= 1, got {self.min_leaf}")


@dataclass(frozen=True)
class RegressionTree:
    """Flat-array binary tree; feature -1 marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    count: np.ndarray
    n_features: int
    config: TreeConfig

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def n_leaves(self) -> int:
        return int(np.sum(self.feature < 0))


def _best_split(
    X: np.ndarray,
    y_node: np.ndarray,
    rows: np.ndarray,
    feats: np.ndarray,
    min_leaf: int,
) -> tuple[float, int, float] | None:
    """Greedy best (gain, feature, threshold) by squared-error reduction.

    Candidate thresholds are midpoints of consecutive distinct sorted
    values. Ties break toward the lowest feature index, then the lowest
    threshold. Returns None when no split beats zero gain.
    """
    n = rows.size
    sy = y_node.sum()
    syy = float(y_node @ y_node)
    sse_parent = syy - sy * sy / n
    eps = _GAIN_ATOL * max(1.0, abs(sse_parent))
    if sse_parent <= eps:
        return None
    # Gains within tie_eps are treated as equal so the declared tie rule
    # (lowest feature index, then lowest threshold) is stable under the
    # last-ulp noise of the prefix-sum arithmetic.
    tie_eps = 1e-9 * max(1.0, abs(sse_parent))
    best: tuple[float, int, float] | None = None
    for j in feats:
        xj = X[rows, j]
        order = np.argsort(xj, kind="stable")
        xs = xj[order]
        ys = y_node[order]
        cut = np.nonzero(xs[:-1] < xs[1:])[0]
        if cut.size == 0:
            continue
        n_left = cut + 1
        ok = (n_left >= min_leaf) & (n - n_left >= min_leaf)
        if not ok.any():
            continue
        cut = cut[ok]
        n_left = n_left[ok]
        n_right = n - n_left
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        sl = csum[cut]
        ql = csq[cut]
        sse = (ql - sl * sl / n_left) + ((syy - ql) - (sy - sl) ** 2 / n_right)
        gain = sse_parent - sse
        g_max = float(gain.max())
        k = int(np.argmax(gain >= g_max - tie_eps))  # lowest qualifying threshold
        g = float(gain[k])
        if g > eps and (best is None or g > best[0] + tie_eps):
            thr = 0.5 * (xs[cut[k]] + xs[cut[k] + 1])
            best = (g, int(j), float(thr))
    return best


def fit_regression_tree(
    X: np.ndarray,
    y: Sequence[float],
    config: TreeConfig = TreeConfig(),
    *,
    rng: np.random.Generator | None = None,
    mtry: int | None = None,
) -> RegressionTree:
    """Fit a CART regression tree by exact greedy split search.

    When ``rng`` and ``mtry`` are given, each split considers a fresh
    random subset of ``mtry`` features (used by random forests).
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise EmptyInput("X must be a 2-d matrix")
    if X.shape[0] == 0:
        raise EmptyInput("cannot fit a tree on zero rows")
    if X.shape[0] != len(y):
        raise LengthMismatch(f"{X.shape[0]} rows vs {len(y)} targets")
    n, p = X.shape
    all_feats = np.arange(p)

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    value: list[float] = []
    count: list[int] = []

    def new_node() -> int:
        feature.append(-1)
        threshold.append(np.nan)
        left.append(-1)
        right.append(-1)
        value.append(np.nan)
        count.append(0)
        return len(feature) - 1

    root = new_node()
    stack: list[tuple[int, np.ndarray, int]] = [(root, np.arange(n), 0)]
    while stack:
        nid, rows, depth = stack.pop()
        y_node = y[rows]
        value[nid] = float(y_node.mean())
        count[nid] = rows.size
        if depth >= config.max_depth or rows.size < 2 * config.min_leaf:
            continue
        if rng is not None and mtry is not None and mtry < p:
            feats = np.sort(rng.choice(p, size=mtry, replace=False))
        else:
            feats = all_feats
        split = _best_split(X, y_node, rows, feats, config.min_leaf)
        if split is None:
            continue
        _, j, thr = split
        go_left = X[rows, j] <= thr
        lid = new_node()
        rid = new_node()
        feature[nid] = j
        threshold[nid] = thr
        left[nid] = lid
        right[nid] = rid
        # Right pushed first so the left child is processed next (fixed
        # deterministic order for rng consumption).
        stack.append((rid, rows[~go_left], depth + 1))
        stack.append((lid, rows[go_left], depth + 1))

    return RegressionTree(
        feature=np.asarray(feature, dtype=np.int32),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int32),
        right=np.asarray(right, dtype=np.int32),
        value=np.asarray(value, dtype=np.float64),
        count=np.asarray(count, dtype=np.int32),
        n_features=p,
        config=config,
    )


def _tree_predict(tree: RegressionTree, X: np.ndarray) -> np.ndarray:
    idx = np.zeros(X.shape[0], dtype=np.int32)
    active = np.nonzero(tree.feature[idx] >= 0)[0]
    while active.size:
        cur = idx[active]
        xv = X[active, tree.feature[cur]]
        idx[active] = np.where(xv <= tree.threshold[cur], tree.left[cur], tree.right[cur])
        active = active[tree.feature[idx[active]] >= 0]
    return tree.value[idx]


# ---------------------------------------------------------------------------
# Random forest


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 12
    min_leaf: int = 5
    mtry: int | None = None  # None -> max(1, floor(p / 3))
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1:
            raise ConfigInvalid(f"n_trees must be >= 1, got {self.n_trees}")
        if self.mtry is not None and self.mtry < 1:
            raise ConfigInvalid(f"mtry must be >= 1, got {self.mtry}")


@dataclass(frozen=True)
class ForestModel:
    trees: tuple[RegressionTree, ...]
    config: ForestConfig
    n_features: int


def fit_random_forest(X: np.ndarray, y: Sequence[float], config: ForestConfig) -> ForestModel:
    """Bagged CART forest; per-tree randomness derives from (seed, tree ordinal)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyInput("cannot fit a forest on zero rows")
    n, p = X.shape
    mtry = config.mtry if config.mtry is not None else max(1, p // 3)
    tree_cfg = TreeConfig(max_depth=config.max_depth, min_leaf=config.min_leaf)
    trees = []
    for t in range(config.n_trees):
        rng = np.random.default_rng((config.seed, t))
        if config.bootstrap:
            rows = rng.integers(0, n, size=n)
            Xt, yt = X[rows], y[rows]
        else:
            Xt, yt = X, y
        trees.append(fit_regression_tree(Xt, yt, tree_cfg, rng=rng, mtry=mtry))
    return ForestModel(trees=tuple(trees), config=config, n_features=p)


# ---------------------------------------------------------------------------
# Gradient-boosted trees with internal target encoding


@dataclass(frozen=True)
class GbdtConfig:
    n_rounds: int = 100
    learning_rate: float = 0.1
    max_depth: int = 4
    min_leaf: int = 5
    subsample: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.n_rounds < 0:
            raise ConfigInvalid(f"n_rounds must be >= 0, got {self.n_rounds}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigInvalid(f"learning_rate must be in (0, 1], got {self.learning_rate}")
        if not 0.0 < self.subsample <= 1.0:
            raise ConfigInvalid(f"subsample must be in (0, 1], got {self.subsample}")


@dataclass(frozen=True)
class GbdtModel:
    """Squared-loss boosted trees over target-encoded categorical columns.

    Prediction is base + learning_rate * sum of tree outputs. The training
    MSE history is recorded per round; with subsample = 1 it is
    non-increasing.
    """

    base: float
    trees: tuple[RegressionTree, ...]
    config: GbdtConfig
    encoders: Mapping[int, TargetEncoder]
    categorical_columns: tuple[int, ...]
    n_features: int
    train_mse: tuple[float, ...] = field(repr=False, default=())


def _encode_matrix(
    X: np.ndarray,
    encoders: Mapping[int, TargetEncoder],
    mode: str,
) -> np.ndarray:
    Xw = np.array(X, dtype=np.float64, copy=True)
    for col, enc in encoders.items():
        cats = X[:, col].astype(np.int64) if mode != "raw" else X[:, col]
        Xw[:, col] = apply_target_encoder(enc, cats.tolist(), mode)
    return Xw


def fit_gbdt(
    X: np.ndarray,
    y: Sequence[float],
    config: GbdtConfig,
    *,
    categorical_columns: Sequence[int] = (),
    te_prior: float = 5.0,
    te_folds: int = 5,
) -> GbdtModel:
    """Boost residual-fitting trees; categorical columns hold integer category ids
    and pass through the fold-based target encoder (train mode here, infer at predict)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyInput("cannot fit on zero rows")
    if X.shape[0] != len(y):
        raise LengthMismatch(f"{X.shape[0]} rows vs {len(y)} targets")
    n, p = X.shape
    cat_cols = tuple(sorted(int(c) for c in categorical_columns))
    if any(c < 0 or c >= p for c in cat_cols):
        raise ConfigInvalid(f"categorical column out of range for {p} features")

    encoders: dict[int, TargetEncoder] = {}
    Xw = np.array(X, copy=True)
    for col in cat_cols:
        cats = X[:, col].astype(np.int64).tolist()
        enc = fit_target_encoder(cats, y, te_prior, te_folds, seed=(config.seed, 1_000_003, col))
        encoders[col] = enc
        Xw[:, col] = apply_target_encoder(enc, cats, "train")

    base = float(y.mean())
    pred = np.full(n, base)
    tree_cfg = TreeConfig(max_depth=config.max_depth, min_leaf=config.min_leaf)
    trees = []
    mse_history = []
    for m in range(config.n_rounds):
        resid = y - pred
        if config.subsample < 1.0:
            rng = np.random.default_rng((config.seed, m))
            k = max(1, int(round(config.subsample * n)))
            rows = np.sort(rng.choice(n, size=k, replace=False))
            tree = fit_regression_tree(Xw[rows], resid[rows], tree_cfg)
        else:
            tree = fit_regression_tree(Xw, resid, tree_cfg)
        trees.append(tree)
        pred = pred + config.learning_rate * _tree_predict(tree, Xw)
        mse_history.append(float(np.mean((y - pred) ** 2)))

    return GbdtModel(
        base=base,
        trees=tuple(trees),
        config=config,
        encoders=encoders,
        categorical_columns=cat_cols,
        n_features=p,
        train_mse=tuple(mse_history),
    )


# ---------------------------------------------------------------------------
# Prediction and grid search


def predict(model, X: np.ndarray) -> np.ndarray:
    """Predict with any fitted model; raises SchemaMismatch on a column-count mismatch."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise SchemaMismatch("X must be a 2-d matrix")
    if X.shape[0] == 0:
        return np.empty(0, dtype=np.float64)
    if X.shape[1] != model.n_features:
        raise SchemaMismatch(
            f"model expects {model.n_features} columns, got {X.shape[1]}"
        )
    if isinstance(model, RegressionTree):
        return _tree_predict(model, X)
    if isinstance(model, ForestModel):
        acc = np.zeros(X.shape[0])
        for tree in model.trees:
            acc += _tree_predict(tree, X)
        return acc / len(model.trees)
    if isinstance(model, GbdtModel):
        Xw = _encode_matrix(X, model.encoders, "infer")
        out = np.full(X.shape[0], model.base)
        for tree in model.trees:
            out += model.config.learning_rate * _tree_predict(tree, Xw)
        return out
    raise SchemaMismatch(f"unknown model type {type(model).__name__}")


FAMILIES = ("forest", "gbdt")

_FAMILY_DEFAULTS = {"forest": ForestConfig, "gbdt": GbdtConfig}


def make_config(family: str, params: Mapping[str, object]):
    """Build a family config from defaults overlaid with grid parameters."""
    if family not in _FAMILY_DEFAULTS:
        raise ConfigInvalid(f"unknown model family {family!r}; expected one of {FAMILIES}")
    return replace(_FAMILY_DEFAULTS[family](), **params)


def fit_family(family: str, X, y, config, *, categorical_columns=(), te_prior=5.0, te_folds=5):
    if family == "forest":
        return fit_random_forest(X, y, config)
    if family == "gbdt":
        return fit_gbdt(
            X,
            y,
            config,
            categorical_columns=categorical_columns,
            te_prior=te_prior,
            te_folds=te_folds,
        )
    raise ConfigInvalid(f"unknown model family {family!r}")


@dataclass(frozen=True)
class HyperGrid:
    """Named parameter lists; enumeration is the cross product in input order."""

    params: Mapping[str, tuple]

    def __post_init__(self):
        if not self.params or any(len(v) == 0 for v in self.params.values()):
            raise ConfigInvalid("grid must have at least one value per parameter")

    def points(self):
        keys = list(self.params)
        for combo in itertools.product(*(self.params[k] for k in keys)):
            yield dict(zip(keys, combo))

    def __len__(self) -> int:
        out = 1
        for v in self.params.values():
            out *= len(v)
        return out


@dataclass(frozen=True)
class LeaderboardRow:
    params: dict
    train_score: float | None
    val_score: float | None
    error: str | None = None


METRICS = ("MAE", "RMSE")


def _score(metric: str, y: np.ndarray, yhat: np.ndarray) -> float:
    err = y - yhat
    if metric == "MAE":
        return float(np.mean(np.abs(err)))
    return float(np.sqrt(np.mean(err**2)))


def _size_key(params: Mapping[str, object]) -> tuple:
    rounds = params.get("n_rounds", params.get("n_trees", 0))
    depth = params.get("max_depth", 0)
    return (rounds, depth)


def grid_search(
    family: str,
    grid: HyperGrid,
    train: tuple[np.ndarray, np.ndarray],
    val: tuple[np.ndarray, np.ndarray],
    metric: str = "MAE",
    *,
    categorical_columns: Sequence[int] = (),
    te_prior: float = 5.0,
    te_folds: int = 5,
    seed: int | None = None,
):
    """Fit every grid point on train, score on val, return (best config, leaderboard).

    Best is the lowest validation score; ties break toward fewer
    rounds/trees, then smaller depth, then grid order. Fit errors are
    recorded per combination without aborting the search.
    """
    if metric not in METRICS:
        raise ConfigInvalid(f"metric must be one of {METRICS}, got {metric!r}")
    X_train, y_train = train
    X_val, y_val = val
    y_train = np.asarray(y_train, dtype=np.float64)
    y_val = np.asarray(y_val, dtype=np.float64)

    leaderboard: list[LeaderboardRow] = []
    best_key = None
    best_config = None
    for gi, params in enumerate(grid.points()):
        if seed is not None:
            params = {**params, "seed": seed}
        try:
            config = make_config(family, params)
            model = fit_family(
                family,
                X_train,
                y_train,
                config,
                categorical_columns=categorical_columns,
                te_prior=te_prior,
                te_folds=te_folds,
            )
            train_score = _score(metric, y_train, predict(model, X_train))
            val_score = _score(metric, y_val, predict(model, X_val))
        except Exception as exc:  # record and continue
            leaderboard.append(LeaderboardRow(dict(params), None, None, f"{type(exc).__name__}: {exc}"))
            continue
        leaderboard.append(LeaderboardRow(dict(params), train_score, val_score))
        key = (val_score, *_size_key(params), gi)
        if best_key is None or key < best_key:
            best_key = key
            best_config = config
    if best_config is None:
        raise ConfigInvalid("every grid combination failed to fit")
    return best_config, leaderboard
