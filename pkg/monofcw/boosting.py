"""Discrete AdaBoost over shallow decision trees on channel features.

Each tree votes +1 (vehicle) or -1 and the classifier score is the weighted
vote sum. Per-prefix cascade thresholds let a scan give up on a window as soon
as its running score falls clearly below every training positive's.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np

from monofcw import config
from monofcw.channels import N_CHANNELS, compute_channels


logger = logging.getLogger(__name__)

# weighted error is clamped here when a tree classifies everything right
MIN_ERROR = 1e-10
# splits whose errors differ by less than this are ties
TIE_EPS = 1e-12


class TrainingError(ValueError):
    pass


class EmptyClass(TrainingError):
    pass


class DegenerateWeights(TrainingError):
    """Sample weights cannot be carried into another round."""


@dataclass(frozen=True)
class Tree:
    """Decision tree in flat arrays; node 0 is the root.

    Leaves have feature -1 and a value of +1 or -1. A sample goes left when
    its feature value is below the node threshold.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @classmethod
    def leaf(cls, value):
        return cls.from_nodes([(-1, 0.0, -1, -1, value)])

    @classmethod
    def from_nodes(cls, nodes):
        feature, threshold, left, right, value = zip(*nodes)
        return cls(
            feature=np.array(feature, dtype=int),
            threshold=np.array(threshold, dtype=float),
            left=np.array(left, dtype=int),
            right=np.array(right, dtype=int),
            value=np.array(value, dtype=float),
        )

    def nodes(self):
        return list(
            zip(
                self.feature.tolist(),
                self.threshold.tolist(),
                self.left.tolist(),
                self.right.tolist(),
                self.value.tolist(),
            )
        )

    def evaluate(self, lookup, n):
        """Leaf values for n samples.

        lookup(samples, features) returns the value of features[i] for sample
        samples[i], so callers decide where the feature values come from.
        """
        node = np.zeros(n, dtype=int)
        samples = np.arange(n)
        for _ in range(len(self.feature)):
            feature = self.feature[node]
            internal = feature >= 0
            if not internal.any():
                break
            at = node[internal]
            x = lookup(samples[internal], feature[internal])
            node[internal] = np.where(
                x < self.threshold[at], self.left[at], self.right[at]
            )
        return self.value[node]


@dataclass(frozen=True)
class BoostedClassifier:
    trees: tuple
    weights: np.ndarray
    cascade_thresholds: np.ndarray
    window_model: tuple = config.WINDOW_MODEL  # (w, h) pixels
    shrink: int = config.SHRINK

    @property
    def cells(self):
        """Model grid size in cells, (columns, rows)."""
        w, h = self.window_model
        return w // self.shrink, h // self.shrink

    @property
    def n_features(self):
        columns, rows = self.cells
        return N_CHANNELS * rows * columns

    def prefix_scores(self, features):
        """Running scores, shape (samples, trees), of an (samples, n_features) matrix."""
        features = np.asarray(features, dtype=float)
        lookup = lambda rows, cols: features[rows, cols]
        votes = [
            weight * tree.evaluate(lookup, len(features))
            for tree, weight in zip(self.trees, self.weights)
        ]
        if not votes:
            return np.zeros((len(features), 0))
        return np.cumsum(np.stack(votes, axis=1), axis=1)

    def score(self, features):
        prefix = self.prefix_scores(features)
        if prefix.shape[1] == 0:
            return np.zeros(len(prefix))
        return prefix[:, -1]


@dataclass
class Round:
    """What one boosting round chose."""

    feature: int
    threshold: float
    error: float
    weight: float
    training_error: float  # of the ensemble so far
    loss_bound: float  # product of 2 sqrt(e (1 - e)) over the rounds so far


@dataclass
class _Split:
    feature: int
    threshold: float
    error: float
    left_value: float
    right_value: float


def _majority(wp, wn):
    return 1.0 if wp > wn else -1.0


def best_split(x, y, w, order, mask):
    """Exhaustive search for the stump with least weighted error on mask.

    Candidate thresholds are midpoints between consecutive distinct values.
    Ties go to the lowest feature index, then the lowest threshold. Returns
    None if no feature takes two distinct values on mask.
    """
    n_features = x.shape[1]
    m = int(mask.sum())
    if m < 2:
        return None

    # per feature, the masked samples in ascending value order: (features, m)
    cols = order.T
    sorted_idx = cols[mask[cols]].reshape(n_features, m)
    values = np.take_along_axis(x.T, sorted_idx, axis=1)
    wp = np.where(y > 0, w, 0.0)[sorted_idx]
    wn = np.where(y < 0, w, 0.0)[sorted_idx]

    left_p = np.cumsum(wp, axis=1)[:, :-1]
    left_n = np.cumsum(wn, axis=1)[:, :-1]
    total_p, total_n = wp[0].sum(), wn[0].sum()
    right_p, right_n = total_p - left_p, total_n - left_n

    error = np.minimum(left_p, left_n) + np.minimum(right_p, right_n)
    error = np.where(values[:, 1:] > values[:, :-1], error, np.inf)
    best = error.min()
    if not math.isfinite(best):
        return None

    first = int(np.flatnonzero(error.ravel() <= best + TIE_EPS)[0])
    feature, k = divmod(first, m - 1)
    return _Split(
        feature=feature,
        threshold=float((values[feature, k] + values[feature, k + 1]) / 2),
        error=float(error[feature, k]),
        left_value=_majority(left_p[feature, k], left_n[feature, k]),
        right_value=_majority(right_p[feature, k], right_n[feature, k]),
    )


def fit_tree(x, y, w, order, depth):
    """Greedy tree of depth 1 or 2: the root split, then each child's best split."""
    everyone = np.ones(len(y), dtype=bool)
    root = best_split(x, y, w, order, everyone)
    if root is None:
        wp, wn = w[y > 0].sum(), w[y < 0].sum()
        return Tree.leaf(_majority(wp, wn)), float(min(wp, wn)), None

    if depth == 1:
        tree = Tree.from_nodes(
            [
                (root.feature, root.threshold, 1, 2, 0.0),
                (-1, 0.0, -1, -1, root.left_value),
                (-1, 0.0, -1, -1, root.right_value),
            ]
        )
        return tree, root.error, root

    goes_left = x[:, root.feature] < root.threshold
    nodes = [(root.feature, root.threshold, 1, 0, 0.0)]
    error = 0.0
    for side, child_mask, default in (
        ("left", goes_left, root.left_value),
        ("right", ~goes_left, root.right_value),
    ):
        wp = w[child_mask & (y > 0)].sum()
        wn = w[child_mask & (y < 0)].sum()
        leaf_error = min(wp, wn)
        child = best_split(x, y, w, order, child_mask) if leaf_error > 0 else None
        here = len(nodes)
        if side == "right":
            nodes[0] = (root.feature, root.threshold, 1, here, 0.0)
        if child is None or child.error >= leaf_error:
            nodes.append((-1, 0.0, -1, -1, default))
            error += leaf_error
        else:
            nodes.append((child.feature, child.threshold, here + 1, here + 2, 0.0))
            nodes.append((-1, 0.0, -1, -1, child.left_value))
            nodes.append((-1, 0.0, -1, -1, child.right_value))
            error += child.error
    return Tree.from_nodes(nodes), float(error), root


def cascade_thresholds(trees, weights, positives):
    """Least running score over the positives after each tree."""
    clf = BoostedClassifier(
        trees=tuple(trees),
        weights=np.asarray(weights, dtype=float),
        cascade_thresholds=np.zeros(len(trees)),
    )
    return clf.prefix_scores(positives).min(axis=0)


def reweight(w, weight, y, votes):
    """Sample weights for the next round, normalised to sum 1.

    Raises DegenerateWeights when the tree made no mistake, since the next
    round would then see the same weights and fit the same tree.
    """
    wrong = votes != y
    if not wrong.any():
        raise DegenerateWeights("tree separates the training set")
    with np.errstate(over="ignore"):
        w = w * np.exp(-weight * y * votes)
        total = w.sum()
    if not (math.isfinite(total) and total > 0):
        raise DegenerateWeights(f"sample weights sum to {total}")
    return w / total


def boost(
    x,
    y,
    rounds=config.ROUNDS,
    depth=config.DEPTH,
    window_model=config.WINDOW_MODEL,
    shrink=config.SHRINK,
):
    """Train on a (samples, features) matrix and +1/-1 labels.

    The two classes start with half the total weight each. Training stops
    early when a tree's weighted error reaches 0.5, or when a tree makes no
    weighted error at all, in which case its error is clamped to MIN_ERROR
    and it is kept. Returns the classifier and a Round per tree.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n_pos, n_neg = int((y > 0).sum()), int((y < 0).sum())
    if not n_pos or not n_neg:
        raise EmptyClass(f"need both classes, got {n_pos} positive and {n_neg} negative")
    if n_pos + n_neg != len(y):
        raise TrainingError("labels must be +1 or -1")
    if depth not in (1, 2):
        raise TrainingError(f"tree depth must be 1 or 2, got {depth}")
    if rounds < 1:
        raise TrainingError(f"rounds must be >= 1, got {rounds}")

    w = np.where(y > 0, 0.5 / n_pos, 0.5 / n_neg)
    order = np.argsort(x, axis=0, kind="stable")
    lookup = lambda rows, cols: x[rows, cols]

    trees, weights, history = [], [], []
    margin = np.zeros(len(y))
    bound = 1.0
    for index in range(rounds):
        tree, error, root = fit_tree(x, y, w, order, depth)
        if error >= 0.5:
            logger.info(f"round {index}: weighted error {error:.6f} >= 0.5, stopping")
            break
        clamped = max(error, MIN_ERROR)
        weight = 0.5 * math.log((1 - clamped) / clamped)
        votes = tree.evaluate(lookup, len(y))

        trees.append(tree)
        weights.append(weight)
        margin += weight * votes
        bound *= 2 * math.sqrt(clamped * (1 - clamped))
        history.append(
            Round(
                feature=root.feature if root else -1,
                threshold=root.threshold if root else 0.0,
                error=error,
                weight=weight,
                training_error=float(np.mean(np.sign(margin) != y)),
                loss_bound=bound,
            )
        )
        logger.debug(
            f"round {index}: feature {history[-1].feature} error {error:.6f} "
            f"training error {history[-1].training_error:.4f}"
        )
        try:
            w = reweight(w, weight, y, votes)
        except DegenerateWeights as exc:
            logger.warning(f"round {index}: {exc}, stopping")
            break

    if not trees:
        raise TrainingError("the first tree is no better than chance")

    clf = BoostedClassifier(
        trees=tuple(trees),
        weights=np.array(weights),
        cascade_thresholds=cascade_thresholds(trees, weights, x[y > 0]),
        window_model=tuple(window_model),
        shrink=shrink,
    )
    return clf, history


def window_features(image, shrink=config.SHRINK):
    return compute_channels(image, shrink).features()


def train(
    positives,
    negatives,
    rounds=config.ROUNDS,
    depth=config.DEPTH,
    seed=config.SEED,
    max_negatives=None,
    window_model=config.WINDOW_MODEL,
):
    """Train a classifier on window sized RGB crops.

    If max_negatives is set and there are more negatives, a subset is drawn
    with seed.
    """
    if not positives or not negatives:
        raise EmptyClass(
            f"need both classes, got {len(positives)} positives and "
            f"{len(negatives)} negatives"
        )
    w, h = window_model
    for sample in list(positives) + list(negatives):
        if np.shape(sample)[:2] != (h, w):
            raise TrainingError(
                f"samples must be {w}x{h}, got shape {np.shape(sample)}"
            )

    negatives = list(negatives)
    if max_negatives is not None and len(negatives) > max_negatives:
        rng = np.random.default_rng(seed)
        chosen = rng.choice(len(negatives), size=max_negatives, replace=False)
        negatives = [negatives[i] for i in sorted(chosen)]

    x = np.stack([window_features(s) for s in list(positives) + negatives])
    y = np.concatenate([np.ones(len(positives)), -np.ones(len(negatives))])
    clf, history = boost(x, y, rounds, depth, window_model)
    logger.info(
        f"trained {len(clf.trees)} trees on {len(positives)} positives and "
        f"{len(negatives)} negatives, training error {history[-1].training_error:.4f}"
    )
    return clf
