"""Empirical expansion checks on finite point sets.

Neighborhoods are closed radius-r balls: N(V) is every point within
distance r of some point of V. For class i with uniform empirical measure
P_i, a subset V of class-i points with P_i(V) <= a_bar expands by the
ratio P_i(N(V)) / P_i(V). Subsets whose neighborhood already covers the
whole class satisfy ``P_i(N(V)) >= min{c P_i(V), 1}`` for every c and are
skipped; the estimate is capped at 1/a_bar, the largest factor that
condition can certify for a set of measure a_bar.

The c estimates are minima over the subsets actually checked: exact under
full enumeration, an upper estimate under sampling. mu is a measured
prediction-instability rate, not a proven constant.

On the product space the check runs over arbitrary subsets of each class.
Rectangles V_alpha x V_beta alone give the separate c_rect estimate,
which factors into c1 * c2; cylinders V_alpha x X_beta only expand by c1,
so the general product estimate can sit well below c1 * c2.
"""

import itertools
import logging
from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from mkelab.config import settings
from mkelab.models.schemas import (
    ExpansionEstimate,
    Lemma1Report,
    TheoryRow,
    TheorySpec,
    Transform,
)
from mkelab.services import perturb
from mkelab.services.mke import TrainedModel
from mkelab.services.synthdata import UnlabeledMultimodal, UnlabeledOracle


logger = logging.getLogger(__name__)

# Relative slack on the ball radius so lattice neighbors at exactly r are included.
RADIUS_TOLERANCE = 1e-9
SIZE_EPS = 1e-9


class ExpansionError(Exception):
    """Base exception for expansion checks."""
    pass


class InvalidSubsetError(ExpansionError):
    """Raised for an empty or out-of-range subset, class or a_bar."""
    pass


class EstimationError(ExpansionError):
    """Raised when no subset can be checked."""
    pass


class PairingError(ExpansionError):
    """Raised when two modality point sets do not share their classes."""
    pass


class DomainError(ExpansionError):
    """Raised when a bound is evaluated outside its domain."""
    pass


@dataclass
class FinitePointSet:
    """Labeled points with a ball neighborhood of radius `radius`.

    ``blocks`` splits the coordinates into groups; the distance is the
    maximum of the per-group Euclidean distances (a single group gives the
    plain Euclidean metric). ``factors`` maps product points back to their
    (alpha, beta) source indices.
    """
    points: np.ndarray
    labels: np.ndarray
    radius: float
    blocks: tuple[int, ...] = ()
    factors: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        self.points = pts
        self.labels = np.asarray(self.labels, dtype=int)
        if len(pts) == 0:
            raise ExpansionError("point set is empty")
        if len(self.labels) != len(pts):
            raise ExpansionError(f"{len(pts)} points but {len(self.labels)} labels")
        if not self.radius > 0:
            raise ExpansionError(f"radius must be > 0, got {self.radius}")
        if not self.blocks:
            self.blocks = (pts.shape[1],)
        if sum(self.blocks) != pts.shape[1]:
            raise ExpansionError(f"blocks {self.blocks} do not cover {pts.shape[1]} coordinates")
        if self.labels.min() < 0:
            raise ExpansionError("labels must be non-negative")
        for c in range(self.num_classes):
            if not np.any(self.labels == c):
                raise ExpansionError(f"class {c} has no points")

    def __len__(self) -> int:
        return len(self.points)

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1

    def class_indices(self, class_index: int) -> np.ndarray:
        return np.flatnonzero(self.labels == class_index)

    @cached_property
    def distances(self) -> np.ndarray:
        """Pairwise distance matrix."""
        if all(width == 1 for width in self.blocks):
            return cdist(self.points, self.points, "chebyshev")
        offsets = np.cumsum((0, *self.blocks))
        per_block = [
            cdist(self.points[:, lo:hi], self.points[:, lo:hi], "euclidean")
            for lo, hi in zip(offsets[:-1], offsets[1:])
        ]
        return np.maximum.reduce(per_block)

    @cached_property
    def adjacency(self) -> np.ndarray:
        """adjacency[j, k] is True when point k lies in the ball around point j."""
        return self.distances <= self.radius * (1.0 + RADIUS_TOLERANCE)


def neighborhood(v: Sequence[int], ps: FinitePointSet) -> np.ndarray:
    """
    Indices of all points within ps.radius of some point of `v` (V included).

    Raises:
        InvalidSubsetError: If `v` is empty or holds an invalid index
    """
    idx = np.asarray(list(v), dtype=int)
    if idx.size == 0:
        raise InvalidSubsetError("neighborhood of an empty subset")
    if idx.min() < 0 or idx.max() >= len(ps):
        raise InvalidSubsetError(f"subset indices must lie in [0, {len(ps)})")
    return np.flatnonzero(ps.adjacency[idx].any(axis=0))


@dataclass
class MisclassifiedSet:
    """Samples of D_u the teacher gets wrong, and their largest class measure."""
    indices: np.ndarray
    a_bar: float


def misclassified_set(teacher: TrainedModel, d_u: UnlabeledMultimodal, oracle: UnlabeledOracle) -> MisclassifiedSet:
    """M = samples whose teacher prediction differs from the true label; a_bar = max_i P_i(M)."""
    labels = np.asarray(oracle.labels, dtype=int)
    if len(labels) == 0:
        return MisclassifiedSet(np.zeros(0, dtype=int), 0.0)
    wrong = teacher.predict(d_u) != labels
    a_bar = max(float(wrong[labels == c].mean()) for c in np.unique(labels))
    return MisclassifiedSet(np.flatnonzero(wrong), a_bar)


def _check_a_bar(a_bar: float) -> None:
    if not 0.0 < a_bar <= 1.0:
        raise InvalidSubsetError(f"a_bar must lie in (0, 1], got {a_bar}")


def _popcounts(bits: int) -> np.ndarray:
    counts = np.zeros(1 << bits, dtype=np.int64)
    for b in range(bits):
        lo = 1 << b
        counts[lo:2 * lo] = counts[:lo] + 1
    return counts


@dataclass
class _ClassSubsets:
    """Admissible subsets of one class with their neighborhood coverage."""
    members: np.ndarray  # global indices of the class points
    covered: np.ndarray  # |N(V) ∩ class| per subset
    sizes: np.ndarray
    exhaustive: bool
    masks: Optional[np.ndarray] = None  # bitmasks over members (enumeration)
    sets: Optional[list[np.ndarray]] = None  # member positions (sampling)

    def __len__(self) -> int:
        return len(self.sizes)

    def subset(self, k: int) -> np.ndarray:
        """Positions (into members) of subset k."""
        if self.masks is not None:
            mask = int(self.masks[k])
            return np.array([b for b in range(len(self.members)) if mask >> b & 1], dtype=int)
        return self.sets[k]


def _enumerate(members: np.ndarray, local_adj: np.ndarray, max_size: int) -> _ClassSubsets:
    n = len(members)
    neighbor_bits = (local_adj.astype(np.int64) << np.arange(n, dtype=np.int64)).sum(axis=1)
    reach = np.zeros(1 << n, dtype=np.int64)
    for b in range(n):
        lo = 1 << b
        reach[lo:2 * lo] = reach[:lo] | neighbor_bits[b]
    popcount = _popcounts(n)
    sizes = popcount
    masks = np.flatnonzero((sizes >= 1) & (sizes <= max_size))
    return _ClassSubsets(
        members=members,
        covered=popcount[reach[masks]],
        sizes=sizes[masks],
        exhaustive=True,
        masks=masks,
    )


def _sample(
    members: np.ndarray,
    local_adj: np.ndarray,
    local_dist: np.ndarray,
    max_size: int,
    budget: int,
    rng: np.random.Generator,
    extra: Sequence[Sequence[int]],
) -> _ClassSubsets:
    n = len(members)
    sets = [np.array([j]) for j in range(n)]
    nearest = np.argsort(local_dist, axis=1, kind="stable")
    for _ in range(budget):
        k = int(rng.integers(1, max_size + 1))
        if rng.random() < 0.5:
            sets.append(np.sort(rng.choice(n, size=k, replace=False)))
        else:
            center = int(rng.integers(n))
            sets.append(np.sort(nearest[center, :k]))

    position = {int(g): j for j, g in enumerate(members)}
    for subset in extra:
        local = sorted({position[int(g)] for g in subset if int(g) in position})
        if 1 <= len(local) <= max_size:
            sets.append(np.array(local, dtype=int))

    covered = np.array([int(local_adj[s].any(axis=0).sum()) for s in sets], dtype=np.int64)
    sizes = np.array([len(s) for s in sets], dtype=np.int64)
    return _ClassSubsets(members=members, covered=covered, sizes=sizes, exhaustive=False, sets=sets)


def _class_subsets(
    ps: FinitePointSet,
    class_index: int,
    a_bar: float,
    budget: int,
    rng: np.random.Generator,
    extra: Sequence[Sequence[int]] = (),
    enumeration_limit: Optional[int] = None,
) -> _ClassSubsets:
    if not 0 <= class_index < ps.num_classes:
        raise InvalidSubsetError(f"class {class_index} not in point set with {ps.num_classes} classes")
    members = ps.class_indices(class_index)
    n = len(members)
    max_size = int(np.floor(a_bar * n + SIZE_EPS))
    if max_size < 1:
        raise EstimationError(f"class {class_index}: no subset has measure <= a_bar={a_bar} ({n} points)")

    local_adj = ps.adjacency[np.ix_(members, members)]
    limit = settings.EXPANSION_ENUMERATION_LIMIT if enumeration_limit is None else enumeration_limit
    if n <= limit:
        return _enumerate(members, local_adj, max_size)
    if budget <= 0:
        raise EstimationError(f"class {class_index} has {n} points; sampling needs a positive budget")
    local_dist = ps.distances[np.ix_(members, members)]
    return _sample(members, local_adj, local_dist, max_size, budget, rng, extra)


def _minimum_ratio(covered: np.ndarray, sizes: np.ndarray, full: int, cap: float) -> tuple[float, Optional[int]]:
    """Capped minimum of covered/size over subsets whose neighborhood is not the whole class."""
    open_sets = np.flatnonzero(covered < full)
    if open_sets.size == 0:
        return cap, None
    ratios = covered[open_sets] / sizes[open_sets]
    best = int(np.argmin(ratios))
    if ratios[best] >= cap:
        return cap, None
    return float(ratios[best]), int(open_sets[best])


def estimate_expansion(
    ps: FinitePointSet,
    class_index: int,
    a_bar: float,
    budget: Optional[int] = None,
    seed: int = 0,
    misclassified: Optional[Sequence[int]] = None,
) -> ExpansionEstimate:
    """
    Estimate the (a_bar, c) expansion factor of one class.

    Classes with at most Settings.EXPANSION_ENUMERATION_LIMIT points are
    enumerated exhaustively; larger classes are checked on all singletons,
    `budget` random subsets (scattered or nearest-neighbor clusters) and the
    class restriction of `misclassified`.

    Args:
        ps: Point set
        class_index: Class i
        a_bar: Measure bound of the checked subsets, in (0, 1]
        budget: Random subsets to draw (defaults to Settings.EXPANSION_BUDGET)
        seed: Sampling seed
        misclassified: Optional global indices added as one extra subset

    Returns:
        ExpansionEstimate with the capped minimum ratio and its witness

    Raises:
        InvalidSubsetError: If a_bar or class_index is invalid
        EstimationError: If nothing can be checked
    """
    _check_a_bar(a_bar)
    budget = settings.EXPANSION_BUDGET if budget is None else budget
    extra = [misclassified] if misclassified is not None else []
    subsets = _class_subsets(ps, class_index, a_bar, budget, np.random.default_rng(seed), extra)

    c_hat, best = _minimum_ratio(subsets.covered, subsets.sizes, len(subsets.members), 1.0 / a_bar)
    witness = [] if best is None else sorted(int(g) for g in subsets.members[subsets.subset(best)])
    return ExpansionEstimate(
        class_index=class_index,
        a_bar=a_bar,
        c_hat=c_hat,
        subsets_checked=len(subsets),
        witness=witness,
        exhaustive=subsets.exhaustive,
        capped=best is None,
    )


def product_point_set(ps_alpha: FinitePointSet, ps_beta: FinitePointSet) -> FinitePointSet:
    """
    Class-wise Cartesian product of two modality point sets.

    Each class of the product holds every (alpha, beta) pair of that class,
    ordered alpha-major, so the class-conditional measure is the product of
    the factor measures. Coordinates are scaled by the factor radii and the
    product radius is 1, so a product ball is the product of factor balls.

    Raises:
        PairingError: If the two sets do not have the same classes
    """
    if ps_alpha.num_classes != ps_beta.num_classes:
        raise PairingError(
            f"alpha set has {ps_alpha.num_classes} classes, beta set has {ps_beta.num_classes}"
        )
    points, labels, factors = [], [], []
    for c in range(ps_alpha.num_classes):
        for a in ps_alpha.class_indices(c):
            for b in ps_beta.class_indices(c):
                points.append(np.concatenate([ps_alpha.points[a] / ps_alpha.radius, ps_beta.points[b] / ps_beta.radius]))
                labels.append(c)
                factors.append((a, b))
    return FinitePointSet(
        points=np.array(points),
        labels=np.array(labels),
        radius=1.0,
        blocks=(ps_alpha.points.shape[1], ps_beta.points.shape[1]),
        factors=np.array(factors, dtype=int),
    )


def _subsample(ps: FinitePointSet, limit: Optional[int], rng: np.random.Generator) -> FinitePointSet:
    if limit is None or all(len(ps.class_indices(c)) <= limit for c in range(ps.num_classes)):
        return ps
    keep = []
    for c in range(ps.num_classes):
        idx = ps.class_indices(c)
        keep.extend(np.sort(rng.choice(idx, size=min(limit, len(idx)), replace=False)) if len(idx) > limit else idx)
    keep = np.sort(np.array(keep, dtype=int))
    return FinitePointSet(ps.points[keep], ps.labels[keep], ps.radius, ps.blocks)


def _rectangles(
    grid: np.ndarray,
    alpha: _ClassSubsets,
    beta: _ClassSubsets,
    budget: int,
    rng: np.random.Generator,
    witness_pair: Optional[tuple[int, int]],
) -> list[np.ndarray]:
    """Product indices of the rectangles V_alpha x V_beta built from the checked factor subsets."""
    if len(alpha) * len(beta) <= settings.PRODUCT_ENUMERATION_LIMIT:
        pairs = list(itertools.product(range(len(alpha)), range(len(beta))))
    else:
        pairs = [(int(rng.integers(len(alpha))), int(rng.integers(len(beta)))) for _ in range(budget)]
        if witness_pair is not None:
            pairs.append(witness_pair)
    return [grid[np.ix_(alpha.subset(ka), beta.subset(kb))].ravel() for ka, kb in pairs]


def _cylinders(grid: np.ndarray, alpha: _ClassSubsets, beta: _ClassSubsets) -> list[np.ndarray]:
    """V_alpha x X^beta and X^alpha x V_beta for every checked factor subset."""
    rows = [grid[alpha.subset(k), :].ravel() for k in range(len(alpha))]
    columns = [grid[:, beta.subset(k)].ravel() for k in range(len(beta))]
    return rows + columns


def _rectangle_ratio(product: FinitePointSet, members: np.ndarray, rectangles: list[np.ndarray], a_bar: float) -> float:
    in_class = np.zeros(len(product), dtype=bool)
    in_class[members] = True
    covered = np.array([int((product.adjacency[r].any(axis=0) & in_class).sum()) for r in rectangles], dtype=np.int64)
    sizes = np.array([len(r) for r in rectangles], dtype=np.int64)
    ratio, _ = _minimum_ratio(covered, sizes, len(members), 1.0 / (a_bar * a_bar))
    return ratio


def check_lemma1(
    ps_alpha: FinitePointSet,
    ps_beta: FinitePointSet,
    a_bar: float,
    budget: Optional[int] = None,
    slack: Optional[float] = None,
    seed: int = 0,
    max_class_points: Optional[int] = None,
) -> Lemma1Report:
    """
    Check that the product of two expanding modalities expands by c1*c2.

    c1 and c2 are the per-modality estimates (minimum over classes). The
    product estimate c_prod is the capped minimum over subsets V of the
    class-wise product set, under the max metric, with product measure
    at most a_bar. Product classes of up to
    Settings.PRODUCT_SUBSET_ENUMERATION_LIMIT points are enumerated;
    larger ones are sampled, with every rectangle V_alpha x V_beta and
    every cylinder V_alpha x X^beta, X^alpha x V_beta of the checked
    factor subsets added as candidates. The check passes when
    c_prod >= slack * c1 * c2.

    c_rect is the same minimum over rectangles only, capped at
    1/a_bar**2. Product neighborhoods of rectangles factor, so c_rect
    reaches c1 * c2 whenever the factor estimates are exact; a cylinder
    expands only as much as its factor, which is where c_prod falls short.

    Args:
        ps_alpha: Modality-alpha points
        ps_beta: Modality-beta points with the same classes
        a_bar: Measure bound, in (0, 1]
        budget: Random subsets/rectangles per class (Settings default)
        slack: Sampling slack (Settings.LEMMA1_SLACK by default)
        seed: Sampling seed
        max_class_points: Per-class subsample size of each factor before
            forming the product (no subsampling when None)

    Raises:
        PairingError: If the class sets differ
        InvalidSubsetError: If a_bar is invalid
        EstimationError: If a class has no admissible subset
    """
    if ps_alpha.num_classes != ps_beta.num_classes:
        raise PairingError(
            f"alpha set has {ps_alpha.num_classes} classes, beta set has {ps_beta.num_classes}"
        )
    _check_a_bar(a_bar)
    budget = settings.EXPANSION_BUDGET if budget is None else budget
    slack = settings.LEMMA1_SLACK if slack is None else slack
    rng = np.random.default_rng(seed)

    alpha_set = _subsample(ps_alpha, max_class_points, rng)
    beta_set = _subsample(ps_beta, max_class_points, rng)
    product = product_point_set(alpha_set, beta_set)

    c1 = c2 = c_prod = c_rect = float("inf")
    for c in range(alpha_set.num_classes):
        alpha = _class_subsets(alpha_set, c, a_bar, budget, rng)
        beta = _class_subsets(beta_set, c, a_bar, budget, rng)
        c1_c, best_a = _minimum_ratio(alpha.covered, alpha.sizes, len(alpha.members), 1.0 / a_bar)
        c2_c, best_b = _minimum_ratio(beta.covered, beta.sizes, len(beta.members), 1.0 / a_bar)
        witness_pair = None
        if best_a is not None and best_b is not None:
            witness_pair = (best_a, best_b)

        members = product.class_indices(c)
        grid = members.reshape(len(alpha.members), len(beta.members))
        rectangles = _rectangles(grid, alpha, beta, budget, rng, witness_pair)
        cr_c = _rectangle_ratio(product, members, rectangles, a_bar)
        subsets = _class_subsets(
            product, c, a_bar, budget, rng,
            extra=[*rectangles, *_cylinders(grid, alpha, beta)],
            enumeration_limit=settings.PRODUCT_SUBSET_ENUMERATION_LIMIT,
        )
        cp_c, _ = _minimum_ratio(subsets.covered, subsets.sizes, len(members), 1.0 / a_bar)
        logger.debug(
            f"Lemma check class {c}: c1={c1_c:.4f} c2={c2_c:.4f} c_prod={cp_c:.4f} c_rect={cr_c:.4f} "
            f"({len(subsets)} product subsets, {len(rectangles)} rectangles)"
        )
        c1, c2 = min(c1, c1_c), min(c2, c2_c)
        c_prod, c_rect = min(c_prod, cp_c), min(c_rect, cr_c)

    passed = bool(c_prod >= slack * c1 * c2 - SIZE_EPS)
    if passed:
        logger.info(f"Product expansion check passed: c_prod={c_prod:.4f} >= {slack} * {c1:.4f} * {c2:.4f}")
    else:
        logger.warning(
            f"Product expansion check failed: c_prod={c_prod:.4f} < {slack} * {c1:.4f} * {c2:.4f} "
            f"(rectangles alone give {c_rect:.4f})"
        )
    return Lemma1Report(
        c1_hat=c1, c2_hat=c2, c_prod_hat=c_prod, c_rect_hat=c_rect, a_bar=a_bar, slack=slack, passed=passed,
    )


def _check_rates(err_teacher: float, mu: float) -> None:
    if not 0.0 <= err_teacher <= 1.0:
        raise DomainError(f"teacher error must lie in [0, 1], got {err_teacher}")
    if not 0.0 <= mu <= 1.0:
        raise DomainError(f"mu must lie in [0, 1], got {mu}")


def theorem1_bound(err_teacher: float, c1: float, c2: float, mu: float) -> float:
    """
    Student error bound 4*err/(c1*c2 - 1) + 4*mu.

    Raises:
        DomainError: If c1*c2 <= 1 or a rate is outside [0, 1]
    """
    _check_rates(err_teacher, mu)
    if c1 * c2 <= 1.0:
        raise DomainError(f"bound needs c1*c2 > 1, got {c1 * c2}")
    return 4.0 * err_teacher / (c1 * c2 - 1.0) + 4.0 * mu


def unimodal_bound(err_teacher: float, c1: float, mu: float) -> float:
    """
    Single-modality bound 4*err/(c1 - 1) + 4*mu.

    Raises:
        DomainError: If c1 <= 1 or a rate is outside [0, 1]
    """
    _check_rates(err_teacher, mu)
    if c1 <= 1.0:
        raise DomainError(f"bound needs c1 > 1, got {c1}")
    return 4.0 * err_teacher / (c1 - 1.0) + 4.0 * mu


def measure_mu(
    student: TrainedModel,
    d_u,
    t: Transform,
    draws: int,
    rng: Optional[np.random.Generator] = None,
) -> float:
    """
    Fraction of samples whose prediction flips under at least one of
    `draws` perturbed forward passes.

    Raises:
        DomainError: If draws < 1
    """
    if draws < 1:
        raise DomainError(f"draws must be >= 1, got {draws}")
    x = student.project(d_u)
    if len(x) == 0 or not t.flatten():
        return 0.0
    rng = rng if rng is not None else np.random.default_rng(0)

    base = student.predict(x)
    flipped = np.zeros(len(x), dtype=bool)
    for _ in range(draws):
        logits, _ = perturb.perturbed_forward(student.mlp, x, t, rng)
        flipped |= np.argmax(logits, axis=-1) != base
    return float(flipped.mean())


def grid_point_sets(
    side: int = 3,
    spacing_alpha: float = 1.0,
    spacing_beta: float = 0.5,
    radius: float = 1.1,
    class_gap: float = 10.0,
) -> tuple[FinitePointSet, FinitePointSet]:
    """Two-class lattice instance: `side` evenly spaced points per class and modality."""
    labels = np.repeat([0, 1], side)
    alpha = np.concatenate([np.arange(side) * spacing_alpha, class_gap + np.arange(side) * spacing_alpha])
    beta = np.concatenate([np.arange(side) * spacing_beta, class_gap + np.arange(side) * spacing_beta])
    return FinitePointSet(alpha, labels, radius), FinitePointSet(beta, labels, radius)


def theory_row(
    instance: str,
    ps_alpha: FinitePointSet,
    ps_beta: FinitePointSet,
    a_bar: float,
    theory: TheorySpec,
    err_teacher: Optional[float] = None,
    err_student: Optional[float] = None,
    mu: Optional[float] = None,
    seed: int = 0,
) -> TheoryRow:
    """Run the product check and evaluate both bounds (None where undefined)."""
    report = check_lemma1(
        ps_alpha,
        ps_beta,
        a_bar,
        budget=theory.budget,
        slack=theory.slack,
        seed=seed,
        max_class_points=settings.LEMMA1_CLASS_POINTS,
    )

    bound_mm = bound_um = None
    if err_teacher is not None:
        mu_value = mu if mu is not None else 0.0
        if report.c1_hat * report.c2_hat > 1.0:
            bound_mm = theorem1_bound(err_teacher, report.c1_hat, report.c2_hat, mu_value)
        else:
            logger.warning(f"{instance}: c1*c2 = {report.c1_hat * report.c2_hat:.4f} <= 1, multimodal bound N/A")
        if report.c1_hat > 1.0:
            bound_um = unimodal_bound(err_teacher, report.c1_hat, mu_value)
        else:
            logger.warning(f"{instance}: c1 = {report.c1_hat:.4f} <= 1, unimodal bound N/A")

    if bound_mm is not None and err_student is not None and err_student > bound_mm:
        logger.warning(f"{instance}: student error {err_student:.4f} exceeds the estimated bound {bound_mm:.4f}")

    return TheoryRow(
        instance=instance,
        c1_hat=report.c1_hat,
        c2_hat=report.c2_hat,
        c_prod_hat=report.c_prod_hat,
        a_bar=a_bar,
        err_teacher=err_teacher,
        err_student=err_student,
        mu_hat=mu,
        bound_mm=bound_mm,
        bound_um=bound_um,
        lemma1_pass=report.passed,
        c_rect_hat=report.c_rect_hat,
    )
