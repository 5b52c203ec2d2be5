"""One-vs-one RBF support vector classification.

Binary machines are trained with SMO on the dual

    min_a  1/2 a^T Q a - e^T a   s.t.  0 <= a_i <= C,  y^T a = 0,
    Q_ij = y_i y_j exp(-gamma |x_i - x_j|^2)

using the maximal-violating-pair working set.  Model selection is a
stratified k-fold grid search over (log2 C, log2 gamma).
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path

import numpy as np
from sklearn.model_selection import StratifiedKFold

from .errors import ConfigError, DataError, TrainingError
from .features import FeatureMatrix, PruneMask, read_rows, write_rows

log = logging.getLogger(__name__)

TAU = 1e-12
DEFAULT_TOL = 1e-5
MAX_ITER = 10_000_000
MODEL_VERSION = 1


@dataclass(frozen=True)
class GridSearchSpec:
    log2_c: tuple[int, ...] = tuple(range(-5, 16, 2))
    log2_gamma: tuple[int, ...] = tuple(range(-15, 4, 2))
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if not self.log2_c or not self.log2_gamma:
            raise ValueError("grid search needs at least one C and one gamma")
        if self.folds < 2:
            raise ValueError("need at least 2 folds")

    @classmethod
    def from_range(cls, c=(-5, 15, 2), gamma=(-15, 3, 2), folds=5, seed=0):
        return cls(tuple(range(c[0], c[1] + 1, c[2])), tuple(range(gamma[0], gamma[1] + 1, gamma[2])), folds, seed)


def rbf_kernel(a: np.ndarray, b: np.ndarray, gamma: float) -> np.ndarray:
    return np.exp(-gamma * squared_distances(a, b))


def squared_distances(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    d = (a * a).sum(1)[:, None] + (b * b).sum(1)[None, :] - 2.0 * a @ b.T
    return np.maximum(d, 0.0)


@dataclass
class SmoResult:
    alpha: np.ndarray
    rho: float
    n_iter: int
    gap: float

    def objective(self, K: np.ndarray, y: np.ndarray) -> float:
        return dual_objective(self.alpha, K, y)


def dual_objective(alpha, K, y) -> float:
    """Dual objective to be maximised: sum(a) - 1/2 a^T Q a."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ K @ ay)


def smo(K: np.ndarray, y: np.ndarray, C: float, tol: float = DEFAULT_TOL,
        max_iter: int = MAX_ITER) -> SmoResult:
    """Solve the binary C-SVC dual on a precomputed kernel matrix."""
    y = np.asarray(y, dtype=np.float64)
    n = y.size
    if not (np.any(y > 0) and np.any(y < 0)):
        raise TrainingError("binary training needs examples of both signs")
    Q = (y[:, None] * y[None, :]) * K
    QD = np.diag(Q).copy()
    alpha = np.zeros(n)
    grad = -np.ones(n)
    pos = y > 0
    it = 0
    gap = math.inf
    while True:
        minus_yg = -y * grad
        up = np.where(pos, alpha < C, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < C)
        i = int(np.argmax(np.where(up, minus_yg, -np.inf)))
        j = int(np.argmin(np.where(low, minus_yg, np.inf)))
        gap = minus_yg[i] - minus_yg[j] if up.any() and low.any() else 0.0
        if gap < tol:
            break
        if it >= max_iter:
            raise TrainingError(f"SMO did not converge in {max_iter} iterations (gap {gap:.3g}, C={C})")
        it += 1
        ai, aj = alpha[i], alpha[j]
        if y[i] != y[j]:
            quad = QD[i] + QD[j] + 2 * Q[i, j]
            delta = (-grad[i] - grad[j]) / max(quad, TAU)
            diff = ai - aj
            ai += delta
            aj += delta
            if diff > 0:
                if aj < 0:
                    aj, ai = 0.0, diff
            elif ai < 0:
                ai, aj = 0.0, -diff
            if diff > 0:
                if ai > C:
                    ai, aj = C, C - diff
            elif aj > C:
                aj, ai = C, C + diff
        else:
            quad = QD[i] + QD[j] - 2 * Q[i, j]
            delta = (grad[i] - grad[j]) / max(quad, TAU)
            total = ai + aj
            ai -= delta
            aj += delta
            if total > C:
                if ai > C:
                    ai, aj = C, total - C
                if aj > C:
                    aj, ai = C, total - C
            else:
                if aj < 0:
                    aj, ai = 0.0, total
                if ai < 0:
                    ai, aj = 0.0, total
        d_i, d_j = ai - alpha[i], aj - alpha[j]
        alpha[i], alpha[j] = ai, aj
        grad += Q[:, i] * d_i + Q[:, j] * d_j
    return SmoResult(alpha, _rho(alpha, grad, y, C), it, float(gap))


def _rho(alpha, grad, y, C) -> float:
    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        return float(yg[free].mean())
    at_upper = alpha >= C
    # bounds on rho from the KKT conditions of bounded variables
    lb_mask = np.where(y > 0, at_upper, ~at_upper)
    ub_mask = ~lb_mask
    ub = yg[ub_mask].min() if ub_mask.any() else math.inf
    lb = yg[lb_mask].max() if lb_mask.any() else -math.inf
    return float((ub + lb) / 2)


@dataclass
class BinaryMachine:
    sv_index: np.ndarray  # rows of the training set used as support vectors
    coef: np.ndarray  # alpha_i * y_i for those rows
    rho: float
    alpha: np.ndarray | None = None  # full dual vector, kept for auditing

    def decision_from_kernel(self, k_rows: np.ndarray) -> np.ndarray:
        """``k_rows[:, s]`` = K(x, sv_s)."""
        return k_rows @ self.coef - self.rho


def train_binary(X: np.ndarray, y, C: float, gamma: float, tol: float = DEFAULT_TOL,
                 K: np.ndarray | None = None) -> BinaryMachine:
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if K is None:
        K = rbf_kernel(X, X, gamma)
    res = smo(K, y, C, tol)
    sv = np.flatnonzero(res.alpha > 0)
    return BinaryMachine(sv, res.alpha[sv] * y[sv], res.rho, res.alpha)


def kkt_violations(machine: BinaryMachine, K: np.ndarray, y, C: float, tol: float = 1e-3) -> list[int]:
    """Indices whose margin breaks the KKT conditions by more than ``tol``.

    ``K`` and ``y`` describe the machine's own training subset, in the order
    of ``machine.alpha``.
    """
    y = np.asarray(y, dtype=np.float64)
    a = machine.alpha
    margin = y * (K @ (a * y) - machine.rho)
    bad = []
    for i in range(y.size):
        if a[i] <= 0 and margin[i] < 1 - tol:
            bad.append(i)
        elif 0 < a[i] < C and abs(margin[i] - 1) > tol:
            bad.append(i)
        elif a[i] >= C and margin[i] > 1 + tol:
            bad.append(i)
    return bad


# -- one-vs-one ensemble ----------------------------------------------------------

def _ovo_fit(K: np.ndarray, y_idx: np.ndarray, n_classes: int, C: float, tol: float):
    machines = []
    for a, b in combinations(range(n_classes), 2):
        rows = np.flatnonzero((y_idx == a) | (y_idx == b))
        yy = np.where(y_idx[rows] == a, 1.0, -1.0)
        res = smo(K[np.ix_(rows, rows)], yy, C, tol)
        sv = np.flatnonzero(res.alpha > 0)
        machines.append((a, b, BinaryMachine(rows[sv], res.alpha[sv] * yy[sv], res.rho, res.alpha)))
    return machines


def vote(decisions: np.ndarray, pairs, n_classes: int) -> np.ndarray:
    """Class index per row from pairwise decision values (columns follow
    ``pairs``).  Most votes wins; ties go to the largest summed margin, then to
    the lowest class index."""
    n = decisions.shape[0]
    votes = np.zeros((n, n_classes), dtype=np.int64)
    margin = np.zeros((n, n_classes))
    for col, (a, b) in enumerate(pairs):
        d = decisions[:, col]
        votes[:, a] += d > 0
        votes[:, b] += d <= 0
        margin[:, a] += d
        margin[:, b] -= d
    out = np.empty(n, dtype=np.int64)
    for r in range(n):
        best = np.flatnonzero(votes[r] == votes[r].max())
        out[r] = best[np.argmax(margin[r, best])] if best.size > 1 else best[0]
    return out


def _ovo_decisions(machines, k_rows: np.ndarray) -> np.ndarray:
    return np.column_stack([m.decision_from_kernel(k_rows[:, m.sv_index]) for _, _, m in machines])


def _cv_accuracy(D2, y_idx, n_classes, C, gamma, folds, tol) -> float:
    K = np.exp(-gamma * D2)
    accs = []
    for train, test in folds:
        machines = _ovo_fit(K[np.ix_(train, train)], y_idx[train], n_classes, C, tol)
        dec = _ovo_decisions(machines, K[np.ix_(test, train)])
        pred = vote(dec, [(a, b) for a, b, _ in machines], n_classes)
        accs.append(float(np.mean(pred == y_idx[test])))
    return float(np.mean(accs))


def _cv_column(args):
    D2, y_idx, n_classes, log2_c, lg, folds, tol = args
    return [_cv_accuracy(D2, y_idx, n_classes, 2.0**lc, 2.0**lg, folds, tol) for lc in log2_c]


@dataclass
class SvmModel:
    classes: list[str]
    C: float
    gamma: float
    lo: np.ndarray
    hi: np.ndarray
    mask: PruneMask
    support: np.ndarray  # unscaled pruned rows
    machines: list[tuple[int, int, BinaryMachine]]
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return int(self.mask.kept.size)

    def scale(self, x: np.ndarray) -> np.ndarray:
        return scale_rows(x, self.lo, self.hi)

    def decision_values(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.dim:
            raise DataError(f"input dim {x.shape[1]} does not match model dim {self.dim}")
        k = rbf_kernel(self.scale(x), self.scale(self.support), self.gamma)
        return _ovo_decisions(self.machines, k)

    def predict(self, x: np.ndarray) -> list[str]:
        dec = self.decision_values(x)
        idx = vote(dec, [(a, b) for a, b, _ in self.machines], len(self.classes))
        return [self.classes[i] for i in idx]

    def predict_full(self, x: np.ndarray) -> list[str]:
        """Prune a full-dimension descriptor row set, then predict."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if x.shape[1] != self.mask.source_dim:
            raise DataError(f"descriptor dim {x.shape[1]} does not match model source dim {self.mask.source_dim}")
        return self.predict(x[:, self.mask.kept])


def scale_rows(x, lo, hi):
    """Map onto [0, 1] with training bounds; values outside them are clipped.

    Without clipping, a dimension that is nearly constant in training can
    blow up to hundreds on shifted test data and swamp the RBF distance.
    """
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    return np.clip(np.where(span > 0, (x - lo) / safe, 0.0), 0.0, 1.0)


def predict(model: SvmModel, x) -> str:
    return model.predict(np.atleast_2d(x))[0]


def train_ovo(train: FeatureMatrix, spec: GridSearchSpec | None = None, mask: PruneMask | None = None,
              tol: float = DEFAULT_TOL, jobs: int = 1, meta: dict | None = None) -> SvmModel:
    """Grid-search (C, gamma) by stratified CV, then refit on all rows.

    ``train.vectors`` are expected already pruned by ``mask`` when one is
    given; the mask is only attached to the model.
    """
    spec = spec or GridSearchSpec()
    classes = sorted(set(train.labels))
    if len(classes) < 2:
        raise TrainingError(f"need at least 2 printers, got {len(classes)}")
    counts = Counter(train.labels)
    small = {c: n for c, n in counts.items() if n < spec.folds}
    if small:
        raise TrainingError(f"classes with fewer rows than folds ({spec.folds}): {small}")
    X = train.vectors
    if mask is not None and X.shape[1] != mask.kept.size:
        raise ValueError(f"training rows have dim {X.shape[1]}; prune them with the mask "
                         f"({mask.kept.size} kept dims) before training")
    y_idx = np.array([classes.index(l) for l in train.labels])
    lo, hi = X.min(axis=0), X.max(axis=0)
    Xs = scale_rows(X, lo, hi)
    D2 = squared_distances(Xs, Xs)
    skf = StratifiedKFold(n_splits=spec.folds, shuffle=True, random_state=spec.seed)
    folds = list(skf.split(np.zeros(len(y_idx)), y_idx))

    tasks = [(D2, y_idx, len(classes), spec.log2_c, lg, folds, tol) for lg in spec.log2_gamma]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            columns = list(ex.map(_cv_column, tasks))
    else:
        columns = [_cv_column(t) for t in tasks]
    table = np.array(columns).T  # (C, gamma)

    best = None
    for ci, lc in enumerate(spec.log2_c):
        for gi, lg in enumerate(spec.log2_gamma):
            if best is None or table[ci, gi] > best[0]:
                best = (table[ci, gi], lc, lg)
    acc, lc, lg = best
    C, gamma = 2.0**lc, 2.0**lg
    log.info("grid search: best CV accuracy %.4f at log2C=%d log2gamma=%d", acc, lc, lg)

    K = np.exp(-gamma * D2)
    machines = _ovo_fit(K, y_idx, len(classes), C, tol)
    used = sorted(set(np.concatenate([m.sv_index for _, _, m in machines]).tolist()))
    remap = {r: i for i, r in enumerate(used)}
    pooled = []
    for a, b, m in machines:
        pooled.append((a, b, BinaryMachine(np.array([remap[r] for r in m.sv_index], dtype=np.int64),
                                           m.coef, m.rho, m.alpha)))
    info = dict(meta or {})
    info.update(
        cv_accuracy=float(acc), log2_c=int(lc), log2_gamma=int(lg),
        cv_table={"log2_c": list(spec.log2_c), "log2_gamma": list(spec.log2_gamma),
                  "accuracy": table.tolist()},
        train_rows=int(X.shape[0]),
    )
    return SvmModel(classes, C, gamma, lo, hi, mask or PruneMask.identity(X.shape[1]),
                    X[used], pooled, info)


def page_vote(labels: list[str]) -> str:
    """Most frequent label; ties go to the tied label seen first."""
    if not labels:
        raise ValueError("cannot vote on an empty page")
    counts = Counter(labels)
    top = max(counts.values())
    for lab in labels:
        if counts[lab] == top:
            return lab
    raise AssertionError("unreachable")


# -- persistence ---------------------------------------------------------------------

def save_model(model: SvmModel, path) -> None:
    """JSON envelope at ``path`` plus float32 support rows at ``<path>.sv``."""
    path = Path(path)
    sv_path = path.with_name(path.name + ".sv")
    write_rows(sv_path, model.support)
    envelope = {
        "version": MODEL_VERSION,
        "classes": model.classes,
        "C": model.C,
        "gamma": model.gamma,
        "scaling": {"lo": model.lo.tolist(), "hi": model.hi.tolist()},
        "prune_mask": model.mask.to_json(),
        "support_file": sv_path.name,
        "machines": [
            {"pair": [a, b], "sv": m.sv_index.tolist(), "coef": m.coef.tolist(), "rho": m.rho}
            for a, b, m in model.machines
        ],
        "meta": model.meta,
    }
    path.write_text(json.dumps(envelope, sort_keys=True) + "\n")


def load_model(path) -> SvmModel:
    path = Path(path)
    try:
        env = json.loads(path.read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    if env.get("version") != MODEL_VERSION:
        raise DataError(f"{path}: unsupported model version {env.get('version')}")
    support = read_rows(path.with_name(env["support_file"]))
    machines = [
        (m["pair"][0], m["pair"][1],
         BinaryMachine(np.asarray(m["sv"], dtype=np.int64), np.asarray(m["coef"], dtype=np.float64), m["rho"]))
        for m in env["machines"]
    ]
    return SvmModel(
        env["classes"], env["C"], env["gamma"],
        np.asarray(env["scaling"]["lo"]), np.asarray(env["scaling"]["hi"]),
        PruneMask.from_json(env["prune_mask"]), support, machines, env.get("meta", {}),
    )


def check_compatible(model: SvmModel, config_hash: str) -> None:
    expected = model.meta.get("config_hash")
    if expected != config_hash:
        raise ConfigError(f"model was trained with config {expected}, current config is {config_hash}")
