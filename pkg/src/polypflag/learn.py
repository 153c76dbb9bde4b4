"""Classification and FROC evaluation of candidate patches.

Candidates are hugely imbalanced (polyps vs. everything else on the wall, on
the order of 1:500), so training offers cost-sensitive minority replication
and SMOTE-style synthetic oversampling ahead of a maximum-margin linear
classifier fitted by deterministic stochastic subgradient descent on the
hinge loss.  Evaluation matches flagged positions to ground truth within
3 mm, counts one detection per polyp no matter how many candidates land on
it, and sweeps every decision threshold into a free-response ROC, stratified
by polyp size.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

MATCH_RADIUS_MM = 3.0
DEFAULT_COST_RATIO = 500
SIZE_STRATA = (("all", 0.0, np.inf), ("3to6", 3.0, 6.0), ("gt6", 6.0, np.inf))


@dataclass
class Sample:
    features: np.ndarray        # 12-vector: 6 geometric + 6 texture
    label: int                  # 1 polyp, 0 non-polyp
    case_id: str
    patient_id: str
    position: np.ndarray        # mm

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.position = np.asarray(self.position, dtype=np.float64)
        if not np.isfinite(self.features).all():
            raise ValueError(f"non-finite features in sample at {self.position}")


@dataclass
class Scaler:
    mean: np.ndarray
    std: np.ndarray
    dropped: tuple[int, ...] = ()   # zero-variance feature indices, recorded

    def transform(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return (X - self.mean) / self.std


def fit_scaler(X: np.ndarray) -> Scaler:
    """Per-feature z-score parameters from training data only.

    Zero-variance features are recorded as dropped and mapped to constant
    zero by the transform, which removes their influence downstream.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if len(X) < 2:
        raise ValueError("need at least two samples to fit a scaler")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    dropped = tuple(int(i) for i in np.where(std == 0)[0])
    std = np.where(std == 0, 1.0, std)
    return Scaler(mean, std, dropped)


def rebalance_cost_sensitive(samples: list[Sample], cost_ratio: int,
                             seed: int = 0) -> list[Sample]:
    """Replicate each minority-class sample cost_ratio times.

    The majority class passes through untouched and the result is shuffled
    deterministically; every output feature vector existed in the input.
    """
    if cost_ratio < 1:
        raise ValueError("cost_ratio must be a positive integer")
    labels = np.array([s.label for s in samples])
    if labels.min() == labels.max():
        raise ValueError("both classes must be present to rebalance")
    counts = {lab: int((labels == lab).sum()) for lab in (0, 1)}
    minority = min(counts, key=counts.get)
    out = []
    for s in samples:
        out.extend([s] * (cost_ratio if s.label == minority else 1))
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(out))
    return [out[i] for i in order]


def smote(samples: list[Sample], k: int, amount: int, seed: int = 0) -> list[Sample]:
    """Append `amount` synthetic minority samples per minority instance.

    Each synthetic point is x + lambda (x_nn - x) with lambda uniform in
    [0, 1] and x_nn one of the k nearest minority neighbors, so synthetics
    stay inside the minority convex hull.
    """
    if amount < 0:
        raise ValueError("amount must be >= 0")
    labels = np.array([s.label for s in samples])
    if labels.min() == labels.max():
        raise ValueError("both classes must be present")
    counts = {lab: int((labels == lab).sum()) for lab in (0, 1)}
    minority = min(counts, key=counts.get)
    minority_samples = [s for s in samples if s.label == minority]
    if len(minority_samples) <= k:
        raise ValueError(f"minority size {len(minority_samples)} must exceed k={k}")
    if amount == 0:
        return list(samples)
    X = np.array([s.features for s in minority_samples])
    d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(axis=2)
    np.fill_diagonal(d2, np.inf)
    nn = np.argsort(d2, axis=1, kind="stable")[:, :k]
    rng = np.random.default_rng(seed)
    out = list(samples)
    for i, s in enumerate(minority_samples):
        for _ in range(amount):
            j = nn[i, rng.integers(0, k)]
            lam = rng.uniform()
            feats = X[i] + lam * (X[j] - X[i])
            out.append(Sample(feats, s.label, s.case_id, s.patient_id, s.position))
    return out


@dataclass
class LinearModel:
    weights: np.ndarray
    bias: float
    scaler: Scaler

    def scores(self, X: np.ndarray) -> np.ndarray:
        return self.scaler.transform(X) @ self.weights + self.bias


def train_linear(samples: list[Sample], scaler: Scaler,
                 regularization: float = 1e-3, epochs: int = 40,
                 seed: int = 0) -> LinearModel:
    """Hinge loss + L2 minimized by deterministic stochastic subgradient descent.

    Expects an already rebalanced sample list; features are standardized with
    the supplied scaler (fitted on training data only).  Fixed seeds give
    bit-identical models.
    """
    X = scaler.transform(np.array([s.features for s in samples]))
    y = np.array([1.0 if s.label == 1 else -1.0 for s in samples])
    n, d = X.shape
    w = np.zeros(d)
    b = 0.0
    rng = np.random.default_rng(seed)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            lr = 1.0 / (regularization * t)
            margin = y[i] * (X[i] @ w + b)
            w *= (1.0 - lr * regularization)
            if margin < 1.0:
                w += lr * y[i] * X[i]
                b += lr * y[i]
        if not (np.isfinite(w).all() and np.isfinite(b)):
            raise RuntimeError("non-finite model parameters during training")
    return LinearModel(w, float(b), scaler)


# ---------------------------------------------------------------------------
# Detection matching and FROC
# ---------------------------------------------------------------------------

@dataclass
class MatchResult:
    is_tp: np.ndarray         # per candidate: within 3 mm of some truth polyp
    matched_truth: np.ndarray  # per candidate: nearest truth index or -1
    detected: np.ndarray      # per truth polyp: some candidate matched it


def match_detections(positions: np.ndarray, truth_centers: np.ndarray,
                     radius: float = MATCH_RADIUS_MM) -> MatchResult:
    """3 mm nearest-truth matching.

    A candidate is a true positive iff it lies within the radius of a ground
    truth polyp (the nearest one claims it); a polyp is detected iff at least
    one candidate matched it.  Extra candidates on an already-detected polyp
    are neither new detections nor false positives.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    truth_centers = np.asarray(truth_centers, dtype=np.float64).reshape(-1, 3)
    n, m = len(positions), len(truth_centers)
    is_tp = np.zeros(n, dtype=bool)
    matched = np.full(n, -1, dtype=np.int64)
    detected = np.zeros(m, dtype=bool)
    if n and m:
        d = np.linalg.norm(positions[:, None, :] - truth_centers[None, :, :], axis=2)
        nearest = d.argmin(axis=1)
        best = d[np.arange(n), nearest]
        is_tp = best < radius
        matched[is_tp] = nearest[is_tp]
        detected[np.unique(matched[is_tp])] = True
    return MatchResult(is_tp, matched, detected)


@dataclass
class FrocCurve:
    """Sensitivity vs. false positives per case over a threshold sweep."""

    stratum: str
    thresholds: np.ndarray
    fp_per_case: np.ndarray
    sensitivity: np.ndarray

    def sensitivity_at_fp(self, fp_budget: float) -> float:
        """Highest sensitivity attained with fp_per_case <= fp_budget."""
        ok = self.fp_per_case <= fp_budget
        return float(self.sensitivity[ok].max()) if ok.any() else 0.0


@dataclass
class CaseDetections:
    case_id: str
    scores: np.ndarray          # per candidate decision scores
    positions: np.ndarray       # (n, 3) mm
    truth_centers: np.ndarray   # (m, 3) mm
    truth_sizes: np.ndarray     # (m,) mm


def froc(cases: list[CaseDetections], strata=SIZE_STRATA,
         radius: float = MATCH_RADIUS_MM) -> dict[str, FrocCurve]:
    """Exact FROC over all observed score thresholds plus sentinels.

    Candidates matching any truth polyp never count as false positives; for a
    size stratum only polyps inside the size band count toward sensitivity.
    With zero truth polyps the sensitivity axis is emitted as NaN.
    """
    if not cases:
        raise ValueError("need at least one case")
    matches = [match_detections(c.positions, c.truth_centers, radius) for c in cases]
    all_scores = np.concatenate([c.scores for c in cases]) if any(len(c.scores) for c in cases) else np.zeros(0)
    thresholds = np.concatenate([[-np.inf], np.unique(all_scores), [np.inf]])
    n_cases = len(cases)
    out = {}
    for name, lo, hi in strata:
        in_band = [(c.truth_sizes > lo) & (c.truth_sizes <= hi) if len(c.truth_sizes) else
                   np.zeros(0, dtype=bool) for c in cases]
        total_polyps = int(sum(b.sum() for b in in_band))
        fp_axis = np.zeros(len(thresholds))
        sens_axis = np.zeros(len(thresholds))
        for ti, theta in enumerate(thresholds):
            fp = 0
            det = 0
            for c, m, band in zip(cases, matches, in_band):
                keep = c.scores >= theta
                fp += int((keep & ~m.is_tp).sum())
                if band.any():
                    hit = np.zeros(len(band), dtype=bool)
                    tp_idx = m.matched_truth[keep & m.is_tp]
                    hit[tp_idx[tp_idx >= 0]] = True
                    det += int((hit & band).sum())
            fp_axis[ti] = fp / n_cases
            sens_axis[ti] = det / total_polyps if total_polyps else np.nan
        out[name] = FrocCurve(name, thresholds, fp_axis, sens_axis)
    return out


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def save_model(model: LinearModel, path, config_hash: str = "") -> Path:
    path = Path(path)
    lines = ["polypflag-model-v1",
             f"config_hash: {config_hash}",
             "weights: " + " ".join("%.17g" % v for v in model.weights),
             "bias: %.17g" % model.bias,
             "scaler_mean: " + " ".join("%.17g" % v for v in model.scaler.mean),
             "scaler_std: " + " ".join("%.17g" % v for v in model.scaler.std),
             "scaler_dropped: " + " ".join(str(i) for i in model.scaler.dropped)]
    path.write_text("\n".join(lines) + "\n")
    return path


def load_model(path) -> LinearModel:
    lines = Path(path).read_text().splitlines()
    if lines[0] != "polypflag-model-v1":
        raise ValueError(f"not a polypflag model file: {path}")
    kv = {}
    for ln in lines[1:]:
        key, val = ln.split(":", 1)
        kv[key.strip()] = val.strip()
    vec = lambda s: np.array([float(t) for t in s.split()]) if s else np.zeros(0)
    dropped = tuple(int(t) for t in kv["scaler_dropped"].split()) if kv["scaler_dropped"] else ()
    scaler = Scaler(vec(kv["scaler_mean"]), vec(kv["scaler_std"]), dropped)
    return LinearModel(vec(kv["weights"]), float(kv["bias"]), scaler)


def save_froc(curves: dict[str, FrocCurve], path) -> Path:
    path = Path(path)
    lines = ["# stratum\tthreshold\tfp_per_case\tsensitivity"]
    for name in sorted(curves):
        c = curves[name]
        for t, f, s in zip(c.thresholds, c.fp_per_case, c.sensitivity):
            lines.append("%s\t%.9g\t%.9g\t%.9g" % (name, t, f, s))
    path.write_text("\n".join(lines) + "\n")
    return path
