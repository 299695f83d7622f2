"""Training objectives, grid inference, pose readout, and metrics.

The regression losses compare flattened harmonic vectors entrywise with
per-degree weights; the default weight 1/(2l+1) equalizes the energy
contribution of every degree (each block has squared Frobenius norm
2l+1), which makes the induced distance between two rotations' vectors
depend only on their relative rotation.

Inference scores a predicted vector against a grid's precomputed
harmonic vectors by dot product, softmaxes the scores into a categorical
pose distribution, and reads out either the argmax rotation or a
gradient-ascent refinement of it.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from . import rotations, wigner
from .grids import SO3Grid, nearest_index
from .rotations import RotationMatrix

LOSS_KINDS = ("mse", "l1", "huber", "cosine", "distribution_ce", "mse_plus_ce")


def default_level_weights(bandlimit: int) -> np.ndarray:
    return 1.0 / (2.0 * np.arange(bandlimit + 1) + 1.0)


@dataclass(frozen=True)
class LossConfig:
    bandlimit: int
    kind: str = "mse"
    level_weights: np.ndarray | None = None
    huber_delta: float = 0.1
    softmax_temperature: float = 1.0
    ce_lambda: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if self.softmax_temperature <= 0:
            raise ValueError("softmax temperature must be positive")
        w = (default_level_weights(self.bandlimit)
             if self.level_weights is None
             else np.asarray(self.level_weights, dtype=float))
        if len(w) != self.bandlimit + 1 or np.any(w <= 0):
            raise ValueError("need one positive weight per degree 0..L")
        object.__setattr__(self, "level_weights", w)

    def entry_weights(self) -> np.ndarray:
        """Per-coefficient weights, one block of (2l+1)^2 per degree."""
        return np.repeat(self.level_weights,
                         (2 * np.arange(self.bandlimit + 1) + 1) ** 2)


@dataclass(frozen=True)
class PoseDistribution:
    grid: SO3Grid
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        if len(probs) != self.grid.size:
            raise ValueError("probability vector length must match grid size")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("probabilities must be non-negative and sum to 1")
        object.__setattr__(self, "probs", probs)


def _flat(v) -> np.ndarray:
    return v.data if isinstance(v, wigner.HarmonicVector) else np.asarray(v, dtype=float)


# ---------------------------------------------------------------------------
# Losses (value + gradient with respect to the prediction)
# ---------------------------------------------------------------------------

def mse_loss(pred, gt, cfg: LossConfig) -> float:
    """Weighted squared error over all vector entries."""
    w = cfg.entry_weights()
    d = _flat(pred) - _flat(gt)
    return float(np.sum(w * d * d))


def _regression_loss_and_grad(pred: np.ndarray, gt: np.ndarray,
                              cfg: LossConfig) -> tuple[float, np.ndarray]:
    w = cfg.entry_weights()
    d = pred - gt
    if cfg.kind == "mse":
        return float(np.sum(w * d * d)), 2.0 * w * d
    if cfg.kind == "l1":
        return float(np.sum(w * np.abs(d))), w * np.sign(d)
    if cfg.kind == "huber":
        delta = cfg.huber_delta
        a = np.abs(d)
        quad = a <= delta
        val = np.sum(w * np.where(quad, 0.5 * d * d, delta * (a - 0.5 * delta)))
        return float(val), w * np.where(quad, d, delta * np.sign(d))
    if cfg.kind == "cosine":
        # weighted cosine distance; scale-free, so magnitude goes unused
        pn = np.sqrt(np.sum(w * pred * pred))
        gn = np.sqrt(np.sum(w * gt * gt))
        if pn < 1e-30:
            return 1.0, np.zeros_like(pred)
        dot = np.sum(w * pred * gt)
        grad = -(w * gt / (pn * gn)) + (dot / (pn ** 3 * gn)) * (w * pred)
        return float(1.0 - dot / (pn * gn)), grad
    raise ValueError(f"not a regression loss: {cfg.kind!r}")


def distribution_ce_loss(pred, gt_rotation, grid: SO3Grid,
                         cfg: LossConfig) -> float:
    """Cross-entropy of the grid softmax against the nearest-bin label."""
    value, _ = _ce_loss_and_grad(_flat(pred), gt_rotation, grid, cfg)
    return value


def _ce_loss_and_grad(pred: np.ndarray, gt_rotation, grid: SO3Grid,
                      cfg: LossConfig) -> tuple[float, np.ndarray]:
    if grid.psi_table is None:
        raise ValueError("grid needs a precomputed harmonic-vector table")
    m = gt_rotation.m if isinstance(gt_rotation, RotationMatrix) else np.asarray(gt_rotation)
    target = nearest_index(grid, m)
    logits = grid.psi_table @ pred / cfg.softmax_temperature
    logits -= logits.max()
    logexp = np.log(np.sum(np.exp(logits)))
    probs = np.exp(logits - logexp)
    value = float(logexp - logits[target])
    d_logits = probs.copy()
    d_logits[target] -= 1.0
    grad = (grid.psi_table.T @ d_logits) / cfg.softmax_temperature
    return value, grad


def loss_and_grad(pred, gt, cfg: LossConfig, gt_rotation=None,
                  grid: SO3Grid | None = None) -> tuple[float, np.ndarray]:
    """Scalar loss and d(loss)/d(pred) for any configured kind."""
    pred = _flat(pred)
    gt = None if gt is None else _flat(gt)
    if cfg.kind in ("mse", "l1", "huber", "cosine"):
        return _regression_loss_and_grad(pred, gt, cfg)
    if cfg.kind == "distribution_ce":
        return _ce_loss_and_grad(pred, gt_rotation, grid, cfg)
    if cfg.kind == "mse_plus_ce":
        mse_cfg = LossConfig(cfg.bandlimit, "mse", cfg.level_weights,
                             cfg.huber_delta, cfg.softmax_temperature,
                             cfg.ce_lambda)
        v1, g1 = _regression_loss_and_grad(pred, gt, mse_cfg)
        v2, g2 = _ce_loss_and_grad(pred, gt_rotation, grid, cfg)
        return v1 + cfg.ce_lambda * v2, g1 + cfg.ce_lambda * g2
    raise ValueError(f"unknown loss kind {cfg.kind!r}")


# ---------------------------------------------------------------------------
# Grid inference
# ---------------------------------------------------------------------------

def infer_distribution(pred, grid: SO3Grid,
                       temperature: float = 1.0) -> PoseDistribution:
    """Softmax over dot-product similarities with the grid vectors."""
    if grid.psi_table is None:
        raise ValueError("grid needs a precomputed harmonic-vector table")
    logits = grid.psi_table @ _flat(pred) / temperature
    logits -= logits.max()
    e = np.exp(logits)
    return PoseDistribution(grid, e / e.sum())


def argmax_pose(d: PoseDistribution) -> RotationMatrix:
    """Grid rotation with maximal probability; ties pick the lowest index."""
    return RotationMatrix(d.grid.rotations[int(np.argmax(d.probs))])


def _infer_bandlimit(flat: np.ndarray) -> int:
    l = 0
    while wigner.m_total(l) < len(flat):
        l += 1
    if wigner.m_total(l) != len(flat):
        raise ValueError(f"vector length {len(flat)} is not a valid stack size")
    return l


def gradient_ascent_pose(pred, start: RotationMatrix, steps: int = 20,
                         lr: float = 1e-3, fd_step: float = 1e-4) -> RotationMatrix:
    """Refine a pose by ascending the similarity over ZYZ angles.

    Central finite differences (h = fd_step) give the gradient; the step
    size backtracks on non-improving moves and grows on accepted ones,
    starting from ``lr``.  Angles are projected back into their ranges
    after every step and the best iterate seen is returned, so the
    result never scores below the starting point.
    """
    flat = _flat(pred)
    bandlimit = _infer_bandlimit(flat)

    def _project(angles: np.ndarray) -> np.ndarray:
        return np.array([
            (angles[0] + np.pi) % (2 * np.pi) - np.pi,
            np.clip(angles[1], 0.0, np.pi),
            (angles[2] + np.pi) % (2 * np.pi) - np.pi,
        ])

    def score(angles: np.ndarray) -> float:
        mats = rotations.zyz_to_matrices(
            np.array([angles[0]]), np.array([angles[1]]), np.array([angles[2]]))
        return float(wigner.rotations_to_psi(mats, bandlimit)[0] @ flat)

    e = rotations.matrix_to_euler(start)
    angles = np.array([e.alpha, e.beta, e.gamma])
    best_angles = angles.copy()
    best_score = score(angles)
    step = lr
    for _ in range(max(0, steps)):
        grad = np.empty(3)
        for i in range(3):
            up, dn = angles.copy(), angles.copy()
            up[i] += fd_step
            dn[i] -= fd_step
            grad[i] = (score(up) - score(dn)) / (2.0 * fd_step)
        moved = False
        for _try in range(8):
            cand = _project(angles + step * grad)
            sc = score(cand)
            if sc > best_score:
                angles = cand
                best_score = sc
                best_angles = cand.copy()
                step *= 1.5
                moved = True
                break
            step *= 0.5
        if not moved:
            break
    return rotations.euler_to_matrix(
        rotations.EulerZYZ(best_angles[0], best_angles[1], best_angles[2]))


# ---------------------------------------------------------------------------
# Metrics and reports
# ---------------------------------------------------------------------------

ACCURACY_THRESHOLDS_DEG = (3.0, 5.0, 10.0, 15.0, 30.0)


def _matrix_stack(items) -> np.ndarray:
    if isinstance(items, np.ndarray) and items.ndim == 3:
        return items
    return np.stack([r.m if isinstance(r, RotationMatrix) else np.asarray(r)
                     for r in items])


def error_angles_deg(preds, gts) -> np.ndarray:
    a = _matrix_stack(preds)
    b = _matrix_stack(gts)
    if len(a) != len(b):
        raise ValueError(f"length mismatch: {len(a)} predictions, {len(b)} truths")
    if len(a) == 0:
        raise ValueError("need at least one prediction/truth pair")
    return np.degrees(rotations.geodesic_distances(a, b))


def metrics(preds, gts) -> dict:
    """Median error (middle of sorted; even n averages the two middles)
    and accuracy at the standard thresholds."""
    err = np.sort(error_angles_deg(preds, gts))
    n = len(err)
    median = float(err[n // 2]) if n % 2 else float(0.5 * (err[n // 2 - 1] + err[n // 2]))
    out = {"count": n, "median_error_deg": median}
    for t in ACCURACY_THRESHOLDS_DEG:
        out[f"acc_at_{t:g}"] = float(np.mean(err <= t))
    return out


def write_error_csv(path: str, errors_deg: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "error_deg"])
        for i, e in enumerate(errors_deg):
            writer.writerow([i, f"{e:.6f}"])


def write_metrics_json(path: str, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
