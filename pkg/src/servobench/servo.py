"""Closed-loop use of a trained model: one-shot correction, iterative
servoing against a fixed reference image, and the insertion-tolerance
predicate fitted to the measured pass/fail grid."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from itertools import combinations, product

import numpy as np

from .geometry import Pose, apply_estimate, pose_error


@dataclass(frozen=True)
class ToleranceGrid:
    """Pass/fail insertion outcomes over coupled (translation, rotation) offsets."""

    mm: tuple  # translation offsets, ascending
    deg: tuple  # rotation offsets, ascending
    passes: tuple  # passes[deg_index][mm_index] booleans

    def cells(self):
        for r, d in enumerate(self.deg):
            for c, t in enumerate(self.mm):
                yield t, d, self.passes[r][c]


def _row(passing_count, width):
    return tuple(i < passing_count for i in range(width))


# Measured insertion outcomes for the A1 connector: per rotation offset,
# the number of leading translation offsets that still insert.
INSERTION_GRID = ToleranceGrid(
    mm=(0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7),
    deg=(0.00, 0.25, 0.50, 0.75, 1.00, 1.25, 1.50, 1.75, 2.00, 2.25),
    passes=(
        _row(7, 8),  # 0.00
        _row(7, 8),  # 0.25
        _row(5, 8),  # 0.50
        _row(4, 8),  # 0.75
        _row(3, 8),  # 1.00
        _row(3, 8),  # 1.25
        _row(2, 8),  # 1.50
        _row(2, 8),  # 1.75
        _row(2, 8),  # 2.00
        _row(0, 8),  # 2.25
    ),
)


@dataclass(frozen=True)
class ToleranceModel:
    """Piecewise-linear non-increasing frontier c(theta) in (deg -> mm).

    Outside the knot range the frontier extends flat. dz along the blind
    descent axis is checked separately against dz_allowance_mm.
    """

    knots: tuple  # ((deg, mm), ...) ascending in deg, <= 4 entries
    dz_allowance_mm: float = 5.0

    def __post_init__(self):
        if not (1 <= len(self.knots) <= 4):
            raise ValueError("frontier needs 1 to 4 breakpoints")
        degs = [k[0] for k in self.knots]
        mms = [k[1] for k in self.knots]
        if any(b <= a for a, b in zip(degs, degs[1:])):
            raise ValueError("breakpoints must be strictly ascending in degrees")
        if any(b > a for a, b in zip(mms, mms[1:])):
            raise ValueError("frontier must be non-increasing")
        if any(m < 0 for m in mms):
            raise ValueError("frontier must be non-negative")

    def max_translation_mm(self, rotation_deg: float) -> float:
        degs = [k[0] for k in self.knots]
        mms = [k[1] for k in self.knots]
        return float(np.interp(rotation_deg, degs, mms))

    def to_json(self) -> dict:
        return {"knots": [list(k) for k in self.knots],
                "dz_allowance_mm": self.dz_allowance_mm}

    @staticmethod
    def from_json(d: dict) -> "ToleranceModel":
        return ToleranceModel(tuple(tuple(k) for k in d["knots"]),
                              float(d["dz_allowance_mm"]))


def insertion_success(t_final: Pose, t_ref: Pose, tol: ToleranceModel) -> bool:
    """Blind-descent insertion predicate on the final pose offsets."""
    e = pose_error(t_ref, t_final)
    t_xy = max(e.e_x, e.e_y)
    theta = max(e.e_roll, e.e_pitch, e.e_yaw)
    return t_xy <= tol.max_translation_mm(theta) and e.e_z <= tol.dz_allowance_mm


def _classify(model: ToleranceModel, grid: ToleranceGrid) -> int:
    """Correctly classified cell count (pass iff t <= c(theta))."""
    correct = 0
    for t, d, passed in grid.cells():
        if (t <= model.max_translation_mm(d)) == passed:
            correct += 1
    return correct


def _monotone_violations(grid: ToleranceGrid) -> int:
    passes = np.array(grid.passes, dtype=bool)
    bad = 0
    rows, cols = passes.shape
    for r in range(rows):
        for c in range(cols):
            if not passes[r, c]:
                continue
            # a passing cell dominated by any failing smaller-offset cell
            if (~passes[: r + 1, : c + 1]).any():
                bad += 1
    return bad


def fit_tolerance(grid: ToleranceGrid, dz_allowance_mm: float = 5.0) -> ToleranceModel:
    """Least-misclassification piecewise-linear frontier, <= 4 breakpoints.

    Candidate breakpoints sit at the tested rotation offsets; per row the
    candidate values are the last passing translation offset itself and the
    midpoint toward the first failing one. Ties go to the stricter
    (smaller) frontier.
    """
    total = len(grid.mm) * len(grid.deg)
    if _monotone_violations(grid) > 0.1 * total:
        raise ValueError("grid violates the monotone-frontier structure")

    mm = list(grid.mm)
    step = mm[1] - mm[0] if len(mm) > 1 else 1.0
    row_values = []
    for row in grid.passes:
        n_pass = 0
        for v in row:
            if not v:
                break
            n_pass += 1
        if n_pass == 0:
            row_values.append((0.0,))
        elif n_pass == len(mm):
            row_values.append((mm[-1], mm[-1] + step / 2.0))
        else:
            row_values.append((mm[n_pass - 1], (mm[n_pass - 1] + mm[n_pass]) / 2.0))

    best = None  # ((misclassified, frontier area), model)
    rows = list(range(len(grid.deg)))
    for size in range(1, 5):
        for combo in combinations(rows, size):
            for values in product(*(row_values[i] for i in combo)):
                knots = tuple((grid.deg[i], v) for i, v in zip(combo, values))
                try:
                    model = ToleranceModel(knots, dz_allowance_mm)
                except ValueError:
                    continue
                wrong = total - _classify(model, grid)
                area = sum(model.max_translation_mm(d) for d in grid.deg)
                key = (wrong, area)
                if best is None or key < best[0]:
                    best = (key, model)
    return best[1]


def _predictor(model):
    if callable(model) and not hasattr(model, "predict_delta"):
        return model
    return model.predict_delta


def one_shot(model, image_ref, image_test, t_test: Pose) -> Pose:
    """Single corrective estimate: predicted delta applied to the test pose."""
    delta = _predictor(model)(image_ref, image_test)
    return apply_estimate(delta, t_test)


@dataclass
class ServoResult:
    trajectory: list  # poses, length iterations + 1
    deltas: list  # predicted corrections, one per iteration
    iterations: int
    converged: bool
    final_error: object  # PoseError vs the reference pose


def correction_magnitude(delta: Pose):
    """(translation mm, rotation angle deg) of a predicted correction."""
    t_mm = 1000.0 * math.sqrt(sum(v * v for v in delta.translation))
    w = min(1.0, abs(delta.rotation.w))
    angle = math.degrees(2.0 * math.acos(w))
    return t_mm, angle


def iterative_servo(model, render_fn, t_ref: Pose, t_start: Pose,
                    max_iter: int = 30,
                    translation_threshold_mm: float = 0.3,
                    rotation_threshold_deg: float = 0.3,
                    consecutive_required: int = 2) -> ServoResult:
    """Repeated predict-and-move against a fixed reference image.

    The reference image is rendered once at t_ref and never refreshed. The
    loop stops once the predicted correction magnitude stays below both
    thresholds for consecutive_required iterations, or at max_iter;
    non-convergence is reported, not raised.
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    predict = _predictor(model)
    image_ref = render_fn(t_ref)
    current = t_start
    trajectory = [current]
    deltas = []
    consecutive = 0
    converged = False
    iterations = 0
    for _ in range(max_iter):
        image = render_fn(current)
        delta = predict(image_ref, image)
        current = apply_estimate(delta, current)
        trajectory.append(current)
        deltas.append(delta)
        iterations += 1
        t_mm, angle = correction_magnitude(delta)
        if t_mm < translation_threshold_mm and angle < rotation_threshold_deg:
            consecutive += 1
            if consecutive >= consecutive_required:
                converged = True
                break
        else:
            consecutive = 0
    return ServoResult(trajectory, deltas, iterations, converged,
                       pose_error(t_ref, current))


def write_episode_log(path: str, result: ServoResult, t_ref: Pose) -> None:
    """JSONL episode log: one line per iteration plus a summary line."""
    with open(path, "w") as f:
        for it, delta in enumerate(result.deltas, start=1):
            pose = result.trajectory[it]
            err = pose_error(t_ref, pose)
            f.write(json.dumps({
                "iter": it,
                "pose": pose.to_list(),
                "predicted_delta": delta.to_list(),
                "true_error": {
                    "mm": [err.e_x, err.e_y, err.e_z],
                    "deg": [err.e_roll, err.e_pitch, err.e_yaw],
                },
            }) + "\n")
        f.write(json.dumps({
            "converged": result.converged,
            "iterations": result.iterations,
        }) + "\n")
