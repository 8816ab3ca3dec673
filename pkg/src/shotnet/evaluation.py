"""Tolerance-based transition F1, threshold sweeps and window re-scoring."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError
from .infer import predictions_to_scenes, scenes_to_transitions

# Published reference F1 scores (ClipShots, BBC, RAI); documentation only.
REFERENCE_F1 = {"clipshots": 77.9, "bbc": 96.2, "rai": 93.9}


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    matched: list = field(default_factory=list)
    missed: list = field(default_factory=list)
    false: list = field(default_factory=list)
    threshold: float | None = None

    @property
    def tp(self):
        return len(self.matched)

    def as_text(self):
        lines = [
            f"precision {self.precision:.4f}",
            f"recall    {self.recall:.4f}",
            f"f1        {self.f1:.4f}",
            f"matched {len(self.matched)}  missed {len(self.missed)}  false {len(self.false)}",
        ]
        if self.threshold is not None:
            lines.insert(0, f"threshold {self.threshold:g}")
        return "\n".join(lines) + "\n"

    def as_csv(self):
        th = "" if self.threshold is None else f"{self.threshold:g}"
        return ("threshold,precision,recall,f1,matched,missed,false\n"
                f"{th},{self.precision:.6f},{self.recall:.6f},{self.f1:.6f},"
                f"{len(self.matched)},{len(self.missed)},{len(self.false)}\n")


def f1_score(tp, n_pred, n_gt):
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gt if n_gt else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def _check_sorted(intervals, what):
    prev = -1
    for s, e in intervals:
        if e < s or s <= prev:
            raise InputError(f"{what} intervals must be sorted and non-overlapping; offending ({s}, {e})")
        prev = e


def match_and_score(pred, gt, tol=2, threshold=None):
    """One-to-one matching of predicted and ground-truth transitions.

    ``[ps, pe]`` may match ``[gs, ge]`` when it intersects
    ``[gs - tol, ge + tol]``. Both lists are walked in temporal order; a
    compatible pair is matched, otherwise the interval ending first is
    dropped.
    """
    pred = [(int(s), int(e)) for s, e in pred]
    gt = [(int(s), int(e)) for s, e in gt]
    _check_sorted(pred, "predicted")
    _check_sorted(gt, "ground-truth")
    matched, missed, false = [], [], []
    i = j = 0
    while i < len(pred) and j < len(gt):
        ps, pe = pred[i]
        gs, ge = gt[j]
        if pe >= gs - tol and ps <= ge + tol:
            matched.append((pred[i], gt[j]))
            i += 1
            j += 1
        elif pe < ge + tol:
            false.append(pred[i])
            i += 1
        else:
            missed.append(gt[j])
            j += 1
    false.extend(pred[i:])
    missed.extend(gt[j:])
    p, r, f = f1_score(len(matched), len(pred), len(gt))
    return EvalReport(p, r, f, matched, missed, false, threshold)


def combine_reports(reports, threshold=None):
    """Micro-averaged report over several videos."""
    matched, missed, false = [], [], []
    for rep in reports:
        matched += rep.matched
        missed += rep.missed
        false += rep.false
    p, r, f = f1_score(len(matched), len(matched) + len(false), len(matched) + len(missed))
    return EvalReport(p, r, f, matched, missed, false, threshold)


def confidences_to_transitions(p, threshold):
    p = np.asarray(p)
    scenes = predictions_to_scenes(p, threshold)
    return scenes_to_transitions(scenes, num_frames=len(p),
                                 ends_in_transition=bool(len(p) and p[-1] > threshold))


def expand_window_scores(window_scores, window_len=16, stride=8, num_frames=None):
    """Per-frame confidences from scores of windows starting every ``stride``.

    Window ``k`` starts at ``k * stride`` and assigns its score to its middle
    ``stride`` frames; frames covered by no window get 0.
    """
    scores = np.asarray(window_scores, dtype=np.float64)
    if num_frames is None:
        num_frames = (len(scores) - 1) * stride + window_len if len(scores) else 0
    out = np.zeros(num_frames, dtype=np.float64)
    lo = (window_len - stride) // 2
    for k, v in enumerate(scores):
        a = k * stride + lo
        out[a:min(a + stride, num_frames)] = v
    return out


def threshold_sweep(confidences, gt, grid, tol=2):
    """Best ``(threshold, report)`` over ``grid``; ties go to the lowest threshold."""
    grid = sorted(float(t) for t in grid)
    if not grid:
        raise InputError("threshold grid is empty")
    best = None
    for th in grid:
        rep = match_and_score(confidences_to_transitions(confidences, th), gt, tol, threshold=th)
        if best is None or rep.f1 > best[1].f1:
            best = (th, rep)
    return best


def parse_grid(spec):
    """``"0.1,0.5,0.9"`` or ``"start:stop:step"`` (stop inclusive) -> list of floats."""
    spec = spec.strip()
    if ":" in spec:
        parts = spec.split(":")
        if len(parts) != 3:
            raise InputError(f"grid range must be start:stop:step, got {spec!r}")
        start, stop, step = (float(x) for x in parts)
        if step <= 0:
            raise InputError("grid step must be positive")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return [round(start + k * step, 10) for k in range(max(n, 0))]
    return [float(x) for x in spec.split(",") if x.strip()]
