"""Trial construction and scoring, detection metrics, fusion, and score
normalization.

Decisions accept a claim only when the score strictly exceeds the threshold,
so a trial scoring exactly at a swept threshold counts as a rejection.  The
threshold sweep therefore visits every distinct score plus a sentinel below
all scores.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class Trial:
    """One claim: an enrollment speaker against a test utterance."""

    enroll_speaker: str
    test_id: str
    target: bool


@dataclass(frozen=True)
class TrialSet:
    trials: tuple[Trial, ...]

    def __post_init__(self) -> None:
        trials = tuple(self.trials)
        if not trials:
            raise ValueError("trial set must be nonempty")
        object.__setattr__(self, "trials", trials)

    def __len__(self) -> int:
        return len(self.trials)

    @property
    def labels(self) -> np.ndarray:
        return np.asarray([t.target for t in self.trials], dtype=bool)


@dataclass(frozen=True)
class ScoredTrials:
    trial_set: TrialSet
    scores: np.ndarray

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.shape != (len(self.trial_set),):
            raise ValueError("need exactly one score per trial")
        if not np.isfinite(scores).all():
            raise ValueError("scores must be finite")
        object.__setattr__(self, "scores", scores)

    @property
    def target_scores(self) -> np.ndarray:
        return self.scores[self.trial_set.labels]

    @property
    def nontarget_scores(self) -> np.ndarray:
        return self.scores[~self.trial_set.labels]


@dataclass(frozen=True)
class DcfParams:
    """Detection-cost weights plus reporting conventions."""

    c_miss: float
    c_fa: float
    p_target: float
    normalize: bool = False
    report_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.c_miss <= 0 or self.c_fa <= 0:
            raise ValueError("costs must be positive")
        if not 0.0 < self.p_target < 1.0:
            raise ValueError("p_target must be in (0, 1)")
        if self.report_scale <= 0:
            raise ValueError("report_scale must be positive")


# SRE'08-style operating point, reported unnormalized and scaled by 100;
# SRE'10-style operating point, reported normalized.
DCF08 = DcfParams(c_miss=10.0, c_fa=1.0, p_target=0.01, normalize=False, report_scale=100.0)
DCF10 = DcfParams(c_miss=1.0, c_fa=1.0, p_target=0.001, normalize=True, report_scale=1.0)


def _sweep(scored: ScoredTrials) -> tuple[np.ndarray, np.ndarray]:
    """Miss and false-alarm rates at the sentinel plus every distinct score."""
    tar = np.sort(scored.target_scores)
    non = np.sort(scored.nontarget_scores)
    if len(tar) == 0 or len(non) == 0:
        raise ValueError("need at least one target and one nontarget trial")
    thresholds = np.unique(np.concatenate([tar, non]))
    p_miss = np.searchsorted(tar, thresholds, side="right") / len(tar)
    p_fa = (len(non) - np.searchsorted(non, thresholds, side="right")) / len(non)
    p_miss = np.concatenate([[0.0], p_miss])
    p_fa = np.concatenate([[1.0], p_fa])
    return p_miss, p_fa


def eer(scored: ScoredTrials) -> float:
    """Equal error rate from the threshold sweep.

    When no swept threshold makes the two rates coincide, the crossing is the
    intersection of the segment between the adjacent operating points with the
    miss-equals-false-alarm diagonal.
    """
    p_miss, p_fa = _sweep(scored)
    diff = p_miss - p_fa
    idx = int(np.argmax(diff >= 0.0))
    if diff[idx] == 0.0:
        return float(p_miss[idx])
    m1, f1 = p_miss[idx - 1], p_fa[idx - 1]
    m2, f2 = p_miss[idx], p_fa[idx]
    t = (f1 - m1) / ((m2 - m1) - (f2 - f1))
    return float(m1 + t * (m2 - m1))


def min_dcf(scored: ScoredTrials, params: DcfParams) -> float:
    """Minimum over swept thresholds of the weighted detection cost."""
    p_miss, p_fa = _sweep(scored)
    costs = params.c_miss * params.p_target * p_miss + params.c_fa * (1.0 - params.p_target) * p_fa
    value = float(costs.min())
    if params.normalize:
        value /= min(params.c_miss * params.p_target, params.c_fa * (1.0 - params.p_target))
    return value * params.report_scale


def det_curve(scored: ScoredTrials) -> np.ndarray:
    """Operating points (p_fa, p_miss), one per swept threshold."""
    p_miss, p_fa = _sweep(scored)
    return np.column_stack([p_fa, p_miss])


def fuse_scores(score_sets: Sequence[ScoredTrials]) -> ScoredTrials:
    """Average the soft decision scores of systems sharing one trial set."""
    score_sets = list(score_sets)
    if not score_sets:
        raise ValueError("nothing to fuse")
    base = score_sets[0].trial_set
    for k, s in enumerate(score_sets[1:], 1):
        if s.trial_set != base:
            raise ValueError(f"system {k} was scored on a different trial set")
    fused = np.mean([s.scores for s in score_sets], axis=0)
    return ScoredTrials(base, fused)


def relative_improvement(eer_lr: float, eer_best: float) -> float:
    """Relative change of the regression back-end's EER against the best
    comparison back-end; negative values mean the regression back-end wins."""
    if eer_best <= 0:
        raise ValueError("baseline EER must be positive")
    return (eer_lr - eer_best) / eer_best


def normalize_for_histogram(scored: ScoredTrials) -> ScoredTrials:
    """Affine score map sending the nontarget mean to 0 and the target mean to 1."""
    tar = scored.target_scores
    non = scored.nontarget_scores
    if len(tar) == 0 or len(non) == 0:
        raise ValueError("need both trial classes")
    mean_true = tar.mean()
    mean_imp = non.mean()
    if mean_true == mean_imp:
        raise ValueError("class means coincide; the normalization is undefined")
    return ScoredTrials(scored.trial_set, (scored.scores - mean_imp) / (mean_true - mean_imp))


def score_trials(
    score_fn: Callable[[np.ndarray, np.ndarray], float],
    enroll_models: Mapping[str, np.ndarray],
    test_vectors: Mapping[str, np.ndarray],
    trials: TrialSet,
) -> ScoredTrials:
    """Score every trial in order with the given model tables."""
    scores = np.empty(len(trials))
    for k, trial in enumerate(trials.trials):
        if trial.enroll_speaker not in enroll_models:
            raise ValueError(f"trial {k}: unknown enrollment speaker {trial.enroll_speaker!r}")
        if trial.test_id not in test_vectors:
            raise ValueError(f"trial {k}: unknown test utterance {trial.test_id!r}")
        scores[k] = score_fn(enroll_models[trial.enroll_speaker], test_vectors[trial.test_id])
    return ScoredTrials(trials, scores)


def build_trials(
    groups: Mapping[str, Mapping[str, Sequence[str]]],
    n_enroll: int,
    seed: int,
    n_test: int = 2,
) -> tuple[dict[str, list[str]], TrialSet]:
    """Randomized enrollment/test assignment plus the full claimant/imposter grid.

    groups maps speaker -> conversation group -> segment ids.  Per speaker,
    n_test test segments are drawn from one randomly chosen group and n_enroll
    enrollment segments from the remaining groups.  Every speaker then claims
    every test segment: one target trial per own segment, imposter trials
    against everyone else's.
    """
    if n_enroll < 1 or n_test < 1:
        raise ValueError("n_enroll and n_test must be >= 1")
    rng = np.random.default_rng(seed)
    speakers = sorted(groups)
    if len(speakers) < 2:
        raise ValueError("need at least 2 speakers for imposter trials")
    enrollment: dict[str, list[str]] = {}
    tests: dict[str, list[str]] = {}
    for spk in speakers:
        spk_groups = {g: sorted(segs) for g, segs in groups[spk].items()}
        eligible = [g for g in sorted(spk_groups) if len(spk_groups[g]) >= n_test]
        if not eligible:
            raise ValueError(f"speaker {spk!r}: no conversation group has {n_test} segments")
        test_group = eligible[rng.integers(len(eligible))]
        segs = spk_groups[test_group]
        picked = rng.choice(len(segs), size=n_test, replace=False)
        tests[spk] = [segs[i] for i in sorted(picked)]
        pool = [s for g in sorted(spk_groups) if g != test_group for s in spk_groups[g]]
        if len(pool) < n_enroll:
            raise ValueError(
                f"speaker {spk!r}: only {len(pool)} enrollment segments outside the "
                f"test group, need {n_enroll}"
            )
        chosen = rng.choice(len(pool), size=n_enroll, replace=False)
        enrollment[spk] = [pool[i] for i in sorted(chosen)]

    trials = [
        Trial(claimant, seg, claimant == spk)
        for claimant in speakers
        for spk in speakers
        for seg in tests[spk]
    ]
    return enrollment, TrialSet(tuple(trials))


def summarize(scored: ScoredTrials, dcf08: DcfParams = DCF08, dcf10: DcfParams = DCF10) -> dict:
    """EER plus both detection costs, in raw and reported conventions."""
    raw08 = replace(dcf08, normalize=False, report_scale=1.0)
    raw10 = replace(dcf10, normalize=False, report_scale=1.0)
    return {
        "eer": eer(scored),
        "dcf08": min_dcf(scored, dcf08),
        "dcf08_raw": min_dcf(scored, raw08),
        "dcf10": min_dcf(scored, dcf10),
        "dcf10_raw": min_dcf(scored, raw10),
    }


def save_trials(trials: TrialSet, path: str | Path) -> None:
    lines = [
        f"{t.enroll_speaker} {t.test_id} {'target' if t.target else 'nontarget'}"
        for t in trials.trials
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_trials(path: str | Path) -> TrialSet:
    trials = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != 3 or parts[2] not in ("target", "nontarget"):
            raise ValueError(f"{path}:{line_no}: expected '<speaker> <utt> target|nontarget'")
        trials.append(Trial(parts[0], parts[1], parts[2] == "target"))
    return TrialSet(tuple(trials))


def save_scores(scored: ScoredTrials, path: str | Path) -> None:
    lines = [
        f"{t.enroll_speaker} {t.test_id} {s:.6f}"
        for t, s in zip(scored.trial_set.trials, scored.scores)
    ]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_scores(path: str | Path, trials: TrialSet) -> ScoredTrials:
    scores = []
    rows = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if len(rows) != len(trials):
        raise ValueError(f"{path}: {len(rows)} scores for {len(trials)} trials")
    for line_no, (line, trial) in enumerate(zip(rows, trials.trials), 1):
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{line_no}: expected '<speaker> <utt> <score>'")
        if parts[0] != trial.enroll_speaker or parts[1] != trial.test_id:
            raise ValueError(f"{path}:{line_no}: score row does not match the trial list")
        scores.append(float(parts[2]))
    return ScoredTrials(trials, np.asarray(scores))


def save_det_csv(points: np.ndarray, path: str | Path) -> None:
    lines = ["p_fa,p_miss"] + [f"{float(fa)!r},{float(miss)!r}" for fa, miss in points]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
