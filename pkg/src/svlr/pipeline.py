"""End-to-end orchestration: corpora, front-ends, back-ends, repeated runs.

Front-ends are trained once per invocation and reused across back-ends and
runs; per-run randomness is confined to the trial builder, whose seed is the
master seed plus the run index.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy.linalg import cho_factor

from . import backend as be
from . import dvector as dv
from . import evaluation as ev
from . import gmm
from . import ivector as iv
from .config import Condition, ExperimentConfig
from .data import (
    FrameMatrix,
    SynthSpec,
    generate_corpus,
    load_corpus,
    load_features,
    split_segments,
)

# Offset separating the development corpus seed from the evaluation corpus
# seed when both are derived from one synthetic spec.
EVAL_SEED_OFFSET = 104729


@dataclass(frozen=True)
class SegmentedCorpus:
    """Fixed-length segments grouped by speaker and source conversation."""

    segments: dict[str, FrameMatrix]
    groups: dict[str, dict[str, list[str]]]

    @property
    def speakers(self) -> list[str]:
        return sorted(self.groups)

    def speaker_of(self, segment_id: str) -> str:
        for spk, groups in self.groups.items():
            for segs in groups.values():
                if segment_id in segs:
                    return spk
        raise KeyError(segment_id)


def segment_corpus(
    features: Mapping[str, FrameMatrix],
    speaker_of_utt: Mapping[str, str],
    seg_len: int,
) -> SegmentedCorpus:
    """Split every utterance; each source utterance becomes one conversation group."""
    segments: dict[str, FrameMatrix] = {}
    groups: dict[str, dict[str, list[str]]] = {}
    for utt_id in sorted(features):
        spk = speaker_of_utt[utt_id]
        segs = split_segments(features[utt_id], seg_len)
        if not segs:
            continue
        ids = []
        for seg in segs:
            segments[seg.utterance_id] = seg
            ids.append(seg.utterance_id)
        groups.setdefault(spk, {})[utt_id] = ids
    if not segments:
        raise ValueError(f"no utterance yields a full segment of {seg_len} frames")
    return SegmentedCorpus(segments, groups)


def dev_eval_specs(spec: SynthSpec) -> tuple[SynthSpec, SynthSpec]:
    """Disjoint development and evaluation corpora from one synthetic spec."""
    return spec, replace(spec, seed=spec.seed + EVAL_SEED_OFFSET)


def prepare_corpora(config: ExperimentConfig) -> tuple[SegmentedCorpus, SegmentedCorpus]:
    if config.synth is not None:
        dev_spec, eval_spec = dev_eval_specs(config.synth)
        dev_index, dev_feats = generate_corpus(dev_spec)
        eval_index, eval_feats = generate_corpus(eval_spec)
    else:
        dev_index, dev_feats = load_corpus(config.dev_index)
        eval_index, eval_feats = load_corpus(config.eval_index)
    dev_map = {u: s for u, (s, _p) in dev_index.utterances.items()}
    eval_map = {u: s for u, (s, _p) in eval_index.utterances.items()}
    return (
        segment_corpus(dev_feats, dev_map, config.seg_len),
        segment_corpus(eval_feats, eval_map, config.seg_len),
    )


@dataclass(frozen=True)
class GmmIvectorFrontEnd:
    """Background model plus total-variability subspace."""

    ubm: gmm.Ubm
    tv: iv.TvModel

    def embed(self, seg: FrameMatrix) -> np.ndarray:
        return iv.extract_ivector(self.tv, gmm.baum_welch_stats(self.ubm, seg)).x


@dataclass(frozen=True)
class DvectorFrontEnd:
    """Frame classifier averaged at its top hidden layer."""

    net: dv.Mlp
    half_window: int

    def embed(self, seg: FrameMatrix) -> np.ndarray:
        return dv.extract_dvector(self.net, seg, self.half_window).x


FrontEnd = GmmIvectorFrontEnd | DvectorFrontEnd


def _dev_items(dev: SegmentedCorpus) -> tuple[list[FrameMatrix], list[str]]:
    mats, speakers = [], []
    for spk in dev.speakers:
        for group in sorted(dev.groups[spk]):
            for seg_id in dev.groups[spk][group]:
                mats.append(dev.segments[seg_id])
                speakers.append(spk)
    return mats, speakers


def _net_config(net, seed: int) -> dv.MlpConfig:
    return dv.MlpConfig(
        hidden_dims=tuple(net.hidden_dims),
        learning_rate=net.learning_rate,
        batch_size=net.batch_size,
        n_epochs=net.epochs,
        dropout=net.dropout,
        momentum=net.momentum,
        momentum_final=net.momentum_final,
        momentum_switch_epoch=net.momentum_switch_epoch,
        seed=seed,
    )


def _train_tv_on(dev: SegmentedCorpus, ubm: gmm.Ubm, config: ExperimentConfig) -> iv.TvModel:
    mats, _ = _dev_items(dev)
    stats = [gmm.baum_welch_stats(ubm, m) for m in mats]
    return iv.train_tv(
        stats,
        ubm,
        n_factors=config.ivector.total_factors,
        n_iters=config.ivector.em_iters,
        seed=config.seed,
        reestimate_sigma=config.ivector.reestimate_sigma,
    )


def train_front_end(name: str, dev: SegmentedCorpus, config: ExperimentConfig) -> FrontEnd:
    mats, speakers = _dev_items(dev)
    if name == "gmm_ivector":
        ubm = gmm.train_ubm_em(mats, config.gmm.n_components, config.gmm.em_iters, seed=config.seed)
        return GmmIvectorFrontEnd(ubm, _train_tv_on(dev, ubm, config))
    if name == "posterior_ivector":
        post = config.posterior
        if post.source == "dvector":
            net = dv.train_mlp(mats, speakers, post.net.half_window,
                               _net_config(post.net, config.seed))
            gammas = [dv.frame_posteriors(net, m, post.net.half_window) for m in mats]
        else:
            base = Path(post.posterior_dir)
            gammas = []
            for m in mats:
                raw = load_features(base / f"{m.utterance_id}.svf")
                gammas.append(gmm.PosteriorMatrix(raw.frames))
        ubm = gmm.ubm_from_posteriors(mats, gammas)
        if post.truncate_to is not None and post.truncate_to < ubm.n_components:
            # estimation-time responsibility mass is the pooled zero-th order
            # statistic of the alignment source
            pooled = gmm.BwStats(ubm.component_mass, np.zeros_like(ubm.means))
            ubm = gmm.truncate_ubm(ubm, pooled, post.truncate_to)
        return GmmIvectorFrontEnd(ubm, _train_tv_on(dev, ubm, config))
    if name == "dvector":
        net = dv.train_mlp(mats, speakers, config.dvector_net.half_window,
                           _net_config(config.dvector_net, config.seed))
        return DvectorFrontEnd(net, config.dvector_net.half_window)
    raise ValueError(f"unknown front end {name!r}")


def embed_segments(front_end: FrontEnd, corpus: SegmentedCorpus) -> dict[str, np.ndarray]:
    return {seg_id: front_end.embed(seg) for seg_id, seg in sorted(corpus.segments.items())}


@dataclass(frozen=True)
class BackEnd:
    """A fitted transform into scoring space plus the pair scorer used there."""

    name: str
    transform: Callable[[np.ndarray], np.ndarray]
    score: Callable[[np.ndarray, np.ndarray], float]
    model: object | None = None


def build_back_end(
    name: str,
    dev_vectors: Mapping[str, np.ndarray],
    dev_speaker_of: Mapping[str, str],
    config: ExperimentConfig,
) -> BackEnd:
    ids = sorted(dev_vectors)
    X = np.column_stack([dev_vectors[i] for i in ids])
    labels = [dev_speaker_of[i] for i in ids]
    params = config.backend

    if name == "cosine":
        return BackEnd(name, lambda x: x, be.cosine_score)
    if name == "lr_cosine":
        Y, _classes = be.indicator_matrix(labels)
        if params.center:
            mean = X.mean(axis=1)
            model = be.fit_lr(X - mean[:, None], Y, ridge=params.ridge)
            return BackEnd(name, lambda x: be.lr_transform(model, x - mean), be.cosine_score, model)
        model = be.fit_lr(X, Y, ridge=params.ridge)
        return BackEnd(name, lambda x: be.lr_transform(model, x), be.cosine_score, model)
    if name == "wccn_cosine":
        model = be.fit_wccn(X, labels)
        return BackEnd(name, lambda x: be.apply_wccn(model, x), be.cosine_score, model)
    if name == "lda_cosine":
        model = _fit_lda(X, labels, config)
        return BackEnd(name, lambda x: be.apply_lda(model, x), be.cosine_score, model)
    if name == "lda_plda":
        lda = _fit_lda(X, labels, config)
        projected = be.apply_lda(lda, X)
        latent = params.plda_latent_dim or projected.shape[0]
        plda = be.fit_plda(projected, labels, latent_dim=latent, n_iters=params.plda_iters)
        scorer = _plda_pair_scorer(plda)
        return BackEnd(name, lambda x: be.apply_lda(lda, x), scorer, (lda, plda))
    raise ValueError(f"unknown back end {name!r}")


def _fit_lda(X, labels, config: ExperimentConfig):
    n_classes = len(set(labels))
    max_dim = min(X.shape[0], n_classes - 1)
    if config.backend.lda_dim > max_dim:
        raise ValueError(
            f"backend.lda_dim={config.backend.lda_dim} exceeds the achievable rank "
            f"{max_dim} for {n_classes} development speakers in {X.shape[0]} dimensions"
        )
    return be.fit_lda(X, labels, config.backend.lda_dim)


def _plda_pair_scorer(model: be.PldaModel) -> Callable[[np.ndarray, np.ndarray], float]:
    """Same math as plda_score with the factorizations hoisted out of the loop."""
    between = model.between_cov
    total = between + model.W
    factors = (
        cho_factor(total + between, lower=True),
        cho_factor(model.W, lower=True),
        cho_factor(total, lower=True),
    )

    def score(m1: np.ndarray, m2: np.ndarray) -> float:
        u1 = m1 - model.mean
        u2 = m2 - model.mean
        s = (u1 + u2) / np.sqrt(2.0)
        d = (u1 - u2) / np.sqrt(2.0)
        same = be._gaussian_ll(s, factors[0]) + be._gaussian_ll(d, factors[1])
        diff = be._gaussian_ll(s, factors[2]) + be._gaussian_ll(d, factors[2])
        return same - diff

    return score


def run_seeds(config: ExperimentConfig) -> list[int]:
    return [config.seed + i for i in range(config.n_runs)]


def score_one_run(
    back_end: BackEnd,
    transformed: Mapping[str, np.ndarray],
    eval_corpus: SegmentedCorpus,
    condition: Condition,
    seed: int,
) -> ev.ScoredTrials:
    """Build the run's trials and score them with averaged enrollment models."""
    enrollment, trials = ev.build_trials(
        eval_corpus.groups, condition.enroll_segments, seed, condition.test_segments
    )
    enroll_models = {
        spk: be.speaker_model([transformed[s] for s in segs]).m
        for spk, segs in enrollment.items()
    }
    return ev.score_trials(back_end.score, enroll_models, transformed, trials)


def _mean(per_run: list[dict]) -> dict:
    keys = per_run[0].keys()
    return {k: float(np.mean([r[k] for r in per_run])) for k in keys}


def evaluate_back_end(
    back_end: BackEnd,
    embeddings: Mapping[str, np.ndarray],
    eval_corpus: SegmentedCorpus,
    config: ExperimentConfig,
    det_dir: Path | None = None,
    tag: str = "",
) -> dict:
    transformed = {seg: back_end.transform(vec) for seg, vec in embeddings.items()}
    report = {}
    for cond in config.conditions:
        per_run = []
        for k, seed in enumerate(run_seeds(config)):
            scored = score_one_run(back_end, transformed, eval_corpus, cond, seed)
            per_run.append(ev.summarize(scored, config.dcf08, config.dcf10))
            if k == 0 and det_dir is not None:
                det_dir.mkdir(parents=True, exist_ok=True)
                ev.save_det_csv(ev.det_curve(scored), det_dir / f"det_{tag}_{cond.name}.csv")
        report[cond.name] = {"per_run": per_run, "mean": _mean(per_run)}
    return report


def run_experiment(config: ExperimentConfig, out_dir: str | Path | None = None) -> dict:
    """Train one front-end/back-end pair and evaluate it over all conditions."""
    if len(config.front_ends) != 1 or len(config.back_ends) != 1:
        raise ValueError("run_experiment expects exactly one front end and one back end")
    dev, eva = prepare_corpora(config)
    front = train_front_end(config.front_ends[0], dev, config)
    dev_emb = embed_segments(front, dev)
    eval_emb = embed_segments(front, eva)
    dev_speaker_of = _segment_speakers(dev)
    back = build_back_end(config.back_ends[0], dev_emb, dev_speaker_of, config)
    det_dir = Path(out_dir) / "det" if out_dir is not None else None
    tag = f"{config.front_ends[0]}_{config.back_ends[0]}"
    report = {
        "config": config.to_dict(),
        "front_end": config.front_ends[0],
        "back_end": config.back_ends[0],
        "conditions": evaluate_back_end(back, eval_emb, eva, config, det_dir, tag),
    }
    return report


def _segment_speakers(corpus: SegmentedCorpus) -> dict[str, str]:
    out = {}
    for spk, groups in corpus.groups.items():
        for segs in groups.values():
            for seg in segs:
                out[seg] = spk
    return out


def run_comparison(config: ExperimentConfig, out_dir: str | Path | None = None) -> dict:
    """Evaluate several back-ends on one front-end over shared trials.

    The summary reports, per condition, the relative improvement of the
    regression back-end against the best other back-end by mean EER.
    """
    if len(config.front_ends) != 1:
        raise ValueError("run_comparison expects exactly one front end")
    if len(config.back_ends) < 2:
        raise ValueError("run_comparison expects at least two back ends")
    dev, eva = prepare_corpora(config)
    front = train_front_end(config.front_ends[0], dev, config)
    dev_emb = embed_segments(front, dev)
    eval_emb = embed_segments(front, eva)
    dev_speaker_of = _segment_speakers(dev)
    det_dir = Path(out_dir) / "det" if out_dir is not None else None

    back_ends = {}
    for name in config.back_ends:
        back = build_back_end(name, dev_emb, dev_speaker_of, config)
        back_ends[name] = evaluate_back_end(
            back, eval_emb, eva, config, det_dir, f"{config.front_ends[0]}_{name}"
        )

    improvement = {}
    if "lr_cosine" in back_ends and len(back_ends) > 1:
        for cond in config.conditions:
            lr_eer = back_ends["lr_cosine"][cond.name]["mean"]["eer"]
            others = {
                name: rep[cond.name]["mean"]["eer"]
                for name, rep in back_ends.items()
                if name != "lr_cosine"
            }
            best_name = min(others, key=others.get)
            best_eer = others[best_name]
            improvement[cond.name] = {
                "lr_eer": lr_eer,
                "best_competitor": best_name,
                "best_eer": best_eer,
                "score": ev.relative_improvement(lr_eer, best_eer) if best_eer > 0 else None,
            }

    return {
        "config": config.to_dict(),
        "front_end": config.front_ends[0],
        "back_ends": back_ends,
        "relative_improvement": improvement,
    }


def run_fusion(config: ExperimentConfig, out_dir: str | Path | None = None) -> dict:
    """Average per-trial scores of systems differing only in their front-end."""
    if len(config.front_ends) < 2:
        raise ValueError("run_fusion expects at least two front ends")
    if len(config.back_ends) != 1:
        raise ValueError("run_fusion expects exactly one shared back end")
    dev, eva = prepare_corpora(config)
    dev_speaker_of = _segment_speakers(dev)
    seeds = run_seeds(config)

    labels = []
    seen: dict[str, int] = {}
    for name in config.front_ends:
        seen[name] = seen.get(name, 0) + 1
        labels.append(name if seen[name] == 1 else f"{name}#{seen[name]}")

    transformed_by_system = {}
    back_by_system = {}
    for label, name in zip(labels, config.front_ends):
        front = train_front_end(name, dev, config)
        dev_emb = embed_segments(front, dev)
        eval_emb = embed_segments(front, eva)
        back = build_back_end(config.back_ends[0], dev_emb, dev_speaker_of, config)
        back_by_system[label] = back
        transformed_by_system[label] = {
            seg: back.transform(vec) for seg, vec in eval_emb.items()
        }

    report: dict = {"config": config.to_dict(), "back_end": config.back_ends[0], "conditions": {}}
    for cond in config.conditions:
        per_system: dict[str, list[dict]] = {label: [] for label in labels}
        fused_runs = []
        for seed in seeds:
            scored_by_system = [
                score_one_run(back_by_system[label], transformed_by_system[label], eva, cond, seed)
                for label in labels
            ]
            for label, scored in zip(labels, scored_by_system):
                per_system[label].append(ev.summarize(scored, config.dcf08, config.dcf10))
            fused_runs.append(
                ev.summarize(ev.fuse_scores(scored_by_system), config.dcf08, config.dcf10)
            )
        report["conditions"][cond.name] = {
            "systems": {
                label: {"per_run": runs, "mean": _mean(runs)}
                for label, runs in per_system.items()
            },
            "fused": {"per_run": fused_runs, "mean": _mean(fused_runs)},
        }
    return report
