"""Command-line interface.

Subcommands cover the staged workflow (synth, train-frontend, train-backend,
trials, score, evaluate) plus the end-to-end orchestrations (compare, fuse).
Every command takes --config plus the global --seed and --out-dir flags;
reports are machine-readable JSON with human-readable tables on stdout.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import backend as be
from . import dvector as dv
from . import evaluation as ev
from . import gmm
from . import ivector as iv
from . import pipeline as pl
from .config import ConfigError, ExperimentConfig, load_config
from .data import synth_corpus

BACKEND_EXT = {"lr_cosine": "svlr", "wccn_cosine": "svwc", "lda_cosine": "svld"}


def _dump_json(payload: dict, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    return config


def _corpora_dir(out_dir: Path) -> tuple[Path, Path]:
    return out_dir / "corpora" / "dev", out_dir / "corpora" / "eval"


def _resolve_corpora(config: ExperimentConfig, out_dir: Path) -> ExperimentConfig:
    """Point a synth config at corpora previously written by `synth`."""
    if config.synth is None:
        return config
    dev_dir, eval_dir = _corpora_dir(out_dir)
    dev_index = dev_dir / "index.txt"
    eval_index = eval_dir / "index.txt"
    if not dev_index.exists() or not eval_index.exists():
        raise FileNotFoundError(
            f"no corpora under {out_dir}; run `svlr synth --config ...` first"
        )
    return replace(config, synth=None, dev_index=str(dev_index), eval_index=str(eval_index))


def cmd_synth(args: argparse.Namespace) -> int:
    config = _load(args)
    if config.synth is None:
        raise ConfigError("synth", "this command requires a synthetic-corpus config")
    out_dir = Path(args.out_dir)
    dev_spec, eval_spec = pl.dev_eval_specs(config.synth)
    dev_dir, eval_dir = _corpora_dir(out_dir)
    dev_index = synth_corpus(dev_spec, dev_dir)
    eval_index = synth_corpus(eval_spec, eval_dir)
    print(f"development corpus: {len(dev_index.utterances)} utterances -> {dev_dir}")
    print(f"evaluation corpus:  {len(eval_index.utterances)} utterances -> {eval_dir}")
    return 0


def _frontend_dir(out_dir: Path, name: str) -> Path:
    return out_dir / "models" / name


def cmd_train_frontend(args: argparse.Namespace) -> int:
    config = _resolve_corpora(_load(args), Path(args.out_dir))
    dev, _eva = pl.prepare_corpora(config)
    for name in config.front_ends:
        front = pl.train_front_end(name, dev, config)
        model_dir = _frontend_dir(Path(args.out_dir), name)
        model_dir.mkdir(parents=True, exist_ok=True)
        if isinstance(front, pl.GmmIvectorFrontEnd):
            gmm.save_ubm(front.ubm, model_dir / "ubm.svu")
            iv.save_tv(front.tv, model_dir / "tv.svt")
        else:
            dv.save_mlp(front.net, model_dir / "net.svn")
        print(f"trained front end {name} -> {model_dir}")
    return 0


def _load_front_end(config: ExperimentConfig, name: str, out_dir: Path) -> pl.FrontEnd:
    model_dir = _frontend_dir(out_dir, name)
    if name in ("gmm_ivector", "posterior_ivector"):
        ubm_path = model_dir / "ubm.svu"
        if not ubm_path.exists():
            raise FileNotFoundError(f"{ubm_path} missing; run `svlr train-frontend` first")
        return pl.GmmIvectorFrontEnd(gmm.load_ubm(ubm_path), iv.load_tv(model_dir / "tv.svt"))
    net_path = model_dir / "net.svn"
    if not net_path.exists():
        raise FileNotFoundError(f"{net_path} missing; run `svlr train-frontend` first")
    return pl.DvectorFrontEnd(dv.load_mlp(net_path), config.dvector_net.half_window)


def cmd_train_backend(args: argparse.Namespace) -> int:
    out_dir = Path(args.out_dir)
    config = _resolve_corpora(_load(args), out_dir)
    dev, _eva = pl.prepare_corpora(config)
    dev_speaker_of = pl._segment_speakers(dev)
    for fe_name in config.front_ends:
        front = _load_front_end(config, fe_name, out_dir)
        dev_emb = pl.embed_segments(front, dev)
        for be_name in config.back_ends:
            back = pl.build_back_end(be_name, dev_emb, dev_speaker_of, config)
            model_dir = _frontend_dir(out_dir, fe_name)
            if be_name == "cosine":
                print(f"back end {be_name} has no parameters; nothing to store")
                continue
            if be_name == "lda_plda":
                lda, plda = back.model
                be.save_lda(lda, model_dir / "lda_plda.svld")
                be.save_plda(plda, model_dir / "lda_plda.svpl")
            elif be_name == "lr_cosine":
                be.save_lr(back.model, model_dir / "lr_cosine.svlr")
            elif be_name == "wccn_cosine":
                be.save_wccn(back.model, model_dir / "wccn_cosine.svwc")
            elif be_name == "lda_cosine":
                be.save_lda(back.model, model_dir / "lda_cosine.svld")
            print(f"trained back end {be_name} on {fe_name} -> {model_dir}")
    return 0


def _rebuild_back_end(config: ExperimentConfig, fe_name: str, be_name: str,
                      out_dir: Path) -> pl.BackEnd:
    model_dir = _frontend_dir(out_dir, fe_name)
    if be_name == "cosine":
        return pl.BackEnd("cosine", lambda x: x, be.cosine_score)
    if be_name == "lr_cosine":
        model = be.load_lr(model_dir / "lr_cosine.svlr")
        return pl.BackEnd(be_name, lambda x: be.lr_transform(model, x), be.cosine_score, model)
    if be_name == "wccn_cosine":
        model = be.load_wccn(model_dir / "wccn_cosine.svwc")
        return pl.BackEnd(be_name, lambda x: be.apply_wccn(model, x), be.cosine_score, model)
    if be_name == "lda_cosine":
        model = be.load_lda(model_dir / "lda_cosine.svld")
        return pl.BackEnd(be_name, lambda x: be.apply_lda(model, x), be.cosine_score, model)
    lda = be.load_lda(model_dir / "lda_plda.svld")
    plda = be.load_plda(model_dir / "lda_plda.svpl")
    return pl.BackEnd(be_name, lambda x: be.apply_lda(lda, x),
                      pl._plda_pair_scorer(plda), (lda, plda))


def _trial_paths(out_dir: Path, cond_name: str, run: int) -> tuple[Path, Path]:
    base = out_dir / "trials" / cond_name
    return base / f"run_{run:03d}.trials.txt", base / f"run_{run:03d}.enroll.txt"


def _save_enrollment(enrollment: dict[str, list[str]], path: Path) -> None:
    lines = [f"{spk} {' '.join(segs)}" for spk, segs in sorted(enrollment.items())]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _load_enrollment(path: Path) -> dict[str, list[str]]:
    out = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.strip():
            parts = line.split()
            out[parts[0]] = parts[1:]
    return out


def cmd_trials(args: argparse.Namespace) -> int:
    out_dir = Path(args.out_dir)
    config = _resolve_corpora(_load(args), out_dir)
    _dev, eva = pl.prepare_corpora(config)
    for cond in config.conditions:
        for run, seed in enumerate(pl.run_seeds(config)):
            enrollment, trials = ev.build_trials(
                eva.groups, cond.enroll_segments, seed, cond.test_segments
            )
            trial_path, enroll_path = _trial_paths(out_dir, cond.name, run)
            trial_path.parent.mkdir(parents=True, exist_ok=True)
            ev.save_trials(trials, trial_path)
            _save_enrollment(enrollment, enroll_path)
        print(f"condition {cond.name}: wrote {config.n_runs} trial lists")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    out_dir = Path(args.out_dir)
    config = _resolve_corpora(_load(args), out_dir)
    _dev, eva = pl.prepare_corpora(config)
    for fe_name in config.front_ends:
        front = _load_front_end(config, fe_name, out_dir)
        embeddings = pl.embed_segments(front, eva)
        for be_name in config.back_ends:
            back = _rebuild_back_end(config, fe_name, be_name, out_dir)
            transformed = {seg: back.transform(vec) for seg, vec in embeddings.items()}
            for cond in config.conditions:
                score_dir = out_dir / "scores" / f"{fe_name}_{be_name}" / cond.name
                score_dir.mkdir(parents=True, exist_ok=True)
                for run in range(config.n_runs):
                    trial_path, enroll_path = _trial_paths(out_dir, cond.name, run)
                    if not trial_path.exists():
                        raise FileNotFoundError(f"{trial_path} missing; run `svlr trials` first")
                    trials = ev.load_trials(trial_path)
                    enrollment = _load_enrollment(enroll_path)
                    enroll_models = {
                        spk: be.speaker_model([transformed[s] for s in segs]).m
                        for spk, segs in enrollment.items()
                    }
                    scored = ev.score_trials(back.score, enroll_models, transformed, trials)
                    ev.save_scores(scored, score_dir / f"run_{run:03d}.scores.txt")
            print(f"scored {fe_name}+{be_name} over {len(config.conditions)} condition(s)")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    out_dir = Path(args.out_dir)
    config = _resolve_corpora(_load(args), out_dir)
    report: dict = {"config": config.to_dict(), "systems": {}}
    for fe_name in config.front_ends:
        for be_name in config.back_ends:
            system = f"{fe_name}_{be_name}"
            by_condition = {}
            for cond in config.conditions:
                per_run = []
                for run in range(config.n_runs):
                    trial_path, _ = _trial_paths(out_dir, cond.name, run)
                    score_path = out_dir / "scores" / system / cond.name / f"run_{run:03d}.scores.txt"
                    if not score_path.exists():
                        raise FileNotFoundError(f"{score_path} missing; run `svlr score` first")
                    trials = ev.load_trials(trial_path)
                    scored = ev.load_scores(score_path, trials)
                    per_run.append(ev.summarize(scored, config.dcf08, config.dcf10))
                    if run == 0:
                        det_dir = out_dir / "det"
                        det_dir.mkdir(parents=True, exist_ok=True)
                        ev.save_det_csv(ev.det_curve(scored),
                                        det_dir / f"det_{system}_{cond.name}.csv")
                by_condition[cond.name] = {"per_run": per_run, "mean": pl._mean(per_run)}
            report["systems"][system] = by_condition
            _print_metric_table(system, by_condition)
    _dump_json(report, out_dir / "reports" / "metrics.json")
    print(f"report -> {out_dir / 'reports' / 'metrics.json'}")
    return 0


def _print_metric_table(title: str, by_condition: dict) -> None:
    print(f"\n{title}")
    print(f"{'condition':<12}{'EER%':>9}{'DCF08':>9}{'DCF10':>9}")
    for cond, block in by_condition.items():
        m = block["mean"]
        print(f"{cond:<12}{100 * m['eer']:>9.2f}{m['dcf08']:>9.4f}{m['dcf10']:>9.4f}")


def cmd_compare(args: argparse.Namespace) -> int:
    config = _load(args)
    out_dir = Path(args.out_dir)
    report = pl.run_comparison(config, out_dir)
    _dump_json(report, out_dir / "reports" / "comparison.json")
    print(f"front end: {report['front_end']}")
    print(f"{'condition':<12}{'back end':<14}{'EER%':>9}{'DCF08':>9}{'DCF10':>9}")
    for cond in config.conditions:
        for name in config.back_ends:
            m = report["back_ends"][name][cond.name]["mean"]
            print(f"{cond.name:<12}{name:<14}{100 * m['eer']:>9.2f}"
                  f"{m['dcf08']:>9.4f}{m['dcf10']:>9.4f}")
    for cond_name, entry in report["relative_improvement"].items():
        if entry["score"] is not None:
            print(f"{cond_name}: relative EER change vs {entry['best_competitor']}: "
                  f"{100 * entry['score']:+.1f}%")
    print(f"report -> {out_dir / 'reports' / 'comparison.json'}")
    return 0


def cmd_fuse(args: argparse.Namespace) -> int:
    config = _load(args)
    out_dir = Path(args.out_dir)
    report = pl.run_fusion(config, out_dir)
    _dump_json(report, out_dir / "reports" / "fusion.json")
    print(f"{'condition':<12}{'system':<22}{'EER%':>9}{'DCF08':>9}{'DCF10':>9}")
    for cond_name, block in report["conditions"].items():
        for name, sys_block in block["systems"].items():
            m = sys_block["mean"]
            print(f"{cond_name:<12}{name:<22}{100 * m['eer']:>9.2f}"
                  f"{m['dcf08']:>9.4f}{m['dcf10']:>9.4f}")
        m = block["fused"]["mean"]
        print(f"{cond_name:<12}{'fused':<22}{100 * m['eer']:>9.2f}"
              f"{m['dcf08']:>9.4f}{m['dcf10']:>9.4f}")
    print(f"report -> {out_dir / 'reports' / 'fusion.json'}")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "train-frontend": cmd_train_frontend,
    "train-backend": cmd_train_backend,
    "trials": cmd_trials,
    "score": cmd_score,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "fuse": cmd_fuse,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="svlr",
        description="Speaker-verification experiments with a regression speaker-space back-end.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="JSON experiment configuration")
        p.add_argument("--out-dir", default="svlr_out", help="artifact directory")
        p.add_argument("--seed", type=int, default=None, help="override the master seed")
        p.set_defaults(fn=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
