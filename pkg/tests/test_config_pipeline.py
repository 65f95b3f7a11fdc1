import json

import numpy as np
import pytest

from svlr import pipeline as pl
from svlr.config import ConfigError, config_from_dict, load_config
from svlr.data import SynthSpec, generate_corpus


def tiny_config_dict(**overrides):
    base = {
        "synth": {
            "n_speakers": 6,
            "utts_per_speaker": 3,
            "frames_per_utt": 40,
            "feature_dim": 4,
            "speaker_spread": 1.0,
            "channel_spread": 0.4,
            "frame_noise": 0.8,
            "seed": 5,
        },
        "front_end": "gmm_ivector",
        "back_end": "lr_cosine",
        "conditions": [{"name": "30-15", "enroll_segments": 2}],
        "n_runs": 2,
        "seed": 5,
        "seg_len": 20,
        "gmm": {"n_components": 4, "em_iters": 4},
        "ivector": {"total_factors": 3, "em_iters": 3},
        "dvector": {"half_window": 1, "hidden_dims": [6], "epochs": 2, "batch_size": 64},
        "posterior": {"source": "dvector", "truncate_to": 4,
                      "net": {"half_window": 1, "hidden_dims": [6], "epochs": 2,
                              "batch_size": 64}},
        "backend": {"lda_dim": 3, "plda_latent_dim": 3, "plda_iters": 5},
    }
    base.update(overrides)
    return base


class TestConfig:
    def test_valid_config_loads(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps(tiny_config_dict()))
        config = load_config(path)
        assert config.front_ends == ("gmm_ivector",)
        assert config.back_ends == ("lr_cosine",)
        assert config.n_runs == 2

    def test_unknown_back_end_names_field(self):
        with pytest.raises(ConfigError, match="back_end.*plda_cosine"):
            config_from_dict(tiny_config_dict(back_end="plda_cosine"))

    def test_unknown_front_end_names_field(self):
        with pytest.raises(ConfigError, match="front_end"):
            config_from_dict(tiny_config_dict(front_end="xvector"))

    def test_missing_corpus_source(self):
        raw = tiny_config_dict()
        del raw["synth"]
        with pytest.raises(ConfigError, match="synth"):
            config_from_dict(raw)

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError, match="frobnicate"):
            config_from_dict(tiny_config_dict(frobnicate=1))

    def test_bad_nested_field_path(self):
        raw = tiny_config_dict()
        raw["gmm"] = {"n_components": "many"}
        with pytest.raises(ConfigError, match="gmm.n_components"):
            config_from_dict(raw)

    def test_published_scale_defaults(self):
        raw = {
            "front_end": "gmm_ivector",
            "back_end": "cosine",
            "dev_index": "dev/index.txt",
            "eval_index": "eval/index.txt",
        }
        config = config_from_dict(raw)
        assert config.gmm.n_components == 2048
        assert config.ivector.total_factors == 400
        assert config.backend.lda_dim == 200
        assert config.dvector_net.half_window == 20
        assert config.dvector_net.learning_rate == 0.008
        assert config.dvector_net.batch_size == 512
        assert config.dvector_net.epochs == 50
        assert config.dvector_net.dropout == 0.2
        assert config.posterior.net.half_window == 3
        assert config.posterior.truncate_to == 3096
        assert config.n_runs == 100
        assert len(config.conditions) == 6
        assert [c.enroll_segments for c in config.conditions] == [1, 2, 3, 5, 10, 15]

    def test_json_decode_error(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{not json")
        with pytest.raises(ConfigError, match="JSON"):
            load_config(path)


class TestSegmentation:
    def test_groups_follow_source_utterances(self):
        spec = SynthSpec(n_speakers=2, utts_per_speaker=2, frames_per_utt=45,
                         feature_dim=3, seed=0)
        index, feats = generate_corpus(spec)
        speaker_of = {u: s for u, (s, _p) in index.utterances.items()}
        corpus = pl.segment_corpus(feats, speaker_of, 20)
        assert set(corpus.groups) == {"spk000", "spk001"}
        for groups in corpus.groups.values():
            assert len(groups) == 2
            for segs in groups.values():
                assert len(segs) == 2  # 45 frames -> two 20-frame segments

    def test_no_full_segment_rejected(self):
        spec = SynthSpec(n_speakers=1, utts_per_speaker=1, frames_per_utt=5,
                         feature_dim=2, seed=0)
        index, feats = generate_corpus(spec)
        speaker_of = {u: s for u, (s, _p) in index.utterances.items()}
        with pytest.raises(ValueError, match="segment"):
            pl.segment_corpus(feats, speaker_of, 10)


class TestRunExperiment:
    def test_report_structure_and_run_count(self):
        config = config_from_dict(tiny_config_dict())
        report = pl.run_experiment(config)
        block = report["conditions"]["30-15"]
        assert len(block["per_run"]) == 2
        for entry in block["per_run"]:
            assert set(entry) == {"eer", "dcf08", "dcf08_raw", "dcf10", "dcf10_raw"}
            assert 0.0 <= entry["eer"] <= 1.0
        assert block["mean"]["eer"] == pytest.approx(
            np.mean([r["eer"] for r in block["per_run"]])
        )

    def test_deterministic_reports(self):
        config = config_from_dict(tiny_config_dict())
        a = pl.run_experiment(config)
        b = pl.run_experiment(config)
        assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)

    def test_seed_isolation_when_extending_runs(self):
        two = pl.run_experiment(config_from_dict(tiny_config_dict(n_runs=2)))
        three = pl.run_experiment(config_from_dict(tiny_config_dict(n_runs=3)))
        assert three["conditions"]["30-15"]["per_run"][:2] == two["conditions"]["30-15"]["per_run"]


class TestRunComparison:
    def test_table_shape_and_improvement_delegation(self):
        config = config_from_dict(
            tiny_config_dict(back_end=["cosine", "wccn_cosine", "lr_cosine"],
                             conditions=[{"name": "a", "enroll_segments": 1},
                                         {"name": "b", "enroll_segments": 2}])
        )
        report = pl.run_comparison(config)
        rows = [
            (cond, name)
            for name in report["back_ends"]
            for cond in report["back_ends"][name]
        ]
        assert len(rows) == 2 * 3
        for cond in ("a", "b"):
            entry = report["relative_improvement"][cond]
            others = {
                name: report["back_ends"][name][cond]["mean"]["eer"]
                for name in ("cosine", "wccn_cosine")
            }
            best = min(others.values())
            lr = report["back_ends"]["lr_cosine"][cond]["mean"]["eer"]
            assert entry["best_eer"] == best
            assert entry["score"] == pytest.approx((lr - best) / best)

    def test_requires_two_back_ends(self):
        with pytest.raises(ValueError, match="two back ends"):
            pl.run_comparison(config_from_dict(tiny_config_dict()))


class TestRunFusion:
    def test_self_fusion_reproduces_metrics(self):
        # fusing a system with itself averages identical scores
        config = config_from_dict(
            tiny_config_dict(front_end=["gmm_ivector", "gmm_ivector"])
        )
        report = pl.run_fusion(config)
        block = report["conditions"]["30-15"]
        assert block["fused"]["per_run"] == block["systems"]["gmm_ivector"]["per_run"]

    def test_two_front_ends_fuse(self):
        config = config_from_dict(
            tiny_config_dict(front_end=["gmm_ivector", "dvector"])
        )
        report = pl.run_fusion(config)
        block = report["conditions"]["30-15"]
        assert set(block["systems"]) == {"gmm_ivector", "dvector"}
        assert len(block["fused"]["per_run"]) == 2

    def test_fused_metrics_delegate_to_score_averaging(self):
        # recompute run 0 by hand: per-system scored trials, then fuse_scores
        from svlr import evaluation as ev

        config = config_from_dict(
            tiny_config_dict(front_end=["gmm_ivector", "dvector"], n_runs=1)
        )
        report = pl.run_fusion(config)

        dev, eva = pl.prepare_corpora(config)
        dev_speaker_of = pl._segment_speakers(dev)
        scored = []
        for name in config.front_ends:
            front = pl.train_front_end(name, dev, config)
            dev_emb = pl.embed_segments(front, dev)
            eval_emb = pl.embed_segments(front, eva)
            back = pl.build_back_end(config.back_ends[0], dev_emb, dev_speaker_of, config)
            transformed = {seg: back.transform(v) for seg, v in eval_emb.items()}
            scored.append(pl.score_one_run(back, transformed, eva, config.conditions[0],
                                           config.seed))
        expected = ev.summarize(ev.fuse_scores(scored), config.dcf08, config.dcf10)
        assert report["conditions"]["30-15"]["fused"]["per_run"][0] == expected

    def test_three_front_ends_accepted(self):
        config = config_from_dict(
            tiny_config_dict(front_end=["gmm_ivector", "posterior_ivector", "dvector"],
                             n_runs=1)
        )
        report = pl.run_fusion(config)
        assert len(report["conditions"]["30-15"]["systems"]) == 3

    def test_requires_multiple_front_ends(self):
        with pytest.raises(ValueError, match="two front ends"):
            pl.run_fusion(config_from_dict(tiny_config_dict()))


class TestLdaRankGuard:
    def test_oversized_lda_dim_names_achievable_rank(self):
        config = config_from_dict(
            tiny_config_dict(back_end="lda_cosine",
                             backend={"lda_dim": 200, "plda_latent_dim": 3})
        )
        with pytest.raises(ValueError, match="achievable rank 3"):
            pl.run_experiment(config)


class TestPosteriorFileSource:
    def test_posterior_files_drive_ubm_estimation(self, tmp_path):
        # write per-segment posterior matrices into the shared matrix container,
        # then point the posterior-driven front end at them
        from svlr.data import FrameMatrix, save_features
        from svlr import gmm

        raw = tiny_config_dict()
        config = config_from_dict(raw)
        dev, _eva = pl.prepare_corpora(config)
        post_dir = tmp_path / "posteriors"
        post_dir.mkdir()
        rng = np.random.default_rng(0)
        for seg_id, seg in dev.segments.items():
            gammas = rng.uniform(0.1, 1.0, (seg.n_frames, 4))
            gammas /= gammas.sum(axis=1, keepdims=True)
            save_features(FrameMatrix(gammas, seg_id), post_dir / f"{seg_id}.svf")

        raw["posterior"] = {"source": "files", "posterior_dir": str(post_dir),
                            "truncate_to": 3}
        config = config_from_dict(raw)
        front = pl.train_front_end("posterior_ivector", dev, config)
        assert front.ubm.n_components == 3  # truncated from 4
        assert front.tv.n_factors == 3
        vec = front.embed(next(iter(dev.segments.values())))
        assert vec.shape == (3,)

    def test_files_source_requires_directory(self):
        raw = tiny_config_dict()
        raw["posterior"] = {"source": "files"}
        with pytest.raises(ConfigError, match="posterior.posterior_dir"):
            config_from_dict(raw)


class TestDcfOverrides:
    def test_custom_operating_point_changes_reports(self):
        raw = tiny_config_dict()
        raw["dcf08"] = {"c_miss": 1.0, "c_fa": 1.0, "p_target": 0.5, "report_scale": 1.0}
        config = config_from_dict(raw)
        assert config.dcf08.p_target == 0.5
        assert config.dcf10.p_target == 0.001  # untouched default
        report = pl.run_experiment(config)
        entry = report["conditions"]["30-15"]["per_run"][0]
        assert entry["dcf08"] == entry["dcf08_raw"]  # scale 1, unnormalized

    def test_bad_dcf_field_path(self):
        raw = tiny_config_dict()
        raw["dcf10"] = {"p_target": 2.0}
        with pytest.raises(ConfigError, match="dcf10"):
            config_from_dict(raw)


class TestExplicitCorpusPaths:
    def test_prebuilt_corpora_load_from_index_paths(self, tmp_path):
        from svlr.data import synth_corpus

        raw = tiny_config_dict()
        config = config_from_dict(raw)
        dev_spec, eval_spec = pl.dev_eval_specs(config.synth)
        synth_corpus(dev_spec, tmp_path / "dev")
        synth_corpus(eval_spec, tmp_path / "eval")

        raw["synth"] = None
        raw["dev_index"] = str(tmp_path / "dev" / "index.txt")
        raw["eval_index"] = str(tmp_path / "eval" / "index.txt")
        from_files = pl.run_experiment(config_from_dict(raw))
        in_memory = pl.run_experiment(config)
        # float32 feature storage: metrics agree to quantization, not bitwise
        assert from_files["conditions"]["30-15"]["mean"]["eer"] == pytest.approx(
            in_memory["conditions"]["30-15"]["mean"]["eer"], abs=5e-3
        )
