"""The fixed synthetic benchmark used by the acceptance suite and scripts.

Forty evaluation speakers with eight conversations each stand in for the
repeated-condition protocol at desk scale: a 16-component background model,
8 total factors, and the two-enrollment-segment condition.
"""

from __future__ import annotations

from .config import ExperimentConfig, config_from_dict

BENCHMARK_SPEC = {
    "n_speakers": 40,
    "utts_per_speaker": 8,
    "frames_per_utt": 100,
    "feature_dim": 20,
    "speaker_spread": 1.0,
    "channel_spread": 0.85,
    "frame_noise": 2.5,
    "seed": 2026,
}


def benchmark_config(
    n_runs: int = 20,
    front_end: str | list[str] = "gmm_ivector",
    back_end: str | list[str] = ("cosine", "wccn_cosine", "lda_cosine", "lda_plda", "lr_cosine"),
) -> ExperimentConfig:
    return config_from_dict(benchmark_dict(n_runs, front_end, back_end))


def benchmark_dict(
    n_runs: int = 20,
    front_end: str | list[str] = "gmm_ivector",
    back_end: str | list[str] = ("cosine", "wccn_cosine", "lda_cosine", "lda_plda", "lr_cosine"),
) -> dict:
    """The benchmark as a plain config mapping (what a config file would hold)."""
    return {
        "synth": dict(BENCHMARK_SPEC),
        "front_end": front_end if isinstance(front_end, str) else list(front_end),
        "back_end": back_end if isinstance(back_end, str) else list(back_end),
        "conditions": [{"name": "30-15", "enroll_segments": 2}],
        "n_runs": n_runs,
        "seed": 2026,
        "seg_len": 50,
        "gmm": {"n_components": 16, "em_iters": 15},
        "ivector": {"total_factors": 8, "em_iters": 10},
        "dvector": {
            "half_window": 2,
            "hidden_dims": [48, 32],
            "learning_rate": 0.02,
            "batch_size": 256,
            "epochs": 12,
            "dropout": 0.1,
        },
        "posterior": {
            "source": "dvector",
            "truncate_to": 16,
            "net": {
                "half_window": 1,
                "hidden_dims": [48],
                "learning_rate": 0.05,
                "batch_size": 256,
                "epochs": 10,
                "dropout": 0.1,
            },
        },
        "backend": {"lda_dim": 8, "plda_latent_dim": 8, "plda_iters": 15},
    }
