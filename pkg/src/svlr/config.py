"""Experiment configuration: JSON-compatible, validated with field paths.

Defaults follow the full-scale recipe (2048-component background model, 400
total factors, 200-dimensional discriminant projection, frame classifiers with
the published optimizer settings); desk-scale runs override the sizes.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Mapping

from .data import SynthSpec
from .evaluation import DCF08, DCF10, DcfParams

FRONT_ENDS = ("gmm_ivector", "posterior_ivector", "dvector")
BACK_ENDS = ("cosine", "wccn_cosine", "lda_cosine", "lda_plda", "lr_cosine")
POSTERIOR_SOURCES = ("dvector", "files")

# The six enrollment lengths of the repeated-condition protocol, expressed in
# segments of test-segment length.
DEFAULT_CONDITIONS = (
    ("15-15", 1),
    ("30-15", 2),
    ("45-15", 3),
    ("75-15", 5),
    ("150-15", 10),
    ("225-15", 15),
)


class ConfigError(ValueError):
    """Configuration problem, reported with the offending field path."""

    def __init__(self, path: str, message: str) -> None:
        super().__init__(f"{path}: {message}")
        self.path = path


@dataclass(frozen=True)
class Condition:
    name: str
    enroll_segments: int
    test_segments: int = 2


@dataclass(frozen=True)
class GmmSettings:
    n_components: int = 2048
    em_iters: int = 10


@dataclass(frozen=True)
class IvectorSettings:
    total_factors: int = 400
    em_iters: int = 10
    reestimate_sigma: bool = False


@dataclass(frozen=True)
class NetSettings:
    """Frame-classifier settings shared by the d-vector and posterior nets."""

    half_window: int = 20
    hidden_dims: tuple[int, ...] = (400, 400, 400, 400)
    learning_rate: float = 0.008
    batch_size: int = 512
    epochs: int = 50
    dropout: float = 0.2
    momentum: float = 0.5
    momentum_final: float = 0.9
    momentum_switch_epoch: int = 10


# The posterior net mirrors the acoustic-model recipe: narrow context window,
# higher learning rate.
POSTERIOR_NET_DEFAULTS = NetSettings(half_window=3, hidden_dims=(2048,) * 7, learning_rate=0.1)


@dataclass(frozen=True)
class PosteriorSettings:
    source: str = "dvector"
    posterior_dir: str | None = None
    truncate_to: int | None = 3096
    net: NetSettings = POSTERIOR_NET_DEFAULTS


@dataclass(frozen=True)
class BackendSettings:
    ridge: float | None = None
    center: bool = False
    lda_dim: int = 200
    plda_latent_dim: int | None = None
    plda_iters: int = 20


@dataclass(frozen=True)
class ExperimentConfig:
    front_ends: tuple[str, ...]
    back_ends: tuple[str, ...]
    conditions: tuple[Condition, ...]
    n_runs: int = 100
    seed: int = 0
    seg_len: int = 1500
    synth: SynthSpec | None = None
    dev_index: str | None = None
    eval_index: str | None = None
    gmm: GmmSettings = GmmSettings()
    ivector: IvectorSettings = IvectorSettings()
    dvector_net: NetSettings = NetSettings()
    posterior: PosteriorSettings = PosteriorSettings()
    backend: BackendSettings = BackendSettings()
    dcf08: DcfParams = DCF08
    dcf10: DcfParams = DCF10

    def to_dict(self) -> dict:
        out = asdict(self)
        out["front_ends"] = list(self.front_ends)
        out["back_ends"] = list(self.back_ends)
        return out


def _require(mapping: Mapping[str, Any], key: str, path: str) -> Any:
    if key not in mapping:
        raise ConfigError(f"{path}{key}", "required field is missing")
    return mapping[key]


def _typed(value: Any, kind: type, path: str) -> Any:
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    if kind is int and isinstance(value, bool):
        raise ConfigError(path, "expected an integer, got a boolean")
    if not isinstance(value, kind):
        raise ConfigError(path, f"expected {kind.__name__}, got {type(value).__name__}")
    return value


def _names(value: Any, valid: tuple[str, ...], path: str) -> tuple[str, ...]:
    if isinstance(value, str):
        value = [value]
    if not isinstance(value, list) or not value:
        raise ConfigError(path, "expected a name or a nonempty list of names")
    for name in value:
        if name not in valid:
            raise ConfigError(path, f"unknown value {name!r}; valid: {', '.join(valid)}")
    return tuple(value)


def _build(cls, raw: Any, path: str, casts: Mapping[str, type]):
    raw = _typed(raw if raw is not None else {}, dict, path.rstrip("."))
    unknown = set(raw) - set(casts)
    if unknown:
        raise ConfigError(f"{path}{sorted(unknown)[0]}", "unknown field")
    kwargs = {}
    for key, kind in casts.items():
        if key in raw:
            if kind is tuple:
                value = _typed(raw[key], list, f"{path}{key}")
                kwargs[key] = tuple(_typed(v, int, f"{path}{key}[]") for v in value)
            else:
                kwargs[key] = _typed(raw[key], kind, f"{path}{key}")
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(path.rstrip("."), str(exc)) from exc


_NET_FIELDS = {
    "half_window": int,
    "hidden_dims": tuple,
    "learning_rate": float,
    "batch_size": int,
    "epochs": int,
    "dropout": float,
    "momentum": float,
    "momentum_final": float,
    "momentum_switch_epoch": int,
}

_SYNTH_FIELDS = {
    "n_speakers": int,
    "utts_per_speaker": int,
    "frames_per_utt": int,
    "feature_dim": int,
    "speaker_spread": float,
    "channel_spread": float,
    "frame_noise": float,
    "seed": int,
}


def config_from_dict(raw: Mapping[str, Any]) -> ExperimentConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("<root>", "configuration must be a JSON object")
    known = {
        "front_end", "back_end", "conditions", "n_runs", "seed", "seg_len",
        "synth", "dev_index", "eval_index", "gmm", "ivector", "dvector", "posterior",
        "backend", "dcf08", "dcf10",
    }
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")

    front_ends = _names(_require(raw, "front_end", ""), FRONT_ENDS, "front_end")
    back_ends = _names(_require(raw, "back_end", ""), BACK_ENDS, "back_end")

    conditions = []
    raw_conditions = raw.get("conditions")
    if raw_conditions is None:
        conditions = [Condition(name, segs) for name, segs in DEFAULT_CONDITIONS]
    else:
        raw_conditions = _typed(raw_conditions, list, "conditions")
        if not raw_conditions:
            raise ConfigError("conditions", "must list at least one test condition")
        for k, item in enumerate(raw_conditions):
            item = _typed(item, dict, f"conditions[{k}]")
            name = _typed(_require(item, "name", f"conditions[{k}]."), str, f"conditions[{k}].name")
            segs = _typed(_require(item, "enroll_segments", f"conditions[{k}]."), int,
                          f"conditions[{k}].enroll_segments")
            n_test = _typed(item.get("test_segments", 2), int, f"conditions[{k}].test_segments")
            if segs < 1 or n_test < 1:
                raise ConfigError(f"conditions[{k}]", "segment counts must be >= 1")
            conditions.append(Condition(name, segs, n_test))

    synth = None
    if raw.get("synth") is not None:
        synth = _build(SynthSpec, raw["synth"], "synth.", _SYNTH_FIELDS)
    dev_index = raw.get("dev_index")
    eval_index = raw.get("eval_index")
    if synth is None and (dev_index is None or eval_index is None):
        raise ConfigError("synth", "either synth or both dev_index and eval_index are required")
    if synth is not None and (dev_index is not None or eval_index is not None):
        raise ConfigError("synth", "synth and corpus paths are mutually exclusive")

    n_runs = _typed(raw.get("n_runs", 100), int, "n_runs")
    if n_runs < 1:
        raise ConfigError("n_runs", "must be >= 1")
    seed = _typed(raw.get("seed", 0), int, "seed")
    seg_len = _typed(raw.get("seg_len", 1500), int, "seg_len")
    if seg_len < 1:
        raise ConfigError("seg_len", "must be >= 1")

    gmm = _build(GmmSettings, raw.get("gmm"), "gmm.", {"n_components": int, "em_iters": int})
    ivector = _build(IvectorSettings, raw.get("ivector"), "ivector.",
                     {"total_factors": int, "em_iters": int, "reestimate_sigma": bool})
    dvector_net = _build(NetSettings, raw.get("dvector"), "dvector.", _NET_FIELDS)

    raw_post = _typed(raw.get("posterior") or {}, dict, "posterior")
    unknown_post = set(raw_post) - {"source", "posterior_dir", "truncate_to", "net"}
    if unknown_post:
        raise ConfigError(f"posterior.{sorted(unknown_post)[0]}", "unknown field")
    source = _typed(raw_post.get("source", "dvector"), str, "posterior.source")
    if source not in POSTERIOR_SOURCES:
        raise ConfigError("posterior.source",
                          f"unknown value {source!r}; valid: {', '.join(POSTERIOR_SOURCES)}")
    posterior_dir = raw_post.get("posterior_dir")
    if source == "files" and posterior_dir is None:
        raise ConfigError("posterior.posterior_dir", "required when posterior.source is 'files'")
    truncate_to = raw_post.get("truncate_to", 3096)
    if truncate_to is not None:
        truncate_to = _typed(truncate_to, int, "posterior.truncate_to")
        if truncate_to < 1:
            raise ConfigError("posterior.truncate_to", "must be >= 1 or null")
    if "net" in raw_post:
        post_net = _build(NetSettings, raw_post["net"], "posterior.net.", _NET_FIELDS)
    else:
        post_net = POSTERIOR_NET_DEFAULTS
    posterior = PosteriorSettings(source, posterior_dir, truncate_to, post_net)

    raw_backend = _typed(raw.get("backend") or {}, dict, "backend")
    unknown_be = set(raw_backend) - {"ridge", "center", "lda_dim", "plda_latent_dim", "plda_iters"}
    if unknown_be:
        raise ConfigError(f"backend.{sorted(unknown_be)[0]}", "unknown field")
    ridge = raw_backend.get("ridge")
    if ridge is not None:
        ridge = _typed(ridge, float, "backend.ridge")
        if ridge < 0:
            raise ConfigError("backend.ridge", "must be >= 0 or null")
    lda_dim = _typed(raw_backend.get("lda_dim", 200), int, "backend.lda_dim")
    if lda_dim < 1:
        raise ConfigError("backend.lda_dim", "must be >= 1")
    plda_latent = raw_backend.get("plda_latent_dim")
    if plda_latent is not None:
        plda_latent = _typed(plda_latent, int, "backend.plda_latent_dim")
        if plda_latent < 1:
            raise ConfigError("backend.plda_latent_dim", "must be >= 1 or null")
    plda_iters = _typed(raw_backend.get("plda_iters", 20), int, "backend.plda_iters")
    backend = BackendSettings(
        ridge=ridge,
        center=_typed(raw_backend.get("center", False), bool, "backend.center"),
        lda_dim=lda_dim,
        plda_latent_dim=plda_latent,
        plda_iters=plda_iters,
    )

    dcf_fields = {"c_miss": float, "c_fa": float, "p_target": float,
                  "normalize": bool, "report_scale": float}
    dcf08 = DCF08
    if "dcf08" in raw:
        dcf08 = _build(DcfParams, {**asdict(DCF08), **_typed(raw["dcf08"], dict, "dcf08")},
                       "dcf08.", dcf_fields)
    dcf10 = DCF10
    if "dcf10" in raw:
        dcf10 = _build(DcfParams, {**asdict(DCF10), **_typed(raw["dcf10"], dict, "dcf10")},
                       "dcf10.", dcf_fields)

    return ExperimentConfig(
        front_ends=front_ends,
        back_ends=back_ends,
        conditions=tuple(conditions),
        n_runs=n_runs,
        seed=seed,
        seg_len=seg_len,
        synth=synth,
        dev_index=dev_index,
        eval_index=eval_index,
        gmm=gmm,
        ivector=ivector,
        dvector_net=dvector_net,
        posterior=posterior,
        backend=backend,
        dcf08=dcf08,
        dcf10=dcf10,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"not valid JSON: {exc}") from exc
    return config_from_dict(raw)
