"""Run configuration: one INI-style file drives every pipeline stage.

Format version 1. Sections and keys (all optional; defaults shown):

    [run]
    seed = 0

    [dataset]
    root =                      ; dataset directory (required for data commands)
    layout = synthetic          ; synthetic | unbc_like
    n_classes = 17
    n_subjects = 10             ; synthetic generation only
    frames_per_subject = 100
    image_size = 48
    class_mix = 0.7,0.2,0.1

    [preprocess]
    target_size = 224           ; square model input edge (canonical 224)
    channel_mean = 0.5,0.5,0.5
    channel_std = 0.5,0.5,0.5
    hflip_probability = 0.5
    detector = metadata         ; metadata | cascade_frontal_then_profile | centered_heuristic

    [model]
    name = resnet18             ; vgg16 | resnet18 | resnet34 | reduced_test_net
    width_multiplier = 1.0      ; model input_size is taken from preprocess.target_size

    [training]
    optimizer = adam
    learning_rate = 0.001
    max_epochs = 100
    batch_size = 256
    early_stop_patience = 20
    loss_weighting = eq2_weights

    [evaluation]
    k = 5
    n_train = 15
    n_val = 5
    n_test = 5
    report_path = reports/metrics.json
    plot_path = reports/comparison.svg

Seed precedence at runtime: CLI flag > PAINPIPE_SEED env var > [run] seed
> 0. The config digest covers the canonicalized file contents merged over
defaults; seed overrides change the printed resolved seed, never the
digest, so any two commands over the same file print the same digest.
"""

from __future__ import annotations

import configparser
import hashlib
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from painpipe.models import ModelSpec
from painpipe.preprocess import PreprocessConfig
from painpipe.synth import SynthConfig
from painpipe.training import TrainingConfig

CONFIG_FORMAT_VERSION = 1
SEED_ENV_VAR = "PAINPIPE_SEED"


class ConfigError(ValueError):
    """Invalid run configuration; the message names section.field."""


@dataclass(frozen=True)
class DatasetSection:
    root: Optional[Path] = None
    layout: str = "synthetic"
    n_classes: int = 17
    n_subjects: int = 10
    frames_per_subject: int = 100
    image_size: int = 48
    class_mix: tuple[float, ...] = (0.7, 0.2, 0.1)


@dataclass(frozen=True)
class EvaluationSection:
    k: int = 5
    n_train: int = 15
    n_val: int = 5
    n_test: int = 5
    report_path: Path = Path("reports/metrics.json")
    plot_path: Path = Path("reports/comparison.svg")


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    dataset: DatasetSection = field(default_factory=DatasetSection)
    preprocess: PreprocessConfig = field(default_factory=PreprocessConfig)
    model_name: str = "resnet18"
    width_multiplier: float = 1.0
    training: TrainingConfig = field(default_factory=TrainingConfig)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)

    def model_spec(self) -> ModelSpec:
        return ModelSpec(
            name=self.model_name,
            n_classes=self.dataset.n_classes,
            input_size=self.preprocess.target_size,
            width_multiplier=self.width_multiplier,
        )

    def synth_config(self, seed: Optional[int] = None) -> SynthConfig:
        return SynthConfig(
            n_subjects=self.dataset.n_subjects,
            frames_per_subject=self.dataset.frames_per_subject,
            image_size=self.dataset.image_size,
            class_mix=self.dataset.class_mix,
            seed=self.seed if seed is None else seed,
        )


def _parse_floats(text: str, where: str, count: Optional[int] = None) -> tuple[float, ...]:
    try:
        values = tuple(float(v.strip()) for v in text.split(",") if v.strip())
    except ValueError:
        raise ConfigError(f"{where}: expected comma-separated numbers, got {text!r}") from None
    if count is not None and len(values) != count:
        raise ConfigError(f"{where}: expected {count} comma-separated numbers, got {len(values)}")
    return values


def _get(parser: configparser.ConfigParser, section: str, key: str, cast, default, where: str):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key).strip()
    if raw == "":
        return default
    try:
        return cast(raw)
    except (ValueError, TypeError):
        raise ConfigError(f"{where}: cannot parse value {raw!r}") from None


def load_run_config(path: Optional[Path | str] = None) -> RunConfig:
    """Parse and validate a config file; with no path, return the defaults.

    Field-level problems raise ConfigError naming section.field.
    """
    parser = configparser.ConfigParser()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file {path} does not exist")
        parser.read(path)

    known = {"run", "dataset", "preprocess", "model", "training", "evaluation"}
    unknown = set(parser.sections()) - known
    if unknown:
        raise ConfigError(f"unknown config section(s): {sorted(unknown)}")

    seed = _get(parser, "run", "seed", int, 0, "run.seed")

    root_raw = _get(parser, "dataset", "root", str, None, "dataset.root")
    dataset = DatasetSection(
        root=Path(root_raw) if root_raw else None,
        layout=_get(parser, "dataset", "layout", str, "synthetic", "dataset.layout"),
        n_classes=_get(parser, "dataset", "n_classes", int, 17, "dataset.n_classes"),
        n_subjects=_get(parser, "dataset", "n_subjects", int, 10, "dataset.n_subjects"),
        frames_per_subject=_get(parser, "dataset", "frames_per_subject", int, 100, "dataset.frames_per_subject"),
        image_size=_get(parser, "dataset", "image_size", int, 48, "dataset.image_size"),
        class_mix=_get(
            parser, "dataset", "class_mix", lambda t: _parse_floats(t, "dataset.class_mix"), (0.7, 0.2, 0.1), "dataset.class_mix"
        ),
    )
    if dataset.layout not in ("synthetic", "unbc_like"):
        raise ConfigError(f"dataset.layout: must be 'synthetic' or 'unbc_like', got {dataset.layout!r}")
    if dataset.n_classes < 2:
        raise ConfigError(f"dataset.n_classes: must be >= 2, got {dataset.n_classes}")

    try:
        preprocess = PreprocessConfig(
            target_size=_get(parser, "preprocess", "target_size", int, 224, "preprocess.target_size"),
            channel_mean=_get(
                parser, "preprocess", "channel_mean",
                lambda t: _parse_floats(t, "preprocess.channel_mean", 3), (0.5, 0.5, 0.5), "preprocess.channel_mean",
            ),
            channel_std=_get(
                parser, "preprocess", "channel_std",
                lambda t: _parse_floats(t, "preprocess.channel_std", 3), (0.5, 0.5, 0.5), "preprocess.channel_std",
            ),
            hflip_probability=_get(parser, "preprocess", "hflip_probability", float, 0.5, "preprocess.hflip_probability"),
            detector=_get(parser, "preprocess", "detector", str, "metadata", "preprocess.detector"),
        )
    except ValueError as exc:
        raise ConfigError(f"preprocess: {exc}") from None

    model_name = _get(parser, "model", "name", str, "resnet18", "model.name")
    width_multiplier = _get(parser, "model", "width_multiplier", float, 1.0, "model.width_multiplier")

    try:
        training = TrainingConfig(
            optimizer=_get(parser, "training", "optimizer", str, "adam", "training.optimizer"),
            learning_rate=_get(parser, "training", "learning_rate", float, 0.001, "training.learning_rate"),
            max_epochs=_get(parser, "training", "max_epochs", int, 100, "training.max_epochs"),
            batch_size=_get(parser, "training", "batch_size", int, 256, "training.batch_size"),
            early_stop_patience=_get(parser, "training", "early_stop_patience", int, 20, "training.early_stop_patience"),
            seed=seed,
            loss_weighting=_get(parser, "training", "loss_weighting", str, "eq2_weights", "training.loss_weighting"),
        )
    except ValueError as exc:
        text = str(exc)
        for key in ("optimizer", "learning_rate", "max_epochs", "batch_size", "early_stop_patience", "loss_weighting"):
            if key in text:
                raise ConfigError(f"training.{key}: {text}") from None
        raise ConfigError(f"training: {text}") from None

    evaluation = EvaluationSection(
        k=_get(parser, "evaluation", "k", int, 5, "evaluation.k"),
        n_train=_get(parser, "evaluation", "n_train", int, 15, "evaluation.n_train"),
        n_val=_get(parser, "evaluation", "n_val", int, 5, "evaluation.n_val"),
        n_test=_get(parser, "evaluation", "n_test", int, 5, "evaluation.n_test"),
        report_path=Path(_get(parser, "evaluation", "report_path", str, "reports/metrics.json", "evaluation.report_path")),
        plot_path=Path(_get(parser, "evaluation", "plot_path", str, "reports/comparison.svg", "evaluation.plot_path")),
    )
    for key in ("k", "n_train", "n_val", "n_test"):
        if getattr(evaluation, key) < 1:
            raise ConfigError(f"evaluation.{key}: must be >= 1, got {getattr(evaluation, key)}")

    config = RunConfig(
        seed=seed,
        dataset=dataset,
        preprocess=preprocess,
        model_name=model_name,
        width_multiplier=width_multiplier,
        training=training,
        evaluation=evaluation,
    )
    try:
        config.model_spec()  # validates model.name / width_multiplier / input size
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from None
    return config


def canonical_serialization(config: RunConfig) -> str:
    """Stable line-per-field rendering used for the digest."""
    lines = [f"format_version={CONFIG_FORMAT_VERSION}", f"run.seed={config.seed}"]
    ds = config.dataset
    lines += [
        f"dataset.root={ds.root if ds.root else ''}",
        f"dataset.layout={ds.layout}",
        f"dataset.n_classes={ds.n_classes}",
        f"dataset.n_subjects={ds.n_subjects}",
        f"dataset.frames_per_subject={ds.frames_per_subject}",
        f"dataset.image_size={ds.image_size}",
        "dataset.class_mix=" + ",".join(repr(v) for v in ds.class_mix),
    ]
    pp = config.preprocess
    lines += [
        f"preprocess.target_size={pp.target_size}",
        "preprocess.channel_mean=" + ",".join(repr(v) for v in pp.channel_mean),
        "preprocess.channel_std=" + ",".join(repr(v) for v in pp.channel_std),
        f"preprocess.hflip_probability={pp.hflip_probability!r}",
        f"preprocess.detector={pp.detector}",
    ]
    lines += [f"model.name={config.model_name}", f"model.width_multiplier={config.width_multiplier!r}"]
    tr = config.training
    lines += [
        f"training.optimizer={tr.optimizer}",
        f"training.learning_rate={tr.learning_rate!r}",
        f"training.max_epochs={tr.max_epochs}",
        f"training.batch_size={tr.batch_size}",
        f"training.early_stop_patience={tr.early_stop_patience}",
        f"training.loss_weighting={tr.loss_weighting}",
    ]
    ev = config.evaluation
    lines += [
        f"evaluation.k={ev.k}",
        f"evaluation.n_train={ev.n_train}",
        f"evaluation.n_val={ev.n_val}",
        f"evaluation.n_test={ev.n_test}",
        f"evaluation.report_path={ev.report_path}",
        f"evaluation.plot_path={ev.plot_path}",
    ]
    return "\n".join(lines) + "\n"


def config_digest(config: RunConfig) -> str:
    return hashlib.sha256(canonical_serialization(config).encode()).hexdigest()[:16]


def resolve_seed(cli_seed: Optional[int], config: RunConfig) -> int:
    """CLI flag > PAINPIPE_SEED env var > config > 0."""
    if cli_seed is not None:
        return cli_seed
    env = os.environ.get(SEED_ENV_VAR)
    if env is not None and env.strip() != "":
        try:
            return int(env)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env!r}") from None
    return config.seed
