import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from oneshot.conf import oneshot_settings
from oneshot.config import AGGREGATIONS, MODELS, TASKS, ExperimentConfig, load_config_file, merge_overrides
from oneshot.exceptions import OneShotError
from oneshot.serializers import build_experiment_config

logger = logging.getLogger(__name__)

# flag dest -> ExperimentConfig field
EXPERIMENT_FLAGS = (
    "task", "model", "ways", "shots", "matching_size", "episodes", "queries", "seeds", "seed_offset",
    "margin", "p", "k", "lr", "decay", "epochs", "batch_size", "patience", "steps_per_epoch",
    "validation_episodes", "exhaustive", "preset", "aggregation", "metric", "normalize_embeddings",
    "dtw_local_distance", "dtw_normalize", "speaker_disjoint", "untrained", "workers", "manifest",
    "checkpoint_dir",
)
# flag dest -> SyntheticConfig field
SYNTHETIC_FLAGS = {
    "sigma": "noise",
    "tau": "speaker_offset",
    "synth_seed": "seed",
    "background_classes": "background_classes",
    "oneshot_classes": "oneshot_classes",
    "speakers": "speakers",
    "frames": "frames",
    "feature_dim": "feature_dim",
    "length_jitter": "length_jitter",
    "image_noise": "image_noise",
    "prototype_scale": "prototype_scale",
    "signal_rank": "signal_rank",
    "speaker_rank": "speaker_rank",
}


def add_synthetic_arguments(parser, seed_flag: str = "--synth-seed") -> None:
    group = parser.add_argument_group("synthetic data")
    group.add_argument("--sigma", type=float, help="Per-instance noise sigma.")
    group.add_argument("--tau", type=float, help="Per-speaker offset scale.")
    group.add_argument(seed_flag, dest="synth_seed", type=int, help="Seed of the synthetic corpus.")
    group.add_argument("--background-classes", type=int)
    group.add_argument("--oneshot-classes", type=int)
    group.add_argument("--speakers", type=int)
    group.add_argument("--frames", type=int)
    group.add_argument("--feature-dim", type=int)
    group.add_argument("--length-jitter", type=float)
    group.add_argument("--image-noise", type=float)
    group.add_argument("--prototype-scale", type=float)
    group.add_argument("--signal-rank", type=int, help="Shared patterns per prototype (0: independent elements).")
    group.add_argument("--speaker-rank", type=int, help="Feature axes speaker offsets vary along (0: all free axes).")


def synthetic_overrides(options) -> dict:
    return {field: options[flag] for flag, field in SYNTHETIC_FLAGS.items() if options.get(flag) is not None}


class OneShotCommand(BaseCommand):
    """
    Base for the oneshot subcommands.

    Subclasses implement ``run(**options)``. Library errors leave the command
    as CommandError carrying the error's exit code, so config, data-format,
    leakage and divergence failures are distinguishable from the shell.
    """

    def handle(self, *args, **options):
        try:
            return self.run(**options)
        except OneShotError as exc:
            logger.error(f"{self.__class__.__module__.rsplit('.', 1)[-1]} failed: {exc}")
            raise CommandError(str(exc), returncode=exc.exit_code)

    def run(self, **options):
        raise NotImplementedError


class ExperimentCommand(OneShotCommand):
    """Adds the experiment flags and resolves them, over an optional TOML file, into an ExperimentConfig."""

    def add_arguments(self, parser):
        parser.add_argument("--config", help="TOML config file; flags override its values.")
        parser.add_argument("--task", choices=TASKS)
        parser.add_argument("--model", choices=MODELS)
        parser.add_argument("--ways", type=int)
        parser.add_argument("--shots", type=int)
        parser.add_argument("--matching-size", type=int)
        parser.add_argument("--episodes", type=int)
        parser.add_argument("--queries", type=int)
        parser.add_argument("--seeds", type=int, help="Number of seeds (models trained or evaluated).")
        parser.add_argument("--seed-offset", type=int, help="First seed.")
        parser.add_argument("--margin", type=float)
        parser.add_argument("--p", type=int, help="Classes per Siamese batch.")
        parser.add_argument("--k", type=int, help="Items per class in a Siamese batch.")
        parser.add_argument("--lr", type=float)
        parser.add_argument("--decay", type=float)
        parser.add_argument("--epochs", type=int)
        parser.add_argument("--batch-size", type=int)
        parser.add_argument("--patience", type=int)
        parser.add_argument("--steps-per-epoch", type=int)
        parser.add_argument("--validation-episodes", type=int)
        parser.add_argument("--exhaustive", action="store_const", const=True)
        parser.add_argument("--preset", choices=("full", "small"))
        parser.add_argument("--aggregation", choices=AGGREGATIONS)
        parser.add_argument("--metric", choices=("cosine", "sqeuclidean"))
        parser.add_argument("--normalize-embeddings", action="store_const", const=True)
        parser.add_argument("--dtw-local-distance", choices=("cosine_distance", "squared_euclidean"))
        parser.add_argument("--no-dtw-normalize", dest="dtw_normalize", action="store_const", const=False)
        parser.add_argument("--shared-speakers", dest="speaker_disjoint", action="store_const", const=False,
                            help="Allow query speakers in the support set.")
        parser.add_argument("--untrained", action="store_const", const=True,
                            help="Evaluate randomly initialized networks.")
        parser.add_argument("--workers", type=int)
        parser.add_argument("--manifest", help="Dataset manifest; defaults to $ONESHOT_DATA_DIR/manifest.json, "
                                               "else a synthetic corpus is generated in memory.")
        parser.add_argument("--checkpoints", dest="checkpoint_dir", help="Checkpoint directory.")
        add_synthetic_arguments(parser)

    def resolve_config(self, options) -> ExperimentConfig:
        base = load_config_file(options["config"]) if options.get("config") else {}
        overrides = {name: options.get(name) for name in EXPERIMENT_FLAGS}
        synthetic = synthetic_overrides(options)
        if synthetic:
            overrides["synthetic"] = synthetic
        merged = merge_overrides(base, overrides)
        if not merged.get("manifest") and not merged.get("synthetic"):
            default_manifest = Path(oneshot_settings.DATA_DIR) / "manifest.json"
            if default_manifest.exists():
                merged["manifest"] = str(default_manifest)
        cfg = build_experiment_config(merged)
        source = cfg.manifest or "synthetic corpus"
        logger.info(f"Resolved config: task={cfg.task} model={cfg.model} ways={cfg.ways} shots={cfg.shots} "
                    f"seeds={cfg.seed_list} data={source}")
        return cfg
