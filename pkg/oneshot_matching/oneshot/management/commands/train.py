from pathlib import Path

from oneshot.conf import oneshot_settings
from oneshot.experiments import load_benchmark, run_training
from oneshot.management.base import ExperimentCommand
from oneshot.serializers import render_json


class Command(ExperimentCommand):
    """
    Train one network per modality the task needs, for each seed.

    Saves ``<model>-<modality>-seed<N>.ckpt`` plus a line-delimited training
    log next to it, writes the resolved config to ``config.json`` and stores
    a TrainingRun row per network.

    Usage:
        python manage.py train --model siamese-online --task cross-modal --p 20 --k 8 --out runs/
    """

    help = "Train classifier or Siamese embedding networks on background data."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--out", help="Checkpoint directory (default: $ONESHOT_RUNS_DIR).")

    def run(self, **options):
        cfg = self.resolve_config(options)
        out_dir = Path(options.get("out") or cfg.checkpoint_dir or oneshot_settings.RUNS_DIR)
        out_dir.mkdir(parents=True, exist_ok=True)
        _, splits = load_benchmark(cfg)
        runs = run_training(cfg, splits, out_dir)
        (out_dir / "config.json").write_bytes(render_json(cfg.as_dict()))
        for run in runs:
            accuracy = run["best_val_accuracy"]
            accuracy = "n/a" if accuracy is None else f"{accuracy:.4f}"
            self.stdout.write(f"{run['model']} {run['modality']} seed {run['seed']}: "
                              f"{run['epochs_completed']} epochs, best epoch {run['best_epoch']}, "
                              f"val accuracy {accuracy} -> {run['checkpoint_path']}")
        self.stdout.write(self.style.SUCCESS(f"Trained {len(runs)} network(s) into {out_dir}"))
