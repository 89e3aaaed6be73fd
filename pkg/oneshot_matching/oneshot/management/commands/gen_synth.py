from pathlib import Path

from oneshot.conf import oneshot_settings
from oneshot.config import load_config_file
from oneshot.exceptions import DataFormatError
from oneshot.management.base import OneShotCommand, add_synthetic_arguments, synthetic_overrides
from oneshot.serializers import build_synthetic_config
from oneshot.synthetic import generate_synthetic_pairs, write_corpus


class Command(OneShotCommand):
    """
    Generate a synthetic paired speech/image corpus.

    Writes FSA1 feature archives, IDX image and label files and a JSON
    manifest for the background-train, background-validation and
    one-shot-test splits. The same seed always writes byte-identical files.

    Usage:
        python manage.py gen_synth --out data/ --sigma 0.6 --tau 0.3 --seed 1
    """

    help = "Generate a synthetic paired speech/image corpus (FSA1 + IDX + manifest)."

    def add_arguments(self, parser):
        parser.add_argument("--config", help="TOML config file; its [synthetic] section is used.")
        parser.add_argument("--out", help="Output directory (default: $ONESHOT_DATA_DIR).")
        add_synthetic_arguments(parser, seed_flag="--seed")

    def run(self, **options):
        base = load_config_file(options["config"]).get("synthetic", {}) if options.get("config") else {}
        cfg = build_synthetic_config({**base, **synthetic_overrides(options)})
        out_dir = Path(options.get("out") or oneshot_settings.DATA_DIR)
        corpus = generate_synthetic_pairs(cfg)
        try:
            manifest_path = write_corpus(corpus, out_dir)
        except OSError as exc:
            raise DataFormatError(f"cannot write corpus to {out_dir}: {exc}")
        for name, dataset in corpus.splits.items():
            self.stdout.write(f"{name}: {len(dataset.audio)} utterances, {len(dataset.images)} images, "
                              f"{len(dataset.audio_classes)} classes")
        self.stdout.write(self.style.SUCCESS(f"Wrote manifest {manifest_path}"))
