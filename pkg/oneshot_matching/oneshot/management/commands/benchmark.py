import dataclasses
from pathlib import Path

from django.core.management.base import CommandError

from oneshot.benchmark import BENCHMARK_SYNTHETIC, BENCHMARK_TRAINING, BenchmarkConfig, run_benchmark
from oneshot.conf import oneshot_settings
from oneshot.config import TRAINABLE_MODELS, load_config_file
from oneshot.experiments import format_table, render_csv, store_report
from oneshot.management.base import OneShotCommand
from oneshot.serializers import EvalReportSerializer, build_synthetic_config, render_json


class Command(OneShotCommand):
    """
    Calibrate a synthetic corpus, train every model and compare them on every task.

    Writes one CSV row per (model, task) to ``--out`` and a JSON document with
    the calibrated corpus, the reports and the ordering checks next to it.

    Usage:
        python manage.py benchmark
        python manage.py benchmark --models siamese-online --seeds 1 --strict
    """

    help = "Run the calibrated synthetic benchmark and check the expected model orderings."

    def add_arguments(self, parser):
        parser.add_argument("--config", help="TOML file; [synthetic] reshapes the corpus, "
                                             "[training] overrides the training settings.")
        parser.add_argument("--models", nargs="+", choices=TRAINABLE_MODELS)
        parser.add_argument("--seeds", type=int)
        parser.add_argument("--episodes", type=int)
        parser.add_argument("--queries", type=int)
        parser.add_argument("--epochs", type=int)
        parser.add_argument("--calibration-episodes", type=int)
        parser.add_argument("--stage-accuracy", type=float,
                            help="Direct-matching accuracy each modality is calibrated to.")
        parser.add_argument("--speaker-ratio", type=float, help="Speaker offset as a multiple of the speech noise.")
        parser.add_argument("--workers", type=int)
        parser.add_argument("--out", help="CSV path (default: $ONESHOT_RUNS_DIR/reports/benchmark.csv).")
        parser.add_argument("--store", action="store_true", help="Store every report as an EvalRecord.")
        parser.add_argument("--strict", action="store_true", help="Exit with status 1 when a check fails.")

    def resolve(self, options) -> BenchmarkConfig:
        flat = load_config_file(options["config"]) if options.get("config") else {}
        synthetic = build_synthetic_config({**dataclasses.asdict(BENCHMARK_SYNTHETIC), **flat.pop("synthetic", {})})
        training = {**BENCHMARK_TRAINING, **flat}
        if options.get("epochs") is not None:
            training["epochs"] = options["epochs"]
        fields = {"synthetic": synthetic, "training": training}
        for name in ("seeds", "episodes", "queries", "calibration_episodes", "stage_accuracy",
                     "speaker_ratio", "workers"):
            if options.get(name) is not None:
                fields[name] = options[name]
        if options.get("models"):
            fields["models"] = tuple(options["models"])
        return BenchmarkConfig(**fields)

    def run(self, **options):
        cfg = self.resolve(options)
        result = run_benchmark(cfg)

        out = Path(options.get("out") or Path(oneshot_settings.RUNS_DIR) / "reports" / "benchmark.csv")
        out.parent.mkdir(parents=True, exist_ok=True)
        rows = result.rows()
        out.write_text(render_csv(rows))
        checks = result.checks()
        out.with_suffix(".json").write_bytes(render_json({
            "synthetic": dataclasses.asdict(result.synthetic),
            "reports": [EvalReportSerializer(report).data for report in result.reports.values()],
            "checks": [dataclasses.asdict(check) for check in checks],
            "wall_time_s": result.wall_time_s,
        }))
        if options.get("store"):
            for report in result.reports.values():
                store_report(report)

        self.stdout.write(format_table(rows))
        self.stdout.write(f"Calibrated noise: sigma={result.synthetic.noise:.4f} "
                          f"tau={result.synthetic.speaker_offset:.4f} image_sigma={result.synthetic.image_sigma:.4f}")
        for check in checks:
            style = self.style.SUCCESS if check.passed else self.style.ERROR
            self.stdout.write(style(f"{'PASS' if check.passed else 'FAIL'} {check.name}: {check.detail}"))
        self.stdout.write(self.style.SUCCESS(f"Wrote {out}"))
        failed = [check.name for check in checks if not check.passed]
        if failed and options.get("strict"):
            raise CommandError(f"benchmark checks failed: {', '.join(failed)}", returncode=1)
