from pathlib import Path

from oneshot.conf import oneshot_settings
from oneshot.experiments import (csv_row, format_table, freeze_wall_time, load_benchmark, render_csv,
                                 report_json, run_evaluation, store_report)
from oneshot.management.base import ExperimentCommand


class Command(ExperimentCommand):
    """
    Evaluate a model on one-shot episodes and report mean accuracy +- 95% CI.

    Prints a table, writes the CSV row to ``--out`` and the full report
    (including the resolved config) to the same path with a ``.json`` suffix,
    and stores an EvalRecord.

    Usage:
        python manage.py eval --model dtw-pixels --task cross-modal --episodes 400 --seeds 10
        python manage.py eval --model siamese-online --checkpoints runs/ --task speaker-invariance
    """

    help = "Run episodic one-shot evaluation and emit a table, CSV and JSON report."

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument("--out", help="CSV path (default: $ONESHOT_RUNS_DIR/reports/<task>-<model>.csv).")
        parser.add_argument("--freeze-time", action="store_true",
                            help="Write wall_time_s as 0 so repeated runs produce identical files.")
        parser.add_argument("--no-store", action="store_true", help="Do not store an EvalRecord.")

    def run(self, **options):
        cfg = self.resolve_config(options)
        _, splits = load_benchmark(cfg)
        report = run_evaluation(cfg, splits)
        if options.get("freeze_time"):
            report = freeze_wall_time(report)

        out = Path(options.get("out") or Path(oneshot_settings.RUNS_DIR) / "reports" / f"{cfg.task}-{cfg.model}.csv")
        out.parent.mkdir(parents=True, exist_ok=True)
        row = csv_row(report)
        out.write_text(render_csv([row]))
        out.with_suffix(".json").write_bytes(report_json(report))
        if not options.get("no_store"):
            store_report(report)

        self.stdout.write(format_table([row]))
        self.stdout.write(self.style.SUCCESS(f"Wrote {out}"))
