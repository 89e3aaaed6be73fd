from pathlib import Path

from oneshot.config import MODELS, TASKS
from oneshot.exceptions import ConfigError
from oneshot.experiments import format_table, record_row, render_csv
from oneshot.filters import EvalRecordFilter
from oneshot.management.base import OneShotCommand
from oneshot.models import EvalRecord


class Command(OneShotCommand):
    """
    List stored evaluation records as a table, optionally as CSV.

    Usage:
        python manage.py report --task cross-modal --shots 1 --out results.csv
    """

    help = "List stored evaluation results, filtered by task, model, ways and shots."

    def add_arguments(self, parser):
        parser.add_argument("--task", choices=TASKS)
        parser.add_argument("--model", choices=MODELS)
        parser.add_argument("--ways", type=int)
        parser.add_argument("--shots", type=int)
        parser.add_argument("--min-accuracy", type=float)
        parser.add_argument("--out", help="Also write the rows as CSV to this path.")

    def run(self, **options):
        params = {name: options[name] for name in ("task", "model", "ways", "shots", "min_accuracy")
                  if options.get(name) is not None}
        filterset = EvalRecordFilter(params, queryset=EvalRecord.objects.all())
        if not filterset.is_valid():
            raise ConfigError(f"invalid report filters: {dict(filterset.errors)}")
        rows = [record_row(record) for record in filterset.qs]
        if not rows:
            self.stdout.write("No evaluation records match.")
            return
        self.stdout.write(format_table(rows))
        if options.get("out"):
            out = Path(options["out"])
            out.parent.mkdir(parents=True, exist_ok=True)
            out.write_text(render_csv(rows))
            self.stdout.write(self.style.SUCCESS(f"Wrote {len(rows)} row(s) to {out}"))
