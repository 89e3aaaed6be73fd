import django_filters

from .models import EvalRecord


class EvalRecordFilter(django_filters.FilterSet):
    """
    Narrow stored evaluation records for the ``report`` command.

    Filters:
        - task, model: Exact match.
        - ways, shots: Exact match.
        - min_accuracy: Mean accuracy at least this value.
    """
    task = django_filters.CharFilter(field_name="task")
    model = django_filters.CharFilter(field_name="model")
    ways = django_filters.NumberFilter(field_name="ways")
    shots = django_filters.NumberFilter(field_name="shots")
    min_accuracy = django_filters.NumberFilter(field_name="mean_accuracy", lookup_expr="gte")

    class Meta:
        model = EvalRecord
        fields = ["task", "model", "ways", "shots"]
