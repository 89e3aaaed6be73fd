import logging
from typing import Type

from django.db.models import Model
from django.db.models.signals import post_save
from django.dispatch import receiver

from .models import EvalRecord, TrainingRun

logger = logging.getLogger(__name__)


@receiver(post_save, sender=TrainingRun)
def log_training_run(sender: Type[Model], instance: TrainingRun, created: bool, **kwargs) -> None:
    """
    Log a summary line when a new TrainingRun is stored.

    Args:
        sender (Type[Model]): The model class (TrainingRun).
        instance (TrainingRun): The saved run.
        created (bool): Whether this is a new row.
    """
    if created:
        accuracy = "n/a" if instance.best_val_accuracy is None else f"{instance.best_val_accuracy:.4f}"
        logger.info(
            f"Stored training run {instance.pk}: {instance} after {instance.epochs_completed} epochs, "
            f"best epoch {instance.best_epoch}, val accuracy {accuracy}, checkpoint {instance.checkpoint_path}"
        )


@receiver(post_save, sender=EvalRecord)
def log_eval_record(sender: Type[Model], instance: EvalRecord, created: bool, **kwargs) -> None:
    if created:
        logger.info(
            f"Stored eval record {instance.pk}: {instance} "
            f"+- {instance.ci95_halfwidth:.4f} over {instance.seed_count} seeds"
        )
