from django.db import models


class TrainingRun(models.Model):
    """
    One trained network (per model, modality and seed).

    Fields:
        - model (CharField): Model family, e.g. 'siamese-online'.
        - modality (CharField): 'speech' or 'vision'.
        - seed (IntegerField): Initialization and sampling seed.
        - checkpoint_path (CharField): Where the parameters were saved.
        - log_path (CharField): Line-delimited training log.
        - spec_digest (CharField): Hex digest of the network spec the checkpoint is bound to.
        - epochs_completed (IntegerField): Epochs run before stopping.
        - best_epoch (IntegerField): Epoch whose parameters were kept.
        - best_val_accuracy (FloatField): One-shot validation accuracy of that epoch, if validated.
        - final_loss (FloatField): Mean training loss of the last epoch.
        - config (JSONField): Resolved experiment config (margin, p, k, lr, ...).
        - created_at (DateTimeField): Timestamp of the run.

    Methods:
        - __str__(): Returns the model, modality and seed.
    """
    MODALITIES = (
        ("speech", "Speech"),
        ("vision", "Vision"),
    )

    model = models.CharField(max_length=32)
    modality = models.CharField(max_length=8, choices=MODALITIES)
    seed = models.IntegerField()
    checkpoint_path = models.CharField(max_length=500)
    log_path = models.CharField(max_length=500, blank=True, default="")
    spec_digest = models.CharField(max_length=64)
    epochs_completed = models.IntegerField(default=0)
    best_epoch = models.IntegerField(default=0)
    best_val_accuracy = models.FloatField(blank=True, null=True)
    final_loss = models.FloatField(blank=True, null=True)
    config = models.JSONField(default=dict)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ["model", "modality", "seed", "-created_at"]

    def __str__(self):
        return f"{self.model} ({self.modality}, seed {self.seed})"


class EvalRecord(models.Model):
    """
    Stored result of one evaluation run, as listed by the ``report`` command.

    Fields:
        - task, model (CharField): What was evaluated.
        - ways, shots, matching_size, episodes, queries (IntegerField): Episode geometry.
        - seed_count (IntegerField): Number of seeds averaged.
        - per_seed_accuracies (JSONField): Accuracy of each seed, ascending seed order.
        - mean_accuracy, ci95_halfwidth (FloatField): Summary statistics.
        - wall_time_s (FloatField): Evaluation wall time.
        - config (JSONField): Resolved experiment config.
        - created_at (DateTimeField): Timestamp of the record.
    """
    task = models.CharField(max_length=32)
    model = models.CharField(max_length=32)
    ways = models.IntegerField()
    shots = models.IntegerField()
    matching_size = models.IntegerField(default=0)
    episodes = models.IntegerField()
    queries = models.IntegerField()
    seed_count = models.IntegerField(default=0)
    per_seed_accuracies = models.JSONField(default=list)
    mean_accuracy = models.FloatField()
    ci95_halfwidth = models.FloatField(default=0.0)
    wall_time_s = models.FloatField(default=0.0)
    config = models.JSONField(default=dict)
    created_at = models.DateTimeField(auto_now_add=True)

    class Meta:
        ordering = ["task", "model", "ways", "shots", "created_at"]

    def __str__(self):
        return f"{self.model} on {self.task} ({self.ways}-way {self.shots}-shot): {self.mean_accuracy:.4f}"
