import io

from rest_framework import serializers
from rest_framework.exceptions import ParseError
from rest_framework.parsers import JSONParser
from rest_framework.renderers import JSONRenderer

from .conf import oneshot_settings
from .config import AGGREGATIONS, MODELS, TASKS, ExperimentConfig
from .data_model import ClassTable
from .datasets_io import DatasetManifest, SplitEntry
from .exceptions import ConfigError, DataFormatError
from .models import EvalRecord, TrainingRun
from .synthetic import SyntheticConfig


def render_json(data) -> bytes:
    """Render serializer output as one compact JSON document (no trailing newline)."""
    return JSONRenderer().render(data)


def parse_json(raw: bytes, source="<bytes>"):
    try:
        return JSONParser().parse(io.BytesIO(raw))
    except ParseError as exc:
        raise DataFormatError(f"{source}: invalid JSON: {exc.detail}")


class ClassTableSerializer(serializers.Serializer):
    """
    Class names and spoken-to-image aliases.

    JSON object keys are strings; ``create()`` turns them back into class ids.
    """
    names = serializers.DictField(child=serializers.CharField())
    aliases = serializers.DictField(child=serializers.IntegerField(), required=False, default=dict)

    def validate(self, attrs):
        try:
            attrs["names"] = {int(k): v for k, v in attrs["names"].items()}
            attrs["aliases"] = {int(k): v for k, v in attrs.get("aliases", {}).items()}
        except ValueError:
            raise serializers.ValidationError("class ids must be integers")
        return attrs

    def create(self, validated_data):
        return ClassTable(**validated_data)


class SplitEntrySerializer(serializers.Serializer):
    audio_path = serializers.CharField()
    images_path = serializers.CharField()
    labels_path = serializers.CharField()
    pairs = serializers.ListField(
        child=serializers.ListField(child=serializers.IntegerField(min_value=0), min_length=2, max_length=2)
    )
    audio_classes = serializers.ListField(child=serializers.IntegerField())
    image_classes = serializers.ListField(child=serializers.IntegerField())
    speakers = serializers.ListField(child=serializers.IntegerField(), required=False, default=list)


class DatasetManifestSerializer(serializers.Serializer):
    """
    Structured manifest: splits with their files and pairing, class table,
    feature geometry and the generator config that produced the data.
    """
    splits = serializers.DictField(child=SplitEntrySerializer())
    class_table = ClassTableSerializer()
    frames = serializers.IntegerField(min_value=0)
    feature_dim = serializers.IntegerField(min_value=0)
    image_shape = serializers.ListField(child=serializers.IntegerField(min_value=1), min_length=2, max_length=2)
    pairing = serializers.CharField()
    seed = serializers.IntegerField(allow_null=True, required=False, default=None)
    generator = serializers.JSONField(required=False, default=dict)

    def create(self, validated_data):
        splits = {
            name: SplitEntry(
                audio_path=entry["audio_path"],
                images_path=entry["images_path"],
                labels_path=entry["labels_path"],
                pairs=tuple(tuple(pair) for pair in entry["pairs"]),
                audio_classes=tuple(entry["audio_classes"]),
                image_classes=tuple(entry["image_classes"]),
                speakers=tuple(entry.get("speakers", ())),
            )
            for name, entry in validated_data.pop("splits").items()
        }
        class_table = ClassTable(**validated_data.pop("class_table"))
        validated_data["image_shape"] = tuple(validated_data["image_shape"])
        return DatasetManifest(splits=splits, class_table=class_table, **validated_data)


class SyntheticConfigSerializer(serializers.Serializer):
    background_classes = serializers.IntegerField(min_value=0, default=20)
    oneshot_classes = serializers.IntegerField(min_value=2, default=11)
    speakers = serializers.IntegerField(min_value=1, default=12)
    utterances_per_speaker = serializers.IntegerField(min_value=1, default=2)
    validation_utterances = serializers.IntegerField(min_value=1, default=1)
    feature_dim = serializers.IntegerField(min_value=1, default=13)
    frames = serializers.IntegerField(min_value=1, default=40)
    length_jitter = serializers.FloatField(min_value=0.0, max_value=0.99, default=0.15)
    image_height = serializers.IntegerField(min_value=1, default=28)
    image_width = serializers.IntegerField(min_value=1, default=28)
    prototype_scale = serializers.FloatField(min_value=0.0, default=1.0)
    noise = serializers.FloatField(min_value=0.0, default=0.6)
    speaker_offset = serializers.FloatField(min_value=0.0, default=0.3)
    image_noise = serializers.FloatField(min_value=0.0, allow_null=True, default=None)
    signal_rank = serializers.IntegerField(min_value=0, default=0)
    speaker_rank = serializers.IntegerField(min_value=0, default=0)
    alias_last = serializers.BooleanField(default=True)
    seed = serializers.IntegerField(min_value=0, default=0)

    def validate(self, attrs):
        if attrs["background_classes"] + attrs["oneshot_classes"] > 256:
            raise serializers.ValidationError("class ids must fit the one-byte IDX label range.")
        return attrs

    def create(self, validated_data):
        return SyntheticConfig(**validated_data)


class ExperimentConfigSerializer(serializers.Serializer):
    """
    Validates a merged (file + flags) experiment config.

    Validation Rules:
        - All counts are positive; the margin is non-negative.
        - Speaker-invariance episodes are one-shot (shots == 1).
        - Siamese models need p >= 2 classes and k >= 2 items per batch.
        - ``epochs`` is capped at the configured maximum.

    Methods:
        - create(): Returns a frozen ExperimentConfig; unset p and k take the
          configured defaults for the chosen Siamese variant.
    """
    task = serializers.ChoiceField(choices=TASKS, default="cross-modal")
    model = serializers.ChoiceField(choices=MODELS, default="dtw-pixels")
    ways = serializers.IntegerField(min_value=2, default=lambda: oneshot_settings.WAYS)
    shots = serializers.IntegerField(min_value=1, default=lambda: oneshot_settings.SHOTS)
    matching_size = serializers.IntegerField(min_value=1, default=lambda: oneshot_settings.MATCHING_SIZE)
    episodes = serializers.IntegerField(min_value=1, default=lambda: oneshot_settings.EPISODES)
    queries = serializers.IntegerField(min_value=1, default=lambda: oneshot_settings.QUERIES)
    seeds = serializers.IntegerField(min_value=1, default=lambda: oneshot_settings.SEEDS)
    seed_offset = serializers.IntegerField(min_value=0, default=0)
    margin = serializers.FloatField(min_value=0.0, default=lambda: oneshot_settings.MARGIN)
    p = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)
    k = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)
    lr = serializers.FloatField(min_value=0.0, default=lambda: oneshot_settings.LEARNING_RATE)
    decay = serializers.FloatField(min_value=0.0, max_value=1.0, default=lambda: oneshot_settings.LR_DECAY)
    epochs = serializers.IntegerField(min_value=1, default=lambda: oneshot_settings.MAX_EPOCHS)
    batch_size = serializers.IntegerField(min_value=1, default=lambda: oneshot_settings.BATCH_SIZE)
    patience = serializers.IntegerField(min_value=1, default=lambda: oneshot_settings.PATIENCE)
    steps_per_epoch = serializers.IntegerField(min_value=0, default=0)
    validation_episodes = serializers.IntegerField(min_value=0, default=lambda: oneshot_settings.VALIDATION_EPISODES)
    exhaustive = serializers.BooleanField(default=False)
    preset = serializers.ChoiceField(choices=("full", "small"), default=lambda: oneshot_settings.PRESET)
    aggregation = serializers.ChoiceField(choices=AGGREGATIONS, default="nearest")
    metric = serializers.ChoiceField(choices=("cosine", "sqeuclidean"), allow_null=True, required=False, default=None)
    normalize_embeddings = serializers.BooleanField(default=False)
    dtw_local_distance = serializers.ChoiceField(choices=("cosine_distance", "squared_euclidean"),
                                                 default="cosine_distance")
    dtw_normalize = serializers.BooleanField(default=True)
    speaker_disjoint = serializers.BooleanField(default=True)
    untrained = serializers.BooleanField(default=False)
    workers = serializers.IntegerField(min_value=1, default=lambda: oneshot_settings.WORKERS)
    manifest = serializers.CharField(allow_null=True, required=False, default=None)
    checkpoint_dir = serializers.CharField(allow_null=True, required=False, default=None)
    synthetic = serializers.JSONField(required=False, default=dict)

    def validate(self, attrs):
        if attrs["task"] == "speaker-invariance" and attrs["shots"] != 1:
            raise serializers.ValidationError("Speaker-invariance episodes are one-shot (shots must be 1).")
        if attrs["model"].startswith("siamese"):
            offline = attrs["model"] == "siamese-offline"
            if attrs.get("p") is None:
                attrs["p"] = oneshot_settings.OFFLINE_P if offline else oneshot_settings.ONLINE_P
            if attrs.get("k") is None:
                attrs["k"] = oneshot_settings.OFFLINE_K if offline else oneshot_settings.ONLINE_K
            if attrs["p"] < 2 or attrs["k"] < 2:
                raise serializers.ValidationError("Siamese batches need p >= 2 classes and k >= 2 items per class.")
        attrs["p"] = attrs.get("p") or oneshot_settings.OFFLINE_P
        attrs["k"] = attrs.get("k") or oneshot_settings.OFFLINE_K
        attrs["epochs"] = min(attrs["epochs"], oneshot_settings.MAX_EPOCHS)
        return attrs

    def create(self, validated_data):
        return ExperimentConfig(**validated_data)


def build_experiment_config(data) -> ExperimentConfig:
    """Validate ``data`` into an ExperimentConfig, raising ConfigError on failure."""
    serializer = ExperimentConfigSerializer(data=data)
    if not serializer.is_valid():
        raise ConfigError(f"invalid experiment config: {serializer.errors}")
    return serializer.save()


def build_synthetic_config(data) -> SyntheticConfig:
    serializer = SyntheticConfigSerializer(data=data or {})
    if not serializer.is_valid():
        raise ConfigError(f"invalid synthetic config: {serializer.errors}")
    return serializer.save()


class EpochRecordSerializer(serializers.Serializer):
    """One line of a training log."""
    epoch = serializers.IntegerField(min_value=1)
    loss = serializers.FloatField()
    val_accuracy = serializers.FloatField(allow_null=True)
    lr = serializers.FloatField()


class EvalReportSerializer(serializers.Serializer):
    """
    Structured record of one evaluation: task descriptor, per-seed accuracies,
    mean and 95% confidence half-width, plus the resolved config.
    """
    task = serializers.CharField()
    model = serializers.CharField()
    ways = serializers.IntegerField()
    shots = serializers.IntegerField()
    matching_size = serializers.IntegerField()
    episodes = serializers.IntegerField()
    queries_per_episode = serializers.IntegerField()
    seeds = serializers.ListField(child=serializers.IntegerField())
    per_seed_accuracies = serializers.ListField(child=serializers.FloatField())
    mean_accuracy = serializers.FloatField(min_value=0.0, max_value=1.0)
    ci95_halfwidth = serializers.FloatField(min_value=0.0)
    trials = serializers.IntegerField()
    episode_policy = serializers.CharField()
    wall_time_s = serializers.FloatField()
    config = serializers.JSONField()


class TrainingRunSerializer(serializers.ModelSerializer):
    class Meta:
        model = TrainingRun
        fields = "__all__"
        read_only_fields = ["created_at"]


class EvalRecordSerializer(serializers.ModelSerializer):
    """
    Stored evaluation result.

    ``seed_count`` is derived from the per-seed accuracies on save.
    """
    class Meta:
        model = EvalRecord
        fields = "__all__"
        read_only_fields = ["created_at", "seed_count"]

    def create(self, validated_data):
        validated_data["seed_count"] = len(validated_data.get("per_seed_accuracies", []))
        return super().create(validated_data)
