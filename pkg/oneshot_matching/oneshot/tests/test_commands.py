import csv
import json
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command
from django.core.management.base import CommandError
from django.test import TestCase, override_settings

from oneshot.datasets_io import BACKGROUND_TRAIN, SPLITS
from oneshot.experiments import CSV_COLUMNS
from oneshot.models import EvalRecord, TrainingRun

TINY_SYNTHETIC = """
[synthetic]
background_classes = 6
oneshot_classes = 11
speakers = 4
utterances_per_speaker = 2
validation_utterances = 1
feature_dim = 4
frames = 12
image_height = 8
image_width = 8
"""

NOISELESS = TINY_SYNTHETIC + """
noise = 0.0
speaker_offset = 0.0
length_jitter = 0.0
image_noise = 0.0
seed = 1
"""


class CommandTestCase(TestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.dir = Path(self.tmp.name)
        settings = override_settings(ONESHOT={"DATA_DIR": str(self.dir / "data"), "RUNS_DIR": str(self.dir / "runs")})
        settings.enable()
        self.addCleanup(settings.disable)

    def config(self, text: str, name: str = "experiment.toml") -> str:
        path = self.dir / name
        path.write_text(text)
        return str(path)

    def call(self, *args) -> str:
        out = StringIO()
        call_command(*args, stdout=out)
        return out.getvalue()


class GenSynthCommandTestCase(CommandTestCase):
    def test_writes_every_split(self):
        output = self.call("gen_synth", "--config", self.config(TINY_SYNTHETIC), "--out", str(self.dir / "a"))
        for name in SPLITS:
            self.assertIn(name, output)
        manifest = json.loads((self.dir / "a" / "manifest.json").read_text())
        self.assertEqual(set(manifest["splits"]), set(SPLITS))

    def test_rerun_is_byte_identical(self):
        config = self.config(TINY_SYNTHETIC)
        self.call("gen_synth", "--config", config, "--out", str(self.dir / "a"), "--seed", "4")
        self.call("gen_synth", "--config", config, "--out", str(self.dir / "b"), "--seed", "4")
        for path in sorted((self.dir / "a").iterdir()):
            self.assertEqual(path.read_bytes(), (self.dir / "b" / path.name).read_bytes(), path.name)

    def test_flags_override_the_config_file(self):
        self.call("gen_synth", "--config", self.config(TINY_SYNTHETIC + "noise = 0.9\n"),
                  "--out", str(self.dir / "a"), "--sigma", "0.25", "--tau", "0.0")
        generator = json.loads((self.dir / "a" / "manifest.json").read_text())["generator"]
        self.assertEqual(generator["noise"], 0.25)
        self.assertEqual(generator["speaker_offset"], 0.0)
        self.assertEqual(generator["speakers"], 4)

    def test_defaults_to_the_data_dir(self):
        self.call("gen_synth", "--config", self.config(TINY_SYNTHETIC))
        self.assertTrue((self.dir / "data" / "manifest.json").exists())

    def test_invalid_generator_config(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("gen_synth", "--config", self.config(TINY_SYNTHETIC), "--sigma", "-1")
        self.assertEqual(ctx.exception.returncode, 2)


class EvalCommandTestCase(CommandTestCase):
    def eval_args(self, *extra):
        return ("eval", "--config", self.config(NOISELESS), "--model", "dtw-pixels",
                "--episodes", "4", "--seeds", "2", *extra)

    def test_noiseless_direct_matching(self):
        out = self.dir / "reports" / "noiseless.csv"
        output = self.call(*self.eval_args("--task", "cross-modal", "--out", str(out)))
        self.assertIn("100.00% +- 0.00", output)
        with out.open() as handle:
            rows = list(csv.DictReader(handle))
        self.assertEqual(tuple(rows[0]), CSV_COLUMNS)
        self.assertEqual(rows[0]["mean_accuracy"], "1.000000")
        self.assertEqual(rows[0]["seed_count"], "2")
        report = json.loads(out.with_suffix(".json").read_text())
        self.assertEqual(report["per_seed_accuracies"], [1.0, 1.0])
        self.assertEqual(report["trials"], 2 * 4 * 10)
        self.assertEqual(report["config"]["synthetic"]["speakers"], 4)
        record = EvalRecord.objects.get()
        self.assertEqual((record.task, record.model, record.seed_count), ("cross-modal", "dtw-pixels", 2))
        self.assertEqual(record.mean_accuracy, 1.0)

    def test_unimodal_tasks(self):
        for task in ("unimodal-speech", "unimodal-vision"):
            self.call(*self.eval_args("--task", task, "--out", str(self.dir / f"{task}.csv"), "--no-store"))
            report = json.loads((self.dir / f"{task}.json").read_text())
            self.assertEqual(report["mean_accuracy"], 1.0, task)
        self.assertFalse(EvalRecord.objects.exists())

    def test_speaker_invariance_task(self):
        self.call(*self.eval_args("--task", "speaker-invariance", "--out", str(self.dir / "si.csv")))
        report = json.loads((self.dir / "si.json").read_text())
        self.assertEqual(report["task"], "speaker-invariance")
        self.assertEqual(report["shots"], 1)
        self.assertGreater(report["trials"], 0)

    def test_frozen_time_reports_are_identical(self):
        first, second = self.dir / "first.csv", self.dir / "second.csv"
        self.call(*self.eval_args("--out", str(first), "--freeze-time", "--workers", "2", "--no-store"))
        self.call(*self.eval_args("--out", str(second), "--freeze-time", "--workers", "2", "--no-store"))
        self.assertEqual(first.read_bytes(), second.read_bytes())
        self.assertEqual(first.with_suffix(".json").read_bytes(), second.with_suffix(".json").read_bytes())

    def test_reads_a_written_manifest(self):
        data = self.dir / "corpus"
        self.call("gen_synth", "--config", self.config(NOISELESS, "synthetic.toml"), "--out", str(data))
        out = self.dir / "from-disk.csv"
        self.call("eval", "--manifest", str(data / "manifest.json"), "--model", "dtw-pixels",
                  "--episodes", "3", "--seeds", "1", "--out", str(out), "--no-store")
        self.assertEqual(json.loads(out.with_suffix(".json").read_text())["mean_accuracy"], 1.0)

    def test_trained_model_needs_checkpoints(self):
        with self.assertRaises(CommandError) as ctx:
            self.call(*self.eval_args("--model", "ffnn-classifier", "--out", str(self.dir / "x.csv")))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_untrained_networks_can_be_evaluated(self):
        out = self.dir / "untrained.csv"
        self.call(*self.eval_args("--model", "ffnn-classifier", "--untrained", "--task", "unimodal-vision",
                                  "--out", str(out), "--no-store"))
        accuracy = json.loads(out.with_suffix(".json").read_text())["mean_accuracy"]
        self.assertGreaterEqual(accuracy, 0.0)
        self.assertLessEqual(accuracy, 1.0)

    def test_leaking_manifest_is_refused(self):
        data = self.dir / "corpus"
        self.call("gen_synth", "--config", self.config(TINY_SYNTHETIC, "synthetic.toml"), "--out", str(data))
        path = data / "manifest.json"
        manifest = json.loads(path.read_text())
        manifest["splits"][BACKGROUND_TRAIN]["audio_classes"].append(0)
        path.write_text(json.dumps(manifest))
        with self.assertRaises(CommandError) as ctx:
            self.call("eval", "--manifest", str(path), "--episodes", "2", "--seeds", "1")
        self.assertEqual(ctx.exception.returncode, 4)

    def test_missing_manifest_file(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("eval", "--manifest", str(self.dir / "nowhere.json"), "--episodes", "2", "--seeds", "1")
        self.assertEqual(ctx.exception.returncode, 3)

    def test_unknown_config_section(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("eval", "--config", self.config("[network]\nlayers = 2\n"))
        self.assertEqual(ctx.exception.returncode, 2)

    def test_unsampleable_episodes(self):
        with self.assertRaises(CommandError) as ctx:
            self.call(*self.eval_args("--ways", "12", "--out", str(self.dir / "x.csv")))
        self.assertEqual(ctx.exception.returncode, 6)


class TrainCommandTestCase(CommandTestCase):
    def test_train_then_evaluate(self):
        config = self.config(TINY_SYNTHETIC)
        runs = self.dir / "checkpoints"
        common = ("--config", config, "--model", "cnn-classifier", "--task", "unimodal-speech", "--seeds", "1")
        output = self.call("train", *common, "--epochs", "2", "--validation-episodes", "0", "--out", str(runs))
        self.assertIn("Trained 1 network(s)", output)
        checkpoint = runs / "cnn-classifier-speech-seed0.ckpt"
        self.assertTrue(checkpoint.exists())
        log_lines = (runs / "cnn-classifier-speech-seed0.log.jsonl").read_text().splitlines()
        self.assertEqual(len(log_lines), 2)
        self.assertEqual(json.loads((runs / "config.json").read_text())["model"], "cnn-classifier")
        run = TrainingRun.objects.get()
        self.assertEqual((run.model, run.modality, run.seed, run.epochs_completed), ("cnn-classifier", "speech", 0, 2))
        self.assertEqual(run.checkpoint_path, str(checkpoint))

        out = self.dir / "trained.csv"
        self.call("eval", *common, "--checkpoints", str(runs), "--episodes", "3", "--out", str(out))
        report = json.loads(out.with_suffix(".json").read_text())
        self.assertEqual(report["model"], "cnn-classifier")
        self.assertEqual(len(report["per_seed_accuracies"]), 1)
        self.assertEqual(EvalRecord.objects.count(), 1)

    def test_cross_modal_trains_both_modalities(self):
        runs = self.dir / "checkpoints"
        self.call("train", "--config", self.config(TINY_SYNTHETIC), "--model", "siamese-offline",
                  "--task", "cross-modal", "--seeds", "1", "--epochs", "1", "--p", "3", "--k", "2",
                  "--steps-per-epoch", "1", "--validation-episodes", "0", "--out", str(runs))
        self.assertEqual(sorted(TrainingRun.objects.values_list("modality", flat=True)), ["speech", "vision"])
        self.assertTrue((runs / "siamese-offline-vision-seed0.ckpt").exists())

    def test_run_records_the_batch_classes_used(self):
        self.call("train", "--config", self.config(TINY_SYNTHETIC), "--model", "siamese-online",
                  "--task", "unimodal-speech", "--seeds", "1", "--epochs", "1", "--p", "50", "--k", "2",
                  "--steps-per-epoch", "1", "--validation-episodes", "0", "--out", str(self.dir / "checkpoints"))
        run = TrainingRun.objects.get()
        self.assertEqual(run.config["p"], 6)
        self.assertEqual(run.config["k"], 2)

    def test_direct_matching_has_nothing_to_train(self):
        with self.assertRaises(CommandError) as ctx:
            self.call("train", "--config", self.config(TINY_SYNTHETIC), "--model", "dtw-pixels")
        self.assertEqual(ctx.exception.returncode, 2)


class ReportCommandTestCase(CommandTestCase):
    def setUp(self):
        super().setUp()
        for task, model, ways, accuracy in (("cross-modal", "dtw-pixels", 11, 0.3),
                                            ("cross-modal", "siamese-online", 11, 0.7),
                                            ("unimodal-speech", "siamese-online", 5, 0.9)):
            EvalRecord.objects.create(task=task, model=model, ways=ways, shots=1, episodes=400, queries=10,
                                      seed_count=10, mean_accuracy=accuracy, ci95_halfwidth=0.01)

    def test_filters(self):
        output = self.call("report", "--task", "cross-modal")
        self.assertIn("dtw-pixels", output)
        self.assertIn("siamese-online", output)
        self.assertNotIn("unimodal-speech", output)
        output = self.call("report", "--min-accuracy", "0.8")
        self.assertIn("90.00% +- 1.00", output)
        self.assertNotIn("cross-modal", output)

    def test_csv_out(self):
        out = self.dir / "out" / "report.csv"
        self.call("report", "--model", "siamese-online", "--out", str(out))
        with out.open() as handle:
            rows = list(csv.DictReader(handle))
        self.assertEqual([row["task"] for row in rows], ["cross-modal", "unimodal-speech"])
        self.assertEqual(rows[1]["ways"], "5")

    def test_no_match(self):
        self.assertIn("No evaluation records match", self.call("report", "--ways", "20"))


class SignalTestCase(TestCase):
    def test_stored_records_are_logged(self):
        with self.assertLogs("oneshot.signals", level="INFO") as logs:
            EvalRecord.objects.create(task="cross-modal", model="dtw-pixels", ways=11, shots=1, episodes=400,
                                      queries=10, seed_count=10, mean_accuracy=0.5)
        self.assertIn("dtw-pixels on cross-modal", logs.output[0])

    def test_stored_training_runs_are_logged(self):
        with self.assertLogs("oneshot.signals", level="INFO") as logs:
            TrainingRun.objects.create(model="siamese-online", modality="speech", seed=3,
                                       checkpoint_path="runs/x.ckpt", spec_digest="ab")
        self.assertIn("seed 3", logs.output[0])
        self.assertIn("val accuracy n/a", logs.output[0])


class BenchmarkCommandTestCase(CommandTestCase):
    CONFIG = """
[synthetic]
background_classes = 6
speakers = 4
feature_dim = 8
frames = 12
image_height = 8
image_width = 8
signal_rank = 3
speaker_rank = 2

[training]
steps_per_epoch = 2
validation_episodes = 0
"""

    def run_benchmark(self, *extra):
        out = self.dir / "bench" / "benchmark.csv"
        output = self.call("benchmark", "--config", self.config(self.CONFIG), "--models", "siamese-online",
                           "--seeds", "1", "--episodes", "3", "--epochs", "1", "--calibration-episodes", "5",
                           "--out", str(out), *extra)
        return out, output

    def test_writes_reports_and_checks(self):
        out, output = self.run_benchmark("--store")
        with out.open() as handle:
            rows = list(csv.DictReader(handle))
        self.assertEqual(len(rows), 8)
        self.assertEqual({row["model"] for row in rows}, {"dtw-pixels", "siamese-online"})
        self.assertEqual(EvalRecord.objects.count(), 8)
        document = json.loads(out.with_suffix(".json").read_text())
        self.assertEqual(document["synthetic"]["signal_rank"], 3)
        self.assertAlmostEqual(document["synthetic"]["speaker_offset"], 4 * document["synthetic"]["noise"])
        names = {check["name"] for check in document["checks"]}
        self.assertIn("direct-matching-band", names)
        self.assertIn("speaker-drop", names)
        self.assertIn("Calibrated noise", output)
        self.assertIn("time-limit", output)
