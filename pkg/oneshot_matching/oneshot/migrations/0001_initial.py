# Generated by Django 5.2 on 2026-10-17 09:12

from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
    ]

    operations = [
        migrations.CreateModel(
            name='EvalRecord',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('task', models.CharField(max_length=32)),
                ('model', models.CharField(max_length=32)),
                ('ways', models.IntegerField()),
                ('shots', models.IntegerField()),
                ('matching_size', models.IntegerField(default=0)),
                ('episodes', models.IntegerField()),
                ('queries', models.IntegerField()),
                ('seed_count', models.IntegerField(default=0)),
                ('per_seed_accuracies', models.JSONField(default=list)),
                ('mean_accuracy', models.FloatField()),
                ('ci95_halfwidth', models.FloatField(default=0.0)),
                ('wall_time_s', models.FloatField(default=0.0)),
                ('config', models.JSONField(default=dict)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['task', 'model', 'ways', 'shots', 'created_at'],
            },
        ),
        migrations.CreateModel(
            name='TrainingRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('model', models.CharField(max_length=32)),
                ('modality', models.CharField(choices=[('speech', 'Speech'), ('vision', 'Vision')], max_length=8)),
                ('seed', models.IntegerField()),
                ('checkpoint_path', models.CharField(max_length=500)),
                ('log_path', models.CharField(blank=True, default='', max_length=500)),
                ('spec_digest', models.CharField(max_length=64)),
                ('epochs_completed', models.IntegerField(default=0)),
                ('best_epoch', models.IntegerField(default=0)),
                ('best_val_accuracy', models.FloatField(blank=True, null=True)),
                ('final_loss', models.FloatField(blank=True, null=True)),
                ('config', models.JSONField(default=dict)),
                ('created_at', models.DateTimeField(auto_now_add=True)),
            ],
            options={
                'ordering': ['model', 'modality', 'seed', '-created_at'],
            },
        ),
    ]
