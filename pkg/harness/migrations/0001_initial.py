# Generated by Django 5.1.7 on 2026-10-19 09:12

import django.db.models.deletion
import uuid
from django.conf import settings
from django.db import migrations, models


class Migration(migrations.Migration):

    initial = True

    dependencies = [
        migrations.swappable_dependency(settings.AUTH_USER_MODEL),
    ]

    operations = [
        migrations.CreateModel(
            name='EvaluationRun',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('uuid', models.UUIDField(default=uuid.uuid4, editable=False, unique=True)),
                ('label', models.CharField(max_length=200)),
                ('method', models.CharField(choices=[('baseline', 'Baseline'), ('majority', 'Majority voting'), ('dvoting', 'dVoting')], max_length=20)),
                ('status', models.CharField(choices=[('pending', 'Pending'), ('running', 'Running'), ('finished', 'Finished'), ('failed', 'Failed')], default='pending', max_length=20)),
                ('config', models.JSONField(default=dict)),
                ('accuracy', models.FloatField(blank=True, null=True)),
                ('mean_steps', models.FloatField(blank=True, null=True)),
                ('mean_samples', models.FloatField(blank=True, null=True)),
                ('questions', models.IntegerField(default=0)),
                ('skipped', models.IntegerField(default=0)),
                ('summary', models.JSONField(blank=True, default=dict)),
                ('error', models.TextField(blank=True, default='')),
                ('created_at', models.DateTimeField(auto_now_add=True)),
                ('updated_at', models.DateTimeField(auto_now=True)),
                ('creator', models.ForeignKey(blank=True, null=True, on_delete=django.db.models.deletion.SET_NULL, related_name='evaluation_runs', to=settings.AUTH_USER_MODEL)),
            ],
            options={
                'ordering': ['-created_at', '-id'],
            },
        ),
        migrations.CreateModel(
            name='QuestionResult',
            fields=[
                ('id', models.BigAutoField(auto_created=True, primary_key=True, serialize=False, verbose_name='ID')),
                ('task_id', models.CharField(max_length=200)),
                ('final_answer', models.TextField()),
                ('correct', models.BooleanField()),
                ('samples_used', models.IntegerField()),
                ('steps', models.IntegerField()),
                ('stop_reason', models.CharField(max_length=32)),
                ('per_sample_answers', models.JSONField(default=list)),
                ('consistency_level', models.FloatField()),
                ('run', models.ForeignKey(on_delete=django.db.models.deletion.CASCADE, related_name='results', to='harness.evaluationrun')),
            ],
            options={
                'ordering': ['task_id'],
                'unique_together': {('run', 'task_id')},
            },
        ),
    ]
