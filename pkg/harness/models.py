from django.conf import settings
from django.db import models
import uuid


class RunStatus(models.TextChoices):
    PENDING = "pending", "Pending"
    RUNNING = "running", "Running"
    FINISHED = "finished", "Finished"
    FAILED = "failed", "Failed"


class EvaluationRun(models.Model):
    METHOD_CHOICES = [
        ('baseline', 'Baseline'),
        ('majority', 'Majority voting'),
        ('dvoting', 'dVoting'),
    ]

    uuid = models.UUIDField(default=uuid.uuid4, editable=False, unique=True)
    creator = models.ForeignKey(
        settings.AUTH_USER_MODEL, on_delete=models.SET_NULL, null=True, blank=True, related_name='evaluation_runs'
    )
    label = models.CharField(max_length=200)
    method = models.CharField(max_length=20, choices=METHOD_CHOICES)
    status = models.CharField(max_length=20, choices=RunStatus.choices, default=RunStatus.PENDING)
    config = models.JSONField(default=dict)
    accuracy = models.FloatField(null=True, blank=True)
    mean_steps = models.FloatField(null=True, blank=True)
    mean_samples = models.FloatField(null=True, blank=True)
    questions = models.IntegerField(default=0)
    skipped = models.IntegerField(default=0)
    summary = models.JSONField(default=dict, blank=True)
    error = models.TextField(blank=True, default="")
    created_at = models.DateTimeField(auto_now_add=True)
    updated_at = models.DateTimeField(auto_now=True)

    class Meta:
        ordering = ['-created_at', '-id']

    def __str__(self):
        return f"{self.label} ({self.status})"


class QuestionResult(models.Model):
    run = models.ForeignKey(EvaluationRun, on_delete=models.CASCADE, related_name='results')
    task_id = models.CharField(max_length=200)
    final_answer = models.TextField()
    correct = models.BooleanField()
    samples_used = models.IntegerField()
    steps = models.IntegerField()
    stop_reason = models.CharField(max_length=32)
    per_sample_answers = models.JSONField(default=list)
    consistency_level = models.FloatField()

    class Meta:
        ordering = ['task_id']
        unique_together = ['run', 'task_id']

    def __str__(self):
        return f"{self.run.label} - {self.task_id}"
