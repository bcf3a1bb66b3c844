from rest_framework import serializers

from consistency.serializers import ConsistencyParamsSerializer
from core.exceptions import TaskError
from core.serializers import GenerationConfigSerializer
from denoiser.markov import MarkovSpec
from engine.answers import ANSWER_TYPES, Answer
from harness.models import EvaluationRun, QuestionResult

METHODS = ("baseline", "majority", "dvoting")


class SyntheticSpecSerializer(serializers.Serializer):
    """Chain parameters of a synthetic task: explicit matrices or a seeded random chain."""

    vocab = serializers.IntegerField(min_value=2, required=False)
    seed = serializers.IntegerField(min_value=0, default=0)
    sharpness = serializers.FloatField(min_value=0.0, default=0.3)
    initial = serializers.ListField(child=serializers.FloatField(min_value=0.0), required=False)
    transition = serializers.ListField(
        child=serializers.ListField(child=serializers.FloatField(min_value=0.0)), required=False
    )
    prompt = serializers.ListField(child=serializers.IntegerField(min_value=0), default=list)
    separator = serializers.IntegerField(min_value=0, required=False, allow_null=True, default=None)
    answer_width = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)
    gen_len = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)

    def validate(self, attrs):
        if "transition" in attrs:
            size = len(attrs["transition"])
            if "vocab" in attrs and attrs["vocab"] != size:
                raise serializers.ValidationError({"vocab": f"does not match the {size}x{size} transition"})
            attrs["vocab"] = size
            try:
                MarkovSpec.from_params(attrs)
            except ValueError as e:
                raise serializers.ValidationError({"transition": str(e)})
        elif "vocab" not in attrs:
            raise serializers.ValidationError({"vocab": "Required unless a transition matrix is given."})
        elif attrs["sharpness"] <= 0:
            raise serializers.ValidationError({"sharpness": "Must be greater than 0."})
        vocab = attrs["vocab"]
        if any(t >= vocab for t in attrs["prompt"]):
            raise serializers.ValidationError({"prompt": f"token ids must lie in [0, {vocab})"})
        if attrs["separator"] is not None and attrs["separator"] >= vocab:
            raise serializers.ValidationError({"separator": f"must lie in [0, {vocab})"})
        return attrs


class ExtractSerializer(serializers.Serializer):
    separator = serializers.IntegerField(min_value=0, required=False, allow_null=True, default=None)
    width = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)


class TaskRecordSerializer(serializers.Serializer):
    """One line of a tasks.jsonl file."""

    id = serializers.CharField(max_length=200)
    prompt = serializers.JSONField()
    gold = serializers.CharField(allow_blank=False, trim_whitespace=False)
    answer_type = serializers.ChoiceField(choices=ANSWER_TYPES, default="string")
    extract = ExtractSerializer(required=False)

    def validate_prompt(self, value):
        if isinstance(value, list):
            if not all(isinstance(t, int) and not isinstance(t, bool) and t >= 0 for t in value):
                raise serializers.ValidationError("A literal prompt must be a list of non-negative token ids.")
            return {"tokens": value}
        if isinstance(value, dict) and set(value) == {"synthetic"}:
            synthetic = SyntheticSpecSerializer(data=value["synthetic"])
            if not synthetic.is_valid():
                raise serializers.ValidationError({"synthetic": synthetic.errors})
            return {"synthetic": synthetic.validated_data}
        raise serializers.ValidationError('Expected a list of token ids or {"synthetic": {...}}.')

    def validate(self, attrs):
        if not Answer.parse(attrs["gold"], attrs["answer_type"]).parseable:
            raise serializers.ValidationError({"gold": "The gold answer must be parseable."})
        return attrs


class QuestionResultSerializer(serializers.ModelSerializer):
    class Meta:
        model = QuestionResult
        fields = [
            'task_id',
            'final_answer',
            'correct',
            'samples_used',
            'steps',
            'stop_reason',
            'per_sample_answers',
            'consistency_level',
        ]


class EvaluationRunSerializer(serializers.ModelSerializer):
    class Meta:
        model = EvaluationRun
        fields = [
            'uuid',
            'label',
            'method',
            'status',
            'config',
            'accuracy',
            'mean_steps',
            'mean_samples',
            'questions',
            'skipped',
            'summary',
            'error',
            'created_at',
            'updated_at',
        ]
        read_only_fields = fields


class EvaluationRunCreateSerializer(serializers.Serializer):
    method = serializers.ChoiceField(choices=METHODS)
    config = serializers.DictField(required=False, default=dict)
    consistency = serializers.DictField(required=False, default=dict)
    epsilon = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.0)
    tasks = serializers.ListField(child=serializers.DictField(), allow_empty=False)

    def validate_config(self, value):
        config = GenerationConfigSerializer(data=value)
        if not config.is_valid():
            raise serializers.ValidationError(config.errors)
        return value

    def validate_consistency(self, value):
        consistency = ConsistencyParamsSerializer(data=value)
        if not consistency.is_valid():
            raise serializers.ValidationError(consistency.errors)
        return value

    def validate_tasks(self, value):
        from harness.taskfile import parse_task_records

        try:
            parse_task_records(value)
        except TaskError as e:
            raise serializers.ValidationError(str(e))
        return value
