import math

from rest_framework import serializers

from consistency.metrics import ConsistencyParams
from core.exceptions import ConfigError
from core.serializers import ThresholdField


class StopCountField(ThresholdField):
    default_error_messages = {
        "invalid": "An integer >= 2 or 'inf' is required.",
    }

    def to_internal_value(self, data):
        value = super().to_internal_value(data)
        if math.isinf(value):
            return value
        if value != int(value) or value < 2:
            self.fail("invalid")
        return int(value)


class ConsistencyParamsSerializer(serializers.Serializer):
    tau_frac = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.5)
    min_agree = serializers.IntegerField(min_value=2, default=2)
    k = serializers.IntegerField(min_value=1, default=2)
    c_stop = StopCountField(default=2)
    tau_ans = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.5)
    answer_retention = serializers.BooleanField(default=True)
    require_majority = serializers.BooleanField(default=True)

    def validate(self, attrs):
        for field in ("tau_frac", "tau_ans"):
            if attrs[field] <= 0:
                raise serializers.ValidationError({field: "Must be greater than 0."})
        return attrs

    def create(self, validated_data):
        return ConsistencyParams(**validated_data)


def build_consistency_params(data) -> ConsistencyParams:
    serializer = ConsistencyParamsSerializer(data=data)
    if not serializer.is_valid():
        raise ConfigError("; ".join(
            f"{field}: {' '.join(str(m) for m in messages)}" for field, messages in sorted(serializer.errors.items())
        ))
    return serializer.save()
