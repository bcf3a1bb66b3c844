import math

from rest_framework import serializers

from core.config import GenerationConfig, STRATEGIES
from core.exceptions import ConfigError

INFINITY_SPELLINGS = {"inf", "+inf", "infinity", "∞"}


class ThresholdField(serializers.Field):
    """Non-negative float that also accepts ``inf`` spelled as a string."""

    default_error_messages = {
        "invalid": "A non-negative number or 'inf' is required.",
    }

    def to_internal_value(self, data):
        if isinstance(data, str) and data.strip().lower() in INFINITY_SPELLINGS:
            return math.inf
        try:
            value = float(data)
        except (TypeError, ValueError):
            self.fail("invalid")
        if math.isnan(value) or value < 0:
            self.fail("invalid")
        return value

    def to_representation(self, value):
        return "inf" if math.isinf(value) else value


class GenerationConfigSerializer(serializers.Serializer):
    gen_len = serializers.IntegerField(min_value=1, default=128)
    block_size = serializers.IntegerField(min_value=1, required=False, allow_null=True, default=None)
    alpha = ThresholdField(default=0.3)
    temperature = serializers.FloatField(min_value=0.0, default=0.6)
    max_samples = serializers.IntegerField(min_value=1, default=5)
    stop_count = serializers.IntegerField(min_value=2, default=2)
    tau_frac = serializers.FloatField(min_value=0.0, max_value=1.0, default=0.5)
    seed = serializers.IntegerField(default=0)
    strategy = serializers.ChoiceField(choices=STRATEGIES, default=STRATEGIES[0])
    top_p = serializers.FloatField(min_value=0.0, max_value=1.0, required=False, allow_null=True, default=None)

    def validate_tau_frac(self, value):
        if value <= 0:
            raise serializers.ValidationError("tau_frac must be greater than 0.")
        return value

    def validate_top_p(self, value):
        if value is not None and value <= 0:
            raise serializers.ValidationError("top_p must be greater than 0.")
        return value

    def create(self, validated_data):
        try:
            return GenerationConfig(**validated_data)
        except ConfigError as exc:
            raise serializers.ValidationError({"config": str(exc)})


def build_generation_config(data) -> GenerationConfig:
    """Validate raw values (CLI flags, JSON bodies) into a ``GenerationConfig``.

    Raises ``ConfigError`` naming every offending field.
    """
    serializer = GenerationConfigSerializer(data=data)
    if not serializer.is_valid():
        raise ConfigError(_format_errors(serializer.errors))
    try:
        return serializer.save()
    except serializers.ValidationError as exc:
        raise ConfigError(_format_errors(exc.detail))


def _format_errors(errors) -> str:
    if isinstance(errors, dict):
        return "; ".join(f"{field}: {' '.join(str(m) for m in messages)}" for field, messages in sorted(errors.items()))
    return " ".join(str(e) for e in errors)
