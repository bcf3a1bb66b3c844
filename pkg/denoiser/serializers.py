from rest_framework import serializers


class LogitsRequestSerializer(serializers.Serializer):
    tokens = serializers.ListField(child=serializers.IntegerField(min_value=0), allow_empty=False)
    masked = serializers.ListField(child=serializers.IntegerField(min_value=0), allow_empty=False)
    temperature = serializers.FloatField(min_value=0.0, default=1.0)

    def validate(self, attrs):
        vocab = self.context["vocab"]
        tokens, masked = attrs["tokens"], attrs["masked"]
        out_of_range = [t for t in tokens if t > vocab.mask_id]
        if out_of_range:
            raise serializers.ValidationError({"tokens": f"token ids must lie in [0, {vocab.mask_id}], got {out_of_range[:5]}"})
        if len(set(masked)) != len(masked):
            raise serializers.ValidationError({"masked": "positions must be distinct"})
        bad = [p for p in masked if p >= len(tokens) or tokens[p] != vocab.mask_id]
        if bad:
            raise serializers.ValidationError({"masked": f"positions {bad[:5]} are not mask slots of tokens"})
        return attrs


class LogitsResponseSerializer(serializers.Serializer):
    logits = serializers.ListField(
        child=serializers.ListField(child=serializers.FloatField()),
        help_text="Raw logits, one row of V numbers per requested position, in request order",
    )
