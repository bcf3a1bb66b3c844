import functools
import logging

import numpy as np
from django.conf import settings
from drf_spectacular.utils import extend_schema, OpenApiExample, OpenApiResponse
from rest_framework import status
from rest_framework.permissions import AllowAny
from rest_framework.response import Response
from rest_framework.views import APIView

from core.exceptions import DvoteError
from core.types import MaskedSequence
from denoiser.denoisers import ExactMarkovDenoiser
from denoiser.markov import MarkovSpec
from denoiser.serializers import LogitsRequestSerializer, LogitsResponseSerializer

logger = logging.getLogger(__name__)

# log(0) is not representable in JSON; impossible tokens get this logit.
LOGIT_FLOOR = -1e4


@functools.lru_cache(maxsize=1)
def served_denoiser() -> ExactMarkovDenoiser:
    return ExactMarkovDenoiser(MarkovSpec.from_params(settings.DVOTE_SERVED_ORACLE))


class LogitsView(APIView):
    permission_classes = [AllowAny]

    @extend_schema(
        summary="Score masked positions with the served Markov oracle",
        description=(
            "Returns raw logits (natural log of the untempered conditionals) for every position "
            "listed in 'masked'. The temperature field is accepted for protocol compatibility; "
            "clients apply it after the softmax."
        ),
        request=LogitsRequestSerializer,
        responses={
            200: LogitsResponseSerializer,
            400: OpenApiResponse(description="Malformed request"),
        },
        examples=[
            OpenApiExample(
                'Logits Request Example',
                value={"tokens": [0, 1, 8, 8], "masked": [2, 3], "temperature": 0.6},
                request_only=True
            ),
        ],
        tags=["denoiser"],
    )
    def post(self, request):
        denoiser = served_denoiser()
        serializer = LogitsRequestSerializer(data=request.data, context={"vocab": denoiser.vocab})
        serializer.is_valid(raise_exception=True)
        tokens = serializer.validated_data["tokens"]
        masked = serializer.validated_data["masked"]
        seq = MaskedSequence(denoiser.vocab, prompt=[], gen=tokens)
        try:
            probs = denoiser.conditionals(seq, masked, serializer.validated_data["temperature"])
        except DvoteError as e:
            logger.warning("logits request failed: %s", e)
            return Response({'detail': str(e)}, status=status.HTTP_400_BAD_REQUEST)
        with np.errstate(divide="ignore"):
            logits = np.maximum(np.log(probs), LOGIT_FLOOR)
        return Response({'logits': logits.tolist()})
