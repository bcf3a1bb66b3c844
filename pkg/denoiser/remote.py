"""
Client for denoisers served over HTTP.

Wire protocol (JSON, UTF-8):

    POST {base_url}/v1/logits
    {"tokens": [int], "masked": [int], "temperature": float}
    -> {"logits": [[float] * V]}

``tokens`` carries the prompt followed by the generation, masks encoded as
``mask_id``; ``masked`` holds 0-based indices into ``tokens``. Logits are raw
and aligned with ``masked``; the client applies softmax and then the
temperature itself.
"""
import logging
import math
import threading
from typing import Optional

import numpy as np
import requests
from django.conf import settings
from requests.adapters import HTTPAdapter
from urllib3.util.retry import Retry

from core.exceptions import ProtocolError, RetryableDenoiserError
from core.types import MaskedSequence, VocabSpec
from denoiser.denoisers import Denoiser
from denoiser.distributions import softmax

logger = logging.getLogger(__name__)

LOGITS_PATH = "/v1/logits"


class RemoteDenoiser(Denoiser):
    """Denoiser backed by a model server speaking the logits protocol.

    Requests on one client are serialized; use one client per concurrent
    connection you want.
    """

    def __init__(
        self,
        base_url: str,
        vocab: VocabSpec,
        timeout: Optional[float] = None,
        retries: Optional[int] = None,
        session: Optional[requests.Session] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.vocab = vocab
        self.timeout = settings.DVOTE_REMOTE_TIMEOUT if timeout is None else timeout
        retries = settings.DVOTE_REMOTE_RETRIES if retries is None else retries
        self.session = session or requests.Session()
        retry = Retry(
            total=retries,
            backoff_factor=0.2,
            allowed_methods=frozenset({"POST"}),
            status_forcelist=(502, 503, 504),
            raise_on_status=False,
        )
        self.session.mount("http://", HTTPAdapter(max_retries=retry))
        self.session.mount("https://", HTTPAdapter(max_retries=retry))
        self._lock = threading.Lock()

    @property
    def url(self) -> str:
        return f"{self.base_url}{LOGITS_PATH}"

    def conditionals(self, seq: MaskedSequence, positions, temperature):
        offset = seq.prompt_length
        body = {
            "tokens": [int(t) for t in seq.tokens()],
            "masked": [offset + int(p) for p in positions],
            "temperature": float(temperature),
        }
        logits = self.request_logits(body)
        return softmax(logits)

    def request_logits(self, body: dict) -> np.ndarray:
        try:
            with self._lock:
                response = self.session.post(self.url, json=body, timeout=self.timeout)
        except requests.exceptions.RequestException as exc:
            raise RetryableDenoiserError(f"remote denoiser unreachable at {self.url}: {exc}") from exc

        if response.status_code != 200:
            raise ProtocolError(f"remote denoiser returned status {response.status_code}: {response.text[:200]}")
        try:
            payload = response.json()
        except ValueError as exc:
            raise ProtocolError("remote denoiser returned a non-JSON body") from exc

        logits = payload.get("logits") if isinstance(payload, dict) else None
        if not isinstance(logits, list) or len(logits) != len(body["masked"]):
            raise ProtocolError(
                f"expected {len(body['masked'])} logit rows, got "
                f"{len(logits) if isinstance(logits, list) else type(logits).__name__}"
            )
        for row in logits:
            if not isinstance(row, list) or len(row) != self.vocab.size:
                raise ProtocolError(f"every logit row must hold {self.vocab.size} numbers")
            if not all(isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v) for v in row):
                raise ProtocolError("logits must be finite numbers")
        return np.asarray(logits, dtype=np.float64)


def check_remote(base_url: str, vocab: VocabSpec, **client_kwargs) -> dict:
    """Probe a remote denoiser with a small request and validate the reply.

    Returns a summary of the probe; raises ``DenoiserError`` subclasses on
    any protocol violation.
    """
    client = RemoteDenoiser(base_url, vocab, **client_kwargs)
    probe = MaskedSequence(vocab, prompt=[0, 1 % vocab.size], gen=[vocab.mask_id, 0, vocab.mask_id])
    distributions = client.predict(probe, probe.masked_positions(), temperature=1.0)
    logger.info("remote denoiser at %s answered %d distributions", client.url, len(distributions))
    return {
        "url": client.url,
        "vocab": vocab.size,
        "positions": list(distributions.positions),
        "distributions": distributions.probs.round(6).tolist(),
    }
