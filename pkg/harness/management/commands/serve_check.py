import json

from django.conf import settings
from django.core.management.base import BaseCommand

from core.exceptions import ConfigError
from core.types import VocabSpec
from denoiser.remote import check_remote
from harness.cli import exit_codes


class Command(BaseCommand):
    help = "Send a probe request to a remote denoiser and validate the reply against the logits protocol."

    def add_arguments(self, parser):
        parser.add_argument("--url", default=settings.DVOTE_DENOISER_URL or None, help="Base URL of the model server")
        parser.add_argument("--vocab", type=int, required=True, help="Vocabulary size the server should answer with")
        parser.add_argument("--timeout", type=float, default=None)

    def handle(self, *args, **options):
        with exit_codes():
            if not options["url"]:
                raise ConfigError("--url is required (or set DVOTE_DENOISER_URL)")
            report = check_remote(options["url"], VocabSpec(options["vocab"]), timeout=options["timeout"])
        self.stdout.write(json.dumps(report, sort_keys=True, indent=2))
        self.stdout.write(self.style.SUCCESS(f"{report['url']} speaks the logits protocol"))
