from django.conf import settings
from django.core.management.base import BaseCommand

from core.exceptions import ConfigError
from harness.cli import exit_codes
from harness.taskfile import synthesize_tasks, write_tasks


class Command(BaseCommand):
    help = "Write a synthetic task file: random Markov chains with gold answers from their most probable completion."

    def add_arguments(self, parser):
        parser.add_argument("--vocab", type=int, required=True, help="Vocabulary size V")
        parser.add_argument("--length", type=int, required=True, help="Generation length L the gold answers are for")
        parser.add_argument("--count", type=int, required=True, help="Number of tasks")
        parser.add_argument("--seed", type=int, default=settings.DVOTE_DEFAULT_SEED)
        parser.add_argument("--out", required=True, help="tasks.jsonl to write")
        parser.add_argument("--prompt-len", type=int, default=4)
        parser.add_argument("--sharpness", type=float, default=0.3, help="Dirichlet concentration; lower is peakier")
        parser.add_argument("--answer-width", type=int, default=2, help="Answer tokens read off the end (or after the separator)")
        parser.add_argument("--separator", type=int, help="Token id that introduces the answer")

    def handle(self, *args, **options):
        with exit_codes():
            vocab, length, count = options["vocab"], options["length"], options["count"]
            if vocab < 2:
                raise ConfigError(f"--vocab must be >= 2, got {vocab}")
            if length < 1 or count < 0 or options["prompt_len"] < 0:
                raise ConfigError("--length must be positive; --count and --prompt-len must be non-negative")
            if options["sharpness"] <= 0:
                raise ConfigError(f"--sharpness must be positive, got {options['sharpness']}")
            if options["answer_width"] < 1:
                raise ConfigError(f"--answer-width must be positive, got {options['answer_width']}")
            separator = options["separator"]
            if separator is not None and not 0 <= separator < vocab:
                raise ConfigError(f"--separator must lie in [0, {vocab}), got {separator}")
            lines = synthesize_tasks(
                vocab,
                length,
                count,
                seed=options["seed"],
                prompt_len=options["prompt_len"],
                sharpness=options["sharpness"],
                answer_width=options["answer_width"],
                separator=separator,
            )
            written = write_tasks(lines, options["out"])
        self.stdout.write(self.style.SUCCESS(f"Wrote {written} tasks to {options['out']}"))
