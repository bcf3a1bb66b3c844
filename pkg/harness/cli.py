"""Options and error mapping shared by the harness management commands."""
from contextlib import contextmanager

from django.conf import settings
from django.core.management.base import CommandError

from consistency.serializers import build_consistency_params
from core.exceptions import ConfigError, DenoiserError, DomainError, RunError, TaskError
from core.serializers import INFINITY_SPELLINGS, build_generation_config
from harness.methods import OracleDenoiserFactory, RemoteDenoiserFactory

EXIT_CONFIG = 1
EXIT_TASK = 2
EXIT_DENOISER = 3

GENERATION_OPTIONS = ("gen_len", "block_size", "alpha", "temperature", "max_samples", "tau_frac", "seed", "strategy", "top_p")


def add_generation_arguments(parser):
    group = parser.add_argument_group("generation")
    group.add_argument("--gen-len", type=int, help="Generation length L (default 128)")
    group.add_argument("--block-size", type=int, help="Block size B (default paired with L)")
    group.add_argument("--alpha", help="Entropy threshold in nats, or 'inf' (default 0.3)")
    group.add_argument("--temperature", type=float, help="Sampling temperature; 0 is greedy (default 0.6)")
    group.add_argument("--max-samples", type=int, help="Sample budget n (default 5)")
    group.add_argument("--tau-frac", type=float, help="Retention fraction (default 0.5)")
    group.add_argument("--min-agree", type=int, help="Minimum votes to keep a token (default 2)")
    group.add_argument("--stop-count", help="Answer votes that stop sampling, or 'inf' (default 2)")
    group.add_argument("--tau-ans", type=float, help="Answer dominance above which its tokens are kept (default 0.5)")
    group.add_argument("--no-answer-retention", action="store_true", help="Keep only token-level agreement")
    group.add_argument("--no-require-majority", action="store_true", help="Stop on the vote count alone")
    group.add_argument("--strategy", help="entropy, full_steps or half_steps (default entropy)")
    group.add_argument("--top-p", type=float, help="Nucleus filter applied before sampling")
    group.add_argument("--seed", type=int, help="Global seed (default DVOTE_DEFAULT_SEED)")


def add_run_arguments(parser):
    parser.add_argument("--tasks", required=True, help="tasks.jsonl file")
    parser.add_argument("--epsilon", type=float, default=0.0, help="Uniform noise mixed into the oracle")
    parser.add_argument("--denoiser-url", help="Use the model server at this URL instead of the oracle")
    parser.add_argument("--vocab", type=int, help="Vocabulary size of the remote denoiser")
    parser.add_argument("--jobs", type=int, default=settings.DVOTE_JOBS, help="Questions run concurrently")
    parser.add_argument("--out", default=settings.DVOTE_OUT_DIR, help="Report directory")
    parser.add_argument("--persist", action="store_true", help="Also store the reports in the database")


def build_configs(options):
    """(GenerationConfig, ConsistencyParams) from parsed command options."""
    data = {key: options[key] for key in GENERATION_OPTIONS if options.get(key) is not None}
    data.setdefault("seed", settings.DVOTE_DEFAULT_SEED)
    consistency = {}
    for key in ("min_agree", "tau_ans"):
        if options.get(key) is not None:
            consistency[key] = options[key]
    stop = options.get("stop_count")
    if stop is not None:
        if str(stop).strip().lower() in INFINITY_SPELLINGS:
            consistency["c_stop"] = "inf"
        else:
            data["stop_count"] = stop
    cfg = build_generation_config(data)
    consistency.setdefault("c_stop", cfg.stop_count)
    consistency["tau_frac"] = cfg.tau_frac
    if options.get("no_answer_retention"):
        consistency["answer_retention"] = False
    if options.get("no_require_majority"):
        consistency["require_majority"] = False
    return cfg, build_consistency_params(consistency)


def denoiser_factory(options):
    url = options.get("denoiser_url")
    if url:
        if not options.get("vocab"):
            raise ConfigError("--vocab is required with --denoiser-url")
        return RemoteDenoiserFactory(url, options["vocab"])
    return OracleDenoiserFactory(options.get("epsilon") or 0.0)


@contextmanager
def exit_codes():
    """Translate dvote errors into ``CommandError`` with the documented exit codes."""
    try:
        yield
    except ConfigError as e:
        raise CommandError(f"configuration error: {e}", returncode=EXIT_CONFIG)
    except (TaskError, RunError) as e:
        raise CommandError(f"task error: {e}", returncode=EXIT_TASK)
    except DenoiserError as e:
        raise CommandError(f"denoiser error: {e}", returncode=EXIT_DENOISER)
    except DomainError as e:
        raise CommandError(f"invalid argument: {e}", returncode=EXIT_CONFIG)
    except OSError as e:
        raise CommandError(f"I/O error: {e}", returncode=EXIT_CONFIG)
