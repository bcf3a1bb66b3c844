from django.core.management.base import BaseCommand

from core.exceptions import TaskError
from harness.cli import add_generation_arguments, add_run_arguments, build_configs, denoiser_factory, exit_codes
from harness.methods import METHOD_DVOTING, METHODS, attach_comparisons, run_method
from harness.reports import emit_report
from harness.taskfile import ingest_tasks


class Command(BaseCommand):
    help = "Run baseline, majority voting and/or dVoting on a task file and write the report files."

    def add_arguments(self, parser):
        parser.add_argument(
            "--method", action="append", choices=METHODS, dest="methods",
            help="Method to run; repeat to compare several (default dvoting)",
        )
        add_run_arguments(parser)
        add_generation_arguments(parser)

    def handle(self, *args, **options):
        with exit_codes():
            cfg, cparams = build_configs(options)
            factory = denoiser_factory(options)
            tasks = ingest_tasks(options["tasks"])
            if not tasks:
                raise TaskError(f"{options['tasks']} holds no tasks")
            methods = sorted(set(options["methods"] or [METHOD_DVOTING]), key=METHODS.index)
            reports = [run_method(tasks, method, cfg, cparams, factory, jobs=options["jobs"]) for method in methods]
            attach_comparisons(reports)
            written = emit_report(reports, options["out"])
            if options["persist"]:
                from harness.tasks import store_report
                for report in reports:
                    store_report(report)

        for report in reports:
            line = (
                f"{report.label}: accuracy {report.accuracy:.4f}, mean steps {report.mean_steps:.2f}, "
                f"mean samples {report.mean_samples:.2f} ({report.questions} questions, {report.skipped} skipped)"
            )
            if report.bpc is not None:
                line += f", BPC {report.bpc:.2f}"
            self.stdout.write(line)
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(written)} files to {options['out']}"))
