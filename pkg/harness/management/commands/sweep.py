from django.core.management.base import BaseCommand

from core.exceptions import TaskError
from harness.cli import add_generation_arguments, add_run_arguments, build_configs, denoiser_factory, exit_codes
from harness.methods import METHOD_BASELINE, SWEEP_AXES, attach_comparisons, run_method, sweep
from harness.reports import emit_report
from harness.taskfile import ingest_tasks


class Command(BaseCommand):
    help = "Run dVoting once per value of n, block size or alpha, with shared seeds."

    def add_arguments(self, parser):
        parser.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
        parser.add_argument("--values", required=True, help="Comma separated values, e.g. 1,5,9 or 0,0.3,inf")
        parser.add_argument("--baseline", action="store_true", help="Also run the baseline so BPC is reported")
        add_run_arguments(parser)
        add_generation_arguments(parser)

    def handle(self, *args, **options):
        with exit_codes():
            cfg, cparams = build_configs(options)
            factory = denoiser_factory(options)
            values = [v for v in options["values"].split(",") if v.strip()]
            tasks = ingest_tasks(options["tasks"])
            if not tasks:
                raise TaskError(f"{options['tasks']} holds no tasks")
            reports = sweep(options["axis"], values, cfg, tasks, cparams, factory, jobs=options["jobs"])
            if options["baseline"]:
                reports.insert(0, run_method(tasks, METHOD_BASELINE, cfg, cparams, factory, jobs=options["jobs"]))
            attach_comparisons(reports)
            written = emit_report(reports, options["out"])
            if options["persist"]:
                from harness.tasks import store_report
                for report in reports:
                    store_report(report)

        for report in reports:
            self.stdout.write(
                f"{report.label}: accuracy {report.accuracy:.4f}, mean steps {report.mean_steps:.2f}, "
                f"mean samples {report.mean_samples:.2f}"
            )
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(written)} files to {options['out']}"))
