"""
Management command to check cached irradiance bounds against forward-traced
paths and report the bound / true ratio distribution.

Usage:
    python manage.py validate --scene mirror.json --cache mirror.bbc --samples 10000 --out report.json
"""

import logging

from django.core.management.base import BaseCommand, CommandError

from caustic_bounds.conf import app_settings
from caustic_bounds.pipeline import validate_bounds

from ._common import add_verbose, configure_logging, load_cache, load_scene, write_json

logger = logging.getLogger("caustic_bounds.validate")


class Command(BaseCommand):
    help = "Validate cached bounds against traced admissible paths"

    def add_arguments(self, parser):
        parser.add_argument("--scene", required=True, help="Scene JSON file")
        parser.add_argument("--cache", required=True, help="Bound cache written by precompute")
        parser.add_argument("--samples", type=int, default=10000, help="Traced paths to check (default: 10000)")
        parser.add_argument(
            "--root-checks", type=int, default=200,
            help="Traced endpoints whose Newton root count is recorded (default: 200)",
        )
        parser.add_argument(
            "--seed", type=int, default=app_settings.SEED,
            help=f"Random seed (default: {app_settings.SEED})",
        )
        parser.add_argument("--out", required=True, help="Output report JSON")
        add_verbose(parser)

    def handle(self, *args, **options):
        configure_logging(options["verbose"])
        scene = load_scene(options["scene"])
        cache = load_cache(options["cache"], scene)
        try:
            report = validate_bounds(
                scene, cache, options["samples"],
                seed=options["seed"], root_checks=options["root_checks"],
            )
        except ValueError as e:
            raise CommandError(str(e))

        write_json(options["out"], report)
        self.stdout.write(f"Paths checked: {report['samples']:,}")
        self.stdout.write(f"Min ratio: {report['min_ratio']}")
        if report["violations"]:
            self.stdout.write(self.style.WARNING(f"Bound violations: {report['violations']}"))
        else:
            self.stdout.write(self.style.SUCCESS("No bound violations"))
