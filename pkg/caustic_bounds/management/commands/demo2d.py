"""
Management command to run the flatland bound demo and write curve data.

Usage:
    python manage.py demo2d --out demo/
    python manage.py demo2d --config cfg.json --out demo/
"""

import json
import logging
import math
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from caustic_bounds.demo2d import demo2d

from ._common import add_verbose, configure_logging

logger = logging.getLogger("caustic_bounds.demo2d")


class Command(BaseCommand):
    help = "Bound flatland caustics (straight and folding mirrors) and write JSON curves"

    def add_arguments(self, parser):
        parser.add_argument("--config", default=None, help="Demo config JSON (default: built-in cases)")
        parser.add_argument("--out", required=True, help="Output directory")
        add_verbose(parser)

    def handle(self, *args, **options):
        configure_logging(options["verbose"])
        config = None
        if options["config"]:
            try:
                config = json.loads(Path(options["config"]).read_text())
            except (OSError, json.JSONDecodeError) as e:
                raise CommandError(f"Cannot read demo config: {e}")
        try:
            results = demo2d(config, options["out"])
        except (KeyError, ValueError) as e:
            raise CommandError(f"Invalid demo config: {e}")

        for name, data in results.items():
            unbounded = sum(1 for p in data["pieces"] if math.isinf(p["E"][1]))
            self.stdout.write(f"{name}: {len(data['pieces'])} pieces, {unbounded} unbounded")
        self.stdout.write(self.style.SUCCESS(f"Wrote {len(results)} cases to {options['out']}"))
