"""
Management command to render receiver irradiance with bound-driven tuple
sampling.

Usage:
    python manage.py render --scene pool.json --cache pool.bbc --gamma 0.5 --spp 16 --out pool.pfm
    python manage.py render --scene pool.json --cache pool.bbc --candidates 2 --res 128 --stats stats.json --out pool.pfm
    python manage.py render --scene pool.json --cache pool.bbc --gamma 1 --root-finder stoc --out pool.pfm
    python manage.py render --scene room.json --cache room.bbc --gamma 1 --receiver floor --out floor.pfm
"""

import logging

from django.core.management.base import BaseCommand, CommandError

from caustic_bounds import pfm
from caustic_bounds.conf import app_settings
from caustic_bounds.pipeline import display_image, render_receiver

from ._common import add_verbose, configure_logging, load_cache, load_scene, write_json

logger = logging.getLogger("caustic_bounds.render")


class Command(BaseCommand):
    help = "Render receiver irradiance from a bound cache"

    def add_arguments(self, parser):
        parser.add_argument("--scene", required=True, help="Scene JSON file")
        parser.add_argument("--cache", required=True, help="Bound cache written by precompute")
        budget = parser.add_mutually_exclusive_group(required=True)
        budget.add_argument("--gamma", type=float, help="Probability scale: P = min(gamma * bound, 1)")
        budget.add_argument("--candidates", type=float, help="Expected number of tuples searched per sample")
        parser.add_argument("--spp", type=int, default=1, help="Samples per pixel (default: 1)")
        parser.add_argument("--res", type=int, default=None, help="Image resolution (default: cache grid)")
        parser.add_argument(
            "--receiver", default=None,
            help="Receiver object to render (default: the only one in the scene)",
        )
        parser.add_argument(
            "--seed", type=int, default=app_settings.SEED,
            help=f"Random seed (default: {app_settings.SEED})",
        )
        parser.add_argument(
            "--root-finder", choices=["det", "stoc"], default="det",
            help="Newton initialization: deterministic grid or stochastic (default: det)",
        )
        parser.add_argument(
            "--workers", type=int, default=app_settings.WORKERS,
            help=f"Worker processes for rendering rows (default: {app_settings.WORKERS})",
        )
        parser.add_argument("--out", required=True, help="Output PFM image")
        parser.add_argument("--stats", default=None, help="Write render statistics JSON here")
        add_verbose(parser)

    def handle(self, *args, **options):
        configure_logging(options["verbose"])
        scene = load_scene(options["scene"])
        cache = load_cache(options["cache"], scene)
        try:
            image, stats = render_receiver(
                scene, cache,
                gamma=options["gamma"],
                candidates=options["candidates"],
                spp=options["spp"],
                resolution=options["res"],
                seed=options["seed"],
                root_finder=options["root_finder"],
                workers=options["workers"],
                receiver=options["receiver"],
            )
        except ValueError as e:
            raise CommandError(str(e))

        pfm.write_pfm(options["out"], display_image(image))
        if options["stats"]:
            write_json(options["stats"], stats.to_dict())
            logger.info("Wrote render stats to %s", options["stats"])
        self.stdout.write(
            f"Mean |S| {stats.mean_selected:.2f}, |B| {stats.mean_bins:.2f}, |U| {stats.mean_covering:.2f}"
        )
        self.stdout.write(self.style.SUCCESS(f"Wrote {options['out']} in {stats.render_seconds:.2f}s"))
