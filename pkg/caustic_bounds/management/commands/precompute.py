"""
Management command to bound every triangle tuple of a scene and write the
bound cache used by `render`.

Usage:
    python manage.py precompute --scene pool.json --chain T --out pool.bbc
    python manage.py precompute --scene slab.json --chain TT --sigma 1e-4 --alpha 10 --grid 256 --out slab.bbc
    python manage.py precompute --scene mirror.json --chain R --workers 4 --verbose
"""

import logging

from django.core.management.base import BaseCommand, CommandError

from caustic_bounds import storage
from caustic_bounds.bounds import SubdivisionParams
from caustic_bounds.conf import app_settings
from caustic_bounds.geometry import ChainSpec
from caustic_bounds.pipeline import precompute
from caustic_bounds.scene import SceneError

from ._common import add_verbose, configure_logging, load_scene

logger = logging.getLogger("caustic_bounds.precompute")


class Command(BaseCommand):
    help = "Enumerate triangle tuples, bound their caustics, and write a bound cache"

    def add_arguments(self, parser):
        parser.add_argument("--scene", required=True, help="Scene JSON file")
        parser.add_argument("--chain", required=True, help="Specular chain, e.g. R, T, RR, TT")
        parser.add_argument(
            "--sigma", type=float, default=app_settings.SIGMA,
            help=f"Stop subdividing pieces whose position bound is smaller (default: {app_settings.SIGMA})",
        )
        parser.add_argument(
            "--alpha", type=float, default=None,
            help=f"Irradiance bound tightness ratio (default: {app_settings.ALPHA_SINGLE} for one "
                 f"vertex, {app_settings.ALPHA_MULTI} otherwise)",
        )
        parser.add_argument(
            "--max-depth", type=int, default=app_settings.MAX_DEPTH,
            help=f"Subdivision depth limit (default: {app_settings.MAX_DEPTH})",
        )
        parser.add_argument(
            "--grid", type=int, default=app_settings.GRID_RESOLUTION,
            help=f"Bound cache grid resolution (default: {app_settings.GRID_RESOLUTION})",
        )
        parser.add_argument(
            "--multiplicity", type=int, default=app_settings.MULTIPLICITY,
            help=f"Assumed admissible paths per tuple and point (default: {app_settings.MULTIPLICITY})",
        )
        parser.add_argument(
            "--workers", type=int, default=app_settings.WORKERS,
            help=f"Worker processes for tuple bounding (default: {app_settings.WORKERS})",
        )
        parser.add_argument("--out", required=True, help="Output bound cache path")
        add_verbose(parser)

    def handle(self, *args, **options):
        configure_logging(options["verbose"])
        scene = load_scene(options["scene"])
        try:
            chain = ChainSpec.parse(options["chain"])
            params = SubdivisionParams.for_chain(
                chain, sigma=options["sigma"], alpha=options["alpha"], max_depth=options["max_depth"],
            )
            result = precompute(
                scene, chain, params,
                resolution=options["grid"],
                multiplicity=options["multiplicity"],
                workers=options["workers"],
            )
        except SceneError as e:
            raise CommandError(f"Scene cannot host chain {options['chain']}: {e}")
        except ValueError as e:
            raise CommandError(str(e))

        storage.save(result.cache, options["out"])
        breakdown = result.timing_breakdown()
        logger.info(
            "Bounding time: position %.1f%%, irradiance %.1f%%, recording %.1f%%",
            breakdown["position"], breakdown["irradiance"], breakdown["recording"],
        )
        self.stdout.write(f"Tuples: {len(result.cache.tuples)}")
        self.stdout.write(f"Pieces: {result.piece_count:,}")
        self.stdout.write(f"Cache entries: {result.cache.entry_count:,}")
        self.stdout.write(f"Receiver grids: {', '.join(result.cache.receivers)}")
        self.stdout.write(f"Time: {result.timings['total']:.2f}s")
        self.stdout.write(self.style.SUCCESS(f"Wrote bound cache to {options['out']}"))
