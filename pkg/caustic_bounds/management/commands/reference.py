"""
Management command to compute the enumerated reference image: every tuple
covering a pixel is solved with a dense deterministic Newton grid.

Usage:
    python manage.py reference --scene mirror.json --chain R --res 128 --out ref.pfm
    python manage.py reference --scene pool.json --cache pool.bbc --out ref.pfm
"""

import logging

import numpy as np
from django.core.management.base import BaseCommand, CommandError

from caustic_bounds import pfm
from caustic_bounds.conf import app_settings
from caustic_bounds.geometry import ChainSpec
from caustic_bounds.pipeline import display_image, reference_enumerate
from caustic_bounds.scene import SceneError

from ._common import add_verbose, configure_logging, load_cache, load_scene

logger = logging.getLogger("caustic_bounds.reference")


class Command(BaseCommand):
    help = "Render the zero-variance enumerated reference image"

    def add_arguments(self, parser):
        parser.add_argument("--scene", required=True, help="Scene JSON file")
        parser.add_argument("--chain", default=None, help="Specular chain (required without --cache)")
        parser.add_argument("--cache", default=None, help="Reuse the bounds of this cache")
        parser.add_argument("--res", type=int, default=None, help="Image resolution (default: cache grid)")
        parser.add_argument(
            "--receiver", default=None,
            help="Receiver object to render (default: the only one in the scene)",
        )
        parser.add_argument(
            "--grid", type=int, default=app_settings.REFERENCE_GRID,
            help=f"Newton start grid per side (default: {app_settings.REFERENCE_GRID})",
        )
        parser.add_argument(
            "--workers", type=int, default=app_settings.WORKERS,
            help=f"Worker processes (default: {app_settings.WORKERS})",
        )
        parser.add_argument("--raw", action="store_true", help="Skip the display firefly clamp")
        parser.add_argument("--out", required=True, help="Output PFM image")
        add_verbose(parser)

    def handle(self, *args, **options):
        configure_logging(options["verbose"])
        if not options["chain"] and not options["cache"]:
            raise CommandError("Give --chain or --cache")
        scene = load_scene(options["scene"])
        cache = load_cache(options["cache"], scene) if options["cache"] else None
        try:
            chain = ChainSpec.parse(options["chain"]) if options["chain"] else None
            image = reference_enumerate(
                scene, chain,
                resolution=options["res"],
                cache=cache,
                grid=options["grid"],
                workers=options["workers"],
                receiver=options["receiver"],
            )
        except SceneError as e:
            raise CommandError(f"Invalid scene: {e}")
        except ValueError as e:
            raise CommandError(str(e))

        pfm.write_pfm(options["out"], image if options["raw"] else display_image(image))
        lit = int(np.count_nonzero(image))
        self.stdout.write(f"Lit pixels: {lit:,} of {image.size:,}")
        self.stdout.write(self.style.SUCCESS(f"Wrote {options['out']}"))
