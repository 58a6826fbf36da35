"""
Management command to compare tuple-sampling estimators against the
enumerated reference.

Usage:
    python manage.py study_estimators --scene pool.json --cache pool.bbc --out study/
    python manage.py study_estimators --scene pool.json --cache pool.bbc --candidates 4 --spp 8 --res 64 --out study/
"""

import logging
from pathlib import Path

from django.core.management.base import BaseCommand, CommandError

from caustic_bounds import pfm
from caustic_bounds.conf import app_settings
from caustic_bounds.pipeline import display_image, study_estimators

from ._common import add_verbose, configure_logging, load_cache, load_scene, write_json

logger = logging.getLogger("caustic_bounds.study_estimators")


class Command(BaseCommand):
    help = "Render with each estimator and report RelMSE against the enumerated reference"

    def add_arguments(self, parser):
        parser.add_argument("--scene", required=True, help="Scene JSON file")
        parser.add_argument("--cache", required=True, help="Bound cache written by precompute")
        parser.add_argument(
            "--candidates", type=float, default=2.0,
            help="Expected tuples searched per sample (default: 2)",
        )
        parser.add_argument("--spp", type=int, default=4, help="Samples per pixel (default: 4)")
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
            "--workers", type=int, default=app_settings.WORKERS,
            help=f"Worker processes (default: {app_settings.WORKERS})",
        )
        parser.add_argument("--out", required=True, help="Output directory")
        add_verbose(parser)

    def handle(self, *args, **options):
        configure_logging(options["verbose"])
        scene = load_scene(options["scene"])
        cache = load_cache(options["cache"], scene)
        try:
            results = study_estimators(
                scene, cache,
                candidates=options["candidates"],
                spp=options["spp"],
                resolution=options["res"],
                seed=options["seed"],
                workers=options["workers"],
                receiver=options["receiver"],
            )
        except ValueError as e:
            raise CommandError(str(e))

        out = Path(options["out"])
        out.mkdir(parents=True, exist_ok=True)
        summary = {}
        for name, result in results.items():
            pfm.write_pfm(out / f"{name}.pfm", display_image(result["image"]))
            if name == "reference":
                continue
            summary[name] = {"relmse": result["relmse"], "mean_selected": result["mean_selected"]}
            self.stdout.write(f"{name:>12}: RelMSE {result['relmse']:.4g}, mean |S| {result['mean_selected']:.2f}")
        write_json(out / "summary.json", summary)
        self.stdout.write(self.style.SUCCESS(f"Wrote estimator study to {out}"))
