"""Helpers shared by the caustic_bounds management commands."""

import json
import logging
from pathlib import Path

from django.core.management.base import CommandError

from caustic_bounds import storage
from caustic_bounds.scene import Scene, SceneError


def configure_logging(verbose: bool) -> None:
    """Route the package's log records to stderr (DEBUG when verbose)."""
    log_level = logging.DEBUG if verbose else logging.INFO
    package_logger = logging.getLogger("caustic_bounds")
    package_logger.setLevel(log_level)

    if not package_logger.handlers:
        handler = logging.StreamHandler()
        handler.setLevel(log_level)
        formatter = logging.Formatter(
            "%(asctime)s [%(levelname)s] %(message)s", datefmt="%Y-%m-%d %H:%M:%S"
        )
        handler.setFormatter(formatter)
        package_logger.addHandler(handler)


def add_verbose(parser) -> None:
    parser.add_argument("--verbose", action="store_true", help="Enable verbose logging")


def load_scene(path) -> Scene:
    try:
        return Scene.load(path)
    except FileNotFoundError:
        raise CommandError(f"Scene file not found: {path}")
    except SceneError as e:
        raise CommandError(f"Invalid scene: {e}")


def load_cache(path, scene: Scene) -> storage.BoundCache:
    try:
        return storage.load(path, fingerprint=scene.fingerprint())
    except FileNotFoundError:
        raise CommandError(f"Bound cache not found: {path}")
    except storage.FingerprintMismatch:
        raise CommandError(f"{path} was computed for a different scene; re-run precompute")
    except storage.CacheFormatError as e:
        raise CommandError(f"Invalid bound cache {path}: {e}")


def write_json(path, data) -> None:
    out = Path(path)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(data, indent=2))
