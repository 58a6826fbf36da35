"""
Minimal Django settings for running the caustic_bounds commands standalone.

Reads overrides from environment variables or .env file.
"""

import os


def _env(name, default, cast=float):
    value = os.environ.get(name)
    return default if value in (None, "") else cast(value)


SECRET_KEY = os.environ.get("DJANGO_SECRET_KEY", "caustic-bounds-standalone")

DEBUG = os.environ.get("DEBUG", "False").lower() in ("true", "1", "yes")

INSTALLED_APPS = [
    "caustic_bounds",
]

# The commands never touch a database.
DATABASES = {}

USE_TZ = True

# Caustic bounds settings
CAUSTIC_BOUNDS_SIGMA = _env("CAUSTIC_BOUNDS_SIGMA", 1e-4)
CAUSTIC_BOUNDS_ALPHA_SINGLE = _env("CAUSTIC_BOUNDS_ALPHA_SINGLE", 2.0)
CAUSTIC_BOUNDS_ALPHA_MULTI = _env("CAUSTIC_BOUNDS_ALPHA_MULTI", 10.0)
CAUSTIC_BOUNDS_MAX_DEPTH = _env("CAUSTIC_BOUNDS_MAX_DEPTH", 6, int)
CAUSTIC_BOUNDS_GRID_RESOLUTION = _env("CAUSTIC_BOUNDS_GRID_RESOLUTION", 512, int)
CAUSTIC_BOUNDS_DEGREE_CAP = _env("CAUSTIC_BOUNDS_DEGREE_CAP", 40, int)
CAUSTIC_BOUNDS_REDUCED_DEGREE = _env("CAUSTIC_BOUNDS_REDUCED_DEGREE", 8, int)
CAUSTIC_BOUNDS_FP_SLACK = _env("CAUSTIC_BOUNDS_FP_SLACK", 1e-9)
CAUSTIC_BOUNDS_MULTIPLICITY = _env("CAUSTIC_BOUNDS_MULTIPLICITY", 1, int)
CAUSTIC_BOUNDS_DET_GRID = _env("CAUSTIC_BOUNDS_DET_GRID", 3, int)
CAUSTIC_BOUNDS_REFERENCE_GRID = _env("CAUSTIC_BOUNDS_REFERENCE_GRID", 9, int)
CAUSTIC_BOUNDS_NEWTON_MAX_ITERATIONS = _env("CAUSTIC_BOUNDS_NEWTON_MAX_ITERATIONS", 50, int)
CAUSTIC_BOUNDS_STOC_MAX_TRIALS = _env("CAUSTIC_BOUNDS_STOC_MAX_TRIALS", 1000, int)
CAUSTIC_BOUNDS_INIT_MAX_PIECES = _env("CAUSTIC_BOUNDS_INIT_MAX_PIECES", 100, int)
CAUSTIC_BOUNDS_INIT_MAX_DEPTH = _env("CAUSTIC_BOUNDS_INIT_MAX_DEPTH", 8, int)
CAUSTIC_BOUNDS_WORKERS = _env("CAUSTIC_BOUNDS_WORKERS", os.cpu_count() or 1, int)
CAUSTIC_BOUNDS_SEED = _env("CAUSTIC_BOUNDS_SEED", 0, int)
CAUSTIC_BOUNDS_FIREFLY_FACTOR = _env("CAUSTIC_BOUNDS_FIREFLY_FACTOR", 1e6)

# Logging
LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "verbose": {
            "format": "{asctime} {levelname} {name} {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "verbose",
        },
    },
    "root": {
        "handlers": ["console"],
        "level": "WARNING",
    },
    "loggers": {
        "caustic_bounds": {
            "handlers": ["console"],
            "level": "DEBUG" if DEBUG else "INFO",
            "propagate": False,
        },
    },
}
