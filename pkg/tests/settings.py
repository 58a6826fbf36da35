"""Minimal Django settings for running caustic_bounds' pytest suite."""

SECRET_KEY = "test-secret-key"

INSTALLED_APPS = [
    "caustic_bounds",
]

DATABASES = {}

USE_TZ = True

# Small defaults keep the suite at desk scale.
CAUSTIC_BOUNDS_GRID_RESOLUTION = 32
CAUSTIC_BOUNDS_MAX_DEPTH = 6
CAUSTIC_BOUNDS_INIT_MAX_PIECES = 64
CAUSTIC_BOUNDS_WORKERS = 1
