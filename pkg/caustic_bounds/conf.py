"""
App-level settings with sensible defaults.

Override in your Django settings.py:
    CAUSTIC_BOUNDS_SIGMA = 1e-4
    CAUSTIC_BOUNDS_GRID_RESOLUTION = 256
"""

from django.conf import settings


def get_setting(name, default):
    # The numerical modules are also used as a plain library, without a
    # configured Django project.
    if not settings.configured:
        return default
    return getattr(settings, name, default)


class _Settings:
    """Lazy settings object that reads from Django settings with defaults."""

    # Subdivision
    @property
    def SIGMA(self):
        return get_setting("CAUSTIC_BOUNDS_SIGMA", 1e-4)

    @property
    def ALPHA_SINGLE(self):
        return get_setting("CAUSTIC_BOUNDS_ALPHA_SINGLE", 2.0)

    @property
    def ALPHA_MULTI(self):
        return get_setting("CAUSTIC_BOUNDS_ALPHA_MULTI", 10.0)

    @property
    def MAX_DEPTH(self):
        return get_setting("CAUSTIC_BOUNDS_MAX_DEPTH", 6)

    @property
    def INIT_MAX_PIECES(self):
        return get_setting("CAUSTIC_BOUNDS_INIT_MAX_PIECES", 100)

    @property
    def INIT_MAX_DEPTH(self):
        return get_setting("CAUSTIC_BOUNDS_INIT_MAX_DEPTH", 8)

    # Polynomial arithmetic
    @property
    def DEGREE_CAP(self):
        return get_setting("CAUSTIC_BOUNDS_DEGREE_CAP", 40)

    @property
    def REDUCED_DEGREE(self):
        return get_setting("CAUSTIC_BOUNDS_REDUCED_DEGREE", 8)

    @property
    def FP_SLACK(self):
        return get_setting("CAUSTIC_BOUNDS_FP_SLACK", 1e-9)

    # Bound storage
    @property
    def GRID_RESOLUTION(self):
        return get_setting("CAUSTIC_BOUNDS_GRID_RESOLUTION", 512)

    @property
    def MULTIPLICITY(self):
        return get_setting("CAUSTIC_BOUNDS_MULTIPLICITY", 1)

    # Root finding
    @property
    def NEWTON_MAX_ITERATIONS(self):
        return get_setting("CAUSTIC_BOUNDS_NEWTON_MAX_ITERATIONS", 50)

    @property
    def DET_GRID(self):
        return get_setting("CAUSTIC_BOUNDS_DET_GRID", 3)

    @property
    def REFERENCE_GRID(self):
        return get_setting("CAUSTIC_BOUNDS_REFERENCE_GRID", 9)

    @property
    def STOC_MAX_TRIALS(self):
        return get_setting("CAUSTIC_BOUNDS_STOC_MAX_TRIALS", 1000)

    # Pipeline
    @property
    def WORKERS(self):
        return get_setting("CAUSTIC_BOUNDS_WORKERS", 1)

    @property
    def SEED(self):
        return get_setting("CAUSTIC_BOUNDS_SEED", 0)

    @property
    def FIREFLY_FACTOR(self):
        return get_setting("CAUSTIC_BOUNDS_FIREFLY_FACTOR", 1e6)


app_settings = _Settings()
