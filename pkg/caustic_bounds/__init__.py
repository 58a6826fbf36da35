default_app_config = "caustic_bounds.apps.CausticBoundsConfig"
