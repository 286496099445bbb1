"""Application models: cooperative localization, bearing-only tracking, VINS toy."""
