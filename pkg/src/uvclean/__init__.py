"""RGB-D perception and coverage planning for UV disinfection cleaning points."""

__version__ = "0.1.0"
