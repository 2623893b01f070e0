# Command-line front end for nodewise-portfolio
from .config import Settings, load_settings
from .main import main

__all__ = ["Settings", "load_settings", "main"]
