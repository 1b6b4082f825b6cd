"""
Core module - Configuration and cross-cutting concerns.

This module provides:
- config.py         : Environment-based process settings
- logging_config.py : Centralized logging setup
- exceptions.py     : Typed error hierarchy
- validators.py     : (is_valid, error) validation helpers
"""
from src.core.config import get_settings, Settings
from src.core.logging_config import setup_logging, get_logger, LoggerMixin

__all__ = [
    "get_settings",
    "Settings",
    "setup_logging",
    "get_logger",
    "LoggerMixin",
]
