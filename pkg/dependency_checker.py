# dependency_checker.py
"""Headless check of the Python packages the simulator needs."""
import importlib.metadata
import importlib.util
import logging
import subprocess
import sys
import time

from packaging.version import InvalidVersion, Version

from constants import APP_VERSION
from settings_manager import load_settings, save_settings

logger = logging.getLogger(__name__)


# --- Helper Functions for Dependency Checks & Installation ---

def check_pip_module(module_name, pip_name=None, minimum=None):
    """Checks that a module is importable and, optionally, at least ``minimum``."""
    if pip_name is None:
        pip_name = module_name
    try:
        if importlib.util.find_spec(module_name) is None:
            return False
    except (ImportError, ValueError):
        return False
    if minimum is None:
        return True
    try:
        installed = Version(importlib.metadata.version(pip_name))
    except (importlib.metadata.PackageNotFoundError, InvalidVersion):
        return False
    return installed >= Version(minimum)


def install_pip_module(pip_name):
    """Attempts to install a Python package using pip."""
    logger.info("Attempting to install Python package: %s", pip_name)
    process = subprocess.run([sys.executable, "-m", "pip", "install", pip_name], capture_output=True, text=True)
    if process.returncode != 0:
        logger.error("pip install %s failed:\n%s", pip_name, process.stderr)
    return process.returncode == 0


def get_dependencies():
    return [
        {
            "name": "Python 3.9+",
            "check_func": lambda: sys.version_info >= (3, 9),
            "instructions": "Please install Python 3.9 or newer.",
            "critical": True,
            "install_action": None,
        },
        {
            "name": "numpy",
            "check_func": lambda: check_pip_module("numpy", minimum="1.22"),
            "instructions": "pip install 'numpy>=1.22'",
            "critical": True,
            "install_action": lambda: install_pip_module("numpy>=1.22"),
        },
        {
            "name": "scipy",
            "check_func": lambda: check_pip_module("scipy", minimum="1.10"),
            "instructions": "pip install 'scipy>=1.10' (optimization, linear algebra, convex hulls)",
            "critical": True,
            "install_action": lambda: install_pip_module("scipy>=1.10"),
        },
        {
            "name": "pandas",
            "check_func": lambda: check_pip_module("pandas", minimum="1.5"),
            "instructions": "pip install 'pandas>=1.5' (time histories and sweep grids)",
            "critical": True,
            "install_action": lambda: install_pip_module("pandas>=1.5"),
        },
        {
            "name": "PyYAML",
            "check_func": lambda: check_pip_module("yaml", "PyYAML", minimum="6.0"),
            "instructions": "pip install 'PyYAML>=6.0' (model, scenario and sweep files)",
            "critical": True,
            "install_action": lambda: install_pip_module("PyYAML>=6.0"),
        },
        {
            "name": "pytest",
            "check_func": lambda: check_pip_module("pytest"),
            "instructions": "pip install pytest (only needed to run the test suite)",
            "critical": False,
            "install_action": lambda: install_pip_module("pytest"),
        },
    ]


def check_dependencies(dependencies=None):
    """Returns (all_critical_installed, list of missing dependency names)."""
    dependencies = get_dependencies() if dependencies is None else dependencies
    all_critical_installed = True
    missing = []
    for dep in dependencies:
        if dep["check_func"]():
            logger.debug("%s: INSTALLED", dep["name"])
            continue
        missing.append(dep["name"])
        level = logging.ERROR if dep.get("critical", False) else logging.WARNING
        logger.log(level, "%s: MISSING. %s", dep["name"], dep["instructions"])
        if dep.get("critical", False):
            all_critical_installed = False
    return all_critical_installed, missing


def run_dependency_check(settings_path=None, install_missing=False):
    """Checks dependencies and records the result in the settings file.

    Returns True when every critical dependency is present.
    """
    dependencies = get_dependencies()
    ok, missing = check_dependencies(dependencies)
    if not ok and install_missing:
        for dep in dependencies:
            if dep["name"] in missing and dep.get("install_action"):
                dep["install_action"]()
        ok, missing = check_dependencies(dependencies)

    current_settings = load_settings(settings_path)
    if ok:
        current_settings["last_deps_check_timestamp"] = time.time()
        current_settings["app_version_at_last_deps_check"] = APP_VERSION
        logger.info("Dependency check successful")
    else:
        current_settings["last_deps_check_timestamp"] = 0.0  # Reset timestamp on failure
        current_settings["app_version_at_last_deps_check"] = "0.0.0"
        logger.error("Critical dependencies missing: %s", ", ".join(missing))
    save_settings(current_settings, settings_path)
    return ok
