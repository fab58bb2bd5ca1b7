import os
import sys
from importlib.metadata import PackageNotFoundError, version
from typing import List

from dotenv import load_dotenv

REQUIRED_PACKAGES = ('numpy', 'scipy', 'pandas', 'matplotlib', 'python-dotenv')


def check_python_version():
    """Check if Python version meets requirements."""
    required_version = (3, 9)
    current_version = sys.version_info[:2]

    if current_version < required_version:
        raise SystemError(
            f"Python {required_version[0]}.{required_version[1]} or higher is required. "
            f"You are using Python {current_version[0]}.{current_version[1]}"
        )


def missing_packages() -> List[str]:
    """Distributions from REQUIRED_PACKAGES that are not installed."""
    missing = []
    for name in REQUIRED_PACKAGES:
        try:
            version(name)
        except PackageNotFoundError:
            missing.append(name)
    return missing


def check_packages():
    missing = missing_packages()
    if missing:
        raise SystemError(f"Missing packages: {', '.join(missing)}. "
                          f"Run 'pip install -r requirements.txt'.")


def initialize_environment():
    """Load .env and check the interpreter once per process."""
    if not hasattr(initialize_environment, '_initialized'):
        # PRESSURE_LAB_ENV, PRESSURE_LAB_THREADS and PRESSURE_LAB_LOG_LEVEL may come from .env
        load_dotenv(os.path.join(os.path.dirname(os.path.abspath(__file__)), '.env'))

        check_python_version()
        check_packages()
        initialize_environment._initialized = True
