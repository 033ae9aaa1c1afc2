import os
from dotenv import load_dotenv

# Load environment variables
load_dotenv()

class Config:
    # Application settings
    APP_NAME = "antiwick-calculus"
    APP_VERSION = "1.0.0"
    LOG_LEVEL = os.getenv('CALCULUS_LOG_LEVEL', 'INFO').upper()

    # Output settings
    OUTPUT_ROOT = os.getenv('CALCULUS_OUTPUT_ROOT', './runs')
    DATABASE_PATH = os.getenv('CALCULUS_DATABASE_PATH', './data/run_history.db')
    RECORD_HISTORY = os.getenv('CALCULUS_RECORD_HISTORY', 'True').lower() == 'true'

    # Feasibility guards
    MAX_BASIS_DIMENSION = int(os.getenv('CALCULUS_MAX_BASIS_DIMENSION', 5000))
    MAX_GRID_NODES = int(os.getenv('CALCULUS_MAX_GRID_NODES', 4_000_000))
    GRID_CHUNK = int(os.getenv('CALCULUS_GRID_CHUNK', 20_000))  # nodes per assembly block
    QUASI_RADIAL_ORDER = int(os.getenv('CALCULUS_QUASI_RADIAL_ORDER', 128))  # radial floor for non-polynomial symbols
    QUASI_GRID_NODES = int(os.getenv('CALCULUS_QUASI_GRID_NODES', 65_536))
    MAX_WORKERS = int(os.getenv('CALCULUS_MAX_WORKERS', 4))

    # Truncation policy
    SAFE_RADIUS_FRACTION = float(os.getenv('CALCULUS_SAFE_RADIUS_FRACTION', 0.25))  # |alpha|^2 <= fraction * N_max

    # Default tolerances
    HERMITIAN_TOL = float(os.getenv('CALCULUS_HERMITIAN_TOL', 1e-10))
    IDENTITY_DEFECT_TOL = float(os.getenv('CALCULUS_IDENTITY_DEFECT_TOL', 1e-10))
    UNITARY_CHECK_TOL = float(os.getenv('CALCULUS_UNITARY_CHECK_TOL', 1e-12))
    PARAMETRIX_FLOOR = float(os.getenv('CALCULUS_PARAMETRIX_FLOOR', 1e-6))
    FIT_RESIDUAL_TOL = float(os.getenv('CALCULUS_FIT_RESIDUAL_TOL', 0.05))
    FINITE_DIFFERENCE_STEP = float(os.getenv('CALCULUS_FD_STEP', 1e-5))

    @classmethod
    def validate(cls):
        """Validate that the configuration is usable"""
        if cls.MAX_BASIS_DIMENSION < 1 or cls.MAX_GRID_NODES < 1 or cls.GRID_CHUNK < 1:
            raise ValueError("Feasibility limits must be positive integers")
        if not 0 < cls.SAFE_RADIUS_FRACTION <= 1:
            raise ValueError("CALCULUS_SAFE_RADIUS_FRACTION must lie in (0, 1]")
        if cls.QUASI_RADIAL_ORDER < 1 or cls.QUASI_GRID_NODES < 1:
            raise ValueError("CALCULUS_QUASI_RADIAL_ORDER and CALCULUS_QUASI_GRID_NODES must be positive")
        if cls.MAX_WORKERS < 1:
            raise ValueError("CALCULUS_MAX_WORKERS must be at least 1")
        return True
