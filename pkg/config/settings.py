"""
Configuration settings for the WG biharmonic solver.
Loads environment variables and provides solver constants.
"""
import os
from dotenv import load_dotenv
from typing import Optional

# Load environment variables
load_dotenv()


def _env_bool(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


class Settings:
    """Application settings loaded from environment variables."""

    # Logging
    LOG_LEVEL: str = os.getenv("WGBH_LOG_LEVEL", "INFO").upper()

    # Linear solver
    LINEAR_SOLVER: str = os.getenv("WGBH_LINEAR_SOLVER", "auto").lower()
    SOLVER_RTOL: float = float(os.getenv("WGBH_SOLVER_RTOL", "1e-12"))
    CG_MAXITER_FACTOR: float = float(os.getenv("WGBH_CG_MAXITER_FACTOR", "20"))
    REFINEMENT_STEPS: int = int(os.getenv("WGBH_REFINEMENT_STEPS", "3"))

    # Quadrature and local operators
    DATA_QUADRATURE_EXTRA: int = int(os.getenv("WGBH_DATA_QUADRATURE_EXTRA", "4"))
    OPERATOR_CACHE: bool = _env_bool("WGBH_OPERATOR_CACHE", "true")
    TANGENT_FD_STEP: float = float(os.getenv("WGBH_TANGENT_FD_STEP", "1e-3"))

    # Baseline tables
    FIXTURES_DIR: Optional[str] = os.getenv("WGBH_FIXTURES_DIR", "fixtures")

    # Application Constants
    APP_NAME: str = "wgbh"
    LINEAR_SOLVERS: tuple = ("auto", "cholmod", "direct", "cg")
    LOG_LEVELS: tuple = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")

    @classmethod
    def validate(cls) -> tuple[bool, list[str]]:
        """
        Validate the configured values.

        Returns:
            tuple: (is_valid, list_of_problems)
        """
        problems = []
        if cls.LOG_LEVEL not in cls.LOG_LEVELS:
            problems.append(f"WGBH_LOG_LEVEL={cls.LOG_LEVEL}")
        if cls.LINEAR_SOLVER not in cls.LINEAR_SOLVERS:
            problems.append(f"WGBH_LINEAR_SOLVER={cls.LINEAR_SOLVER}")
        if not cls.SOLVER_RTOL > 0:
            problems.append(f"WGBH_SOLVER_RTOL={cls.SOLVER_RTOL}")
        if not cls.CG_MAXITER_FACTOR > 0:
            problems.append(f"WGBH_CG_MAXITER_FACTOR={cls.CG_MAXITER_FACTOR}")
        if cls.REFINEMENT_STEPS < 0:
            problems.append(f"WGBH_REFINEMENT_STEPS={cls.REFINEMENT_STEPS}")
        if cls.DATA_QUADRATURE_EXTRA < 0:
            problems.append(f"WGBH_DATA_QUADRATURE_EXTRA={cls.DATA_QUADRATURE_EXTRA}")
        if not cls.TANGENT_FD_STEP > 0:
            problems.append(f"WGBH_TANGENT_FD_STEP={cls.TANGENT_FD_STEP}")

        is_valid = len(problems) == 0
        return is_valid, problems

    @classmethod
    def get_error_message(cls, problems: list[str]) -> str:
        """
        Generate user-friendly error message for invalid configuration.

        Args:
            problems: List of offending environment assignments

        Returns:
            str: Formatted error message
        """
        problems_str = ", ".join(problems)
        return f"""
        ⚠️ Configuration Error

        The following values in the environment / .env file are invalid:

        {problems_str}

        Please compare with .env.example and fix the values.
        """


# Create a singleton instance
settings = Settings()
