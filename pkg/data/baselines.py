"""
Baseline convergence tables stored under FIXTURES_DIR as <case>_<mesh>.csv.
"""
import logging
from pathlib import Path
from typing import List, Optional, Tuple, Union

from config.settings import settings
from services.convergence import ConvergenceReport, parse_report
from services.errors import ConfigError

logger = logging.getLogger(__name__)


def _fixtures_root(fixtures_dir: Optional[Union[str, Path]]) -> Path:
    root = Path(fixtures_dir or settings.FIXTURES_DIR)
    if not root.is_absolute() and not root.exists():
        # fall back to the fixtures shipped next to the package
        root = Path(__file__).resolve().parent.parent / root
    return root


def baseline_path(case: str, mesh: str, fixtures_dir: Optional[Union[str, Path]] = None) -> Path:
    return _fixtures_root(fixtures_dir) / f"{case}_{mesh}.csv"


def load_baseline(case: str, mesh: str, fixtures_dir: Optional[Union[str, Path]] = None) -> ConvergenceReport:
    """
    Raises:
        ConfigError: no baseline stored for this case and mesh family.
        ReportSchemaError: the stored table is malformed.
    """
    path = baseline_path(case, mesh, fixtures_dir)
    if not path.is_file():
        raise ConfigError(f"no baseline for case '{case}' on '{mesh}' meshes (looked for {path})")
    logger.debug("Loading baseline %s", path)
    return parse_report(path)


def available_baselines(fixtures_dir: Optional[Union[str, Path]] = None) -> List[Tuple[str, str]]:
    """(case, mesh) pairs with a stored baseline."""
    pairs = []
    for path in sorted(_fixtures_root(fixtures_dir).glob("*_*.csv")):
        case, _, mesh = path.stem.rpartition("_")
        pairs.append((case, mesh))
    return pairs
