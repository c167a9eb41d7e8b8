"""
Convergence studies: refinement loops over manufactured solutions, report
emission (CSV / Markdown) and regression against stored baseline tables.
"""
import io
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from config.settings import settings
from data.cases import get_case
from services.error_norms import MEASURES, ErrorQuadruple, error_quadruple, observed_order, order_between
from services.errors import ConfigError, ReportSchemaError, StudyError, WGError
from services.mesh import PolyMesh, load_mesh_file, uniform_rectangles, uniform_triangles
from services.weak_deriv import WeakSpace, edge_degree, project_Qh, stiffness_degree
from services.wg_solver import solve_problem

logger = logging.getLogger(__name__)

REPORT_COLUMNS = [
    "case", "mesh", "k", "h",
    "l2", "l2_order", "h2", "h2_order", "ubinf", "ubinf_order", "uginf", "uginf_order",
    "solver_residual", "wall_ms",
]
MESH_FAMILIES = ("tri", "rect", "file")
REPORT_FORMATS = ("csv", "md")

DEFAULT_TOLERANCES = {"l2": 0.05, "h2": 0.05, "ubinf": 0.15, "uginf": 0.15}
ORDER_TOLERANCE = 0.15
ORDER_CONSISTENCY = 0.05
ABSOLUTE_TOLERANCE = 1e-8


@dataclass
class StudyConfig:
    """One convergence study: a case on a mesh family over a list of refinements."""
    case: str
    mesh_family: str = "tri"
    refinements: Sequence[int] = (2, 4, 8)
    k: int = 2
    output: Optional[str] = None
    format: str = "csv"
    deterministic: bool = False
    mesh_files: Sequence[str] = ()
    use_condensation: bool = True
    linear_solver: Optional[str] = None
    analytic_tangent: bool = True

    def validate(self) -> "StudyConfig":
        """
        Raises:
            ConfigError: describing the first invalid field.
        """
        get_case(self.case)
        if self.mesh_family not in MESH_FAMILIES:
            raise ConfigError(f"mesh family must be one of {MESH_FAMILIES}, got '{self.mesh_family}'")
        if self.format not in REPORT_FORMATS:
            raise ConfigError(f"format must be one of {REPORT_FORMATS}, got '{self.format}'")
        if isinstance(self.k, bool) or int(self.k) != self.k or self.k < 2:
            raise ConfigError(f"degree k must be an integer >= 2, got {self.k!r}")
        if self.linear_solver is not None and self.linear_solver not in settings.LINEAR_SOLVERS:
            raise ConfigError(f"linear solver must be one of {settings.LINEAR_SOLVERS}")
        if self.mesh_family == "file":
            if not self.mesh_files:
                raise ConfigError("mesh family 'file' needs at least one mesh file")
            return self
        levels = list(self.refinements)
        if not levels:
            raise ConfigError("at least one refinement level is required")
        if any(isinstance(n, bool) or int(n) != n or n < 1 for n in levels):
            raise ConfigError(f"refinement levels must be positive integers, got {levels}")
        if any(b <= a for a, b in zip(levels, levels[1:])):
            raise ConfigError(f"refinement levels must be strictly increasing, got {levels}")
        return self


@dataclass
class ConvergenceReport:
    """Report rows in the CSV schema plus study metadata."""
    table: pd.DataFrame
    metadata: Dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.table)

    def errors(self) -> List[ErrorQuadruple]:
        return [
            ErrorQuadruple(l2=row.l2, h2=row.h2, ub_inf=row.ubinf, ug_inf=row.uginf, h=row.h)
            for row in self.table.itertuples(index=False)
        ]


def _meshes(config: StudyConfig) -> Iterator[Tuple[Union[int, str], PolyMesh]]:
    if config.mesh_family == "file":
        for path in config.mesh_files:
            yield path, load_mesh_file(path)
        return
    build = uniform_triangles if config.mesh_family == "tri" else uniform_rectangles
    for n in config.refinements:
        yield n, build(n)


def _empty_table() -> pd.DataFrame:
    return pd.DataFrame({column: pd.Series(dtype=float) for column in REPORT_COLUMNS})


def build_report_table(case: str, mesh_family: str, k: int, errors: Sequence[ErrorQuadruple],
                       residuals: Sequence[float], wall_ms: Sequence[float]) -> pd.DataFrame:
    """Rows in REPORT_COLUMNS order; orders of the first row are NaN."""
    if not errors:
        return _empty_table()
    orders = observed_order(errors)
    records = []
    for error, order, residual, wall in zip(errors, orders, residuals, wall_ms):
        record = {"case": case, "mesh": mesh_family, "k": int(k), "h": error.h}
        for name in MEASURES:
            record[name] = error.measure(name)
            record[f"{name}_order"] = np.nan if order[name] is None else order[name]
        record["solver_residual"] = residual
        record["wall_ms"] = wall
        records.append(record)
    return pd.DataFrame.from_records(records, columns=REPORT_COLUMNS)


def run_case(config: StudyConfig) -> ConvergenceReport:
    """
    Solve the configured case on every refinement level and measure the errors.

    Raises:
        ConfigError: invalid configuration.
        StudyError: any solver error, tagged with the refinement level.
    """
    config.validate()
    case = get_case(config.case)
    problem = case.to_problem(analytic_tangent=config.analytic_tangent)
    errors, residuals, wall_ms = [], [], []
    levels = []

    for level, mesh in _meshes(config):
        started = time.perf_counter()
        try:
            space = WeakSpace(mesh, config.k)
            result = solve_problem(mesh, config.k, problem, space=space,
                                   use_condensation=config.use_condensation, method=config.linear_solver)
            exact = project_Qh(space, case.u, case.grad)
            error = error_quadruple(space, result.u_h, exact)
        except WGError as exc:
            raise StudyError(str(exc), level=level) from exc
        elapsed = 1000.0 * (time.perf_counter() - started)

        logger.info("n=%s h=%.4e dofs=%d skeleton=%d method=%s residual=%.2e time=%.0f ms",
                    level, error.h, space.n_dofs, result.n_skeleton, result.method, result.residual, elapsed)
        errors.append(error)
        residuals.append(result.residual)
        wall_ms.append(0.0 if config.deterministic else elapsed)
        levels.append({
            "level": level,
            "h": error.h,
            "n_dofs": space.n_dofs,
            "n_free_skeleton": result.n_skeleton,
            "n_condensed": result.n_condensed,
            "method": result.method,
            "solver_residual": result.residual,
            "residual_target": result.residual_target,
        })

    table = build_report_table(config.case, config.mesh_family, config.k, errors, residuals, wall_ms)
    metadata = {
        "case": config.case,
        "u": case.formula,
        "mesh": config.mesh_family,
        "k": config.k,
        "element_quadrature_degree": stiffness_degree(config.k),
        "edge_quadrature_degree": edge_degree(config.k),
        "data_quadrature_extra": settings.DATA_QUADRATURE_EXTRA,
        "tangential_source": problem.tangential_source,
        "deterministic": config.deterministic,
        "levels": levels,
    }
    return ConvergenceReport(table, metadata)


def _format_cell(value, spec: str) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    return format(value, spec)


def _emit_markdown(report: ConvergenceReport) -> str:
    header = ["h"]
    for name in MEASURES:
        header += [name, "order"]
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    for row in report.table.to_dict("records"):
        cells = [_format_cell(row["h"], ".4e")]
        for name in MEASURES:
            cells += [_format_cell(row[name], ".4e"), _format_cell(row[f"{name}_order"], ".2f")]
        lines.append("| " + " | ".join(cells) + " |")
    meta = report.metadata
    title = f"case `{meta.get('case', '')}` on `{meta.get('mesh', '')}` meshes, k = {meta.get('k', '')}"
    return f"### {title}\n\n" + "\n".join(lines) + "\n"


def emit(report: ConvergenceReport, fmt: str = "csv") -> bytes:
    """Serialize a report as CSV (`%.15e` numerics, blank undefined orders) or a Markdown table."""
    if fmt == "csv":
        table = report.table.reindex(columns=REPORT_COLUMNS)
        return table.to_csv(index=False, float_format="%.15e", na_rep="").encode("utf-8")
    if fmt == "md":
        return _emit_markdown(report).encode("utf-8")
    raise ConfigError(f"unknown report format '{fmt}'")


def write_report(report: ConvergenceReport, path: Union[str, Path], fmt: str = "csv") -> None:
    with open(path, "wb") as handle:
        handle.write(emit(report, fmt))


def parse_report(source: Union[bytes, str, Path, BinaryIO]) -> ConvergenceReport:
    """
    Read a report (or baseline) CSV.

    Raises:
        ReportSchemaError: unreadable CSV or columns different from REPORT_COLUMNS.
    """
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    try:
        table = pd.read_csv(source, dtype={"case": str, "mesh": str})
    except (pd.errors.EmptyDataError, pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise ReportSchemaError(f"cannot parse report: {exc}") from exc
    if list(table.columns) != REPORT_COLUMNS:
        raise ReportSchemaError(f"expected columns {REPORT_COLUMNS}, got {list(table.columns)}")
    return ConvergenceReport(table)


@dataclass(frozen=True)
class CellDiff:
    case: str
    h: float
    measure: str
    actual: float
    expected: float
    tolerance: float

    def __str__(self) -> str:
        return (f"{self.case} h={self.h:.6g} {self.measure}: got {self.actual:.6g}, "
                f"expected {self.expected:.6g} (tolerance {self.tolerance:.3g})")


@dataclass
class RegressionResult:
    passed: bool
    diffs: List[CellDiff]
    compared: int
    skipped: int


def _is_blank(value) -> bool:
    return value is None or (isinstance(value, float) and math.isnan(value))


def regress(report: ConvergenceReport, baseline: Union[ConvergenceReport, str, Path],
            tolerances: Optional[Dict[str, float]] = None,
            order_tolerance: float = ORDER_TOLERANCE) -> RegressionResult:
    """
    Compare report cells with a baseline table, row by row on matching h.

    Error cells pass when |a - e| <= max(rtol * |e|, 1e-8). Order cells are
    compared with an absolute tolerance, and only when the baseline's printed
    order agrees with the order recomputed from its own errors. Rows with
    h = 1 and blank baseline cells are skipped.

    Raises:
        ReportSchemaError: either table violates the schema, or the cases or mesh families differ.
    """
    if not isinstance(baseline, ConvergenceReport):
        baseline = parse_report(baseline)
    rtol = {**DEFAULT_TOLERANCES, **(tolerances or {})}
    expected_table = baseline.table.sort_values("h", ascending=False).reset_index(drop=True)
    actual_table = report.table

    for column, what in (("case", "cases"), ("mesh", "mesh families")):
        values = set(expected_table[column].dropna()) | set(actual_table[column].dropna())
        if len(values) > 1:
            raise ReportSchemaError(f"report and baseline describe different {what}: {sorted(values)}")

    diffs: List[CellDiff] = []
    compared = skipped = 0
    for index, expected in expected_table.iterrows():
        h = float(expected["h"])
        if math.isclose(h, 1.0):
            continue
        match = actual_table[np.isclose(actual_table["h"].astype(float), h, rtol=1e-9, atol=0.0)]
        if match.empty:
            logger.warning("No report row for baseline h=%g; skipping", h)
            skipped += 1
            continue
        actual = match.iloc[0]
        previous = expected_table.iloc[index - 1] if index > 0 else None

        for name in MEASURES:
            e, a = expected[name], actual[name]
            if not _is_blank(e):
                tol = max(rtol[name] * abs(e), ABSOLUTE_TOLERANCE)
                compared += 1
                if _is_blank(a) or abs(a - e) > tol:
                    diffs.append(CellDiff(str(expected["case"]), h, name, float(a), float(e), tol))

            order_name = f"{name}_order"
            e_order = expected[order_name]
            if _is_blank(e_order) or previous is None:
                continue
            recomputed = order_between(previous[name], expected[name], previous["h"], h)
            if recomputed is None or abs(recomputed - e_order) > ORDER_CONSISTENCY:
                skipped += 1
                continue
            a_order = actual[order_name]
            if _is_blank(a_order):
                # the report starts at a finer level than the baseline
                skipped += 1
                continue
            compared += 1
            if abs(a_order - e_order) > order_tolerance:
                diffs.append(CellDiff(str(expected["case"]), h, order_name, float(a_order),
                                      float(e_order), order_tolerance))

    if compared == 0:
        logger.warning("Nothing to compare: no baseline row matched the report")
    return RegressionResult(passed=compared > 0 and not diffs, diffs=diffs, compared=compared, skipped=skipped)
