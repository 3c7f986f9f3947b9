"""Batch evaluation behind the CLI: steady reports, sweeps, scheme comparisons."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

from .config import RunConfig, SweepSpec
from .dynamics import Scheme, operating_point, steady_sigma_c
from .errors import GaussCoolError
from .thermo import RateReport, inequality_report

# CSV margin columns and the report margins they carry.
MARGIN_COLUMNS = (
    ("margin_eq10", "kinetic_bound"),
    ("margin_eq11", "bath_bound"),
    ("margin_eq12", "kinetic_vs_bath"),
    ("margin_eq13", "flow_bound"),
    ("margin_eq16", "flow_vs_transfer"),
    ("margin_eq17", "cooling_limit"),
)
VALUE_COLUMNS = ("n_occ", "n_min", "w_u_over_Tu_plus_w_v_over_Tv", "i_qct", "w_ext_over_T", "ratio")


def fmt(value) -> str:
    """17 significant digits so that every float survives a text round trip."""
    if value is None:
        return ""
    return format(float(value), ".17g")


def report_values(report: RateReport) -> list:
    values = [report.n_occ, report.n_min, report.kinetic_sum, report.i_qct, report.bath_term, report.ratio]
    return values + [report.margins[name] for _, name in MARGIN_COLUMNS]


@dataclass(frozen=True)
class Row:
    x: float
    report: RateReport | None
    error: str | None = None

    @property
    def flagged(self) -> bool:
        return self.report is None

    def cells(self) -> list[str]:
        if self.report is None:
            return [fmt(self.x)] + ["nan"] * (len(VALUE_COLUMNS) + len(MARGIN_COLUMNS))
        return [fmt(self.x)] + [fmt(v) for v in report_values(self.report)]


def header(sweep_param: str = "g") -> list[str]:
    return [sweep_param, *VALUE_COLUMNS, *(col for col, _ in MARGIN_COLUMNS)]


def steady_report(config: RunConfig, scheme: Scheme | None = None) -> RateReport:
    """Report at the configured gain; solver errors propagate."""
    scheme = config.scheme if scheme is None else scheme
    op = operating_point(config.system(), scheme, config.feedback.law())
    return inequality_report(op)


def sweep_rows(config: RunConfig, scheme: Scheme | None = None, sweep: SweepSpec | None = None) -> list[Row]:
    """One row per sweep point; failures become flagged rows and the sweep continues."""
    scheme = config.scheme if scheme is None else scheme
    sweep = config.sweep if sweep is None else sweep
    rows = []
    shared_cov_c = None
    if sweep.param == "g":
        try:
            shared_cov_c = steady_sigma_c(config.system(), scheme)
        except GaussCoolError as exc:
            return [Row(x, None, f"{type(exc).__name__}: {exc}") for x in sweep.values()]
    for x in sweep.values():
        try:
            if sweep.param == "g":
                params, law, cov_c = config.system(), config.feedback.law(x), shared_cov_c
            else:
                params, law, cov_c = config.params.build(**{sweep.param: x}), config.feedback.law(), None
            op = operating_point(params, scheme, law, cov_c=cov_c)
            rows.append(Row(x, inequality_report(op)))
        except (GaussCoolError, ValueError, ArithmeticError) as exc:
            rows.append(Row(x, None, f"{type(exc).__name__}: {exc}"))
    return rows


def write_rows(rows: list[Row], sweep_param: str = "g", scheme_column: list[str] | None = None) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    head = header(sweep_param)
    writer.writerow(["scheme", *head] if scheme_column is not None else head)
    for i, row in enumerate(rows):
        cells = row.cells()
        writer.writerow([scheme_column[i], *cells] if scheme_column is not None else cells)
    return buf.getvalue()


def compare_rows(config: RunConfig, schemes) -> tuple[list[Row], list[str]]:
    rows, labels = [], []
    for scheme in schemes:
        scheme_rows = sweep_rows(config, scheme)
        rows.extend(scheme_rows)
        labels.extend([scheme.value] * len(scheme_rows))
    return rows, labels


def compare_csv(config: RunConfig, schemes) -> tuple[str, list[Row]]:
    """Merged sweep per scheme; a single scheme gives exactly the sweep output."""
    schemes = tuple(schemes)
    if len(schemes) == 1:
        rows = sweep_rows(config, schemes[0])
        return write_rows(rows, config.sweep.param), rows
    rows, labels = compare_rows(config, schemes)
    return write_rows(rows, config.sweep.param, labels), rows


REPORT_FIELDS = (
    "q_dot", "w_ext", "w_u", "w_v", "Tu", "Tv", "TG", "T", "i_qct", "i_qci_s", "s_ba",
    "n_occ", "n_min", "kinetic_sum", "kinetic_sum_detflow",
)


def report_text(report: RateReport, config: RunConfig, scheme: Scheme) -> str:
    """``key = value`` lines; margins use the CSV column names."""
    law = config.feedback.law()
    lines = [
        f"scheme = {scheme.value}",
        f"estimator = {law.estimator.value}",
        *(f"{name} = {fmt(getattr(law, name))}" for name in ("a_x", "a_p", "b_x", "b_p")),
        *(f"{name} = {fmt(getattr(report, name))}" for name in REPORT_FIELDS),
        f"w_u_over_Tu_plus_w_v_over_Tv = {fmt(report.kinetic_sum)}",
        f"w_ext_over_T = {fmt(report.bath_term)}",
        f"ratio = {fmt(report.ratio)}",
        *(f"{col} = {fmt(report.margins[name])}" for col, name in MARGIN_COLUMNS),
    ]
    return "\n".join(lines) + "\n"


def argmin(rows: list[Row], attr: str = "n_occ") -> Row | None:
    good = [r for r in rows if r.report is not None and math.isfinite(getattr(r.report, attr))]
    return min(good, key=lambda r: getattr(r.report, attr)) if good else None
