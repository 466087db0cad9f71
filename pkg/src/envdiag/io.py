"""File formats and pipeline runners behind the command line.

CSV in (header row, numeric columns, optional group labels), SVG plus a
companion CSV out per diagnostic plot, and a rates CSV plus JSON manifest
for power studies.  Floats are serialized with 17 significant digits so
reruns with the same seed are byte-identical.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .data import Dataset, EnvdiagError, ModelKind, validate_dataset
from .diagnostics import DiagnosticResult, PlotKind, diagnose_model
from .fitters import fit_model
from .harness import (
    ScenarioSpec,
    Violation,
    resolve_workers,
    run_grid,
)
from .svg import render_diagnostic


class MissingColumn(EnvdiagError):
    pass


class NonNumericCell(EnvdiagError):
    def __init__(self, msg: str, row: int, column: str):
        super().__init__(msg)
        self.row = row
        self.column = column


class EmptyFile(EnvdiagError):
    pass


_MODEL_NAMES = {k.value: k for k in ModelKind}
_PLOT_NAMES = {k.value: k for k in PlotKind}
_VIOLATION_NAMES = {v.value: v for v in Violation}


def _fmt(x: float) -> str:
    return f"{float(x):.17g}"


@dataclass
class RunConfig:
    """Settings for one diagnose run; JSON fields match attribute names."""

    data: str = ""
    response: str = "y"
    predictors: Optional[list[str]] = None  # default: every other column
    group: Optional[str] = None
    model: str = "lm"
    plots: list[str] = field(
        default_factory=lambda: ["res_vs_fits", "qq"]
    )
    B: int = 199
    alpha: float = 0.05
    seed: int = 0
    m_grid: int = 64
    out: str = "envdiag_out"

    @classmethod
    def from_dict(cls, raw: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw)

    def merged(self, overrides: dict) -> "RunConfig":
        """New config with non-None override values taking precedence."""
        data = asdict(self)
        data.update({k: v for k, v in overrides.items() if v is not None})
        return RunConfig.from_dict(data)

    def validate(self) -> "RunConfig":
        if not self.data:
            raise ValueError("config must name a data file")
        if self.model not in _MODEL_NAMES:
            raise ValueError(f"unknown model {self.model!r}")
        for p in self.plots:
            if p not in _PLOT_NAMES:
                raise ValueError(f"unknown plot kind {p!r}")
        if self.B < 19:
            raise ValueError("B must be at least 19")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.m_grid < 1:
            raise ValueError("m_grid must be positive")
        return self


def load_csv(
    path: str,
    response: str = "y",
    predictors: Optional[list[str]] = None,
    group: Optional[str] = None,
) -> Dataset:
    """Read a header CSV into a Dataset, prepending the intercept column.

    Group labels may be arbitrary strings; they are re-encoded to
    contiguous integers in order of first appearance.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise EmptyFile(f"{path} has no header row") from None
        header = [h.strip() for h in header]
        rows = [r for r in reader if r and any(cell.strip() for cell in r)]
    if not rows:
        raise EmptyFile(f"{path} has no data rows")

    if predictors is None:
        predictors = [
            c for c in header if c != response and c != group
        ]
    for col in [response, *predictors] + ([group] if group else []):
        if col not in header:
            raise MissingColumn(f"column {col!r} not found in {path}")
    idx = {c: header.index(c) for c in header}

    def parse(cell: str, line: int, col: str) -> float:
        try:
            val = float(cell)
        except ValueError:
            raise NonNumericCell(
                f"cell {cell!r} at row {line}, column {col!r} is not numeric",
                row=line,
                column=col,
            ) from None
        if not np.isfinite(val):
            raise NonNumericCell(
                f"cell {cell!r} at row {line}, column {col!r} is not finite",
                row=line,
                column=col,
            )
        return val

    n = len(rows)
    y = np.empty(n)
    X = np.ones((n, 1 + len(predictors)))
    grp = None
    labels: dict[str, int] = {}
    if group:
        grp = np.empty(n, dtype=int)
    for i, row in enumerate(rows):
        line = i + 2  # 1-based, after the header
        y[i] = parse(row[idx[response]].strip(), line, response)
        for j, col in enumerate(predictors):
            X[i, 1 + j] = parse(row[idx[col]].strip(), line, col)
        if group:
            label = row[idx[group]].strip()
            grp[i] = labels.setdefault(label, len(labels))
    return Dataset(y=y, X=X, group=grp)


@dataclass(frozen=True)
class PlotArtifact:
    kind: str
    svg_path: str
    csv_path: str
    reject: bool
    p_value: float


def _write_artifact_csv(path: Path, result: DiagnosticResult) -> None:
    env = result.envelope
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("grid,observed,center,lower,upper\n")
        for g, o, c, lo, up in zip(
            result.grid, result.observed, env.center, env.lower, env.upper
        ):
            fh.write(
                f"{_fmt(g)},{_fmt(o)},{_fmt(c)},{_fmt(lo)},{_fmt(up)}\n"
            )


def run_diagnose(config: RunConfig) -> list[PlotArtifact]:
    """Fit the configured model and emit SVG + CSV per requested plot.

    On any failure every file written so far is removed, so an output
    directory never holds a partial run.
    """
    config.validate()
    d = load_csv(config.data, config.response, config.predictors, config.group)
    validate_dataset(d)
    kind = _MODEL_NAMES[config.model]
    if kind is ModelKind.GLMM_POISSON_RI and d.group is None:
        raise ValueError("model poisson-ri needs a group column")
    out_dir = Path(config.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    written: list[Path] = []
    artifacts: list[PlotArtifact] = []
    try:
        m = fit_model(d, kind)
        plot_kinds = tuple(_PLOT_NAMES[p] for p in config.plots)
        results, _ = diagnose_model(
            m,
            kinds=plot_kinds,
            B=config.B,
            alpha=config.alpha,
            seed=config.seed,
            m_grid=config.m_grid,
        )
        for pk in plot_kinds:
            res = results[pk]
            csv_path = out_dir / f"{pk.value}.csv"
            svg_path = out_dir / f"{pk.value}.svg"
            _write_artifact_csv(csv_path, res)
            written.append(csv_path)
            svg_path.write_text(
                render_diagnostic(res, title=f"{config.model}: {pk.value}",
                                  alpha=config.alpha),
                encoding="utf-8",
            )
            written.append(svg_path)
            artifacts.append(
                PlotArtifact(
                    kind=pk.value,
                    svg_path=str(svg_path),
                    csv_path=str(csv_path),
                    reject=res.reject,
                    p_value=res.p_value,
                )
            )
    except Exception:
        for path in written:
            try:
                os.unlink(path)
            except OSError:
                pass
        raise
    return artifacts


# ---------------------------------------------------------------------
# power study
# ---------------------------------------------------------------------


def _specs_from_config(cfg: dict) -> list[ScenarioSpec]:
    common = {
        "n_datasets": int(cfg.get("n_datasets", 200)),
        "B": int(cfg.get("B", 99)),
        "alpha": float(cfg.get("alpha", 0.05)),
        "seed": int(cfg.get("seed", 0)),
        "x_design": cfg.get("x_design", "equispaced"),
        "m_grid": int(cfg.get("m_grid", 64)),
    }
    if "scenarios" in cfg:
        specs = []
        for cell in cfg["scenarios"]:
            params = dict(common)
            params.update(
                {k: v for k, v in cell.items()
                 if k not in ("model", "violation", "n")}
            )
            specs.append(
                ScenarioSpec(
                    model=_MODEL_NAMES[cell["model"]],
                    violation=_VIOLATION_NAMES[cell["violation"]],
                    n=int(cell["n"]),
                    **params,
                )
            )
        return specs
    models = [_MODEL_NAMES[m] for m in cfg["models"]]
    violations = [_VIOLATION_NAMES[v] for v in cfg["violations"]]
    sizes = [int(n) for n in cfg["sample_sizes"]]
    return [
        ScenarioSpec(model=m, violation=v, n=n, **common)
        for m in models
        for v in violations
        for n in sizes
    ]


def run_power_study(
    config: dict | str,
    out_dir: str,
    workers: Optional[int] = None,
) -> tuple[str, str]:
    """Run a scenario grid; write rates.csv and manifest.json.

    ``config`` is a dict or a path to a JSON file, either listing
    explicit ``scenarios`` cells or giving the cross product of
    ``models`` x ``violations`` x ``sample_sizes``.
    """
    if isinstance(config, str):
        with open(config, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    else:
        cfg = dict(config)
    specs = _specs_from_config(cfg)
    table, results = run_grid(specs, workers=workers)

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "rates.csv"
    manifest_path = out / "manifest.json"
    csv_path.write_text(table.to_csv(), encoding="utf-8")
    manifest = {
        "version": __version__,
        "config": cfg,
        "workers": resolve_workers(workers),
        "scenarios": [
            {
                "model": r.spec.model.value,
                "violation": r.spec.violation.value,
                "n": r.spec.n,
                "n_datasets": r.spec.n_datasets,
                "B": r.spec.B,
                "alpha": r.spec.alpha,
                "seed": r.spec.seed,
                "n_ok": r.n_ok,
                "n_failed": r.n_failed,
            }
            for r in results
        ],
    }
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    return str(csv_path), str(manifest_path)
