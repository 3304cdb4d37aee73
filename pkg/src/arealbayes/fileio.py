"""CSV schemas and archive persistence.

All inputs and outputs are UTF-8 CSV with a mandatory header row. Empty
cells mean "missing". Writers are atomic (temp file in the same
directory, then rename) and format floats with ``repr``, so a fixed seed
yields byte-identical files. Schema violations raise
:class:`~arealbayes.errors.SchemaError` naming file, line and column.

Pinned formats:

    adjacency:  src,dst,weight          (0-based, each undirected edge once)
    areas:      area_id,name,group
    indicators: area_id,<col1>,...      (empty cell = missing)
    counts:     area_id,observed,expected   (empty observed = suppressed)
    covariates: area_id,ice,factor1..factorM
    strata:     area_id,stratum,population[,deaths]
    rates:      stratum,rate
    archive:    chain,iter,param,index,value  plus "<path>.meta" key = value
"""

from __future__ import annotations

import csv
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .errors import SchemaError
from .mcmc import ChainArchive, McmcConfig
from .prep import IndicatorPanel, StrataTable

__all__ = [
    "atomic_write",
    "read_adjacency",
    "write_adjacency",
    "read_areas",
    "write_areas",
    "read_indicators",
    "write_indicators",
    "read_counts",
    "write_counts",
    "read_covariates",
    "write_covariates",
    "read_strata",
    "write_strata",
    "read_rates",
    "write_rates",
    "read_archive",
    "write_archive",
    "read_config",
    "write_table",
]


@contextmanager
def atomic_write(path):
    """Write to a temp file beside ``path`` and rename on success."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            yield handle
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (float, np.floating)):
        value = float(value)  # np.float64 subclasses float but reprs differently
        if np.isnan(value):
            return ""
        return repr(value)
    if isinstance(value, (np.integer,)):
        return str(int(value))
    return str(value)


def _open_rows(path):
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: file not found")
    with open(path, encoding="utf-8", newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise SchemaError(f"{path}: empty file (header row is mandatory)")
    return rows


def _require_header(path, header, expected):
    if [h.strip() for h in header[: len(expected)]] != list(expected):
        raise SchemaError(
            f"{path}:1: header must start with {','.join(expected)}, "
            f"got {','.join(header)}"
        )


def _parse_float(path, lineno, column, cell, allow_empty=False):
    cell = cell.strip()
    if cell == "":
        if allow_empty:
            return float("nan")
        raise SchemaError(f"{path}:{lineno}: column {column!r}: value required")
    try:
        return float(cell)
    except ValueError:
        raise SchemaError(
            f"{path}:{lineno}: column {column!r}: expected a number, got {cell!r}"
        ) from None


def write_table(path, header, rows) -> None:
    """Generic CSV writer used by all the writers below."""
    with atomic_write(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(cell) for cell in row])


# -- adjacency ---------------------------------------------------------------


def read_adjacency(path) -> list[tuple[int, int, float]]:
    rows = _open_rows(path)
    _require_header(path, rows[0], ("src", "dst", "weight"))
    edges = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < 3:
            raise SchemaError(f"{path}:{lineno}: expected 3 columns src,dst,weight")
        src = _parse_float(path, lineno, "src", row[0])
        dst = _parse_float(path, lineno, "dst", row[1])
        w = _parse_float(path, lineno, "weight", row[2])
        if src != int(src) or dst != int(dst):
            raise SchemaError(f"{path}:{lineno}: src and dst must be integers")
        edges.append((int(src), int(dst), w))
    return edges


def write_adjacency(path, graph) -> None:
    write_table(path, ("src", "dst", "weight"), graph.edges())


# -- area metadata -----------------------------------------------------------


def read_areas(path) -> tuple[list[str], list[str], list[str]]:
    rows = _open_rows(path)
    _require_header(path, rows[0], ("area_id", "name", "group"))
    ids, names, groups = [], [], []
    for row in rows[1:]:
        if not row or all(not c.strip() for c in row):
            continue
        ids.append(row[0].strip())
        names.append(row[1].strip() if len(row) > 1 else "")
        groups.append(row[2].strip() if len(row) > 2 else "")
    return ids, names, groups


def write_areas(path, area_ids, names=None, groups=None) -> None:
    names = names or list(area_ids)
    groups = groups or [""] * len(area_ids)
    write_table(path, ("area_id", "name", "group"), zip(area_ids, names, groups))


# -- indicator panel ---------------------------------------------------------


def read_indicators(path) -> IndicatorPanel:
    rows = _open_rows(path)
    header = [h.strip() for h in rows[0]]
    if not header or header[0] != "area_id":
        raise SchemaError(f"{path}:1: first column must be area_id")
    columns = header[1:]
    if not columns:
        raise SchemaError(f"{path}:1: no indicator columns")
    ids, data = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise SchemaError(
                f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}"
            )
        ids.append(row[0].strip())
        data.append(
            [
                _parse_float(path, lineno, col, cell, allow_empty=True)
                for col, cell in zip(columns, row[1:])
            ]
        )
    return IndicatorPanel(ids, columns, np.array(data, dtype=float))


def write_indicators(path, panel: IndicatorPanel) -> None:
    rows = (
        [panel.area_ids[i]] + [panel.values[i, p] for p in range(panel.n_indicators)]
        for i in range(panel.n_areas)
    )
    write_table(path, ["area_id"] + list(panel.columns), rows)


# -- counts ------------------------------------------------------------------


def read_counts(path) -> tuple[list[str], np.ndarray, np.ndarray]:
    rows = _open_rows(path)
    _require_header(path, rows[0], ("area_id", "observed", "expected"))
    ids, observed, expected = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) < 3:
            raise SchemaError(f"{path}:{lineno}: expected area_id,observed,expected")
        ids.append(row[0].strip())
        observed.append(_parse_float(path, lineno, "observed", row[1], allow_empty=True))
        expected.append(_parse_float(path, lineno, "expected", row[2]))
    return ids, np.array(observed), np.array(expected)


def write_counts(path, area_ids, observed, expected) -> None:
    rows = zip(area_ids, np.asarray(observed, dtype=float), np.asarray(expected, dtype=float))
    write_table(path, ("area_id", "observed", "expected"), rows)


# -- covariates --------------------------------------------------------------


def read_covariates(path) -> tuple[list[str], np.ndarray, np.ndarray, list[str]]:
    rows = _open_rows(path)
    header = [h.strip() for h in rows[0]]
    if len(header) < 2 or header[0] != "area_id" or header[1] != "ice":
        raise SchemaError(f"{path}:1: header must start with area_id,ice")
    factor_names = header[2:]
    ids, ice, factors = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise SchemaError(
                f"{path}:{lineno}: expected {len(header)} columns, got {len(row)}"
            )
        ids.append(row[0].strip())
        ice.append(_parse_float(path, lineno, "ice", row[1], allow_empty=True))
        factors.append(
            [
                _parse_float(path, lineno, col, cell, allow_empty=True)
                for col, cell in zip(factor_names, row[2:])
            ]
        )
    return (
        ids,
        np.array(ice),
        np.array(factors, dtype=float).reshape(len(ids), len(factor_names)),
        factor_names,
    )


def write_covariates(path, area_ids, ice, factors=None, factor_names=None) -> None:
    factors = np.zeros((len(area_ids), 0)) if factors is None else np.asarray(factors, float)
    factor_names = factor_names or [f"factor{j+1}" for j in range(factors.shape[1])]
    rows = (
        [area_ids[i], float(ice[i])] + [factors[i, j] for j in range(factors.shape[1])]
        for i in range(len(area_ids))
    )
    write_table(path, ["area_id", "ice"] + list(factor_names), rows)


# -- strata and reference rates ---------------------------------------------


def read_strata(path) -> StrataTable:
    rows = _open_rows(path)
    header = [h.strip() for h in rows[0]]
    has_deaths = header[:4] == ["area_id", "stratum", "population", "deaths"]
    if not has_deaths:
        _require_header(path, rows[0], ("area_id", "stratum", "population"))
    ids: list[str] = []
    strata: list[str] = []
    cells: dict[tuple[str, str], tuple[float, float]] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        area, stratum = row[0].strip(), row[1].strip()
        pop = _parse_float(path, lineno, "population", row[2])
        dth = (
            _parse_float(path, lineno, "deaths", row[3], allow_empty=True)
            if has_deaths and len(row) > 3
            else float("nan")
        )
        if area not in ids:
            ids.append(area)
        if stratum not in strata:
            strata.append(stratum)
        if (area, stratum) in cells:
            raise SchemaError(f"{path}:{lineno}: duplicate (area_id, stratum) pair")
        cells[(area, stratum)] = (pop, dth)
    population = np.zeros((len(ids), len(strata)))
    deaths = np.zeros((len(ids), len(strata)))
    for (area, stratum), (pop, dth) in cells.items():
        i, s = ids.index(area), strata.index(stratum)
        population[i, s] = pop
        if has_deaths:
            deaths[i, s] = dth  # NaN marks a suppressed cell
    return StrataTable(ids, strata, population, deaths if has_deaths else None)


def write_strata(path, strata: StrataTable) -> None:
    rows = []
    for i, area in enumerate(strata.area_ids):
        for s, stratum in enumerate(strata.strata):
            row = [area, stratum, strata.population[i, s]]
            if strata.deaths is not None:
                row.append(strata.deaths[i, s])
            rows.append(row)
    header = ["area_id", "stratum", "population"]
    if strata.deaths is not None:
        header.append("deaths")
    write_table(path, header, rows)


def read_rates(path) -> tuple[list[str], np.ndarray]:
    rows = _open_rows(path)
    _require_header(path, rows[0], ("stratum", "rate"))
    strata, rates = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        strata.append(row[0].strip())
        rates.append(_parse_float(path, lineno, "rate", row[1]))
    return strata, np.array(rates)


def write_rates(path, strata, rates) -> None:
    write_table(path, ("stratum", "rate"), zip(strata, np.asarray(rates, float)))


# -- chain archives ----------------------------------------------------------


def write_archive(archive: ChainArchive, path) -> None:
    """Long-format draw file plus a "<path>.meta" sidecar.

    The sidecar keeps only deterministic keys (sampler config and model
    identity), never wall time, so repeated runs are byte-identical.
    """
    path = Path(path)
    with atomic_write(path) as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(("chain", "iter", "param", "index", "value"))
        for c, chain in enumerate(archive.chains):
            for name in sorted(chain):
                draws = chain[name]
                flat = draws.reshape(draws.shape[0], -1)
                for s, iteration in enumerate(archive.iterations):
                    for idx in range(flat.shape[1]):
                        writer.writerow(
                            (c, iteration, name, idx, _fmt(float(flat[s, idx])))
                        )
    cfg = archive.config
    with atomic_write(str(path) + ".meta") as handle:
        for key, value in (
            ("n_chains", cfg.n_chains),
            ("n_iter", cfg.n_iter),
            ("burn_in", cfg.burn_in),
            ("thin", cfg.thin),
            ("seed", cfg.seed),
        ):
            handle.write(f"{key} = {value}\n")
        for name in archive.param_names:
            shape = archive.shape(name)
            handle.write(
                f"param.{name} = {'scalar' if not shape else shape[0]}\n"
            )
        for key in sorted(archive.metadata):
            if key == "wall_time_s":  # nondeterministic, stays in memory only
                continue
            handle.write(f"{key} = {archive.metadata[key]}\n")


def read_archive(path) -> ChainArchive:
    path = Path(path)
    meta = read_config(str(path) + ".meta")
    config = McmcConfig(
        n_chains=int(meta.pop("n_chains")),
        n_iter=int(meta.pop("n_iter")),
        burn_in=int(meta.pop("burn_in")),
        thin=int(meta.pop("thin")),
        seed=int(meta.pop("seed")),
    )
    scalars = set()
    for key in [k for k in meta if k.startswith("param.")]:
        if meta[key] == "scalar":
            scalars.add(key[len("param."):])
        meta.pop(key)
    rows = _open_rows(path)
    _require_header(path, rows[0], ("chain", "iter", "param", "index", "value"))
    values: dict[tuple[int, str], dict[tuple[int, int], float]] = {}
    widths: dict[str, int] = {}
    iter_order: list[int] = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row or all(not c.strip() for c in row):
            continue
        c = int(row[0])
        iteration = int(row[1])
        name = row[2].strip()
        idx = int(row[3])
        val = _parse_float(path, lineno, "value", row[4])
        values.setdefault((c, name), {})[(iteration, idx)] = val
        widths[name] = max(widths.get(name, 0), idx + 1)
        if c == 0 and iteration not in iter_order:
            iter_order.append(iteration)
    n_chains = 1 + max(c for c, _ in values)
    chains = []
    for c in range(n_chains):
        chain = {}
        for name, width in widths.items():
            arr = np.empty((len(iter_order), width))
            cell = values[(c, name)]
            for s, iteration in enumerate(iter_order):
                for idx in range(width):
                    arr[s, idx] = cell[(iteration, idx)]
            chain[name] = arr[:, 0] if name in scalars else arr
        chains.append(chain)
    return ChainArchive(chains, np.array(iter_order), config, metadata=dict(meta))


def read_config(path) -> dict[str, str]:
    """Plain-text ``key = value`` file; '#' starts a comment."""
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: file not found")
    out = {}
    with open(path, encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise SchemaError(f"{path}:{lineno}: expected 'key = value'")
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out
