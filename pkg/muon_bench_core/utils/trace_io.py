"""
Trace files

One CSV file per seed. The first line is a comment header

    # muon-bench-trace version=1 digest=<sha256> seed=<int> T=<int> finalized=<0|1>

followed by the column line and T rows. The header is first written with
finalized=0 and rewritten in place with finalized=1 after the last row, so a
crashed writer leaves a file that read_trace refuses.
Floats are written with 17 significant digits and read back exactly.
"""
import math
from pathlib import Path
from typing import Dict, List, Union

import pandas as pd
from loguru import logger

from muon_bench_core.config import settings
from muon_bench_core.exceptions import DigestMismatchError, TraceFormatError
from muon_bench_core.models.trace import TRACE_COLUMNS, StepTrace, TraceFile

TRACE_MAGIC = "muon-bench-trace"
TRACE_GLOB = "trace_seed*.csv"

_INT_COLUMNS = ("t", "rank")
_BOOL_COLUMNS = ("skipped",)


def trace_filename(seed: int) -> str:
    return f"trace_seed{seed:06d}.csv"


def _header(version: int, digest: str, seed: int, horizon: int, finalized: bool) -> str:
    return (
        f"# {TRACE_MAGIC} version={version} digest={digest} seed={seed} "
        f"T={horizon} finalized={int(finalized)}\n"
    )


def traces_to_frame(rows: List[StepTrace]) -> pd.DataFrame:
    frame = pd.DataFrame([row.as_row() for row in rows], columns=list(TRACE_COLUMNS))
    for column in _BOOL_COLUMNS:
        frame[column] = frame[column].astype(int)
    return frame


def write_trace(trace: TraceFile, directory: Union[str, Path]) -> Path:
    """
    Write one trace crash-safely

    :return: path of the written file
    """
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    path = directory / trace_filename(trace.seed)
    frame = traces_to_frame(trace.rows)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(_header(trace.version, trace.digest, trace.seed, trace.horizon, False))
        frame.to_csv(fh, index=False, float_format="%.17g", lineterminator="\n")
        fh.flush()
        fh.seek(0)
        fh.write(_header(trace.version, trace.digest, trace.seed, trace.horizon, True))
    logger.debug("Wrote {} rows to {}", trace.horizon, path)
    return path


def _parse_header(line: str, path: str) -> Dict[str, str]:
    parts = line.strip().split()
    if len(parts) < 2 or parts[0] != "#" or parts[1] != TRACE_MAGIC:
        raise TraceFormatError("missing trace header", path, 0)
    fields: Dict[str, str] = {}
    for item in parts[2:]:
        key, sep, value = item.partition("=")
        if not sep:
            raise TraceFormatError(f"bad header field {item!r}", path, 0)
        fields[key] = value
    for key in ("version", "digest", "seed", "T", "finalized"):
        if key not in fields:
            raise TraceFormatError(f"header lacks {key}", path, 0)
    return fields


def _parse_row(record: Dict[str, str], path: str, row: int) -> StepTrace:
    values = {}
    for column in TRACE_COLUMNS:
        text = record[column].strip()
        try:
            if column in _INT_COLUMNS:
                values[column] = int(text)
            elif column in _BOOL_COLUMNS:
                if text not in ("0", "1"):
                    raise ValueError(text)
                values[column] = text == "1"
            else:
                value = float(text)
                if not math.isfinite(value):
                    raise ValueError(text)
                values[column] = value
        except ValueError:
            raise TraceFormatError(f"column {column}: cannot parse {text!r}", path, row) from None
    trace = StepTrace(**values)
    problem = trace.validate()
    if problem is not None:
        raise TraceFormatError(problem, path, row)
    return trace


def read_trace(path: Union[str, Path]) -> TraceFile:
    """
    Read and validate one trace file

    :raises TraceFormatError: bad header, partial file, wrong columns or a bad row
        (row numbers count data rows from 1)
    """
    path_str = str(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = _parse_header(fh.readline(), path_str)
        if header["finalized"] != "1":
            logger.warning("Trace {} was not finalized", path_str)
            raise TraceFormatError("trace was not finalized (partial write)", path_str)
        try:
            frame = pd.read_csv(fh, dtype=str, keep_default_na=False)
        except (pd.errors.ParserError, pd.errors.EmptyDataError) as exc:
            raise TraceFormatError(f"unreadable rows: {exc}", path_str) from exc

    if tuple(frame.columns) != TRACE_COLUMNS:
        raise TraceFormatError(f"columns {list(frame.columns)} != {list(TRACE_COLUMNS)}", path_str)

    rows = [
        _parse_row(record, path_str, index)
        for index, record in enumerate(frame.to_dict("records"), start=1)
    ]
    horizon = int(header["T"])
    if len(rows) != horizon:
        raise TraceFormatError(f"header says T={horizon}, found {len(rows)} rows", path_str)
    for index, row in enumerate(rows, start=1):
        if row.t != index:
            raise TraceFormatError(f"expected t={index}, found t={row.t}", path_str, index)

    version = int(header["version"])
    if version != settings.trace_version:
        raise TraceFormatError(f"unsupported trace version {version}", path_str)
    return TraceFile(
        digest=header["digest"],
        seed=int(header["seed"]),
        rows=rows,
        version=version,
        finalized=True,
        path=path_str,
    )


def read_trace_dir(
    directory: Union[str, Path], require_single_digest: bool = True
) -> List[TraceFile]:
    """
    Read every trace in a directory, sorted by seed

    :raises DigestMismatchError: traces from more than one config
    """
    paths = sorted(Path(directory).glob(TRACE_GLOB))
    if not paths:
        raise TraceFormatError(f"no {TRACE_GLOB} files", str(directory))
    traces = sorted((read_trace(p) for p in paths), key=lambda tr: tr.seed)
    digests = {trace.digest for trace in traces}
    if require_single_digest and len(digests) > 1:
        raise DigestMismatchError(
            f"{directory} mixes {len(digests)} config digests: {sorted(d[:12] for d in digests)}"
        )
    logger.info("Read {} traces from {}", len(traces), directory)
    return traces
