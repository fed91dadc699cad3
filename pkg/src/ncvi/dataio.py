"""Text file formats: sparse corpora, labeled instances, fitted parameters,
Gaussian posteriors, and metric CSVs.

Everything is plain text so golden files diff cleanly; floats are written
with 17 significant digits, which round-trips doubles exactly.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .ctm import CtmParams
from .evaluate import MetricReport
from .model import Document, GaussianVariational, LabeledInstance

__all__ = [
    "ParseError",
    "parse_corpus",
    "parse_labeled",
    "save_ctm_params",
    "load_ctm_params",
    "save_posterior",
    "load_posterior",
    "write_metrics_csv",
]

_FLOAT_FMT = "%.17g"


class ParseError(ValueError):
    def __init__(self, path, line_no: int, message: str):
        self.path = str(path)
        self.line_no = line_no
        super().__init__(f"{path}:{line_no}: {message}")


def _read_lines(path) -> list[str]:
    try:
        text = Path(path).read_text()
    except OSError as err:
        raise ParseError(path, 0, f"cannot read file: {err}") from err
    return text.splitlines()


def _header_int(path, lines: list[str], tag: str) -> int:
    if not lines:
        raise ParseError(path, 1, f'missing header line "{tag} <int>"')
    parts = lines[0].split()
    if len(parts) != 2 or parts[0] != tag:
        raise ParseError(path, 1, f'header must be "{tag} <int>", got {lines[0]!r}')
    try:
        value = int(parts[1])
    except ValueError:
        raise ParseError(path, 1, f"header size {parts[1]!r} is not an integer") from None
    if value < 1:
        raise ParseError(path, 1, f"declared size must be positive, got {value}")
    return value


def parse_corpus(path, warn=None) -> tuple[list[Document], int]:
    """Read a sparse bag-of-words file: header "V <int>", then one document
    per line as "N idx:count ..." with N unique 0-based term ids below V.

    Empty documents ("0" lines) are accepted; each is reported through the
    optional warn callback.
    """
    lines = _read_lines(path)
    vocab_size = _header_int(path, lines, "V")
    documents: list[Document] = []
    for offset, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        try:
            declared = int(parts[0])
        except ValueError:
            raise ParseError(path, offset, f"term count {parts[0]!r} is not an integer") from None
        pairs = parts[1:]
        if len(pairs) != declared:
            raise ParseError(
                path, offset,
                f"declared {declared} terms but found {len(pairs)} idx:count pairs",
            )
        counts: dict[int, int] = {}
        for pos, pair in enumerate(pairs, start=1):
            idx_s, _, count_s = pair.partition(":")
            try:
                idx, count = int(idx_s), int(count_s)
            except ValueError:
                raise ParseError(
                    path, offset, f"pair {pos} ({pair!r}) is not idx:count"
                ) from None
            if idx < 0 or idx >= vocab_size:
                raise ParseError(
                    path, offset,
                    f"term id {idx} outside the declared vocabulary of {vocab_size}",
                )
            if count <= 0:
                raise ParseError(path, offset, f"count for term {idx} must be positive")
            if idx in counts:
                raise ParseError(path, offset, f"duplicate term id {idx}")
            counts[idx] = count
        if not counts and warn is not None:
            warn(f"{path}:{offset}: empty document")
        documents.append(Document(counts))
    return documents, vocab_size


def parse_labeled(path) -> tuple[list[LabeledInstance], int]:
    """Read labeled instances: header "P <int>", then "label idx:value ..."
    per line with label in {0,1} and unlisted covariates equal to zero."""
    lines = _read_lines(path)
    dim = _header_int(path, lines, "P")
    instances: list[LabeledInstance] = []
    for offset, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if parts[0] not in ("0", "1"):
            raise ParseError(path, offset, f"label must be 0 or 1, got {parts[0]!r}")
        label = int(parts[0])
        covariates = np.zeros(dim)
        seen: set[int] = set()
        for pos, pair in enumerate(parts[1:], start=1):
            idx_s, _, value_s = pair.partition(":")
            try:
                idx = int(idx_s)
                value = float(value_s)
            except ValueError:
                raise ParseError(
                    path, offset, f"pair {pos} ({pair!r}) is not idx:value"
                ) from None
            if idx < 0 or idx >= dim:
                raise ParseError(
                    path, offset, f"covariate id {idx} outside dimension {dim}"
                )
            if idx in seen:
                raise ParseError(path, offset, f"duplicate covariate id {idx}")
            if not np.isfinite(value):
                raise ParseError(path, offset, f"covariate {idx} value is not finite")
            seen.add(idx)
            covariates[idx] = value
        z = (1, 0) if label == 1 else (0, 1)
        instances.append(LabeledInstance(covariates, z))
    return instances, dim


def _format_row(values) -> str:
    return " ".join(_FLOAT_FMT % v for v in np.asarray(values, dtype=float))


def save_ctm_params(params: CtmParams, path) -> None:
    k, v = params.num_topics, params.vocab_size
    out = [f"{k} {v}"]
    out.extend(_format_row(row) for row in params.topics)
    out.append(_format_row(params.prior_mean))
    out.extend(_format_row(row) for row in params.prior_cov)
    Path(path).write_text("\n".join(out) + "\n")


def _parse_floats(path, line_no: int, line: str, expect: int) -> np.ndarray:
    parts = line.split()
    if len(parts) != expect:
        raise ParseError(path, line_no, f"expected {expect} values, found {len(parts)}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError:
        raise ParseError(path, line_no, "non-numeric value") from None


def load_ctm_params(path) -> CtmParams:
    lines = _read_lines(path)
    if not lines:
        raise ParseError(path, 1, 'missing header line "K V"')
    head = lines[0].split()
    if len(head) != 2:
        raise ParseError(path, 1, f'header must be "K V", got {lines[0]!r}')
    try:
        k, v = int(head[0]), int(head[1])
    except ValueError:
        raise ParseError(path, 1, "header sizes must be integers") from None
    need = 1 + k + 1 + k
    if len(lines) < need:
        raise ParseError(path, len(lines), f"expected {need} lines, found {len(lines)}")
    topics = np.stack(
        [_parse_floats(path, 2 + i, lines[1 + i], v) for i in range(k)]
    )
    mean = _parse_floats(path, 2 + k, lines[1 + k], k)
    cov = np.stack(
        [_parse_floats(path, 3 + k + i, lines[2 + k + i], k) for i in range(k)]
    )
    try:
        return CtmParams(topics, mean, cov)
    except ValueError as err:
        raise ParseError(path, 1, f"invalid model values: {err}") from None


def save_posterior(q: GaussianVariational, path) -> None:
    out = [str(q.dim), _format_row(q.mu)]
    out.extend(_format_row(row) for row in q.sigma)
    Path(path).write_text("\n".join(out) + "\n")


def load_posterior(path) -> GaussianVariational:
    lines = _read_lines(path)
    if not lines:
        raise ParseError(path, 1, "missing dimension header")
    try:
        p = int(lines[0].split()[0])
    except (ValueError, IndexError):
        raise ParseError(path, 1, f"dimension header {lines[0]!r} is not an integer") from None
    if p < 1:
        raise ParseError(path, 1, f"dimension must be positive, got {p}")
    if len(lines) < 2 + p:
        raise ParseError(path, len(lines), f"expected {2 + p} lines, found {len(lines)}")
    mu = _parse_floats(path, 2, lines[1], p)
    sigma = np.stack([_parse_floats(path, 3 + i, lines[2 + i], p) for i in range(p)])
    return GaussianVariational(mu, sigma)


def write_metrics_csv(reports, path, extra_summary=None) -> None:
    """Emit "unit_id,metric,value" rows followed by summary rows holding each
    metric's mean, its unit count, and any run settings worth recording."""
    if isinstance(reports, MetricReport):
        reports = [reports]
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["unit_id", "metric", "value"])
        for report in reports:
            for unit, value in zip(report.unit_ids, report.values):
                writer.writerow([unit, report.metric, _FLOAT_FMT % value])
        for report in reports:
            if report.count:
                writer.writerow(
                    ["summary", f"{report.metric}_mean", _FLOAT_FMT % report.mean]
                )
            writer.writerow(["summary", f"{report.metric}_count", str(report.count)])
        for key, value in (extra_summary or {}).items():
            writer.writerow(["summary", key, str(value)])
