"""Per-row entropy and IID checks over a restart matrix of shared secrets.

Four tests run on every 256-bit row:

* MCV: most-common-value count, min-entropy ``-log2(mcv/256)`` and an exact
  two-tailed binomial p-value, pass iff p >= 5e-6.
* Independence: 8 blocks of 32 bits, chi-square of the 0/1 counts against
  16/16, pass iff statistic <= 24.322 (dof 7).
* Goodness of fit: 128 two-bit symbols, chi-square against 32 each, pass iff
  statistic <= 13.816.  The p-value uses dof 2 to keep the published decision
  rule, although four categories would normally give dof 3.
* LRS: length of the longest substring occurring twice (overlaps allowed),
  pass iff <= 24.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.stats import chi2

ROWS = 1000
COLS = 256

MCV_P_THRESHOLD = 0.000005
INDEPENDENCE_BLOCKS = 8
INDEPENDENCE_DOF = 7
INDEPENDENCE_THRESHOLD = 24.322
GF_DOF = 2
GF_THRESHOLD = 13.816
LRS_THRESHOLD = 24

TESTS = ("mcv", "independence", "gf", "lrs")


class RowLengthError(ValueError):
    pass


class CollectionError(RuntimeError):
    def __init__(self, row: int, cause: BaseException) -> None:
        super().__init__(f"source failed while producing row {row}: {cause}")
        self.row = row


@dataclass(frozen=True)
class RestartMatrix:
    bits: np.ndarray  # shape (rows, cols), dtype uint8, values 0/1

    def __post_init__(self) -> None:
        if self.bits.ndim != 2:
            raise ValueError("restart matrix must be two-dimensional")
        if self.bits.size and not np.isin(self.bits, (0, 1)).all():
            raise ValueError("restart matrix holds values other than 0/1")

    @property
    def rows(self) -> int:
        return self.bits.shape[0]

    @property
    def cols(self) -> int:
        return self.bits.shape[1]

    @classmethod
    def from_rows(cls, rows: Sequence[Union[bytes, str, Sequence[int]]], cols: int = COLS) -> RestartMatrix:
        arr = np.array([_row_bits(r) for r in rows], dtype=np.uint8).reshape(len(rows), -1)
        if len(rows) and arr.shape[1] != cols:
            raise RowLengthError(f"rows have {arr.shape[1]} bits, expected {cols}")
        return cls(arr)

    def to_bytes(self) -> bytes:
        return np.packbits(self.bits, axis=1).tobytes()

    def to_hex_lines(self) -> str:
        return "".join(row.tobytes().hex() + "\n" for row in np.packbits(self.bits, axis=1))

    @classmethod
    def from_bytes(cls, data: bytes, cols: int = COLS) -> RestartMatrix:
        width = cols // 8
        if cols % 8 or len(data) % width:
            raise RowLengthError(f"{len(data)} bytes is not a whole number of {cols}-bit rows")
        raw = np.frombuffer(data, dtype=np.uint8).reshape(-1, width)
        return cls(np.unpackbits(raw, axis=1))

    @classmethod
    def from_hex_lines(cls, text: str, cols: int = COLS) -> RestartMatrix:
        rows = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            if len(line) * 4 != cols:
                raise RowLengthError(f"line {lineno}: {len(line)} hex chars, expected {cols // 4}")
            try:
                rows.append(bytes.fromhex(line))
            except ValueError as exc:
                raise ValueError(f"line {lineno}: not hex") from exc
        return cls.from_rows(rows, cols)

    @classmethod
    def load(cls, path: Union[str, Path], cols: int = COLS) -> RestartMatrix:
        """Hex-line text for ``.hex``/``.txt`` files, raw binary otherwise."""
        path = Path(path)
        if path.suffix.lower() in (".hex", ".txt"):
            return cls.from_hex_lines(path.read_text(), cols)
        return cls.from_bytes(path.read_bytes(), cols)


def _row_bits(row) -> list[int]:
    if isinstance(row, (bytes, bytearray)):
        return np.unpackbits(np.frombuffer(bytes(row), dtype=np.uint8)).tolist()
    if isinstance(row, str):
        return [int(c) for c in row]
    return [int(b) for b in row]


def _as_row(row, cols: int = COLS) -> np.ndarray:
    arr = np.asarray(row if isinstance(row, np.ndarray) else _row_bits(row), dtype=np.uint8)
    if arr.shape != (cols,):
        raise RowLengthError(f"row must have {cols} bits, got {arr.size}")
    return arr


def collect_matrix(source: Callable[[int], bytes], rows: int = ROWS, cols: int = COLS) -> RestartMatrix:
    """Call ``source(row_index)`` for every row and stack the outputs."""
    out = np.empty((rows, cols), dtype=np.uint8)
    for i in range(rows):
        try:
            out[i] = _as_row(source(i), cols)
        except Exception as exc:
            raise CollectionError(i, exc) from exc
    return RestartMatrix(out)


# --- MCV -------------------------------------------------------------------

@dataclass(frozen=True)
class McvResult:
    row_index: int
    mcv: int
    min_entropy: float
    p_value: float
    passed: bool


@lru_cache(maxsize=None)
def mcv_p_value(mcv: int, n: int = COLS) -> float:
    """P(max(X, n-X) >= mcv) for X ~ Binomial(n, 1/2), summed exactly in integers."""
    if not n / 2 <= mcv <= n:
        raise ValueError(f"mcv must lie in [{n / 2}, {n}]")
    ways = sum(math.comb(n, k) for k in range(n + 1) if max(k, n - k) >= mcv)
    return float(Fraction(ways, 2 ** n))


def mcv_test(row, row_index: int = 0) -> McvResult:
    bits = _as_row(row)
    ones = int(bits.sum())
    mcv = max(ones, COLS - ones)
    min_entropy = -math.log2(mcv / COLS)
    p = mcv_p_value(mcv)
    return McvResult(row_index, mcv, min_entropy, p, p >= MCV_P_THRESHOLD)


# --- chi-square tests ------------------------------------------------------

@dataclass(frozen=True)
class ChiSquareResult:
    row_index: int
    statistic: float
    dof: int
    p_value: float
    passed: bool


def independence_test(row, row_index: int = 0) -> ChiSquareResult:
    bits = _as_row(row)
    ones = bits.reshape(INDEPENDENCE_BLOCKS, -1).sum(axis=1).astype(float)
    per_block = COLS / INDEPENDENCE_BLOCKS
    expected = per_block / 2
    zeros = per_block - ones
    stat = float((((ones - expected) ** 2).sum() + ((zeros - expected) ** 2).sum()) / expected)
    return ChiSquareResult(row_index, stat, INDEPENDENCE_DOF, float(chi2.sf(stat, INDEPENDENCE_DOF)),
                           stat <= INDEPENDENCE_THRESHOLD)


def gf_counts(row) -> np.ndarray:
    """Counts of the symbols 00, 01, 10, 11 over non-overlapping bit pairs."""
    bits = _as_row(row)
    symbols = bits[0::2] * 2 + bits[1::2]
    return np.bincount(symbols, minlength=4)


def gf_statistic(counts: Sequence[int]) -> float:
    counts = np.asarray(counts, dtype=float)
    expected = counts.sum() / len(counts)
    return float(((counts - expected) ** 2).sum() / expected)


def gf_test(row, row_index: int = 0) -> ChiSquareResult:
    stat = gf_statistic(gf_counts(row))
    return ChiSquareResult(row_index, stat, GF_DOF, float(chi2.sf(stat, GF_DOF)), stat <= GF_THRESHOLD)


# --- LRS -------------------------------------------------------------------

@dataclass(frozen=True)
class LrsResult:
    row_index: int
    longest_run_length: int
    passed: bool


def longest_repeated_substring(s: str) -> int:
    """Suffix sorting plus adjacent common prefixes; overlapping repeats count."""
    suffixes = sorted(range(len(s)), key=lambda i: s[i:])
    best = 0
    for a, b in zip(suffixes, suffixes[1:]):
        k = 0
        limit = len(s) - max(a, b)
        while k < limit and s[a + k] == s[b + k]:
            k += 1
        best = max(best, k)
    return best


def lrs_test(row, row_index: int = 0) -> LrsResult:
    bits = _as_row(row)
    length = longest_repeated_substring("".join("1" if b else "0" for b in bits))
    return LrsResult(row_index, length, length <= LRS_THRESHOLD)


# --- suite -----------------------------------------------------------------

@dataclass
class ValidationReport:
    mcv: list[McvResult] = field(default_factory=list)
    independence: list[ChiSquareResult] = field(default_factory=list)
    gf: list[ChiSquareResult] = field(default_factory=list)
    lrs: list[LrsResult] = field(default_factory=list)

    def results(self, test: str) -> list:
        return getattr(self, test)

    def failing_rows(self, test: Optional[str] = None) -> list[int]:
        tests = (test,) if test else TESTS
        return sorted({r.row_index for t in tests for r in self.results(t) if not r.passed})

    @property
    def passed(self) -> bool:
        return not self.failing_rows()

    def summary(self) -> dict[str, dict[str, float]]:
        """Five-number summaries of every plotted quantity."""
        quantities = {
            "mcv.p_value": [r.p_value for r in self.mcv],
            "mcv.min_entropy": [r.min_entropy for r in self.mcv],
            "independence.statistic": [r.statistic for r in self.independence],
            "independence.p_value": [r.p_value for r in self.independence],
            "gf.statistic": [r.statistic for r in self.gf],
            "gf.p_value": [r.p_value for r in self.gf],
            "lrs.length": [float(r.longest_run_length) for r in self.lrs],
        }
        out = {}
        for name, values in quantities.items():
            if values:
                q = np.quantile(np.asarray(values, dtype=float), [0, 0.25, 0.5, 0.75, 1.0])
                out[name] = dict(zip(("min", "q1", "median", "q3", "max"), map(float, q)))
        return out

    def to_text(self) -> str:
        lines = []
        for i, m in enumerate(self.mcv):
            ind, gf, lrs = self.independence[i], self.gf[i], self.lrs[i]
            lines.append(f"row={m.row_index} test=mcv mcv={m.mcv} min_entropy={m.min_entropy:.6f} "
                         f"p_value={m.p_value:.6e} pass={int(m.passed)}")
            lines.append(f"row={ind.row_index} test=independence statistic={ind.statistic:.6f} "
                         f"dof={ind.dof} p_value={ind.p_value:.6e} pass={int(ind.passed)}")
            lines.append(f"row={gf.row_index} test=gf statistic={gf.statistic:.6f} "
                         f"dof={gf.dof} p_value={gf.p_value:.6e} pass={int(gf.passed)}")
            lines.append(f"row={lrs.row_index} test=lrs length={lrs.longest_run_length} "
                         f"pass={int(lrs.passed)}")
        lines.append("# summary")
        for name, stats in self.summary().items():
            lines.append(name + " " + " ".join(f"{k}={v:.6e}" for k, v in stats.items()))
        for test in TESTS:
            failing = self.failing_rows(test)
            lines.append(f"failing.{test} count={len(failing)} rows={','.join(map(str, failing)) or '-'}")
        lines.append(f"overall pass={int(self.passed)}")
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        payload = {test: [asdict(r) for r in self.results(test)] for test in TESTS}
        payload["summary"] = self.summary()
        payload["failing_rows"] = {test: self.failing_rows(test) for test in TESTS}
        payload["passed"] = self.passed
        return json.dumps(payload, indent=1, sort_keys=True)

    def quantiles_csv(self) -> str:
        """Box-plot data: one line per quantity."""
        lines = ["quantity,min,q1,median,q3,max"]
        for name, s in self.summary().items():
            lines.append(f"{name},{s['min']:.6e},{s['q1']:.6e},{s['median']:.6e},{s['q3']:.6e},{s['max']:.6e}")
        return "\n".join(lines) + "\n"


def run_suite(matrix: RestartMatrix) -> ValidationReport:
    if matrix.cols != COLS:
        raise RowLengthError(f"suite expects {COLS}-bit rows, matrix has {matrix.cols}")
    report = ValidationReport()
    for i, row in enumerate(matrix.bits):
        report.mcv.append(mcv_test(row, i))
        report.independence.append(independence_test(row, i))
        report.gf.append(gf_test(row, i))
        report.lrs.append(lrs_test(row, i))
    return report
