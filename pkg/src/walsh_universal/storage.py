"""Text persistence for built series: versioned, human-inspectable, lossless.

One JSON document per series.  Every float is stored as a hex literal and
every rational as ``num/den``, so a load -> save cycle is byte-identical
and re-verification after a reload sees exactly the numbers the build saw.
Boolean masks are run-length encoded row-major (alternating runs, False
first).  Writes go to a sibling temp file and rename into place.

Also parses greedy target files: either a list of dyadic rectangle pieces
(``x_rank x_index y_rank y_index value`` per line, rational values) or a
comma-separated grid whose shape is a power of two in each direction.
"""

import json
import os
from fractions import Fraction

import numpy as np

from .checker import CheckItem, CheckReport
from .errors import SeriesFileError
from .grids import DyadicGrid2D, DyadicInterval, DyadicRect, DyadicSet2D, StepFunction2D
from .pipeline import BlockRecord, WeightFunction
from .series import SparseCoeffs2D, WalshSeries2D

FORMAT = "walsh-universal/1"


def _hexf(x):
    return float(x).hex()


def _unhexf(s, where):
    try:
        return float.fromhex(s)
    except (TypeError, ValueError):
        raise SeriesFileError(f"expected a hex float, got {s!r}", where) from None


def _frac(x):
    f = Fraction(x)
    return f"{f.numerator}/{f.denominator}"


def _unfrac(s, where):
    try:
        return Fraction(s)
    except (TypeError, ValueError, ZeroDivisionError):
        raise SeriesFileError(f"expected a rational, got {s!r}", where) from None


def rle_encode(mask):
    """Alternating run lengths of the flattened mask, False runs first."""
    flat = np.asarray(mask, dtype=bool).reshape(-1)
    if not flat.size:
        return []
    edges = np.flatnonzero(np.diff(flat)) + 1
    runs = np.diff(np.concatenate(([0], edges, [flat.size])))
    out = [int(r) for r in runs]
    if flat[0]:
        out.insert(0, 0)
    return out


def rle_decode(shape, runs, where):
    cells = int(np.prod(shape))
    if not all(isinstance(r, int) and r >= 0 for r in runs):
        raise SeriesFileError("run lengths must be nonnegative integers", where)
    if sum(runs) != cells:
        raise SeriesFileError(f"run lengths sum to {sum(runs)}, need {cells}", where)
    flat = np.zeros(cells, dtype=bool)
    pos, value = 0, False
    for r in runs:
        flat[pos : pos + r] = value
        pos += r
        value = not value
    return flat.reshape(shape)


def _set_to_json(s):
    return {"ranks": list(s.ranks), "runs": rle_encode(s.mask)}


def _set_from_json(obj, where):
    try:
        p, q = (int(r) for r in obj["ranks"])
        runs = obj["runs"]
    except (KeyError, TypeError, ValueError):
        raise SeriesFileError("expected {ranks, runs}", where) from None
    return DyadicSet2D((p, q), rle_decode((1 << p, 1 << q), runs, where))


def _step_to_json(f):
    return [
        [r.x.rank, r.x.index, r.y.rank, r.y.index, _frac(v)] for r, v in f.pieces
    ]


def _step_from_json(rows, where):
    pieces = []
    for i, row in enumerate(rows):
        spot = f"{where}[{i}]"
        try:
            xr, xi, yr, yi, v = row
        except (TypeError, ValueError):
            raise SeriesFileError("expected [xr, xi, yr, yi, value]", spot) from None
        try:
            rect = DyadicRect(DyadicInterval(int(xr), int(xi)), DyadicInterval(int(yr), int(yi)))
        except (TypeError, ValueError) as exc:
            raise SeriesFileError(str(exc), spot) from None
        pieces.append((rect, _unfrac(v, spot)))
    try:
        return StepFunction2D(tuple(pieces))
    except ValueError as exc:
        raise SeriesFileError(str(exc), where) from None


def _coeffs_to_json(c):
    # constructor order is already the (k, nu) lexsort
    return [
        [int(k), int(nu), _hexf(v)] for k, nu, v in zip(c.ks, c.nus, c.cs)
    ]


def _coeffs_from_json(rows, where):
    triples = []
    for i, row in enumerate(rows):
        spot = f"{where}[{i}]"
        try:
            k, nu, v = row
        except (TypeError, ValueError):
            raise SeriesFileError("expected [k, nu, value]", spot) from None
        triples.append((int(k), int(nu), _unhexf(v, spot)))
    try:
        return SparseCoeffs2D.from_triples(triples)
    except ValueError as exc:
        raise SeriesFileError(str(exc), where) from None


def _report_to_json(rep):
    return [[it.name, it.ok, _hexf(it.margin), it.note] for it in rep.items]


def _report_from_json(rows, where):
    items = []
    for i, row in enumerate(rows):
        spot = f"{where}[{i}]"
        try:
            name, ok, margin, note = row
        except (TypeError, ValueError):
            raise SeriesFileError("expected [name, ok, margin, note]", spot) from None
        if ok is not None and not isinstance(ok, bool):
            raise SeriesFileError("ok must be true, false, or null", spot)
        items.append(CheckItem(str(name), ok, _unhexf(margin, spot), str(note)))
    return CheckReport(tuple(items))


def _block_to_json(rec):
    return {
        "index": rec.index,
        "lo": rec.lo,
        "hi": rec.hi,
        "target": _step_to_json(rec.target),
        "coeffs": _coeffs_to_json(rec.coeffs),
        "keep": _set_to_json(rec.keep),
        "sup_budget": _hexf(rec.sup_budget),
        "report": _report_to_json(rec.report),
    }


def _block_from_json(obj, where):
    for key in ("index", "lo", "hi", "target", "coeffs", "keep", "sup_budget", "report"):
        if key not in obj:
            raise SeriesFileError(f"missing field {key!r}", where)
    try:
        return BlockRecord(
            index=int(obj["index"]),
            target=_step_from_json(obj["target"], f"{where}.target"),
            coeffs=_coeffs_from_json(obj["coeffs"], f"{where}.coeffs"),
            lo=int(obj["lo"]),
            hi=int(obj["hi"]),
            keep=_set_from_json(obj["keep"], f"{where}.keep"),
            sup_budget=_unhexf(obj["sup_budget"], f"{where}.sup_budget"),
            report=_report_from_json(obj["report"], f"{where}.report"),
        )
    except ValueError as exc:
        if isinstance(exc, SeriesFileError):
            raise
        raise SeriesFileError(str(exc), where) from None


def _weight_to_json(w):
    return {
        "epsilon": _hexf(w.eps),
        "start": w.start,
        "depth": w.depth,
        "levels": [
            {"n": n, "omega": _set_to_json(om), "value": _hexf(v)}
            for n, om, v in w.levels
        ],
        "report": _report_to_json(w.report) if w.report is not None else None,
    }


def _weight_from_json(obj, where):
    for key in ("epsilon", "start", "depth", "levels", "report"):
        if key not in obj:
            raise SeriesFileError(f"missing field {key!r}", where)
    levels = []
    for i, lv in enumerate(obj["levels"]):
        spot = f"{where}.levels[{i}]"
        try:
            n, om, v = lv["n"], lv["omega"], lv["value"]
        except (KeyError, TypeError):
            raise SeriesFileError("expected {n, omega, value}", spot) from None
        levels.append((int(n), _set_from_json(om, spot), _unhexf(v, spot)))
    report = obj["report"]
    try:
        return WeightFunction(
            eps=_unhexf(obj["epsilon"], f"{where}.epsilon"),
            start=int(obj["start"]),
            levels=tuple(levels),
            depth=int(obj["depth"]),
            report=None if report is None else _report_from_json(report, f"{where}.report"),
        )
    except ValueError as exc:
        if isinstance(exc, SeriesFileError):
            raise
        raise SeriesFileError(str(exc), where) from None


def save_series(path, series, records, weight=None, config=None):
    """Serialize a built series (and optional weight) to `path` atomically."""
    doc = {
        "format": FORMAT,
        "config": dict(config or {}),
        "bounds": list(series.blocks),
        "blocks": [_block_to_json(r) for r in records],
        "weight": None if weight is None else _weight_to_json(weight),
    }
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="ascii") as fh:
        fh.write(text)
    os.replace(tmp, path)
    return path


def load_series(path):
    """Rebuild (series, records, weight, config) from a saved document.

    Every reconstruction goes through the real constructors, so structural
    invariants are re-validated; SeriesFileError names the offending spot.
    """
    try:
        with open(path, encoding="ascii") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise SeriesFileError(str(exc), path) from None
    except json.JSONDecodeError as exc:
        raise SeriesFileError(
            f"invalid JSON: {exc.msg}", f"{path}:{exc.lineno}:{exc.colno}"
        ) from None

    if not isinstance(doc, dict) or doc.get("format") != FORMAT:
        raise SeriesFileError(
            f"unsupported format {doc.get('format')!r}" if isinstance(doc, dict)
            else "document must be a JSON object",
            f"{path}: format",
        )
    for key in ("config", "bounds", "blocks", "weight"):
        if key not in doc:
            raise SeriesFileError(f"missing field {key!r}", f"{path}: {key}")

    bounds = doc["bounds"]
    blocks_json = doc["blocks"]
    if not isinstance(blocks_json, list) or len(blocks_json) != len(bounds) - 1:
        raise SeriesFileError(
            f"{len(blocks_json)} blocks for {len(bounds)} bounds", f"{path}: blocks"
        )
    records = []
    for i, obj in enumerate(blocks_json):
        where = f"{path}: blocks[{i}]"
        rec = _block_from_json(obj, where)
        if (rec.index, rec.lo, rec.hi) != (i + 1, bounds[i], bounds[i + 1]):
            raise SeriesFileError(
                f"block ({rec.index}, {rec.lo}, {rec.hi}) does not line up with the bounds",
                where,
            )
        records.append(rec)

    coeffs = (
        SparseCoeffs2D.merge([r.coeffs for r in records])
        if records
        else SparseCoeffs2D.empty()
    )
    try:
        series = WalshSeries2D(coeffs, tuple(int(b) for b in bounds), tuple(records))
    except ValueError as exc:
        raise SeriesFileError(str(exc), f"{path}: bounds") from None

    weight = None
    if doc["weight"] is not None:
        weight = _weight_from_json(doc["weight"], f"{path}: weight")
        if weight.depth != series.depth:
            raise SeriesFileError(
                f"weight depth {weight.depth} != series depth {series.depth}",
                f"{path}: weight.depth",
            )
    return series, records, weight, doc["config"]


# ---------------------------------------------------------------------------
# greedy target files


def load_target(path):
    """Parse a target file into a StepFunction2D or DyadicGrid2D.

    Comma-separated lines form a grid (2^p rows by 2^q columns); otherwise
    each line is one piece ``x_rank x_index y_rank y_index value`` with a
    rational value.  Blank lines and '#' comments are skipped.
    """
    try:
        with open(path, encoding="ascii") as fh:
            raw = fh.readlines()
    except OSError as exc:
        raise SeriesFileError(str(exc), path) from None
    lines = [
        (i + 1, ln.strip()) for i, ln in enumerate(raw)
        if ln.strip() and not ln.lstrip().startswith("#")
    ]
    if not lines:
        raise SeriesFileError("no data lines", path)

    if any("," in ln for _, ln in lines):
        rows = []
        width = None
        for lineno, ln in lines:
            where = f"{path}:{lineno}"
            try:
                row = [float(tok) for tok in ln.split(",")]
            except ValueError:
                raise SeriesFileError("grid rows must be numeric", where) from None
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise SeriesFileError(
                    f"row has {len(row)} columns, first row had {width}", where
                )
            rows.append(row)
        n, m = len(rows), width
        if n & (n - 1) or m & (m - 1):
            raise SeriesFileError(
                f"grid must be a power of two per side, got {n} x {m}", path
            )
        return DyadicGrid2D((n.bit_length() - 1, m.bit_length() - 1), np.array(rows))

    pieces = []
    for lineno, ln in lines:
        where = f"{path}:{lineno}"
        tokens = ln.split()
        if len(tokens) != 5:
            raise SeriesFileError(
                "expected: x_rank x_index y_rank y_index value", where
            )
        try:
            rect = DyadicRect(
                DyadicInterval(int(tokens[0]), int(tokens[1])),
                DyadicInterval(int(tokens[2]), int(tokens[3])),
            )
        except (TypeError, ValueError) as exc:
            raise SeriesFileError(str(exc), where) from None
        pieces.append((rect, _unfrac(tokens[4], where)))
    try:
        return StepFunction2D(tuple(pieces))
    except ValueError as exc:
        raise SeriesFileError(str(exc), path) from None
