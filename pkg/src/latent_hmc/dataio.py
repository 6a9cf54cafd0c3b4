"""File formats: datasets, posterior samples, truth manifests, reports.

Everything is CSV or JSON so artifacts stay diffable.  Formats (exact
headers, zero-based ids):

    dtm.csv         doc_id,term_id,count
    covariates.csv  doc_id,<name1>,<name2>,...   (column "y" holds outcomes,
                    "q*" columns are outcome covariates, the rest drive
                    topic shares)
    survey.csv      resp_id,period,q0,...,q{J-1}
    samples.csv     chain,draw,name,index,value  (flat row-major index,
                    constrained space, 17 significant digits)
    manifest.json   flat key/value run record (+ dataset digests and
                    parameter shapes)
    report.csv      name,index,mean,sd,q025,q50,q975,ess,rhat[,error]

Writes are atomic (temp file + rename); loads never silently drop rows.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import tempfile

import numpy as np

from .data import CovariateSet, DocumentTermMatrix, SurveyPanel
from .errors import ContractViolation, ParseError
from .sampleset import SampleSet
from .simgen import SimTruth


def _fmt(v):
    return f"{float(v):.17g}"


def atomic_write(path, write_fn, mode="w"):
    """Write via a temp file in the same directory, then rename into place."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, mode, newline="") as handle:
            write_fn(handle)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def file_digest(path):
    h = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_rows(path, expected_header):
    with open(path, newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", path, 1) from None
        if expected_header is not None and header[:len(expected_header)] != \
                list(expected_header):
            raise ParseError(
                f"expected header {','.join(expected_header)!r}, "
                f"got {','.join(header)!r}", path, 1)
        yield header
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            yield lineno, row


def _int_field(value, what, path, lineno, minimum=None):
    try:
        out = int(value)
    except ValueError:
        raise ParseError(f"non-integer {what}: {value!r}", path, lineno) \
            from None
    if minimum is not None and out < minimum:
        raise ParseError(f"{what} must be >= {minimum}, got {out}",
                         path, lineno)
    return out


def _float_field(value, what, path, lineno):
    try:
        return float(value)
    except ValueError:
        raise ParseError(f"non-numeric {what}: {value!r}", path, lineno) \
            from None


# ---------------------------------------------------------------------------
# datasets


def write_dtm(corpus, path):
    def go(handle):
        handle.write("doc_id,term_id,count\n")
        for d, v, c in zip(corpus.doc_ids, corpus.term_ids, corpus.counts):
            handle.write(f"{d},{v},{c}\n")
    atomic_write(path, go)


def load_dtm(path, n_docs=None, n_terms=None):
    rows = _read_rows(path, ("doc_id", "term_id", "count"))
    next(rows)
    docs, terms, counts, seen = [], [], [], set()
    for lineno, row in rows:
        if len(row) != 3:
            raise ParseError(f"expected 3 fields, got {len(row)}", path, lineno)
        d = _int_field(row[0], "doc_id", path, lineno, minimum=0)
        v = _int_field(row[1], "term_id", path, lineno, minimum=0)
        c = _int_field(row[2], "count", path, lineno, minimum=1)
        if (d, v) in seen:
            raise ParseError(f"duplicate (doc, term) pair ({d}, {v})",
                             path, lineno)
        seen.add((d, v))
        docs.append(d)
        terms.append(v)
        counts.append(c)
    if not docs:
        raise ParseError("no data rows", path, 2)
    n_docs = n_docs if n_docs is not None else max(docs) + 1
    n_terms = n_terms if n_terms is not None else max(terms) + 1
    try:
        return DocumentTermMatrix(n_docs, n_terms, docs, terms, counts)
    except ContractViolation as exc:
        raise ParseError(str(exc), path, 1) from None


def write_covariates(covariates, path):
    names, columns = [], []
    if covariates.topic is not None:
        tn = covariates.topic_names or \
            [f"g{i}" for i in range(covariates.topic.shape[1])]
        names += tn
        columns += [covariates.topic[:, i]
                    for i in range(covariates.topic.shape[1])]
    if covariates.outcome is not None:
        qn = covariates.outcome_names or \
            [f"q{i}" for i in range(covariates.outcome.shape[1])]
        names += qn
        columns += [covariates.outcome[:, i]
                    for i in range(covariates.outcome.shape[1])]
    if covariates.outcomes is not None:
        names.append("y")
        columns.append(covariates.outcomes)

    def go(handle):
        handle.write("doc_id," + ",".join(names) + "\n")
        for d in range(covariates.n_docs):
            handle.write(str(d) + ","
                         + ",".join(_fmt(col[d]) for col in columns) + "\n")
    atomic_write(path, go)


def load_covariates(path):
    """Covariates by column convention: "y" = outcomes, "q*" = outcome side."""
    rows = _read_rows(path, ("doc_id",))
    header = next(rows)
    names = header[1:]
    data = {}
    doc_ids = []
    for lineno, row in rows:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}",
                             path, lineno)
        doc_ids.append(_int_field(row[0], "doc_id", path, lineno, minimum=0))
        for name, value in zip(names, row[1:]):
            data.setdefault(name, []).append(
                _float_field(value, name, path, lineno))
    if not doc_ids:
        raise ParseError("no data rows", path, 2)
    n = len(doc_ids)
    if sorted(doc_ids) != list(range(n)):
        raise ParseError("doc_id column must cover 0..D-1 exactly", path, 1)
    order = np.argsort(doc_ids)
    topic_names = [m for m in names if m != "y" and not m.startswith("q")]
    outcome_names = [m for m in names if m.startswith("q")]
    col = {m: np.asarray(data[m])[order] for m in names}
    return CovariateSet(
        n,
        topic=np.column_stack([col[m] for m in topic_names])
        if topic_names else None,
        outcome=np.column_stack([col[m] for m in outcome_names])
        if outcome_names else None,
        outcomes=col["y"] if "y" in col else None,
        topic_names=topic_names, outcome_names=outcome_names)


def write_survey(panel, path):
    def go(handle):
        qs = ",".join(f"q{j}" for j in range(panel.n_questions))
        handle.write(f"resp_id,period,{qs}\n")
        for i in range(panel.n_respondents):
            answers = ",".join(str(a) for a in panel.responses[i])
            handle.write(f"{i},{panel.periods[i]},{answers}\n")
    atomic_write(path, go)


def load_survey(path, n_categories=None, n_periods=None):
    """Survey panel; L_j is 1 + max observed code unless pinned explicitly."""
    rows = _read_rows(path, ("resp_id", "period"))
    header = next(rows)
    n_questions = len(header) - 2
    if n_questions < 1:
        raise ParseError("survey needs at least one question column", path, 1)
    periods, responses = [], []
    for lineno, row in rows:
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}",
                             path, lineno)
        _int_field(row[0], "resp_id", path, lineno, minimum=0)
        periods.append(_int_field(row[1], "period", path, lineno, minimum=0))
        codes = [_int_field(row[2 + j], f"q{j}", path, lineno, minimum=0)
                 for j in range(n_questions)]
        if n_categories is not None:
            for j, code in enumerate(codes):
                if code >= n_categories[j]:
                    raise ParseError(
                        f"q{j} code {code} out of range "
                        f"[0, {n_categories[j]})", path, lineno)
        responses.append(codes)
    if not periods:
        raise ParseError("no data rows", path, 2)
    responses = np.asarray(responses, dtype=np.int64)
    if n_categories is None:
        n_categories = responses.max(axis=0) + 1
    if n_periods is None:
        n_periods = max(periods) + 1
    try:
        return SurveyPanel(n_periods, n_categories, periods, responses)
    except ContractViolation as exc:
        raise ParseError(str(exc), path, 1) from None


# ---------------------------------------------------------------------------
# samples


def write_samples(samples, path):
    def go(handle):
        handle.write("chain,draw,name,index,value\n")
        for name, arr in samples.params.items():
            flat = arr.reshape(arr.shape[0], arr.shape[1], -1)
            for c in range(flat.shape[0]):
                for s in range(flat.shape[1]):
                    row = flat[c, s]
                    for i in range(row.shape[0]):
                        handle.write(
                            f"{c},{s},{name},{i},{_fmt(row[i])}\n")
    atomic_write(path, go)


def load_samples(path, shapes=None, meta=None):
    """SampleSet from samples.csv; ``shapes`` restores parameter shapes."""
    rows = _read_rows(path, ("chain", "draw", "name", "index", "value"))
    next(rows)
    values = {}
    for lineno, row in rows:
        if len(row) != 5:
            raise ParseError(f"expected 5 fields, got {len(row)}", path, lineno)
        c = _int_field(row[0], "chain", path, lineno, minimum=0)
        s = _int_field(row[1], "draw", path, lineno, minimum=0)
        i = _int_field(row[3], "index", path, lineno, minimum=0)
        v = _float_field(row[4], "value", path, lineno)
        values.setdefault(row[2], {})[(c, s, i)] = v
    if not values:
        raise ParseError("no data rows", path, 2)
    params = {}
    for name, cells in values.items():
        n_chain = max(k[0] for k in cells) + 1
        n_draw = max(k[1] for k in cells) + 1
        size = max(k[2] for k in cells) + 1
        arr = np.full((n_chain, n_draw, size), np.nan)
        for (c, s, i), v in cells.items():
            arr[c, s, i] = v
        if np.isnan(arr).any():
            raise ParseError(f"parameter {name!r} has missing cells", path, 1)
        if shapes and name in shapes:
            arr = arr.reshape((n_chain, n_draw) + tuple(shapes[name]))
        params[name] = arr
    return SampleSet(params=params, meta=dict(meta or {}))


# ---------------------------------------------------------------------------
# reports


def write_report(report, path):
    with_error = any(r.error is not None for r in report.rows)

    def go(handle):
        cols = "name,index,mean,sd,q025,q50,q975,ess,rhat"
        handle.write(cols + (",error\n" if with_error else "\n"))
        for r in report.rows:
            base = (f"{r.name},{r.index},{_fmt(r.mean)},{_fmt(r.sd)},"
                    f"{_fmt(r.q025)},{_fmt(r.q50)},{_fmt(r.q975)},"
                    f"{_fmt(r.ess)},{_fmt(r.rhat)}")
            if with_error:
                base += "," + (_fmt(r.error) if r.error is not None else "")
            handle.write(base + "\n")
    atomic_write(path, go)


def write_error_summary(rows, path):
    def go(handle):
        handle.write("metric,mean,q05,q50,q95,frac_gt_1_1\n")
        for r in rows:
            frac = "" if r.frac_above_1_1 is None else _fmt(r.frac_above_1_1)
            handle.write(f"{r.metric},{_fmt(r.mean)},{_fmt(r.q05)},"
                         f"{_fmt(r.q50)},{_fmt(r.q95)},{frac}\n")
    atomic_write(path, go)


# ---------------------------------------------------------------------------
# manifests


def _jsonify(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, dict):
        return {k: _jsonify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonify(v) for v in obj]
    return obj


def write_manifest(manifest, path):
    atomic_write(path, lambda h: json.dump(_jsonify(manifest), h, indent=1,
                                           sort_keys=True))


def load_manifest(path, check_digests=True):
    with open(path) as handle:
        manifest = json.load(handle)
    if check_digests:
        base = os.path.dirname(os.path.abspath(path))
        for name, digest in manifest.get("data_digests", {}).items():
            target = manifest.get("data_paths", {}).get(name)
            if target is None:
                continue
            if not os.path.isabs(target):
                target = os.path.join(base, target)
            if not os.path.exists(target):
                raise ContractViolation(f"manifest data file missing: {target}")
            actual = file_digest(target)
            if actual != digest:
                raise ContractViolation(
                    f"digest mismatch for {name}: {actual} != {digest}")
    return manifest


def write_truth(truth, path):
    doc = {"generator": truth.generator, "seed": truth.seed,
           "compare": truth.compare, "match_param": truth.match_param,
           "params": _jsonify(truth.params), "info": _jsonify(truth.info)}
    atomic_write(path, lambda h: json.dump(doc, h, indent=1, sort_keys=True))


def load_truth(path):
    with open(path) as handle:
        doc = json.load(handle)
    params = {k: np.asarray(v, dtype=np.float64)
              for k, v in doc["params"].items()}
    return SimTruth(generator=doc["generator"], seed=doc["seed"],
                    params=params, compare=doc.get("compare", []),
                    match_param=doc.get("match_param"),
                    info=doc.get("info", {}))
