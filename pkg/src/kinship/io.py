"""CSV readers and writers for every artifact the toolkit consumes or emits.

Formats (UTF-8, comma separated, LF line endings, trailing newline):

* embeddings:   ``image_id,v0,...,v{D-1}``
* pairs:        ``pair_id,image_id_1,image_id_2,ptype[,label]``
* probes:       ``probe_id,image_id`` (repeat probe_id for multi-image subjects)
* gallery:      ``gallery_index,image_id`` (0-based, contiguous)
* families:     ``image_id,family_id``
* predictions:  ``pair_id,score,label``
* rank matrix:  ``probe_id,r0,...,r{N-1}``
* calibration:  ``distance,label``
* head:         ``row,c0,...,c{d_in-1}``
* classifier:   ``bias,<value>`` then ``w,<index>,<value>`` rows (no header)
* features:     ``pair_id,f0,...,f{F-1}``

Floats are written with ``repr``, the shortest string that round-trips the
64-bit value, so every write/read pair is lossless.
"""

from __future__ import annotations

import csv
import math
from contextlib import contextmanager

import numpy as np

from .embedding import Embedding, EmbeddingStore
from .errors import (
    DuplicateId,
    EmptyInput,
    InconsistentDimension,
    InvalidLabel,
    IoFailure,
    MalformedHeader,
    MalformedRow,
    NonContiguousGalleryIndex,
    NonFiniteValue,
)
from .fusion import PairClassifier
from .metric_head import ProjectionHead
from .retrieval import Gallery, ProbeSubject, RankMatrix
from .scoring import CalibrationSet
from .verification import PairQuery, Prediction

PAIR_HEADER = ["pair_id", "image_id_1", "image_id_2", "ptype"]


def fmt(x: float) -> str:
    return repr(float(x))


@contextmanager
def _reader(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            yield csv.reader(fh)
    except OSError as exc:
        raise IoFailure(f"cannot read {path}: {exc.strerror or exc}") from exc


def write_rows(path, rows):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerows(rows)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc.strerror or exc}") from exc


def _header(reader, path):
    try:
        return next(reader)
    except StopIteration:
        raise MalformedHeader(f"{path}: file is empty") from None


def _parse_float(text, path, line):
    try:
        value = float(text)
    except ValueError:
        raise MalformedRow(f"{path}:{line}: {text!r} is not a number") from None
    if not math.isfinite(value):
        raise NonFiniteValue(f"{path}:{line}: non-finite value {text!r}")
    return value


def _parse_int(text, path, line, what):
    try:
        return int(text)
    except ValueError:
        raise MalformedRow(f"{path}:{line}: {what} {text!r} is not an integer") from None


def _indexed_header(header, first, prefix, path):
    if not header or header[0] != first:
        raise MalformedHeader(f"{path}: header must start with {first!r}")
    expected = [f"{prefix}{i}" for i in range(len(header) - 1)]
    if header[1:] != expected:
        raise MalformedHeader(f"{path}: expected columns {prefix}0..{prefix}{len(expected) - 1} after {first!r}")
    return len(expected)


# --------------------------------------------------------------------------
# Embeddings
# --------------------------------------------------------------------------


def load_embeddings(path) -> EmbeddingStore:
    with _reader(path) as reader:
        dim = _indexed_header(_header(reader, path), "image_id", "v", path)
        if dim < 1:
            raise MalformedHeader(f"{path}: no value columns")
        entries = []
        seen = set()
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) - 1 != dim:
                raise InconsistentDimension(f"{path}:{line}: {len(row) - 1} values, header declares {dim}")
            image_id = row[0]
            if not image_id:
                raise MalformedRow(f"{path}:{line}: empty image_id")
            if image_id in seen:
                raise DuplicateId(f"{path}:{line}: image id {image_id!r} repeated")
            seen.add(image_id)
            entries.append(Embedding(image_id, [_parse_float(v, path, line) for v in row[1:]]))
    if not entries:
        raise EmptyInput(f"{path}: no embeddings")
    return EmbeddingStore(entries)


def write_embeddings(path, store: EmbeddingStore):
    header = ["image_id"] + [f"v{i}" for i in range(store.dimension)]
    write_rows(path, [header] + [[i] + [fmt(v) for v in store[i].values] for i in store])


# --------------------------------------------------------------------------
# Pairs and predictions
# --------------------------------------------------------------------------


def _parse_label(text, path, line):
    if text not in ("0", "1"):
        raise InvalidLabel(f"{path}:{line}: label {text!r} is not 0 or 1")
    return int(text)


def load_pairs(path) -> list:
    with _reader(path) as reader:
        header = _header(reader, path)
        if header == PAIR_HEADER:
            labeled = False
        elif header == PAIR_HEADER + ["label"]:
            labeled = True
        else:
            raise MalformedHeader(f"{path}: expected {','.join(PAIR_HEADER)}[,label]")
        width = len(header)
        pairs, seen = [], set()
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width or not all(row[:3]):
                raise MalformedRow(f"{path}:{line}: expected {width} fields with non-empty ids")
            if row[0] in seen:
                raise DuplicateId(f"{path}:{line}: pair id {row[0]!r} repeated")
            seen.add(row[0])
            label = _parse_label(row[4], path, line) if labeled else None
            pairs.append(PairQuery(row[0], row[1], row[2], row[3], label))
    return pairs


def write_pairs(path, pairs):
    labeled = any(p.label is not None for p in pairs)
    header = PAIR_HEADER + (["label"] if labeled else [])
    rows = [[p.pair_id, p.image_id_1, p.image_id_2, p.ptype] + ([str(p.label)] if labeled else []) for p in pairs]
    write_rows(path, [header] + rows)


def write_predictions(path, predictions):
    write_rows(path, [["pair_id", "score", "label"]] + [[p.pair_id, fmt(p.score), str(p.label)] for p in predictions])


def load_predictions(path) -> list:
    with _reader(path) as reader:
        if _header(reader, path) != ["pair_id", "score", "label"]:
            raise MalformedHeader(f"{path}: expected pair_id,score,label")
        out = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise MalformedRow(f"{path}:{line}: expected 3 fields")
            out.append(Prediction(row[0], _parse_float(row[1], path, line), _parse_label(row[2], path, line)))
    return out


# --------------------------------------------------------------------------
# Retrieval
# --------------------------------------------------------------------------


def load_probe_groups(path) -> dict:
    """probe_id -> list of image ids, in first-appearance order."""
    with _reader(path) as reader:
        if _header(reader, path) != ["probe_id", "image_id"]:
            raise MalformedHeader(f"{path}: expected probe_id,image_id")
        groups: dict = {}
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 or not all(row):
                raise MalformedRow(f"{path}:{line}: expected probe_id,image_id")
            groups.setdefault(row[0], []).append(row[1])
    if not groups:
        raise EmptyInput(f"{path}: no probes")
    return groups


def load_gallery_ids(path) -> list:
    with _reader(path) as reader:
        if _header(reader, path) != ["gallery_index", "image_id"]:
            raise MalformedHeader(f"{path}: expected gallery_index,image_id")
        by_index = {}
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 or not row[1]:
                raise MalformedRow(f"{path}:{line}: expected gallery_index,image_id")
            index = _parse_int(row[0], path, line, "gallery index")
            if index in by_index:
                raise DuplicateId(f"{path}:{line}: gallery index {index} repeated")
            by_index[index] = row[1]
    if not by_index:
        raise EmptyInput(f"{path}: empty gallery")
    if sorted(by_index) != list(range(len(by_index))):
        raise NonContiguousGalleryIndex(f"{path}: gallery indices must be 0..{len(by_index) - 1}")
    return [by_index[i] for i in range(len(by_index))]


def load_probes_gallery(probe_path, gallery_path, store: EmbeddingStore):
    groups = load_probe_groups(probe_path)
    probes = [ProbeSubject.from_store(pid, ids, store) for pid, ids in groups.items()]
    gallery = Gallery.from_store(load_gallery_ids(gallery_path), store)
    return probes, gallery


def load_family_labels(path) -> dict:
    with _reader(path) as reader:
        if _header(reader, path) != ["image_id", "family_id"]:
            raise MalformedHeader(f"{path}: expected image_id,family_id")
        labels = {}
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 or not all(row):
                raise MalformedRow(f"{path}:{line}: expected image_id,family_id")
            if row[0] in labels:
                raise DuplicateId(f"{path}:{line}: image id {row[0]!r} repeated")
            labels[row[0]] = row[1]
    return labels


def write_rank_matrix(path, matrix: RankMatrix):
    n = matrix.rows.shape[1]
    header = ["probe_id"] + [f"r{j}" for j in range(n)]
    rows = [[pid] + [str(int(g)) for g in row] for pid, row in zip(matrix.probe_ids, matrix.rows)]
    write_rows(path, [header] + rows)


def load_rank_matrix(path) -> RankMatrix:
    with _reader(path) as reader:
        n = _indexed_header(_header(reader, path), "probe_id", "r", path)
        ids, rows = [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != n + 1:
                raise MalformedRow(f"{path}:{line}: expected {n + 1} fields")
            ids.append(row[0])
            rows.append([_parse_int(v, path, line, "gallery index") for v in row[1:]])
    if not rows:
        raise EmptyInput(f"{path}: empty rank matrix")
    return RankMatrix(tuple(ids), np.array(rows, dtype=np.int64))


# --------------------------------------------------------------------------
# Model artifacts
# --------------------------------------------------------------------------


def write_calibration(path, cal: CalibrationSet):
    rows = [[fmt(d), str(int(y))] for d, y in zip(cal.distances, cal.labels)]
    write_rows(path, [["distance", "label"]] + rows)


def load_calibration(path) -> CalibrationSet:
    with _reader(path) as reader:
        if _header(reader, path) != ["distance", "label"]:
            raise MalformedHeader(f"{path}: expected distance,label")
        distances, labels = [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise MalformedRow(f"{path}:{line}: expected distance,label")
            d = _parse_float(row[0], path, line)
            if d < 0:
                raise MalformedRow(f"{path}:{line}: negative distance")
            distances.append(d)
            labels.append(_parse_label(row[1], path, line))
    return CalibrationSet(distances, labels)


def write_head(path, head: ProjectionHead):
    header = ["row"] + [f"c{j}" for j in range(head.d_in)]
    rows = [[str(i)] + [fmt(v) for v in r] for i, r in enumerate(head.matrix)]
    write_rows(path, [header] + rows)


def load_head(path) -> ProjectionHead:
    with _reader(path) as reader:
        d_in = _indexed_header(_header(reader, path), "row", "c", path)
        rows = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d_in + 1:
                raise InconsistentDimension(f"{path}:{line}: expected {d_in} columns")
            if _parse_int(row[0], path, line, "row") != len(rows):
                raise MalformedRow(f"{path}:{line}: rows must be numbered 0, 1, ...")
            rows.append([_parse_float(v, path, line) for v in row[1:]])
    if not rows:
        raise EmptyInput(f"{path}: head has no rows")
    return ProjectionHead(np.array(rows))


def write_classifier(path, clf: PairClassifier):
    rows = [["bias", fmt(clf.bias)]] + [["w", str(i), fmt(v)] for i, v in enumerate(clf.weights)]
    write_rows(path, rows)


def load_classifier(path) -> PairClassifier:
    with _reader(path) as reader:
        first = _header(reader, path)
        if len(first) != 2 or first[0] != "bias":
            raise MalformedHeader(f"{path}: first row must be bias,<value>")
        bias = _parse_float(first[1], path, 1)
        weights = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3 or row[0] != "w":
                raise MalformedRow(f"{path}:{line}: expected w,index,value")
            if _parse_int(row[1], path, line, "weight index") != len(weights):
                raise MalformedRow(f"{path}:{line}: weight indices must be 0, 1, ...")
            weights.append(_parse_float(row[2], path, line))
    if not weights:
        raise EmptyInput(f"{path}: classifier has no weights")
    return PairClassifier(np.array(weights), bias)


def write_features(path, pair_ids, features):
    features = np.atleast_2d(features)
    header = ["pair_id"] + [f"f{j}" for j in range(features.shape[1])]
    write_rows(path, [header] + [[pid] + [fmt(v) for v in f] for pid, f in zip(pair_ids, features)])


def load_features(path):
    with _reader(path) as reader:
        width = _indexed_header(_header(reader, path), "pair_id", "f", path)
        ids, rows = [], []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width + 1:
                raise InconsistentDimension(f"{path}:{line}: expected {width} features")
            ids.append(row[0])
            rows.append([_parse_float(v, path, line) for v in row[1:]])
    return ids, np.array(rows, dtype=np.float64).reshape(len(rows), width)
