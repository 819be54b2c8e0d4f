"""Records, catalogs, character vocabulary and dataset ingestion.

An observation is one (source, attribute, value) triple; a domain catalog
groups the observations of the training sources by attribute and doubles as
the labeled corpus. Values are kept exactly as read: classification works
on the raw character sequence, so no cleaning or normalization happens
anywhere on the ingestion path.
"""

import csv
import json
from dataclasses import dataclass


class DataFormatError(ValueError):
    """An input file or row does not match the declared format."""


@dataclass(frozen=True)
class AttributeRecord:
    """One observed attribute value from one source."""

    source: str
    attribute: str
    value: str


class DomainCatalog:
    """Training records grouped by attribute label."""

    def __init__(self, records):
        records = list(records)
        if not records:
            raise ValueError("catalog needs at least one record")
        self.records = records
        self.by_attribute = {}
        for rec in records:
            self.by_attribute.setdefault(rec.attribute, []).append(rec)
        self.sources = {rec.source for rec in records}

    @property
    def attributes(self):
        return sorted(self.by_attribute)

    def __len__(self):
        return len(self.records)


class CharVocabulary:
    """Dense character-to-index map with reserved marker slots.

    Index 0 marks sequence begin, 1 sequence end, 2 an unknown character;
    real characters follow in sorted code-point order, so the same training
    set always produces the same vocabulary.
    """

    BOS = 0
    EOS = 1
    UNK = 2
    _RESERVED = 3

    def __init__(self, chars):
        ordered = sorted(set(chars))
        self.char_to_index = {ch: i + self._RESERVED for i, ch in enumerate(ordered)}
        self.index_to_char = {i: ch for ch, i in self.char_to_index.items()}

    @property
    def size(self):
        return self._RESERVED + len(self.char_to_index)

    def encode(self, value):
        """Indices for ``value`` wrapped in begin/end markers; unseen chars map to UNK."""
        return (
            [self.BOS]
            + [self.char_to_index.get(ch, self.UNK) for ch in value]
            + [self.EOS]
        )

    def decode(self, indices):
        """Inverse of encode for marker-free reconstructible sequences."""
        chars = []
        for i in indices:
            if i in (self.BOS, self.EOS):
                continue
            if i == self.UNK:
                raise ValueError("cannot decode an unknown-character marker")
            chars.append(self.index_to_char[i])
        return "".join(chars)

    def to_dict(self):
        return {"bos": self.BOS, "eos": self.EOS, "unk": self.UNK, "chars": dict(self.char_to_index)}

    @classmethod
    def from_dict(cls, doc):
        vocab = cls([])
        vocab.char_to_index = {str(ch): int(i) for ch, i in doc["chars"].items()}
        vocab.index_to_char = {i: ch for ch, i in vocab.char_to_index.items()}
        return vocab


def build_vocab(records):
    """Vocabulary over exactly the characters of the given training values."""
    records = list(records)
    if not records:
        raise ValueError("cannot build a vocabulary from an empty record set")
    chars = set()
    for rec in records:
        chars.update(rec.value)
    return CharVocabulary(chars)


def encode(vocab, value):
    return vocab.encode(value)


def _record_from_row(row, line_num):
    missing = [k for k in ("source", "attribute", "value") if row.get(k) is None]
    if missing:
        raise DataFormatError(f"line {line_num}: missing field(s) {', '.join(missing)}")
    if row["attribute"] == "":
        raise DataFormatError(f"line {line_num}: empty attribute label")
    return AttributeRecord(str(row["source"]), str(row["attribute"]), str(row["value"]))


def ingest(path, format="delimited"):
    """Read records from a CSV file or a JSON-record-per-line file.

    The delimited form expects a header row ``source,attribute,value`` with
    quoted fields; the jsonl form one object per line with those keys.
    Values arrive byte-exact; nothing is trimmed or normalized.
    """
    records = []
    if format == "delimited":
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None:
                raise ValueError(f"{path}: empty file")
            header = set(reader.fieldnames)
            if not {"source", "attribute", "value"} <= header:
                raise DataFormatError(
                    f"{path}: header must contain source, attribute, value; got {reader.fieldnames}"
                )
            for row in reader:
                records.append(_record_from_row(row, reader.line_num))
    elif format == "jsonl":
        with open(path, encoding="utf-8") as fh:
            for line_num, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    row = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataFormatError(f"line {line_num}: invalid record: {exc}") from None
                records.append(_record_from_row(row, line_num))
    else:
        raise ValueError(f"format must be 'delimited' or 'jsonl', got {format!r}")
    if not records:
        raise ValueError(f"{path}: no records")
    return records


def split_by_source(records, test_source):
    """Hold one source out: (catalog of the rest, records of the held-out source)."""
    records = list(records)
    sources = {rec.source for rec in records}
    if test_source not in sources:
        raise ValueError(f"unknown source {test_source!r}; have {sorted(sources)}")
    if len(sources) < 2:
        raise ValueError("need at least two sources to hold one out")
    test = [rec for rec in records if rec.source == test_source]
    rest = [rec for rec in records if rec.source != test_source]
    return DomainCatalog(rest), test


__all__ = [
    "AttributeRecord",
    "CharVocabulary",
    "DataFormatError",
    "DomainCatalog",
    "build_vocab",
    "encode",
    "ingest",
    "split_by_source",
]
