"""Cloze query records and their tab-separated file format."""

from dataclasses import dataclass

from pelt.errors import FormatError

CLOZE_HEADER = "query\tsubject\tanswer\trelation\tsubject_freq"


@dataclass(frozen=True)
class ClozeQuery:
    """One templated question with a single [MASK] slot.

    ``query`` keeps the mention markup ([[id|surface]]) so the subject span
    is recoverable for infusion; ``subject_freq`` is the subject's train
    corpus occurrence count.
    """

    query: str
    subject: str
    answer: str
    relation: str
    subject_freq: int


def save_cloze(queries, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(CLOZE_HEADER + "\n")
        for q in queries:
            f.write(f"{q.query}\t{q.subject}\t{q.answer}\t{q.relation}\t{q.subject_freq}\n")


def load_cloze(path):
    with open(path, encoding="utf-8") as f:
        lines = [line.rstrip("\n") for line in f]
    if not lines or lines[0] != CLOZE_HEADER:
        raise FormatError(f"{path}: missing cloze header line")
    queries = []
    for line in lines[1:]:
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise FormatError(f"{path}: malformed cloze line {line!r}")
        queries.append(ClozeQuery(parts[0], parts[1], parts[2], parts[3], int(parts[4])))
    return queries
