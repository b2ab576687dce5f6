"""Guideline corpus curation: metadata dedup and paragraph-atomic chunking.

Documents are split on blank lines into paragraphs which fill chunks
greedily up to a soft word limit; after max_chunks - 1 chunks the remainder
lands in the final chunk, flagged overflow when it exceeds the limit.
Paragraphs are never split, so a single oversized paragraph travels whole.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Sequence

from .model import ModelError

DEFAULT_SOFT_LIMIT = 4500
DEFAULT_MAX_CHUNKS = 4

_PARAGRAPH_SEP = re.compile(r"\n\s*\n")


@dataclass(frozen=True)
class GuidelineMeta:
    guideline_id: str
    source_org: str
    disease_or_drug: str
    age_group: str
    race: str
    gender: str
    publication_date: date

    def __post_init__(self):
        if not self.guideline_id:
            raise ModelError("guideline_id must be non-empty")
        if not isinstance(self.publication_date, date):
            raise ModelError("publication_date must be a date")


@dataclass(frozen=True)
class Chunk:
    chunk_id: str  # "<guideline_id>#<k>"
    text: str
    word_count: int
    overflow: bool


def word_count(text: str) -> int:
    return len(text.split())


def split_paragraphs(text: str) -> list[str]:
    stripped = text.strip()
    if not stripped:
        return []
    return _PARAGRAPH_SEP.split(stripped)


def chunk_document(
    guideline_id: str,
    text: str,
    soft_limit: int = DEFAULT_SOFT_LIMIT,
    max_chunks: int = DEFAULT_MAX_CHUNKS,
) -> list[Chunk]:
    """Greedy paragraph packing. A paragraph joins the current chunk when
    the chunk is empty or the chunk stays within soft_limit words; once
    max_chunks - 1 chunks are sealed everything left joins the final one."""
    if soft_limit < 1 or max_chunks < 1:
        raise ModelError("soft_limit and max_chunks must be positive")
    paragraphs = split_paragraphs(text)
    if not paragraphs:
        return []

    groups: list[list[str]] = [[]]
    counts = [0]
    for para in paragraphs:
        wc = word_count(para)
        if len(groups) == max_chunks:
            groups[-1].append(para)
            counts[-1] += wc
            continue
        if not groups[-1] or counts[-1] + wc <= soft_limit:
            groups[-1].append(para)
            counts[-1] += wc
        else:
            groups.append([para])
            counts.append(wc)

    chunks = []
    for k, (group, wc) in enumerate(zip(groups, counts)):
        chunks.append(
            Chunk(
                chunk_id=f"{guideline_id}#{k}",
                text="\n\n".join(group),
                word_count=wc,
                overflow=(k == len(groups) - 1 and wc > soft_limit),
            )
        )
    return chunks


def _norm(s: str) -> str:
    return re.sub(r"\s+", " ", s).strip().casefold()


def _dedup_key(meta: GuidelineMeta) -> tuple[str, str, str, str]:
    return (
        _norm(meta.disease_or_drug),
        _norm(meta.age_group),
        _norm(meta.race),
        _norm(meta.gender),
    )


def dedup_guidelines(metas: Sequence[GuidelineMeta]) -> list[GuidelineMeta]:
    """Keep one guideline per (disease_or_drug, age_group, race, gender)
    group: the most recent publication_date, ties broken by the
    lexicographically greatest guideline_id. Input order of the survivors
    is preserved."""
    best: dict[tuple, GuidelineMeta] = {}
    for meta in metas:
        key = _dedup_key(meta)
        cur = best.get(key)
        if cur is None:
            best[key] = meta
        elif (meta.publication_date, meta.guideline_id) > (cur.publication_date, cur.guideline_id):
            best[key] = meta
    winners = set(id(m) for m in best.values())
    return [m for m in metas if id(m) in winners]


# ---------------------------------------------------------------------------
# corpus directory layout: metadata.jsonl plus one <guideline_id>.txt per row

def meta_from_record(record: dict) -> GuidelineMeta:
    try:
        return GuidelineMeta(
            guideline_id=record["guideline_id"],
            source_org=record["source_org"],
            disease_or_drug=record["disease_or_drug"],
            age_group=record["age_group"],
            race=record["race"],
            gender=record["gender"],
            publication_date=date.fromisoformat(record["publication_date"]),
        )
    except KeyError as e:
        raise ModelError(f"metadata record missing field {e.args[0]!r}") from None
    except ValueError as e:
        raise ModelError(f"bad metadata record: {e}") from None


def meta_to_record(meta: GuidelineMeta) -> dict:
    return {
        "guideline_id": meta.guideline_id,
        "source_org": meta.source_org,
        "disease_or_drug": meta.disease_or_drug,
        "age_group": meta.age_group,
        "race": meta.race,
        "gender": meta.gender,
        "publication_date": meta.publication_date.isoformat(),
    }


def load_corpus(corpus_dir: str | Path) -> list[tuple[GuidelineMeta, str]]:
    """Read metadata.jsonl and the document text for every row."""
    root = Path(corpus_dir)
    meta_path = root / "metadata.jsonl"
    if not meta_path.is_file():
        raise ModelError(f"no metadata.jsonl under {root}")
    out: list[tuple[GuidelineMeta, str]] = []
    for line_no, line in enumerate(meta_path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise ModelError(f"metadata.jsonl line {line_no}: {e.msg}") from None
        meta = meta_from_record(record)
        doc_path = root / f"{meta.guideline_id}.txt"
        if not doc_path.is_file():
            raise ModelError(f"missing document {doc_path.name} for {meta.guideline_id}")
        out.append((meta, doc_path.read_text(encoding="utf-8")))
    return out
