"""Tokenization and dataset I/O shared by every other module.

Text is lowercased at tokenization time and punctuation is split from word
edges into standalone tokens; internal apostrophes stay inside the token
("don't"). Datasets are read and written as TSV (columns ``text``, ``label``,
header required) or JSONL (objects with ``text``, ``label``, optional ``id``
and ``provenance``).
"""

from __future__ import annotations

import json
import re
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Iterable

if TYPE_CHECKING:
    from orderbkd.poison import PoisonRecord


class DatasetError(Exception):
    """Raised for unreadable or malformed dataset files."""


_TOKEN_RE = re.compile(r"\w+(?:'\w+)*|[^\w\s]")

# Tokens that attach to the previous word when detokenizing.
_NO_SPACE_BEFORE = frozenset({".", ",", "!", "?", ";", ":", "”", "’", "»"})


@dataclass(frozen=True, slots=True)
class TokenSequence:
    """Lowercased tokens plus their (start, end) offsets into the source text."""

    tokens: tuple[str, ...]
    char_spans: tuple[tuple[int, int], ...]

    def __post_init__(self) -> None:
        if len(self.tokens) != len(self.char_spans):
            raise ValueError("tokens and char_spans must have equal length")

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


@dataclass
class LabeledExample:
    """One classification sample; ``provenance`` is set on poisoned copies."""

    id: str
    text: str
    label: int
    provenance: "PoisonRecord | None" = None


@dataclass(frozen=True)
class DatasetMeta:
    name: str
    class_count: int
    label_names: tuple[str, ...] = ()
    split: str = "train"

    def __post_init__(self) -> None:
        if self.class_count < 1:
            raise ValueError("class_count must be positive")
        if not self.label_names:
            object.__setattr__(self, "label_names", tuple(str(i) for i in range(self.class_count)))
        if len(self.label_names) != self.class_count:
            raise ValueError("label_names length must equal class_count")


def tokenize(text: str) -> TokenSequence:
    """Split ``text`` into lowercase word and punctuation tokens.

    Punctuation at word edges becomes standalone tokens; apostrophes between
    word characters are kept inside the token. Whitespace is discarded. Empty
    input yields an empty sequence.
    """
    tokens: list[str] = []
    spans: list[tuple[int, int]] = []
    for m in _TOKEN_RE.finditer(text):
        tokens.append(m.group().lower())
        spans.append((m.start(), m.end()))
    return TokenSequence(tuple(tokens), tuple(spans))


def detokenize(tokens: Iterable[str]) -> str:
    """Join tokens with spaces, attaching sentence punctuation to the left."""
    out: list[str] = []
    for tok in tokens:
        if out and tok not in _NO_SPACE_BEFORE:
            out.append(" ")
        out.append(tok)
    return "".join(out)


def _infer_format(path: Path, fmt: str | None) -> str:
    if fmt is not None:
        if fmt not in ("tsv", "jsonl"):
            raise DatasetError(f"{path}: unknown dataset format {fmt!r}")
        return fmt
    suffix = path.suffix.lower().lstrip(".")
    if suffix in ("tsv", "jsonl"):
        return suffix
    raise DatasetError(f"{path}: cannot infer format from suffix; pass format='tsv' or 'jsonl'")


def _infer_split(path: Path) -> str:
    stem = path.stem.lower()
    for split in ("train", "dev", "test"):
        if split in stem:
            return split
    return "train"


def load_dataset(
    path: str | Path,
    fmt: str | None = None,
    class_count: int | None = None,
    name: str | None = None,
    split: str | None = None,
) -> tuple[DatasetMeta, list[LabeledExample]]:
    """Read a labeled dataset, preserving file order.

    When ``class_count`` is given every label must fall inside
    ``[0, class_count)``; otherwise the count is inferred as ``max(label)+1``.
    Malformed rows and out-of-range labels raise :class:`DatasetError` with
    the offending line number.
    """
    path = Path(path)
    fmt = _infer_format(path, fmt)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetError(f"{path}: {exc}") from exc
    lines = raw.splitlines()

    examples: list[LabeledExample] = []
    if fmt == "tsv":
        if not lines:
            raise DatasetError(f"{path}: empty dataset file")
        header = lines[0].split("\t")
        if [h.strip() for h in header] != ["text", "label"]:
            raise DatasetError(f"{path}:1: expected header 'text<TAB>label', got {lines[0]!r}")
        for lineno, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            if "\t" not in line:
                raise DatasetError(f"{path}:{lineno}: missing tab separator")
            text, _, label_str = line.rpartition("\t")
            label = _parse_label(label_str, path, lineno)
            _check_text(text, path, lineno)
            examples.append(LabeledExample(id=f"{path.stem}-{len(examples):06d}", text=text, label=label))
    else:
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict) or "text" not in obj or "label" not in obj:
                raise DatasetError(f"{path}:{lineno}: object must have 'text' and 'label'")
            label = _parse_label(obj["label"], path, lineno)
            _check_text(str(obj["text"]), path, lineno)
            provenance = None
            if obj.get("provenance") is not None:
                from orderbkd.poison import PoisonRecord

                try:
                    provenance = PoisonRecord.from_provenance(obj["provenance"], str(obj["text"]), label)
                except (KeyError, TypeError) as exc:
                    raise DatasetError(f"{path}:{lineno}: bad provenance object: {exc}") from exc
            examples.append(
                LabeledExample(
                    id=str(obj.get("id", f"{path.stem}-{len(examples):06d}")),
                    text=str(obj["text"]),
                    label=label,
                    provenance=provenance,
                )
            )

    if not examples:
        raise DatasetError(f"{path}: dataset contains no records")
    inferred = max(ex.label for ex in examples) + 1
    count = class_count if class_count is not None else inferred
    for i, ex in enumerate(examples):
        if ex.label >= count:
            raise DatasetError(f"{path}: record {i} has label {ex.label} out of range for {count} classes")
    meta = DatasetMeta(
        name=name if name is not None else path.stem,
        class_count=count,
        split=split if split is not None else _infer_split(path),
    )
    return meta, examples


def _parse_label(value, path: Path, lineno: int) -> int:
    try:
        label = int(value)
    except (TypeError, ValueError):
        raise DatasetError(f"{path}:{lineno}: label {value!r} is not an integer") from None
    if label < 0:
        raise DatasetError(f"{path}:{lineno}: label must be non-negative")
    return label


def _check_text(text: str, path: Path, lineno: int) -> None:
    if not text.strip():
        raise DatasetError(f"{path}:{lineno}: empty text field")


def save_dataset(examples: list[LabeledExample], path: str | Path, fmt: str | None = None) -> None:
    """Write ``examples`` to ``path``; JSONL keeps provenance, TSV drops it."""
    path = Path(path)
    fmt = _infer_format(path, fmt)
    try:
        with path.open("w", encoding="utf-8") as fh:
            if fmt == "tsv":
                if any(ex.provenance is not None for ex in examples):
                    warnings.warn("TSV format drops poison provenance fields; use JSONL to keep them")
                fh.write("text\tlabel\n")
                for ex in examples:
                    if "\t" in ex.text or "\n" in ex.text:
                        raise DatasetError(f"{path}: text of {ex.id!r} contains tab/newline; not representable as TSV")
                    fh.write(f"{ex.text}\t{ex.label}\n")
            else:
                for ex in examples:
                    obj: dict = {"id": ex.id, "text": ex.text, "label": ex.label}
                    if ex.provenance is not None:
                        obj["provenance"] = ex.provenance.to_provenance()
                    fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
    except OSError as exc:
        raise DatasetError(f"{path}: {exc}") from exc
