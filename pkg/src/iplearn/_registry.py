"""Codec registry mapping file patterns to serialization codecs.

A single ``_REGISTRY`` list holds all codec entries.  :func:`resolve_codec`
searches it by glob pattern, filtered by kind (``"document"`` for single
mappings such as MDPs and checkpoints, ``"records"`` for datasets).
Codec modules are imported on first resolution, so msgpack is only loaded
once a file needs it.
"""

from __future__ import annotations

import fnmatch
import importlib
from pathlib import Path
from typing import TYPE_CHECKING, Literal, NamedTuple, overload

if TYPE_CHECKING:
    from ._codecs import DocumentCodec, RecordsCodec


class _RegistryEntry(NamedTuple):
    pattern: str      # e.g. "*.json"
    kind: str         # "document" or "records"
    module_path: str  # e.g. "iplearn._codecs"
    codec_cls: str


_REGISTRY: list[_RegistryEntry] = [
    _RegistryEntry("*.json", "document", "iplearn._codecs", "JsonDocumentCodec"),
    _RegistryEntry("*.msgpack", "document", "iplearn._codecs", "MsgpackDocumentCodec"),
    _RegistryEntry("*.jsonl", "records", "iplearn._codecs", "JsonLinesCodec"),
    _RegistryEntry("*.msgpack", "records", "iplearn._codecs", "MsgpackRecordsCodec"),
]


def known_patterns(kind: Literal["document", "records"]) -> list[str]:
    """Return the glob patterns registered for *kind*."""
    return [e.pattern for e in _REGISTRY if e.kind == kind]


@overload
def resolve_codec(path: str | Path, *, kind: Literal["document"]) -> DocumentCodec: ...
@overload
def resolve_codec(path: str | Path, *, kind: Literal["records"]) -> RecordsCodec: ...


def resolve_codec(
    path: str | Path, *, kind: Literal["document", "records"]
) -> DocumentCodec | RecordsCodec:
    """Resolve a file path to a codec instance.

    Parameters
    ----------
    path : str | Path
        Target file.  Only the file name is matched.
    kind : ``"document"`` | ``"records"``
        Whether a single mapping or a record stream is being stored.

    Returns
    -------
    DocumentCodec | RecordsCodec
        A fresh codec instance.

    Raises
    ------
    ValueError
        If no codec is registered for *path* and *kind*.
    """
    name = Path(path).name
    for entry in _REGISTRY:
        if entry.kind != kind:
            continue
        if fnmatch.fnmatch(name, entry.pattern):
            mod = importlib.import_module(entry.module_path)
            return getattr(mod, entry.codec_cls)()
    raise ValueError(
        f"No {kind} codec registered for '{path}' "
        f"(known patterns: {', '.join(known_patterns(kind))})"
    )
