"""On-disk codecs for iplearn documents and record streams.

Documents (MDPs, checkpoints, oracle reports, config echoes) are single
mappings.  Record streams (datasets) are sequences of mappings, one per pair,
ranking or transition.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from collections.abc import Iterable, Iterator
from pathlib import Path
from typing import Any

import msgpack
import msgpack_numpy as m
from typing_extensions import override

from ._errors import DatasetParseError
from ._json import iter_json_lines, read_json, write_json, write_json_lines


class DocumentCodec(ABC):
    """Read and write a single mapping."""

    @abstractmethod
    def dump(self, path: str | Path, document: dict[str, Any]) -> None: ...

    @abstractmethod
    def load(self, path: str | Path) -> dict[str, Any]: ...


class RecordsCodec(ABC):
    """Read and write a stream of mappings."""

    @abstractmethod
    def dump(self, path: str | Path, records: Iterable[dict[str, Any]]) -> int:
        """Write all records and return how many were written."""
        ...

    @abstractmethod
    def iter(self, path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
        """Yield ``(position, record)`` with 1-based positions."""
        ...


class JsonDocumentCodec(DocumentCodec):
    """Indented JSON with value-exact floats."""

    @override
    def dump(self, path: str | Path, document: dict[str, Any]) -> None:
        write_json(path, document)

    @override
    def load(self, path: str | Path) -> dict[str, Any]:
        return read_json(path)


class JsonLinesCodec(RecordsCodec):
    """One compact JSON object per line."""

    @override
    def dump(self, path: str | Path, records: Iterable[dict[str, Any]]) -> int:
        return write_json_lines(path, records)

    @override
    def iter(self, path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
        return iter_json_lines(path)


class MsgpackDocumentCodec(DocumentCodec):
    """Binary msgpack; numpy arrays keep their exact bytes via msgpack-numpy."""

    @override
    def dump(self, path: str | Path, document: dict[str, Any]) -> None:
        Path(path).write_bytes(msgpack.packb(document, default=m.encode))

    @override
    def load(self, path: str | Path) -> dict[str, Any]:
        return msgpack.unpackb(Path(path).read_bytes(), object_hook=m.decode)


class MsgpackRecordsCodec(RecordsCodec):
    """A msgpack stream of consecutive packed mappings."""

    @override
    def dump(self, path: str | Path, records: Iterable[dict[str, Any]]) -> int:
        n = 0
        with Path(path).open("wb") as fh:
            for record in records:
                fh.write(msgpack.packb(record, default=m.encode))
                n += 1
        return n

    @override
    def iter(self, path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
        with Path(path).open("rb") as fh:
            unpacker = msgpack.Unpacker(fh, object_hook=m.decode)
            for position, record in enumerate(unpacker, start=1):
                if not isinstance(record, dict):
                    raise DatasetParseError(
                        f"expected a mapping, got {type(record).__name__}", position
                    )
                yield position, record
