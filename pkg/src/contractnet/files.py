"""Document interchange: canonical ``.rcn.json`` files.

Every file carries a top-level ``kind`` discriminator. Files are written in
canonical form, so loading and re-saving a document is byte-identical and
the file's bytes hash to the document's hash.
"""

from __future__ import annotations

from pathlib import Path
from typing import Union

from .canon import canonical_bytes, parse_json_tree
from .contracts import Contract, ProposalContract
from .errors import InvariantViolation
from .templates import Template

Document = Union[Template, Contract, ProposalContract]

DOCUMENT_EXTENSION = ".rcn.json"

_DECODERS = {
    "template": Template.from_doc,
    "contract": Contract.from_doc,
    "proposal": ProposalContract.from_doc,
}


def decode_document(data: bytes) -> Document:
    tree = parse_json_tree(data)
    if not isinstance(tree, dict) or "kind" not in tree:
        raise InvariantViolation("document has no kind field")
    decoder = _DECODERS.get(tree["kind"])
    if decoder is None:
        raise InvariantViolation(f"unknown document kind {tree['kind']!r}")
    document = decoder(tree)
    if canonical_bytes(document.to_doc()) != data:
        raise InvariantViolation("document bytes are not canonical")
    return document


def load_document(path: str | Path) -> Document:
    return decode_document(Path(path).read_bytes())


def save_document(path: str | Path, document: Document) -> bytes:
    data = canonical_bytes(document.to_doc())
    Path(path).write_bytes(data)
    return data
