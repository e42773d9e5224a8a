"""Committed golden vectors reproduce bit-exactly from the current code."""

from __future__ import annotations

import json
from pathlib import Path

from contractnet.canon import canonical_bytes, hash_of_bytes, parse_json_tree
from contractnet.files import decode_document
from contractnet.identity import SignedEnvelope
from contractnet.records import decode_contract_record
from contractnet.tracing import TraceAnswerSet, TraceRequest

GOLDEN = Path(__file__).resolve().parent.parent / "golden"


def _manifest() -> dict:
    return json.loads((GOLDEN / "manifest.json").read_text())


def test_manifest_lists_at_least_ten_vectors():
    assert len(_manifest()["vectors"]) >= 10


def test_all_digests_reproduce():
    for name, entry in _manifest()["vectors"].items():
        data = (GOLDEN / entry["file"]).read_bytes()
        assert hash_of_bytes(data).digest.hex() == entry["sha256"], name


def test_generator_reproduces_committed_bytes():
    """Regenerating from source yields the committed files bit-exactly."""
    import sys

    sys.path.insert(0, str(GOLDEN.parent / "scripts"))
    try:
        from generate_goldens import build_vectors
    finally:
        sys.path.pop(0)
    vectors = build_vectors()
    manifest = _manifest()["vectors"]
    assert set(vectors) == set(manifest)
    for name, data in vectors.items():
        committed = (GOLDEN / manifest[name]["file"]).read_bytes()
        assert data == committed, f"golden vector {name} drifted"


def test_empty_template_golden_vector():
    data = (GOLDEN / "template-empty.canon").read_bytes()
    assert data == b'{"elements":[],"kind":"template","title":""}'
    # Digest frozen when the vector was first generated.
    assert hash_of_bytes(data).digest.hex() == (
        _manifest()["vectors"]["template-empty"]["sha256"]
    )


def test_document_vectors_decode_and_reencode():
    for name in ("template-empty", "template-steel-rod", "contract-steel-rod",
                 "proposal-steel-rod"):
        data = (GOLDEN / f"{name}.canon").read_bytes()
        document = decode_document(data)
        assert canonical_bytes(document.to_doc()) == data


def test_envelope_vectors_decode_and_reencode():
    for name in ("envelope-offer", "envelope-acceptance"):
        data = (GOLDEN / f"{name}.canon").read_bytes()
        envelope = SignedEnvelope.decode(data)
        assert envelope.encode() == data


def test_trace_and_record_vectors_decode():
    request = TraceRequest.from_doc(
        parse_json_tree((GOLDEN / "trace-request.canon").read_bytes())
    )
    assert canonical_bytes(request.to_doc()) == (GOLDEN / "trace-request.canon").read_bytes()
    answer = TraceAnswerSet.from_doc(
        parse_json_tree((GOLDEN / "trace-answer.canon").read_bytes())
    )
    assert canonical_bytes(answer.to_doc()) == (GOLDEN / "trace-answer.canon").read_bytes()
    record = decode_contract_record((GOLDEN / "contract-record.canon").read_bytes())
    assert record.record_hash == hash_of_bytes((GOLDEN / "contract-record.canon").read_bytes())


def test_hashes_independent_of_input_field_order():
    """Shuffling JSON key order in the text form never changes the hash."""
    from random import Random

    rng = Random(3)
    for name in ("template-steel-rod", "contract-steel-rod", "offer"):
        data = (GOLDEN / f"{name}.canon").read_bytes()
        tree = json.loads(data)
        shuffled = json.dumps(tree, indent=2).encode()  # different byte form
        assert shuffled != data
        assert canonical_bytes(json.loads(shuffled)) == data
