"""CLI subcommands: authoring, verification, scenarios, and the daemon."""

from __future__ import annotations

import json
import os
import socket
import time
from pathlib import Path

import pytest
from click.testing import CliRunner

from contractnet.canon import canonical_bytes
from contractnet.cli import main
from contractnet.files import load_document
from contractnet.identity import TrustRegistry, load_identity
from contractnet.negotiation import save_transcript
from contractnet.scenarios.fixtures import steel_rod_purchase


@pytest.fixture
def runner():
    return CliRunner()


def _invoke(runner, state_dir, *args, expect_exit=0, as_json=True):
    argv = ["--state-dir", str(state_dir)]
    if as_json:
        argv.append("--json")
    argv.extend(args)
    result = runner.invoke(main, argv, catch_exceptions=False)
    assert result.exit_code == expect_exit, result.output
    return result


def test_keygen_creates_files_and_registry(runner, tmp_path):
    result = _invoke(runner, tmp_path, "--seed", "9", "keygen", "alice",
                     "--display-name", "Alice Ltd")
    data = json.loads(result.output)
    assert (tmp_path / "alice.id.json").exists()
    assert (tmp_path / "alice.secret.json").exists()
    registry = TrustRegistry.load(tmp_path / "trust.json")
    identity = load_identity(tmp_path, "alice")
    assert identity.party_id.text == data["partyId"]
    assert registry.display_name(identity.party_id) == "Alice Ltd"


def test_keygen_seed_is_reproducible(runner, tmp_path):
    a = json.loads(_invoke(runner, tmp_path / "a", "--seed", "4",
                           "keygen", "k").output)
    b = json.loads(_invoke(runner, tmp_path / "b", "--seed", "4",
                           "keygen", "k").output)
    assert a["partyId"] == b["partyId"]


def test_template_authoring_roundtrip(runner, tmp_path):
    draft = {
        "title": "Steel Rod Purchase",
        "elements": [
            {"provision": "Seller ${seller} agrees to manufacture and deliver "
                          "${quantity} steel rods to buyer ${buyer}."},
            {"provision": " Buyer ${buyer} agrees to pay ${price} upon delivery."},
            {"parameter": {"key": "quantity", "type": "positiveInt"}},
            {"parameter": {"key": "price", "type": "currencyAmount"}},
            {"parameter": {"key": "buyer", "type": "party"}},
            {"parameter": {"key": "seller", "type": "party"}},
        ],
    }
    (tmp_path / "draft.json").write_text(json.dumps(draft))
    out = tmp_path / "steel.rcn.json"
    created = json.loads(_invoke(
        runner, tmp_path, "template", "new", "--from",
        str(tmp_path / "draft.json"), "-o", str(out),
    ).output)
    assert created["templateHash"] == steel_rod_purchase().hash.text

    hashed = json.loads(_invoke(
        runner, tmp_path, "template", "hash", str(out)
    ).output)
    assert hashed["templateHash"] == created["templateHash"]

    linted = json.loads(_invoke(
        runner, tmp_path, "template", "lint", str(out)
    ).output)
    assert linted["problems"] == []


def test_template_lint_flags_unknown_types(runner, tmp_path):
    draft = {"title": "odd", "elements": [{"parameter": {"key": "a", "type": "mystery"}}]}
    (tmp_path / "draft.json").write_text(json.dumps(draft))
    out = tmp_path / "odd.rcn.json"
    _invoke(runner, tmp_path, "template", "new", "--from",
            str(tmp_path / "draft.json"), "-o", str(out))
    result = _invoke(runner, tmp_path, "template", "lint", str(out), expect_exit=1)
    assert "mystery" in result.output


def _write_template(tmp_path) -> Path:
    path = tmp_path / "steel.rcn.json"
    path.write_bytes(canonical_bytes(steel_rod_purchase().to_doc()))
    return path


def test_contract_new_validate_render(runner, tmp_path):
    template_path = _write_template(tmp_path)
    keygen_a = json.loads(_invoke(runner, tmp_path, "--seed", "1",
                                  "keygen", "alice").output)
    keygen_b = json.loads(_invoke(runner, tmp_path, "--seed", "2",
                                  "keygen", "bob").output)
    out = tmp_path / "deal.rcn.json"
    _invoke(
        runner, tmp_path, "contract", "new",
        "--template", str(template_path),
        "--arg", "quantity=500",
        "--arg", "price=1234.50 EUR",
        "--arg", f"buyer={keygen_b['partyId']}",
        "--arg", f"seller={keygen_a['partyId']}",
        "-o", str(out),
    )
    validated = json.loads(_invoke(
        runner, tmp_path, "contract", "validate",
        "--template", str(template_path), str(out),
    ).output)
    assert validated["valid"] is True

    rendered = json.loads(_invoke(
        runner, tmp_path, "contract", "render",
        "--template", str(template_path), str(out),
    ).output)
    assert "500 steel rods" in rendered["prose"]
    assert "1234.50 EUR" in rendered["prose"]


def test_contract_new_rejects_bad_argument(runner, tmp_path):
    template_path = _write_template(tmp_path)
    result = _invoke(
        runner, tmp_path, "contract", "new",
        "--template", str(template_path),
        "--arg", "quantity=minus-five",
        "-o", str(tmp_path / "bad.rcn.json"),
        expect_exit=1,
    )
    assert "error" in result.output


def test_proposal_authoring(runner, tmp_path):
    template_path = _write_template(tmp_path)
    out = tmp_path / "proposal.rcn.json"
    _invoke(
        runner, tmp_path, "contract", "new",
        "--template", str(template_path),
        "--constraint", "quantity=range:100..1000",
        "--constraint", "price=any",
        "--constraint", "buyer=any",
        "--constraint", "seller=any",
        "-o", str(out),
    )
    document = load_document(out)
    doc = document.to_doc()
    assert doc["kind"] == "proposal"
    assert doc["constraints"]["quantity"]["constraint"] == "range"


def test_verify_transcript_command(runner, tmp_path, parties, envelopes,
                                   steel_contract, clock):
    from contractnet.negotiation import NegotiationEngine

    x, z, registry = parties
    registry.save(tmp_path / "trust.json")
    engine = NegotiationEngine(clock.now)
    offer = envelopes.offer(x, z, "a" * 32, 1, [steel_contract])
    engine.open_session(offer)
    engine.accept(envelopes.acceptance(z, "a" * 32, 1, offer.envelope_hash))
    path = tmp_path / "session.transcript.ndjson"
    save_transcript(path, engine.transcript("a" * 32))

    good = json.loads(_invoke(runner, tmp_path, "verify-transcript", str(path)).output)
    assert good["ok"] is True
    assert good["finalState"] == "accepted"

    raw = bytearray(path.read_bytes())
    raw[len(raw) // 2] ^= 0x01
    tampered = tmp_path / "tampered.ndjson"
    tampered.write_bytes(bytes(raw))
    bad = json.loads(_invoke(runner, tmp_path, "verify-transcript", str(tampered),
                             expect_exit=1).output)
    assert bad["ok"] is False


def test_scenario_run_tap_output(runner, tmp_path):
    result = _invoke(runner, tmp_path, "scenario", "run", "data-purchase",
                     as_json=False)
    assert "ok 1 -" in result.output
    assert "not ok" not in result.output
    assert "digest" in result.output


def test_scenario_run_json(runner, tmp_path):
    result = _invoke(runner, tmp_path, "--seed", "3", "scenario", "run",
                     "manufacturing")
    data = json.loads(result.output)
    assert data["passed"] is True
    assert data["seed"] == 3
    assert all(a["ok"] for a in data["assertions"])


def test_unknown_scenario_fails_cleanly(runner, tmp_path):
    result = _invoke(runner, tmp_path, "scenario", "run", "nope", expect_exit=1)
    payload = json.loads(result.output or result.stderr)
    assert payload["error"] == "invariant-violation"


# --- end-to-end over the daemon -----------------------------------------------------

def _free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def test_serve_and_negotiate_over_tcp(runner, tmp_path):
    """Two daemons on localhost: offer via one admin API, auto-accept on the
    other, session accepted on both sides."""
    import subprocess
    import sys
    import urllib.request

    alice_dir = tmp_path / "alice"
    bob_dir = tmp_path / "bob"
    alice_dir.mkdir()
    bob_dir.mkdir()

    alice_key = json.loads(_invoke(runner, alice_dir, "--seed", "11",
                                   "keygen", "alice").output)
    bob_key = json.loads(_invoke(runner, bob_dir, "--seed", "12",
                                 "keygen", "bob").output)

    # Merge registries so each side trusts the other.
    merged = TrustRegistry.load(alice_dir / "trust.json")
    other = TrustRegistry.load(bob_dir / "trust.json")
    for party in other.parties():
        entry = other._entries[party]
        merged.add(party, public_key=entry.public_key,
                   display_name=entry.display_name,
                   valid_from=entry.valid_from, valid_until=entry.valid_until)
    merged.save(alice_dir / "trust.json")
    merged.save(bob_dir / "trust.json")

    template_path_a = alice_dir / "steel.rcn.json"
    template_path_a.write_bytes(canonical_bytes(steel_rod_purchase().to_doc()))
    (bob_dir / "steel.rcn.json").write_bytes(template_path_a.read_bytes())

    ports = {name: _free_port() for name in
             ("alice_tcp", "alice_admin", "bob_tcp", "bob_admin")}
    steel_hash = steel_rod_purchase().hash.text

    def write_config(directory, name, tcp_port, admin_port, peer_party, peer_port,
                     policy):
        (directory / "agent.toml").write_text(
            f'name = "{name}"\n'
            f'[identity]\nkey = "{name}"\n'
            f'[listen]\nendpoint = "tcp:127.0.0.1:{tcp_port}"\n'
            f'[admin]\nendpoint = "127.0.0.1:{admin_port}"\ntoken = "t-{name}"\n'
            f'[registry]\npath = "trust.json"\n'
            f'[session]\noffer_validity_ms = 60000\n'
            f'[templates]\nfiles = ["steel.rcn.json"]\n'
            f'[peers]\n"{peer_party}" = "tcp:127.0.0.1:{peer_port}"\n'
            f'[policies]\n"{steel_hash}" = "{policy}"\n'
        )

    write_config(alice_dir, "alice", ports["alice_tcp"], ports["alice_admin"],
                 bob_key["partyId"], ports["bob_tcp"], "defer")
    write_config(bob_dir, "bob", ports["bob_tcp"], ports["bob_admin"],
                 alice_key["partyId"], ports["alice_tcp"], "auto-accept")

    processes = []
    try:
        for directory in (alice_dir, bob_dir):
            processes.append(subprocess.Popen(
                [sys.executable, "-m", "contractnet.cli", "--state-dir",
                 str(directory), "serve"],
                stdout=subprocess.DEVNULL, stderr=subprocess.DEVNULL,
            ))

        def wait_for_admin(port, token, deadline=30.0):
            start = time.monotonic()
            while time.monotonic() - start < deadline:
                try:
                    request = urllib.request.Request(
                        f"http://127.0.0.1:{port}/sessions",
                        headers={"Authorization": f"Bearer {token}"},
                    )
                    with urllib.request.urlopen(request, timeout=2):
                        return
                except Exception:
                    time.sleep(0.2)
            raise TimeoutError(f"admin API on {port} never came up")

        wait_for_admin(ports["alice_admin"], "t-alice")
        wait_for_admin(ports["bob_admin"], "t-bob")

        contract_path = alice_dir / "deal.rcn.json"
        _invoke(
            runner, alice_dir, "contract", "new",
            "--template", str(template_path_a),
            "--arg", "quantity=42",
            "--arg", "price=9.99 EUR",
            "--arg", f"buyer={bob_key['partyId']}",
            "--arg", f"seller={alice_key['partyId']}",
            "-o", str(contract_path),
        )

        env = dict(os.environ)
        env["CONTRACTNET_ADMIN_ENDPOINT"] = f"127.0.0.1:{ports['alice_admin']}"
        env["CONTRACTNET_ADMIN_TOKEN"] = "t-alice"
        offer_out = subprocess.run(
            [sys.executable, "-m", "contractnet.cli", "--state-dir", str(alice_dir),
             "--json", "offer", "--to", bob_key["partyId"],
             "--contract", str(contract_path)],
            capture_output=True, text=True, env=env, timeout=30,
        )
        assert offer_out.returncode == 0, offer_out.stderr
        session_id = json.loads(offer_out.stdout)["sessionId"]

        def session_state(port, token):
            request = urllib.request.Request(
                f"http://127.0.0.1:{port}/sessions/{session_id}",
                headers={"Authorization": f"Bearer {token}"},
            )
            with urllib.request.urlopen(request, timeout=5) as response:
                return json.loads(response.read())["state"]

        deadline = time.monotonic() + 20
        state = None
        while time.monotonic() < deadline:
            try:
                state = session_state(ports["alice_admin"], "t-alice")
                if state == "accepted":
                    break
            except Exception:
                pass
            time.sleep(0.3)
        assert state == "accepted"
        assert session_state(ports["bob_admin"], "t-bob") == "accepted"
    finally:
        for process in processes:
            process.terminate()
        for process in processes:
            process.wait(timeout=10)
