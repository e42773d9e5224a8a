"""Command-line interface: authoring, daemon, verification, and scenarios.

Authoring commands (keygen, template, contract) work on files in the state
directory. Protocol commands (offer, accept, reject, trace) talk to a running
agent daemon over its admin API. ``serve`` runs the daemon itself;
``verify-transcript`` replays an exported negotiation log the way an
adjudicator would; ``scenario run`` executes a scripted reproduction on the
simulated network and reports TAP-style assertion lines.
"""

from __future__ import annotations

import json
import os
import signal
import sys
import threading
import urllib.error
import urllib.request
from pathlib import Path
from random import Random

import click

from .agent import Agent, AgentConfig, auto_accept, auto_reject, defer_to_human
from .canon import Hash, parse_json_tree
from .contracts import (
    Any_,
    Contract,
    Exact,
    OneOf,
    ProposalContract,
    Range,
    Regex,
    render_contract,
    validate_contract,
)
from .errors import ContractNetError, InvariantViolation
from .files import load_document, save_document
from .identity import (
    TrustRegistry,
    generate_identity,
    load_identity,
    save_identity,
)
from .negotiation import load_transcript, verify_transcript
from .templates import Template, TypeRegistry, parse_argument_text
from .tracing import DocumentStore
from .transport import Endpoint, SystemClock, TcpTransport
from .values import Value

ADMIN_ENDPOINT_ENV = "CONTRACTNET_ADMIN_ENDPOINT"
ADMIN_TOKEN_ENV = "CONTRACTNET_ADMIN_TOKEN"


class Cli:
    def __init__(self, state_dir: Path, seed: int | None, as_json: bool):
        self.state_dir = state_dir
        self.seed = seed
        self.as_json = as_json

    @property
    def rng(self) -> Random:
        return Random(self.seed) if self.seed is not None else Random()

    def out(self, data: dict, text: str | None = None) -> None:
        if self.as_json:
            click.echo(json.dumps(data, sort_keys=True))
        else:
            click.echo(text if text is not None else json.dumps(data, indent=2))

    def fail(self, error: str, detail: str, exit_code: int = 1) -> None:
        if self.as_json:
            click.echo(json.dumps({"error": error, "detail": detail}), err=True)
        else:
            click.echo(f"error: {detail}", err=True)
        sys.exit(exit_code)


pass_cli = click.make_pass_decorator(Cli)


@click.group()
@click.option(
    "--state-dir",
    type=click.Path(path_type=Path),
    default=Path("."),
    help="Directory holding keys, trust.json, and agent state.",
)
@click.option("--seed", type=int, default=None, help="Seed for reproducible randomness.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.version_option(package_name="contractnet")
@click.pass_context
def main(ctx: click.Context, state_dir: Path, seed: int | None, as_json: bool) -> None:
    """Peer-to-peer contract agents: author, negotiate, trace, verify."""
    ctx.obj = Cli(state_dir=state_dir, seed=seed, as_json=as_json)


def _handle_errors(fn):
    import functools

    @functools.wraps(fn)
    def wrapper(cli: Cli, *args, **kwargs):
        try:
            return fn(cli, *args, **kwargs)
        except ContractNetError as exc:
            cli.fail(exc.code, str(exc))
        except (OSError, urllib.error.URLError) as exc:
            cli.fail("io-error", str(exc))

    return wrapper


# --- keygen ---------------------------------------------------------------------

@main.command()
@click.argument("name")
@click.option("--display-name", default=None, help="Human-readable party name.")
@pass_cli
@_handle_errors
def keygen(cli: Cli, name: str, display_name: str | None) -> None:
    """Generate an identity and register it in the local trust registry."""
    from datetime import timedelta

    identity = generate_identity(display_name or name, cli.rng)
    cli.state_dir.mkdir(parents=True, exist_ok=True)
    id_path, secret_path = save_identity(identity, cli.state_dir, name)
    registry_path = cli.state_dir / "trust.json"
    registry = (
        TrustRegistry.load(registry_path) if registry_path.exists() else TrustRegistry()
    )
    now = SystemClock().now()
    registry.add(identity, valid_from=now, valid_until=now + timedelta(days=3650))
    registry_hash = registry.save(registry_path)
    cli.out(
        {
            "partyId": identity.party_id.text,
            "idFile": str(id_path),
            "secretFile": str(secret_path),
            "registry": str(registry_path),
            "registryHash": registry_hash.text,
        },
        text=f"{identity.party_id.text}\nkeys: {id_path}, {secret_path}\n"
        f"registered in {registry_path}",
    )


# --- template -------------------------------------------------------------------

@main.group()
def template() -> None:
    """Author, hash, and lint contract templates."""


def _template_from_draft(draft: dict) -> Template:
    doc = dict(draft)
    doc.setdefault("kind", "template")
    return Template.from_doc(doc)


@template.command("new")
@click.option("--from", "draft_path", type=click.Path(path_type=Path), required=True,
              help="Draft JSON with title and elements.")
@click.option("-o", "--output", type=click.Path(path_type=Path), required=True)
@pass_cli
@_handle_errors
def template_new(cli: Cli, draft_path: Path, output: Path) -> None:
    """Normalize a draft into a canonical template file."""
    draft = parse_json_tree(draft_path.read_bytes())
    tmpl = _template_from_draft(draft)
    save_document(output, tmpl)
    cli.out(
        {"templateHash": tmpl.hash.text, "file": str(output)},
        text=f"{tmpl.hash.text}\nwrote {output}",
    )


@template.command("hash")
@click.argument("file", type=click.Path(path_type=Path))
@pass_cli
@_handle_errors
def template_hash(cli: Cli, file: Path) -> None:
    """Print the hash of a template file."""
    document = load_document(file)
    if not isinstance(document, Template):
        raise InvariantViolation(f"{file} is not a template")
    cli.out({"templateHash": document.hash.text}, text=document.hash.text)


@template.command("lint")
@click.argument("file", type=click.Path(path_type=Path))
@pass_cli
@_handle_errors
def template_lint(cli: Cli, file: Path) -> None:
    """Check template invariants and type names."""
    document = load_document(file)
    if not isinstance(document, Template):
        raise InvariantViolation(f"{file} is not a template")
    registry = TypeRegistry()
    problems = []
    for parameter in document.parameters:
        if registry.resolve(parameter.type_name) is None:
            problems.append(
                {"key": parameter.key, "problem": f"unknown type {parameter.type_name!r}"}
            )
    cli.out(
        {"templateHash": document.hash.text, "problems": problems},
        text="ok" if not problems else "\n".join(
            f"{p['key']}: {p['problem']}" for p in problems
        ),
    )
    if problems:
        sys.exit(1)


# --- contract -------------------------------------------------------------------

@main.group()
def contract() -> None:
    """Author, validate, and render contracts."""


def _parse_constraint_spec(tmpl: Template, key: str, spec: str):
    type_name = tmpl.parameter_type(key)

    def typed(raw: str) -> Value:
        return parse_argument_text(type_name, raw)

    if spec == "any":
        return Any_()
    kind, sep, rest = spec.partition(":")
    if not sep:
        return Exact(typed(spec))
    if kind == "exact":
        return Exact(typed(rest))
    if kind == "range":
        lo, sep2, hi = rest.partition("..")
        if not sep2:
            raise InvariantViolation(f"range constraint needs lo..hi, got {rest!r}")
        return Range(typed(lo), typed(hi))
    if kind == "regex":
        return Regex(rest)
    if kind == "oneof":
        return OneOf(tuple(typed(part) for part in rest.split(",")))
    return Exact(typed(spec))


@contract.command("new")
@click.option("--template", "template_path", type=click.Path(path_type=Path), required=True)
@click.option("--arg", "args", multiple=True, help="key=value argument (typed by the template).")
@click.option("--constraint", "constraints", multiple=True,
              help="key=SPEC where SPEC is any|exact:V|range:LO..HI|regex:P|oneof:A,B.")
@click.option("-o", "--output", type=click.Path(path_type=Path), required=True)
@pass_cli
@_handle_errors
def contract_new(
    cli: Cli, template_path: Path, args: tuple[str, ...],
    constraints: tuple[str, ...], output: Path,
) -> None:
    """Build a contract (or, with --constraint, a proposal) for a template."""
    tmpl = load_document(template_path)
    if not isinstance(tmpl, Template):
        raise InvariantViolation(f"{template_path} is not a template")
    if constraints and args:
        raise InvariantViolation("use either --arg (contract) or --constraint (proposal)")
    if constraints:
        pairs = []
        for spec in constraints:
            key, sep, raw = spec.partition("=")
            if not sep:
                raise InvariantViolation(f"malformed --constraint {spec!r}")
            pairs.append((key, _parse_constraint_spec(tmpl, key, raw)))
        document: Contract | ProposalContract = ProposalContract(
            template_hash=tmpl.hash, constraints=tuple(pairs)
        )
    else:
        pairs = []
        for spec in args:
            key, sep, raw = spec.partition("=")
            if not sep:
                raise InvariantViolation(f"malformed --arg {spec!r}")
            pairs.append((key, parse_argument_text(tmpl.parameter_type(key), raw)))
        document = Contract(template_hash=tmpl.hash, arguments=tuple(pairs))
        report = validate_contract(document, tmpl, TypeRegistry())
        if not report.valid:
            first = report.findings[0]
            raise InvariantViolation(f"{first.kind} for key {first.key!r}")
    save_document(output, document)
    cli.out(
        {"kind": document.to_doc()["kind"], "file": str(output)},
        text=f"wrote {output}",
    )


@contract.command("validate")
@click.option("--template", "template_path", type=click.Path(path_type=Path), required=True)
@click.argument("file", type=click.Path(path_type=Path))
@pass_cli
@_handle_errors
def contract_validate(cli: Cli, template_path: Path, file: Path) -> None:
    """Validate a contract against its template."""
    tmpl = load_document(template_path)
    doc = load_document(file)
    if not isinstance(tmpl, Template) or not isinstance(doc, Contract):
        raise InvariantViolation("validate needs a template and a contract")
    report = validate_contract(doc, tmpl, TypeRegistry())
    findings = [{"kind": f.kind, "key": f.key, "detail": f.detail} for f in report]
    cli.out(
        {"valid": report.valid, "findings": findings},
        text="valid" if report.valid else "\n".join(
            f"{f['kind']}: {f['key']}" for f in findings
        ),
    )
    if not report.valid:
        sys.exit(1)


@contract.command("render")
@click.option("--template", "template_path", type=click.Path(path_type=Path), required=True)
@click.argument("file", type=click.Path(path_type=Path))
@pass_cli
@_handle_errors
def contract_render(cli: Cli, template_path: Path, file: Path) -> None:
    """Print the contract prose with arguments substituted."""
    tmpl = load_document(template_path)
    doc = load_document(file)
    if not isinstance(tmpl, Template) or not isinstance(doc, Contract):
        raise InvariantViolation("render needs a template and a contract")
    prose = render_contract(doc, tmpl)
    cli.out({"prose": prose}, text=prose)


# --- admin client commands ---------------------------------------------------------

def _admin_call(cli: Cli, method: str, path: str, body: dict | None = None) -> dict:
    endpoint = os.environ.get(ADMIN_ENDPOINT_ENV)
    token = os.environ.get(ADMIN_TOKEN_ENV)
    if endpoint is None or token is None:
        config_path = cli.state_dir / "agent.toml"
        if config_path.exists():
            parsed = _load_config(config_path)
            admin = parsed.get("admin", {})
            endpoint = endpoint or admin.get("endpoint")
            token = token or admin.get("token")
    if not endpoint or not token:
        raise InvariantViolation(
            f"admin endpoint unknown; set {ADMIN_ENDPOINT_ENV} and "
            f"{ADMIN_TOKEN_ENV} or provide agent.toml"
        )
    url = f"http://{endpoint}{path}"
    data = json.dumps(body).encode() if body is not None else None
    request = urllib.request.Request(
        url,
        data=data,
        method=method,
        headers={
            "Authorization": f"Bearer {token}",
            "Content-Type": "application/json",
        },
    )
    try:
        with urllib.request.urlopen(request, timeout=30) as response:
            return json.loads(response.read().decode())
    except urllib.error.HTTPError as exc:
        payload = exc.read().decode()
        try:
            parsed = json.loads(payload)
        except json.JSONDecodeError:
            parsed = {"error": "http-error", "detail": payload}
        raise ContractNetError(
            f"{parsed.get('error', 'error')}: {parsed.get('detail', '')}"
        ) from exc


@main.command()
@click.option("--to", "receiver", required=True, help="Receiver party id.")
@click.option("--contract", "contract_paths", multiple=True, required=True,
              type=click.Path(path_type=Path))
@click.option("--validity-ms", type=int, default=None)
@pass_cli
@_handle_errors
def offer(cli: Cli, receiver: str, contract_paths: tuple[Path, ...],
          validity_ms: int | None) -> None:
    """Send an offer via the local agent daemon."""
    contracts = [parse_json_tree(p.read_bytes()) for p in contract_paths]
    result = _admin_call(
        cli,
        "POST",
        "/offers",
        {"receiver": receiver, "contracts": contracts, "validityMs": validity_ms},
    )
    cli.out(result, text=f"session {result['sessionId']}")


@main.command()
@click.option("--session", "session_id", required=True)
@pass_cli
@_handle_errors
def accept(cli: Cli, session_id: str) -> None:
    """Accept the live offer of a pending session."""
    result = _admin_call(
        cli, "POST", f"/sessions/{session_id}/decision", {"action": "accept"}
    )
    cli.out(result, text=f"session {session_id}: {result['state']}")


@main.command()
@click.option("--session", "session_id", required=True)
@pass_cli
@_handle_errors
def reject(cli: Cli, session_id: str) -> None:
    """Reject the live offer of a pending session."""
    result = _admin_call(
        cli, "POST", f"/sessions/{session_id}/decision", {"action": "reject"}
    )
    cli.out(result, text=f"session {session_id}: {result['state']}")


@main.command()
@click.option("--session", "session_id", default=None,
              help="Trace the live offer's references in this session.")
@click.option("--target", default=None, help="Locator or party id to ask.")
@click.option("--hash", "hashes", multiple=True, help="Hashes to resolve.")
@pass_cli
@_handle_errors
def trace(cli: Cli, session_id: str | None, target: str | None,
          hashes: tuple[str, ...]) -> None:
    """Resolve hash references via the local agent daemon."""
    body = {"session": session_id, "target": target, "hashes": list(hashes) or None}
    result = _admin_call(cli, "POST", "/trace", body)
    cli.out(result, text=f"trace request {result.get('requestId')}")


# --- serve ---------------------------------------------------------------------------

def _load_config(path: Path) -> dict:
    try:
        import tomllib  # Python >= 3.11
    except ImportError:
        import tomli as tomllib
    return tomllib.loads(path.read_text())


def build_agent_from_config(
    state_dir: Path, config_path: Path
) -> tuple[Agent, dict]:
    """Construct an agent plus the raw parsed config for serve wiring."""
    parsed = _load_config(config_path)
    name = parsed.get("name")
    if not name:
        raise InvariantViolation("agent.toml needs a top-level name")
    identity = load_identity(state_dir, parsed.get("identity", {}).get("key", name))
    registry_file = parsed.get("registry", {}).get("path", "trust.json")
    registry = TrustRegistry.load(state_dir / registry_file)

    peers = {}
    for party_text, endpoint_text in parsed.get("peers", {}).items():
        from .identity import PartyId

        peers[PartyId.parse(party_text)] = Endpoint.parse(endpoint_text)

    named_policies = {
        "defer": defer_to_human,
        "auto-accept": auto_accept,
        "auto-reject": auto_reject,
    }
    policies = {}
    for hash_text, policy_name in parsed.get("policies", {}).items():
        maker = named_policies.get(policy_name)
        if maker is None:
            raise InvariantViolation(
                f"unknown policy {policy_name!r}; choose from {sorted(named_policies)}"
            )
        policies[Hash.parse(hash_text)] = maker()

    templates = []
    for file in parsed.get("templates", {}).get("files", []):
        document = load_document(state_dir / file)
        if not isinstance(document, Template):
            raise InvariantViolation(f"{file} is not a template")
        templates.append(document)

    store_section = parsed.get("store", {})
    message_path = state_dir / store_section.get("messages", f"{name}.messages.ndjson")
    admin = parsed.get("admin", {})
    config = AgentConfig(
        name=name,
        identity=identity,
        registry=registry,
        peers=peers,
        policies=policies,
        templates=tuple(templates),
        offer_validity_ms=parsed.get("session", {}).get("offer_validity_ms", 60_000),
        admin_token=os.environ.get(ADMIN_TOKEN_ENV) or admin.get("token", ""),
        store_path=message_path,
    )
    agent = Agent(config, SystemClock())
    documents_dir = store_section.get("documents")
    if documents_dir and (state_dir / documents_dir).exists():
        loaded = DocumentStore.load(state_dir / documents_dir)
        for h in loaded.hashes():
            agent.docstore.put(loaded.get(h))
            policy = loaded.policy_for(h)
            if policy is not None:
                agent.docstore.set_policy(h, policy)
    agent.replay_from_records(agent.messages.records())
    return agent, parsed


@main.command()
@click.option("--config", "config_path", type=click.Path(path_type=Path),
              default=None, help="Agent config file; defaults to <state-dir>/agent.toml.")
@pass_cli
@_handle_errors
def serve(cli: Cli, config_path: Path | None) -> None:
    """Run the agent daemon: TCP listener plus admin API."""
    import uvicorn

    from .admin import build_admin_app

    config_file = config_path or (cli.state_dir / "agent.toml")
    agent, parsed = build_agent_from_config(cli.state_dir, config_file)

    listen = parsed.get("listen", {}).get("endpoint")
    if not listen:
        raise InvariantViolation("agent.toml needs [listen] endpoint")
    host, port = Endpoint.parse(listen).host_port()
    transport = TcpTransport(host, port, agent.ingest).start()
    agent._send = lambda endpoint, envelope: transport.send(endpoint, envelope)

    admin_endpoint = os.environ.get(ADMIN_ENDPOINT_ENV) or parsed.get("admin", {}).get(
        "endpoint"
    )
    if not admin_endpoint:
        raise InvariantViolation("agent.toml needs [admin] endpoint")
    admin_host, admin_port = admin_endpoint.rsplit(":", 1)

    app = build_admin_app(agent)

    stop = threading.Event()

    def ticker():
        while not stop.is_set():
            agent.check_expiry()
            stop.wait(1.0)

    threading.Thread(target=ticker, daemon=True).start()

    def shutdown(signum, frame):
        stop.set()
        transport.close()
        raise KeyboardInterrupt

    signal.signal(signal.SIGINT, shutdown)
    signal.signal(signal.SIGTERM, shutdown)

    click.echo(
        f"agent {agent.config.name} ({agent.party_id.text})\n"
        f"listening on {transport.endpoint.text}, admin on http://{admin_endpoint}",
        err=True,
    )
    try:
        uvicorn.run(app, host=admin_host, port=int(admin_port), log_level="warning")
    except KeyboardInterrupt:
        pass
    finally:
        stop.set()
        transport.close()
        documents_dir = parsed.get("store", {}).get("documents")
        if documents_dir:
            agent.docstore.save(cli.state_dir / documents_dir)


# --- verify-transcript -----------------------------------------------------------------

@main.command("verify-transcript")
@click.argument("file", type=click.Path(path_type=Path))
@click.option("--registry", "registry_path", type=click.Path(path_type=Path),
              default=None, help="Trust registry; defaults to <state-dir>/trust.json.")
@pass_cli
@_handle_errors
def verify_transcript_cmd(cli: Cli, file: Path, registry_path: Path | None) -> None:
    """Re-verify an exported negotiation transcript from its envelopes alone."""
    registry = TrustRegistry.load(registry_path or (cli.state_dir / "trust.json"))
    try:
        envelopes = load_transcript(file)
    except InvariantViolation as exc:
        cli.out(
            {"ok": False, "brokenAt": None, "reason": f"undecodable: {exc}"},
            text=f"TAMPERED: {exc}",
        )
        sys.exit(1)
    report = verify_transcript(envelopes, registry)
    data = {
        "ok": report.ok,
        "sessionId": report.session_id,
        "finalState": report.final_state.value if report.final_state else None,
        "messages": report.messages,
        "brokenAt": report.broken_at,
        "reason": report.reason,
    }
    if report.ok:
        cli.out(data, text=f"ok: session {report.session_id}, "
                f"{report.messages} messages, final state {data['finalState']}")
    else:
        cli.out(data, text=f"TAMPERED at message {report.broken_at}: {report.reason}")
        sys.exit(1)


# --- scenarios ----------------------------------------------------------------------

@main.group()
def scenario() -> None:
    """Scripted multi-agent reproductions with assertions."""


@scenario.command("list")
@pass_cli
@_handle_errors
def scenario_list(cli: Cli) -> None:
    from .scenarios import CATALOG

    entries = {name: module.description for name, module in sorted(CATALOG.items())}
    cli.out(
        {"scenarios": entries},
        text="\n".join(f"{name}: {desc}" for name, desc in entries.items()),
    )


@scenario.command("run")
@click.argument("name")
@click.option("--transport", type=click.Choice(["sim", "tcp"]), default="sim")
@pass_cli
@_handle_errors
def scenario_run(cli: Cli, name: str, transport: str) -> None:
    """Run one scenario; exit 0 iff every assertion passes."""
    from .scenarios import run_scenario

    result = run_scenario(name, seed=cli.seed if cli.seed is not None else 0,
                          transport=transport)
    if cli.as_json:
        click.echo(json.dumps(result.to_json(), sort_keys=True))
    else:
        click.echo(f"scenario {result.name} (seed {result.seed}, {result.transport})")
        for step in result.steps:
            click.echo(f"  step {step.index}: {step.description} "
                       f"[{step.deliveries} messages]")
        for line in result.tap_lines():
            click.echo(line)
        click.echo(f"digest {result.digest}")
    sys.exit(0 if result.passed else 1)


if __name__ == "__main__":
    main()
