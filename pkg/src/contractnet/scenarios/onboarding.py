"""Device ownership transfer driving an automated re-registration.

Agents A (seller) and B (buyer) enter a device-sale contract that references
the device's current certificate and both key-management authorities'
certificates by hash. Both sides notify their key managers AK and BK of the
acceptance. When the device D later reports in from the buyer's premises, AK
instructs it to re-register with BK, BK issues a fresh certificate, and D
deregisters from AK.
"""

from __future__ import annotations

from datetime import timedelta

from ..agent import Agent, auto_accept
from ..canon import format_timestamp, hash_of_bytes, parse_json_tree
from ..contracts import Contract
from ..identity import SignedEnvelope, verify
from ..tracing import Public
from ..values import Value
from .fixtures import device_sale
from .runner import ScenarioContext

name = "onboarding"
description = "sale of a device triggers re-registration with the buyer's key manager"

CERTIFICATE_KIND = "certificate"
DEVICE_REPORT_KIND = "device-report"
REREGISTER_KIND = "reregister-instruction"
CERT_REQUEST_KIND = "certificate-request"
DEREGISTER_KIND = "deregister-request"
ONBOARD_NOTICE_KIND = "onboarding-notice"


def issue_certificate(authority: Agent, subject, validity_days: int = 365) -> SignedEnvelope:
    doc = {
        "kind": "certificate",
        "subject": subject.text,
        "issuer": authority.party_id.text,
        "serial": f"{authority.rng.getrandbits(64):016x}",
        "validFrom": format_timestamp(authority.now),
        "validUntil": format_timestamp(authority.now + timedelta(days=validity_days)),
    }
    from ..identity import sign
    from ..canon import canonical_bytes

    return sign(authority.identity, CERTIFICATE_KIND, canonical_bytes(doc))


def run(ctx: ScenarioContext) -> None:
    template = device_sale()

    seller = ctx.new_agent("A", display_name="Aldersberg Plant", templates=(template,))
    buyer = ctx.new_agent(
        "B",
        display_name="Borealis Motors",
        templates=(template,),
        policies={template.hash: auto_accept()},
    )
    seller_km = ctx.new_agent("AK", display_name="Aldersberg Key Management")
    buyer_km = ctx.new_agent("BK", display_name="Borealis Key Management")
    device = ctx.new_agent("D", display_name="Palletizer 7")
    ctx.connect_all()

    state: dict = {
        "device_live_cert": None,
        "ak_known_devices": {},
        "deregistered": [],
        "bk_registered": [],
    }

    # Certificates existing before the sale: the device's (issued by AK) and
    # each authority's own.
    device_cert = issue_certificate(seller_km, device.party_id)
    ak_cert = issue_certificate(seller_km, seller_km.party_id)
    bk_cert = issue_certificate(buyer_km, buyer_km.party_id)
    cert_hashes = {}
    for label, cert in (("device", device_cert), ("ak", ak_cert), ("bk", bk_cert)):
        data = cert.encode()
        cert_hashes[label] = hash_of_bytes(data)
        for holder in (seller, buyer, seller_km, buyer_km, device):
            holder.docstore.put(data, policy=Public())
    state["device_live_cert"] = device_cert

    # -- scripted key-manager and device behaviors ------------------------------------

    def ak_on_notice(agent: Agent, envelope: SignedEnvelope) -> None:
        doc = parse_json_tree(envelope.payload)
        state["ak_known_devices"][doc["device"]] = doc["newAuthority"]

    def ak_on_device_report(agent: Agent, envelope: SignedEnvelope) -> None:
        doc = parse_json_tree(envelope.payload)
        new_authority = state["ak_known_devices"].get(doc["device"])
        if new_authority is None:
            return
        agent.send_custom(
            envelope.signer,
            REREGISTER_KIND,
            {"kind": "reregister-instruction", "authority": new_authority,
             "device": doc["device"]},
        )

    def ak_on_deregister(agent: Agent, envelope: SignedEnvelope) -> None:
        doc = parse_json_tree(envelope.payload)
        state["deregistered"].append(doc["device"])

    seller_km.register_handler(ONBOARD_NOTICE_KIND, ak_on_notice)
    seller_km.register_handler(DEVICE_REPORT_KIND, ak_on_device_report)
    seller_km.register_handler(DEREGISTER_KIND, ak_on_deregister)

    def bk_on_cert_request(agent: Agent, envelope: SignedEnvelope) -> None:
        doc = parse_json_tree(envelope.payload)
        state["bk_registered"].append(doc["device"])
        cert = issue_certificate(agent, envelope.signer)
        agent.send_custom(
            envelope.signer, CERTIFICATE_KIND, parse_json_tree(cert.payload)
        )

    buyer_km.register_handler(CERT_REQUEST_KIND, bk_on_cert_request)
    buyer_km.register_handler(ONBOARD_NOTICE_KIND, lambda agent, envelope: None)

    def device_on_reregister(agent: Agent, envelope: SignedEnvelope) -> None:
        doc = parse_json_tree(envelope.payload)
        from ..identity import PartyId

        agent.send_custom(
            PartyId.parse(doc["authority"]),
            CERT_REQUEST_KIND,
            {"kind": "certificate-request", "device": agent.config.name},
        )

    def device_on_certificate(agent: Agent, envelope: SignedEnvelope) -> None:
        state["device_live_cert"] = envelope
        agent.docstore.put(envelope.encode(), policy=Public())
        agent.send_custom(
            seller_km.party_id,
            DEREGISTER_KIND,
            {"kind": "deregister-request", "device": agent.config.name},
        )

    device.register_handler(REREGISTER_KIND, device_on_reregister)
    device.register_handler(CERTIFICATE_KIND, device_on_certificate)

    # Sale sides notify their key managers once the contract is accepted.
    def notify_km(km_party):
        def on_accepted(agent: Agent, accepted) -> None:
            agent.send_custom(
                km_party,
                ONBOARD_NOTICE_KIND,
                {
                    "kind": "onboarding-notice",
                    "record": accepted.record_hash.text,
                    "device": device.config.name,
                    "newAuthority": buyer_km.party_id.text,
                },
            )

        return on_accepted

    seller.config.policies[template.hash] = auto_accept(
        on_accepted=notify_km(seller_km.party_id)
    )
    buyer.config.policies[template.hash] = auto_accept(
        on_accepted=notify_km(buyer_km.party_id)
    )

    # -- the script --------------------------------------------------------------------

    price = f"{ctx.rng.randint(20_000, 80_000)}.00 EUR"
    sale = Contract(
        template_hash=template.hash,
        arguments=(
            ("device", Value.text(device.config.name)),
            ("price", Value.text(price)),
            ("buyer", Value.party(buyer.party_id)),
            ("seller", Value.party(seller.party_id)),
            ("deviceCert", Value.reference(cert_hashes["device"])),
            ("sellerKeyCert", Value.reference(cert_hashes["ak"])),
            ("buyerKeyCert", Value.reference(cert_hashes["bk"])),
        ),
    )

    probe: dict = {}

    def sell_device():
        probe["session"] = seller.make_offer(buyer.party_id, [sale])

    ctx.step("A sells the device to B; key managers are notified", sell_device)

    ctx.step(
        "the device is moved to B's premises",
        lambda: ctx.advance_ms(24 * 3600 * 1000),
    )

    def device_reports_in():
        device.send_custom(
            seller_km.party_id,
            DEVICE_REPORT_KIND,
            {
                "kind": "device-report",
                "device": device.config.name,
                "coordinates": "57.42N 14.98E",
            },
        )

    ctx.step("D reports its location; re-registration cascades", device_reports_in)

    # -- assertions ---------------------------------------------------------------------

    session = seller.engine.sessions.get(probe["session"])
    ctx.assert_that(
        "the device sale is accepted",
        session is not None and session.state.value == "accepted",
    )
    ctx.assert_that(
        "both key managers learned of the transfer",
        device.config.name in state["ak_known_devices"]
        and len(ctx.agents["BK"].messages.records()) > 0,
    )
    live_cert = state["device_live_cert"]
    cert_doc = parse_json_tree(live_cert.payload)
    ctx.assert_that(
        "the device's live certificate is issued by BK",
        live_cert.signer == buyer_km.party_id
        and cert_doc["issuer"] == buyer_km.party_id.text
        and cert_doc["subject"] == device.party_id.text,
    )
    try:
        verify(live_cert, ctx.registry, ctx.clock.now())
        cert_verifies = True
    except Exception:
        cert_verifies = False
    ctx.assert_that("the new certificate's signature verifies", cert_verifies)
    ctx.assert_that(
        "the deregistration request reached AK",
        state["deregistered"] == [device.config.name],
        detail=f"deregistered={state['deregistered']}",
    )
    ctx.assert_that(
        "BK registered the device exactly once",
        state["bk_registered"] == [device.config.name],
    )
