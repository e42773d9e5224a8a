#!/usr/bin/env python3
"""Generate operator-console test fixtures from the real agent.

Twenty fixture offers (a mix of concrete contracts and open proposals) are
driven through a live agent; each fixture captures the exact JSON the admin
API's render endpoint returned. The console tests assert the prose they
display is byte-identical to what the agent rendered.

Usage: python scripts/gen_frontend_fixtures.py
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO / "src"))

from fastapi.testclient import TestClient  # noqa: E402

from contractnet.admin import build_admin_app  # noqa: E402
from contractnet.contracts import (  # noqa: E402
    Any_,
    Contract,
    Exact,
    OneOf,
    ProposalContract,
    Range,
    render_contract,
    render_proposal,
)
from contractnet.scenarios.fixtures import (  # noqa: E402
    component_order,
    dataset_sale,
    steel_rod_purchase,
)
from contractnet.scenarios.runner import ScenarioContext  # noqa: E402
from contractnet.canon import hash_of_bytes  # noqa: E402
from contractnet.values import Value  # noqa: E402

OUT = REPO / "frontend" / "tests" / "fixtures" / "render-fixtures.json"


def main() -> None:
    ctx = ScenarioContext("frontend-fixtures", seed=2027)
    steel = steel_rod_purchase()
    data = dataset_sale()
    order = component_order()
    seller = ctx.new_agent("seller", templates=(steel, data, order))
    buyer = ctx.new_agent("buyer", templates=(steel, data, order))
    ctx.connect_all()

    offers = []
    rng = ctx.rng
    for i in range(20):
        kind = i % 4
        if kind in (0, 1):
            contract = Contract(
                template_hash=steel.hash,
                arguments=(
                    ("quantity", Value.integer(rng.randint(1, 9000))),
                    ("price", Value.text(f"{rng.randint(1, 9999)}.{rng.randint(0,99):02d} EUR")),
                    ("buyer", Value.party(buyer.party_id)),
                    ("seller", Value.party(seller.party_id)),
                ),
            )
            expected = [render_contract(contract, steel)]
        elif kind == 2:
            contract = Contract(
                template_hash=data.hash,
                arguments=(
                    ("datum", Value.reference(hash_of_bytes(bytes([i])))),
                    ("price", Value.text(f"{rng.randint(1, 999)}.00 SEK")),
                    ("buyer", Value.party(buyer.party_id)),
                    ("seller", Value.party(seller.party_id)),
                ),
            )
            expected = [render_contract(contract, data)]
        else:
            contract = ProposalContract(
                template_hash=steel.hash,
                constraints=(
                    ("quantity", Range(Value.integer(10), Value.integer(10 + i * 50))),
                    ("price", Any_() if i % 2 else OneOf(
                        (Value.text("10.00 EUR"), Value.text("12.00 EUR")))),
                    ("buyer", Exact(Value.party(buyer.party_id))),
                    ("seller", Exact(Value.party(seller.party_id))),
                ),
            )
            expected = [render_proposal(contract, steel)]
        session_id = seller.make_offer(buyer.party_id, [contract])
        ctx.sim.run_until_quiet()
        offers.append((session_id, expected))

    client = TestClient(build_admin_app(buyer))
    fixtures = []
    for session_id, expected in offers:
        response = client.get(
            f"/sessions/{session_id}/render",
            headers={"Authorization": "Bearer scenario"},
        )
        response.raise_for_status()
        body = response.json()
        for contract_view, expected_prose in zip(body["contracts"], expected):
            assert contract_view["prose"] == expected_prose, session_id
        fixtures.append({"sessionId": session_id, "render": body,
                         "expectedProse": expected})

    OUT.parent.mkdir(parents=True, exist_ok=True)
    OUT.write_text(json.dumps(fixtures, indent=1, sort_keys=True) + "\n")
    print(f"wrote {len(fixtures)} fixtures to {OUT}")


if __name__ == "__main__":
    main()
