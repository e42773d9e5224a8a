// Byte-identity: the console displays exactly the prose the agent rendered,
// for all twenty committed fixture offers. Fixtures are generated by
// scripts/gen_frontend_fixtures.py from a live agent via its admin API.

import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { describe, expect, it } from "vitest";

import { applyRender, initialState, proseOf } from "../src/model.js";
import type { RenderedOffer } from "../src/types.js";

interface Fixture {
  sessionId: string;
  render: RenderedOffer;
  expectedProse: string[];
}

const fixtures: Fixture[] = JSON.parse(
  readFileSync(
    join(dirname(fileURLToPath(import.meta.url)), "fixtures", "render-fixtures.json"),
    "utf-8",
  ),
);

describe("rendered prose fidelity", () => {
  it("ships twenty fixture offers", () => {
    expect(fixtures.length).toBe(20);
  });

  it.each(fixtures.map((f) => [f.sessionId, f] as const))(
    "prose for session %s is byte-identical to the agent's rendering",
    (_sessionId, fixture) => {
      let state = initialState();
      state = applyRender(state, fixture.render);
      const stored = state.renders.get(fixture.sessionId);
      expect(stored).toBeDefined();
      const displayed = proseOf(stored!);
      expect(displayed.length).toBe(fixture.expectedProse.length);
      for (let i = 0; i < displayed.length; i++) {
        // Strict equality on the exact string: no trimming, no re-templating.
        expect(displayed[i]).toBe(fixture.expectedProse[i]);
      }
    },
  );

  it("proposals carry constraint views for the counter form", () => {
    const proposals = fixtures.filter((f) =>
      f.render.contracts.some((c) => !c.complete),
    );
    expect(proposals.length).toBeGreaterThan(0);
    for (const fixture of proposals) {
      for (const contract of fixture.render.contracts) {
        if (!contract.complete) {
          expect(contract.constraints.length).toBeGreaterThan(0);
          expect(contract.constraints.some((c) => c.open)).toBe(true);
        }
      }
    }
  });
});
