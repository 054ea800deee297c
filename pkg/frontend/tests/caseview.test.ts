import { beforeEach, describe, expect, it } from "vitest";
import { renderCase, renderNotFound } from "../src/views/caseview.js";
import { newCaseView } from "../src/types.js";
import type { CasePayload } from "../src/types.js";
import { richCase } from "./fixtures.js";

let root: HTMLElement;
const noop = { onDecision: () => {}, onBack: () => {} };

beforeEach(() => {
  document.body.innerHTML = '<div id="app"></div>';
  root = document.querySelector("#app") as HTMLElement;
});

describe("renderCase", () => {
  it("renders every clause with its text", () => {
    const payload = richCase();
    renderCase(root, newCaseView(payload), noop);
    const clauses = [...root.querySelectorAll(".clause")];
    expect(clauses).toHaveLength(payload.clauses.length);
    const texts = clauses.map((c) => c.querySelector(".clause-text")?.textContent);
    expect(texts).toEqual(payload.clauses.map((c) => c.text));
  });

  it("tags every slot with the payload's provenance", () => {
    const payload = richCase();
    renderCase(root, newCaseView(payload), noop);
    const byName = new Map(
      [...root.querySelectorAll<HTMLElement>(".slot")].map((s) => [
        s.dataset.slot,
        s.dataset.provenance,
      ]),
    );
    expect(byName).toEqual(
      new Map([
        ["site", "rule"],
        ["marker", "retrieval"],
        ["size", "regressor"],
      ]),
    );
    const retrieval = root.querySelector('[data-slot="marker"]') as HTMLElement;
    expect(retrieval.classList.contains("prov-retrieval")).toBe(true);
    expect(retrieval.querySelector(".prov-tag")?.textContent).toBe("retrieval");
  });

  it("renders one banner per contradiction flag", () => {
    renderCase(root, newCaseView(richCase()), noop);
    const banners = [...root.querySelectorAll(".flag-banner")];
    expect(banners).toHaveLength(2);
    expect(banners[0].textContent).toContain("contradiction");
    expect(banners[0].textContent).toContain("clause 0");
    expect(banners[1].textContent).toContain("exemplar 7");
  });

  it("rounds activations to two decimals", () => {
    renderCase(root, newCaseView(richCase()), noop);
    const badge = root.querySelector(".rule-chain .activation-badge");
    expect(badge?.textContent).toBe("0.65");
  });

  it("inverts negated leaves in the concept chart", () => {
    renderCase(root, newCaseView(richCase()), noop);
    const rows = [...root.querySelectorAll(".concept-row")];
    const byLabel = new Map(
      rows.map((r) => [
        r.querySelector(".concept-label")?.textContent,
        r.querySelector(".concept-value")?.textContent,
      ]),
    );
    // c1 appears only as a negated leaf with value 0.72, so p(c1) = 0.28.
    expect(byLabel.get("c1")).toBe("0.28");
    expect(byLabel.get("c0")).toBe("0.90");
    expect([...byLabel.keys()]).toEqual(["c0", "c1", "c2", "c3"]);
  });

  it("labels blend nodes with their mixing weight", () => {
    renderCase(root, newCaseView(richCase()), noop);
    const labels = [...root.querySelectorAll(".node-label")].map((n) => n.textContent);
    expect(labels).toContain("BLEND α=0.35");
    expect(labels).toContain("NOT c1");
  });

  it("lists retrieval bindings in the evidence panel", () => {
    renderCase(root, newCaseView(richCase()), noop);
    const items = [...root.querySelectorAll(".evidence-item")];
    expect(items).toHaveLength(1);
    expect(items[0].textContent).toContain('marker = "beta"');
  });

  it("mutates the edit buffer, not the payload, on textarea input", () => {
    const view = newCaseView(richCase());
    renderCase(root, view, noop);
    const ta = root.querySelector("textarea.clause-edit") as HTMLTextAreaElement;
    ta.value = "Rewritten clause.";
    ta.dispatchEvent(new Event("input"));
    expect(view.editBuffer[0]).toBe("Rewritten clause.");
    expect(view.payload.clauses[0].text).toBe("Alpha present.");
  });

  it("replaces the controls with a note once the case is decided", () => {
    const payload: CasePayload = {
      ...richCase(),
      status: "approved",
      decision: {
        editor: "reviewer",
        timestamp_ms: 1,
        action: "approve",
        edited_clauses: [],
      },
    };
    renderCase(root, newCaseView(payload), noop);
    expect(root.querySelector(".decided-note")?.textContent).toContain("approved");
    expect(root.querySelector(".btn-approve")).toBeNull();
    expect(root.querySelector("textarea.clause-edit")).toBeNull();
  });
});

describe("renderNotFound", () => {
  it("names the missing case and offers a way back", () => {
    let back = 0;
    renderNotFound(root, "case-999", () => (back += 1));
    expect(root.querySelector(".not-found")?.textContent).toContain("case-999");
    (root.querySelector(".back-link") as HTMLElement).click();
    expect(back).toBe(1);
  });
});
