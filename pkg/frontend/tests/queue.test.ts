import { beforeEach, describe, expect, it } from "vitest";
import { renderQueue } from "../src/views/queue.js";
import { plainCase, queueFixture } from "./fixtures.js";

let root: HTMLElement;

beforeEach(() => {
  document.body.innerHTML = '<div id="app"></div>';
  root = document.querySelector("#app") as HTMLElement;
});

describe("renderQueue", () => {
  it("renders one row per case in server order", () => {
    renderQueue(root, queueFixture(), () => {});
    const rows = [...root.querySelectorAll<HTMLElement>(".queue-row")];
    expect(rows.map((r) => r.dataset.caseId)).toEqual([
      "case-101",
      "case-102",
      "case-103",
    ]);
  });

  it("shows the empty state when the queue is drained", () => {
    renderQueue(root, [], () => {});
    expect(root.querySelector(".empty-state")?.textContent).toBe(
      "No cases waiting for review.",
    );
    expect(root.querySelectorAll(".queue-row")).toHaveLength(0);
  });

  it("marks flagged cases and only flagged cases", () => {
    renderQueue(root, queueFixture(), () => {});
    const rows = [...root.querySelectorAll<HTMLElement>(".queue-row")];
    expect(rows[0].classList.contains("flagged")).toBe(true);
    expect(rows[0].querySelector(".flag-marker")).not.toBeNull();
    expect(rows[1].classList.contains("flagged")).toBe(false);
    expect(rows[1].querySelector(".flag-marker")).toBeNull();
  });

  it("shows status chip and formatted entropy on each row", () => {
    renderQueue(root, queueFixture(), () => {});
    const first = root.querySelector(".queue-row") as HTMLElement;
    expect(first.querySelector(".chip-pending")?.textContent).toBe("pending");
    expect(first.querySelector(".entropy-badge")?.textContent).toBe("H 1.90");
  });

  it("drops decided cases when re-rendered with the shorter queue", () => {
    renderQueue(root, queueFixture(), () => {});
    expect(root.querySelectorAll(".queue-row")).toHaveLength(3);
    renderQueue(root, [plainCase("case-102", 2.4), plainCase("case-103", 0.7)], () => {});
    const ids = [...root.querySelectorAll<HTMLElement>(".queue-row")].map(
      (r) => r.dataset.caseId,
    );
    expect(ids).toEqual(["case-102", "case-103"]);
  });

  it("reports the clicked case id", () => {
    const opened: string[] = [];
    renderQueue(root, queueFixture(), (id) => opened.push(id));
    const rows = root.querySelectorAll<HTMLElement>(".queue-row");
    rows[1].click();
    expect(opened).toEqual(["case-102"]);
  });
});
