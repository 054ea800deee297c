/** Queue triage list. Rows appear exactly in server order: the service
 * already sorts flagged-first, then entropy-descending. */

import type { CasePayload } from "../types.js";
import { el, fmtEntropy, statusChipClass } from "../format.js";

export function renderQueue(
  root: HTMLElement,
  cases: CasePayload[],
  onOpen: (caseId: string) => void,
): void {
  root.replaceChildren();
  const panel = el("section", "queue");
  panel.appendChild(el("h2", undefined, "Review queue"));

  if (cases.length === 0) {
    panel.appendChild(el("p", "empty-state", "No cases waiting for review."));
    root.appendChild(panel);
    return;
  }

  const list = el("ul", "queue-list");
  for (const c of cases) {
    const row = el("li", "queue-row");
    row.dataset.caseId = c.case_id;
    if (c.flagged) {
      row.classList.add("flagged");
      row.appendChild(el("span", "flag-marker", "⚑"));
    }
    row.appendChild(el("span", "case-id", c.case_id));
    row.appendChild(el("span", statusChipClass(c.status), c.status));
    row.appendChild(
      el("span", "entropy-badge", `H ${fmtEntropy(c.entropy)}`),
    );
    row.appendChild(el("span", "draft-preview", c.draft_text));
    row.addEventListener("click", () => onOpen(c.case_id));
    list.appendChild(row);
  }
  panel.appendChild(list);
  root.appendChild(panel);
}
