/** Case detail: flags, draft, concept bars, rule chains with per-node
 * values, clauses with per-slot provenance coloring, retrieval evidence, and
 * the decision controls. Every clause, binding, and flag in the payload gets
 * a DOM node; nothing is truncated. */

import type {
  CaseView,
  ClausePayload,
  DecisionAction,
  ReasoningChain,
} from "../types.js";
import { conceptActivations } from "../types.js";
import {
  el,
  fmtActivation,
  fmtConfidence,
  fmtEntropy,
  statusChipClass,
} from "../format.js";

export interface CaseHandlers {
  onDecision: (action: DecisionAction) => void;
  onBack: () => void;
}

export function renderNotFound(root: HTMLElement, caseId: string, onBack: () => void): void {
  root.replaceChildren();
  const panel = el("section", "not-found");
  panel.appendChild(el("h2", undefined, "Case not found"));
  panel.appendChild(el("p", undefined, `No case with id ${caseId}.`));
  const back = el("button", "back-link", "Back to queue");
  back.addEventListener("click", onBack);
  panel.appendChild(back);
  root.appendChild(panel);
}

function renderFlags(view: CaseView): HTMLElement {
  const wrap = el("div", "flags");
  for (const f of view.payload.flags) {
    const banner = el("div", "flag-banner");
    banner.appendChild(el("strong", undefined, f.kind));
    banner.appendChild(
      el(
        "span",
        undefined,
        ` clause ${f.clause_index}, concept ${f.concept}, ` +
          `exemplar ${f.exemplar_index} (score ${fmtActivation(f.score)})`,
      ),
    );
    wrap.appendChild(banner);
  }
  return wrap;
}

function renderConceptChart(view: CaseView): HTMLElement {
  const wrap = el("div", "concept-chart");
  wrap.appendChild(el("h3", undefined, "Concept activations"));
  const acts = conceptActivations(view.payload);
  if (acts.size === 0) {
    wrap.appendChild(el("p", "empty-state", "No concepts in the reasoning chain."));
    return wrap;
  }
  for (const [concept, prob] of acts) {
    const row = el("div", "concept-row");
    row.appendChild(el("span", "concept-label", `c${concept}`));
    const track = el("div", "concept-track");
    const bar = el("div", "concept-bar");
    bar.style.width = `${(prob * 100).toFixed(1)}%`;
    track.appendChild(bar);
    row.appendChild(track);
    row.appendChild(el("span", "concept-value", fmtActivation(prob)));
    wrap.appendChild(row);
  }
  return wrap;
}

function renderChain(chain: ReasoningChain): HTMLElement {
  const box = el("div", "rule-chain");
  const head = el("div", "rule-head");
  head.appendChild(el("span", "rule-name", chain.name || `rule ${chain.rule_id}`));
  head.appendChild(
    el("span", "activation-badge", fmtActivation(chain.activation)),
  );
  box.appendChild(head);
  const nodes = el("ul", "tree-nodes");
  for (const n of chain.nodes) {
    const li = el("li", `tree-node node-${n.kind.toLowerCase()}`);
    let label: string = n.kind;
    if (n.kind === "leaf" && n.concept !== undefined) {
      label = `${n.negated ? "NOT " : ""}c${n.concept}`;
    }
    if (n.kind === "BLEND" && n.alpha !== undefined) {
      label = `BLEND α=${fmtActivation(n.alpha)}`;
    }
    li.appendChild(el("span", "node-label", label));
    li.appendChild(el("span", "node-value", fmtActivation(n.value)));
    nodes.appendChild(li);
  }
  box.appendChild(nodes);
  return box;
}

function renderClause(clause: ClausePayload, index: number): HTMLElement {
  const box = el("div", "clause");
  box.dataset.clauseIndex = String(index);
  const head = el("div", "clause-head");
  head.appendChild(el("span", "clause-text", clause.text));
  head.appendChild(
    el("span", "activation-badge", fmtActivation(clause.activation)),
  );
  if (clause.qualifier) {
    head.appendChild(el("span", "qualifier-chip", clause.qualifier));
  }
  box.appendChild(head);

  const claims = el("div", "claims");
  for (const [concept, pol] of clause.claims) {
    claims.appendChild(
      el("span", `claim claim-${pol > 0 ? "pos" : "neg"}`, `c${concept}${pol > 0 ? "+" : "−"}`),
    );
  }
  box.appendChild(claims);

  const slots = el("div", "slots");
  for (const [name, b] of Object.entries(clause.bindings)) {
    const slot = el("span", `slot prov-${b.provenance}`);
    slot.dataset.provenance = b.provenance;
    slot.dataset.slot = name;
    slot.title = `confidence ${fmtConfidence(b.confidence)}`;
    slot.textContent = `${name}: ${b.value}`;
    slot.appendChild(el("span", "prov-tag", b.provenance));
    slots.appendChild(slot);
  }
  box.appendChild(slots);
  return box;
}

function renderEvidence(view: CaseView): HTMLElement {
  const wrap = el("div", "evidence-panel");
  wrap.appendChild(el("h3", undefined, "Retrieval evidence"));
  const items = el("ul", "evidence-list");
  view.payload.clauses.forEach((clause, i) => {
    for (const [name, b] of Object.entries(clause.bindings)) {
      if (b.provenance !== "retrieval") continue;
      items.appendChild(
        el(
          "li",
          "evidence-item",
          `clause ${i} · ${name} = "${b.value}" (${fmtConfidence(b.confidence)})`,
        ),
      );
    }
  });
  if (items.childElementCount === 0) {
    wrap.appendChild(el("p", "empty-state", "No retrieval-derived content."));
  } else {
    wrap.appendChild(items);
  }
  return wrap;
}

function renderDecisionControls(view: CaseView, handlers: CaseHandlers): HTMLElement {
  const wrap = el("div", "decision-controls");
  wrap.appendChild(el("h3", undefined, "Decision"));
  if (view.payload.status !== "pending") {
    const d = view.payload.decision;
    wrap.appendChild(
      el(
        "p",
        "decided-note",
        d
          ? `Already ${view.payload.status} by ${d.editor}.`
          : `Already ${view.payload.status}.`,
      ),
    );
    return wrap;
  }

  const editArea = el("div", "edit-area");
  view.editBuffer.forEach((text, i) => {
    const ta = el("textarea", "clause-edit");
    ta.value = text;
    ta.rows = 2;
    ta.dataset.clauseIndex = String(i);
    ta.addEventListener("input", () => {
      view.editBuffer[i] = ta.value;
    });
    editArea.appendChild(ta);
  });
  wrap.appendChild(editArea);
  wrap.appendChild(el("p", "validation-error"));

  const buttons = el("div", "decision-buttons");
  for (const action of ["approve", "edit", "reject"] as DecisionAction[]) {
    const btn = el("button", `btn btn-${action}`, action);
    btn.addEventListener("click", () => handlers.onDecision(action));
    buttons.appendChild(btn);
  }
  wrap.appendChild(buttons);
  return wrap;
}

export function renderCase(root: HTMLElement, view: CaseView, handlers: CaseHandlers): void {
  root.replaceChildren();
  const panel = el("section", "case-detail");

  const head = el("div", "case-head");
  const back = el("button", "back-link", "← queue");
  back.addEventListener("click", handlers.onBack);
  head.appendChild(back);
  head.appendChild(el("h2", undefined, view.payload.case_id));
  head.appendChild(el("span", statusChipClass(view.payload.status), view.payload.status));
  head.appendChild(
    el("span", "entropy-badge", `H ${fmtEntropy(view.payload.entropy)}`),
  );
  panel.appendChild(head);

  panel.appendChild(renderFlags(view));
  const draft = el("blockquote", "draft-text", view.payload.draft_text);
  panel.appendChild(draft);
  panel.appendChild(renderConceptChart(view));

  const chains = el("div", "rule-chains");
  chains.appendChild(el("h3", undefined, "Rule reasoning"));
  for (const chain of view.payload.reasoning) {
    chains.appendChild(renderChain(chain));
  }
  panel.appendChild(chains);

  const clauses = el("div", "clauses");
  clauses.appendChild(el("h3", undefined, "Clauses"));
  view.payload.clauses.forEach((c, i) => clauses.appendChild(renderClause(c, i)));
  panel.appendChild(clauses);

  panel.appendChild(renderEvidence(view));
  panel.appendChild(renderDecisionControls(view, handlers));
  root.appendChild(panel);
}
