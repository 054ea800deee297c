/** Decision submission: client-side validation, optimistic status flip with
 * rollback on any 4xx, and the 409 conflict path that refreshes the case
 * from the server. */

import type { ReviewApi } from "./api.js";
import type { CaseStatus, CaseView, DecisionAction, DecisionBody } from "./types.js";

const OPTIMISTIC_STATUS: Record<DecisionAction, CaseStatus> = {
  approve: "approved",
  edit: "edited",
  reject: "rejected",
};

export interface DecisionOutcome {
  kind: "ok" | "invalid" | "conflict" | "error";
  message: string;
}

/** Non-null result is the validation error; edit decisions require every
 * clause text to be non-blank. */
export function validateEdit(buffer: string[]): string | null {
  if (buffer.length === 0) return "There are no clauses to edit.";
  if (buffer.some((t) => t.trim() === "")) {
    return "Clause text must not be empty.";
  }
  return null;
}

export async function submitDecision(
  api: ReviewApi,
  view: CaseView,
  action: DecisionAction,
  onChange?: (view: CaseView) => void,
): Promise<DecisionOutcome> {
  const body: DecisionBody = { action, editor: view.editor };
  if (action === "edit") {
    const invalid = validateEdit(view.editBuffer);
    if (invalid) return { kind: "invalid", message: invalid }; // no request
    body.edited_clauses = [...view.editBuffer];
  }

  const previous = view.payload;
  view.payload = { ...previous, status: OPTIMISTIC_STATUS[action] };
  onChange?.(view);

  let resp;
  try {
    resp = await api.postDecision(previous.case_id, body);
  } catch {
    view.payload = previous;
    onChange?.(view);
    return { kind: "error", message: "Service unreachable; decision not saved." };
  }

  if (resp.status === 200 && resp.body.case) {
    view.payload = resp.body.case;
    onChange?.(view);
    return { kind: "ok", message: `Decision recorded: ${action}.` };
  }

  view.payload = previous; // rollback the optimistic flip
  if (resp.status === 409) {
    try {
      view.payload = await api.getCase(previous.case_id);
    } catch {
      // keep the rolled-back payload when the refresh itself fails
    }
    onChange?.(view);
    return {
      kind: "conflict",
      message: resp.body.error ?? "Case was already decided elsewhere.",
    };
  }
  onChange?.(view);
  const detail =
    resp.body.error ??
    (resp.body.errors ? Object.values(resp.body.errors).join("; ") : `HTTP ${resp.status}`);
  return { kind: "error", message: `Decision rejected: ${detail}` };
}
