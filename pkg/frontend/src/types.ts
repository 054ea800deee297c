/** Payload mirrors of the review service's JSON, plus the client-side view
 * state. Field names match the server exactly; nothing is renamed. */

export type CaseStatus = "pending" | "approved" | "edited" | "rejected";
export type DecisionAction = "approve" | "edit" | "reject";
export type Provenance = "rule" | "retrieval" | "regressor";

export interface BindingPayload {
  value: string;
  provenance: Provenance;
  confidence: number;
}

export interface ClausePayload {
  rule_id: number;
  template_id: number;
  activation: number;
  qualifier: string;
  claims: [number, number][];          // [concept index, +1 | -1]
  bindings: Record<string, BindingPayload>;
  text: string;
}

export interface ReasoningNode {
  kind: "leaf" | "AND" | "OR" | "NOT" | "BLEND";
  value: number;
  concept?: number;                    // leaf only
  negated?: boolean;                   // leaf only
  alpha?: number;                      // BLEND only
}

export interface ReasoningChain {
  rule_id: number;
  name: string;
  activation: number;
  nodes: ReasoningNode[];              // preorder
}

export interface FlagPayload {
  kind: string;
  clause_index: number;
  exemplar_index: number;
  concept: number;
  score: number;
}

export interface DecisionPayload {
  editor: string;
  timestamp_ms: number;
  action: DecisionAction;
  edited_clauses: string[];
}

export interface CasePayload {
  case_id: string;
  sample_id: number;
  draft_text: string;
  clauses: ClausePayload[];
  reasoning: ReasoningChain[];
  entropy: number;
  flags: FlagPayload[];
  embedding: number[];
  status: CaseStatus;
  decision: DecisionPayload | null;
  flagged: boolean;
}

export interface DecisionBody {
  action: DecisionAction;
  editor: string;
  edited_clauses?: string[];
}

/** One case plus the local edit buffer. The buffer is the only mutable edit
 * state; the server payload is replaced wholesale, never edited in place. */
export interface CaseView {
  payload: CasePayload;
  editBuffer: string[];
  editor: string;
}

export function newCaseView(payload: CasePayload, editor = "reviewer"): CaseView {
  return {
    payload,
    editBuffer: payload.clauses.map((c) => c.text),
    editor,
  };
}

/** Concept probabilities recoverable from the reasoning chains: a leaf shows
 * c (or 1-c when negated), so the chart inverts negated leaves. First
 * occurrence wins; every chain evaluates the same concept vector. */
export function conceptActivations(payload: CasePayload): Map<number, number> {
  const out = new Map<number, number>();
  for (const chain of payload.reasoning) {
    for (const node of chain.nodes) {
      if (node.kind !== "leaf" || node.concept === undefined) continue;
      if (out.has(node.concept)) continue;
      out.set(node.concept, node.negated ? 1 - node.value : node.value);
    }
  }
  return new Map([...out.entries()].sort((a, b) => a[0] - b[0]));
}
