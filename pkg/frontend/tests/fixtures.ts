/** Server-shaped payloads used by the component tests. Field names and
 * value shapes mirror the review service's JSON exactly. */

import type { CasePayload } from "../src/types.js";

export function richCase(): CasePayload {
  return {
    case_id: "case-101",
    sample_id: 2001,
    draft_text: "Alpha present. Possible beta in the apical region.",
    clauses: [
      {
        rule_id: 1,
        template_id: 10,
        activation: 0.648,
        qualifier: "",
        claims: [
          [0, 1],
          [1, -1],
        ],
        bindings: {
          site: { value: "apical", provenance: "rule", confidence: 0.91 },
        },
        text: "Alpha present.",
      },
      {
        rule_id: 2,
        template_id: 11,
        activation: 0.52,
        qualifier: "possible",
        claims: [[2, 1]],
        bindings: {
          marker: { value: "beta", provenance: "retrieval", confidence: 0.77 },
          size: { value: "4 mm", provenance: "regressor", confidence: 0.5 },
        },
        text: "Possible beta in the apical region.",
      },
    ],
    reasoning: [
      {
        rule_id: 1,
        name: "alpha-rule",
        activation: 0.648,
        nodes: [
          { kind: "AND", value: 0.648 },
          { kind: "leaf", concept: 0, negated: false, value: 0.9 },
          { kind: "leaf", concept: 1, negated: true, value: 0.72 },
        ],
      },
      {
        rule_id: 2,
        name: "beta-rule",
        activation: 0.52,
        nodes: [
          { kind: "BLEND", alpha: 0.35, value: 0.52 },
          { kind: "OR", value: 0.88 },
          { kind: "leaf", concept: 2, negated: false, value: 0.8 },
          { kind: "leaf", concept: 3, negated: false, value: 0.4 },
          { kind: "leaf", concept: 2, negated: false, value: 0.8 },
        ],
      },
    ],
    entropy: 1.9,
    flags: [
      { kind: "contradiction", clause_index: 0, exemplar_index: 3, concept: 1, score: 1.0 },
      { kind: "contradiction", clause_index: 1, exemplar_index: 7, concept: 2, score: 1.0 },
    ],
    embedding: [0.12, -0.4, 0.33],
    status: "pending",
    decision: null,
    flagged: true,
  };
}

export function plainCase(id: string, entropy: number): CasePayload {
  return {
    case_id: id,
    sample_id: 1,
    draft_text: `Draft for ${id}.`,
    clauses: [
      {
        rule_id: 3,
        template_id: 12,
        activation: 0.7,
        qualifier: "",
        claims: [[4, 1]],
        bindings: {},
        text: `Clause for ${id}.`,
      },
    ],
    reasoning: [
      {
        rule_id: 3,
        name: "",
        activation: 0.7,
        nodes: [{ kind: "leaf", concept: 4, negated: false, value: 0.7 }],
      },
    ],
    entropy,
    flags: [],
    embedding: [0.5, 0.5],
    status: "pending",
    decision: null,
    flagged: false,
  };
}

/** Server order: flagged first, then entropy descending. */
export function queueFixture(): CasePayload[] {
  return [richCase(), plainCase("case-102", 2.4), plainCase("case-103", 0.7)];
}
