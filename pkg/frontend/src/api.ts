/** Thin fetch client for the review service. The UI never talks to anything
 * beyond these documented endpoints. */

import type { CasePayload, DecisionBody } from "./types.js";

export class NotFoundError extends Error {}

export interface DecisionResponse {
  status: number;
  body: { case?: CasePayload; error?: string; errors?: Record<string, string> };
}

export interface ReviewApi {
  getQueue(): Promise<CasePayload[]>;
  getCase(id: string): Promise<CasePayload>;
  postDecision(id: string, body: DecisionBody): Promise<DecisionResponse>;
  getMetrics(): Promise<Record<string, unknown>>;
}

export class HttpApi implements ReviewApi {
  constructor(
    private readonly base = "",
    private readonly token?: string,
  ) {}

  private headers(json = false): Record<string, string> {
    const h: Record<string, string> = {};
    if (json) h["Content-Type"] = "application/json";
    if (this.token) h["X-Auth-Token"] = this.token;
    return h;
  }

  async getQueue(): Promise<CasePayload[]> {
    const resp = await fetch(`${this.base}/api/queue`, { headers: this.headers() });
    if (!resp.ok) throw new Error(`queue request failed (${resp.status})`);
    const data = (await resp.json()) as { cases: CasePayload[] };
    return data.cases;
  }

  async getCase(id: string): Promise<CasePayload> {
    const resp = await fetch(`${this.base}/api/case/${encodeURIComponent(id)}`, {
      headers: this.headers(),
    });
    if (resp.status === 404) throw new NotFoundError(`unknown case ${id}`);
    if (!resp.ok) throw new Error(`case request failed (${resp.status})`);
    const data = (await resp.json()) as { case: CasePayload };
    return data.case;
  }

  async postDecision(id: string, body: DecisionBody): Promise<DecisionResponse> {
    const resp = await fetch(
      `${this.base}/api/case/${encodeURIComponent(id)}/decision`,
      {
        method: "POST",
        headers: this.headers(true),
        body: JSON.stringify(body),
      },
    );
    return { status: resp.status, body: await resp.json() };
  }

  async getMetrics(): Promise<Record<string, unknown>> {
    const resp = await fetch(`${this.base}/api/metrics`, { headers: this.headers() });
    if (!resp.ok) throw new Error(`metrics request failed (${resp.status})`);
    const data = (await resp.json()) as { metrics: Record<string, unknown> };
    return data.metrics;
  }
}
