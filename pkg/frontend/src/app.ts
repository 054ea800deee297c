/** Single-page shell: hash routing (#/queue, #/case/<id>), queue polling,
 * retry banner when the service is unreachable, and toast notices for
 * decision outcomes. */

import { HttpApi, NotFoundError, type ReviewApi } from "./api.js";
import { submitDecision } from "./decision.js";
import { newCaseView, type CaseView } from "./types.js";
import { renderCase, renderNotFound } from "./views/caseview.js";
import { renderQueue } from "./views/queue.js";
import { el } from "./format.js";

const POLL_MS = 4000;

export class App {
  private readonly content: HTMLElement;
  private readonly banner: HTMLElement;
  private readonly toasts: HTMLElement;
  private pollTimer: number | undefined;
  private currentView: CaseView | null = null;

  constructor(
    root: HTMLElement,
    private readonly api: ReviewApi = new HttpApi(),
  ) {
    this.banner = el("div", "retry-banner");
    this.banner.hidden = true;
    this.content = el("main", "content");
    this.toasts = el("div", "toasts");
    root.replaceChildren(this.banner, this.content, this.toasts);
    window.addEventListener("hashchange", () => void this.route());
  }

  start(): void {
    if (!window.location.hash) window.location.hash = "#/queue";
    void this.route();
  }

  toast(message: string, kind: "info" | "conflict" | "error" = "info"): void {
    const t = el("div", `toast toast-${kind}`, message);
    this.toasts.appendChild(t);
    setTimeout(() => t.remove(), 6000);
  }

  private setUnreachable(down: boolean): void {
    this.banner.hidden = !down;
    if (down) {
      this.banner.replaceChildren();
      this.banner.appendChild(el("span", undefined, "Service unreachable."));
      const retry = el("button", "btn-retry", "Retry");
      retry.addEventListener("click", () => void this.route());
      this.banner.appendChild(retry);
    }
  }

  async route(): Promise<void> {
    if (this.pollTimer !== undefined) {
      clearTimeout(this.pollTimer);
      this.pollTimer = undefined;
    }
    const hash = window.location.hash;
    const caseMatch = /^#\/case\/(.+)$/.exec(hash);
    if (caseMatch) {
      await this.showCase(decodeURIComponent(caseMatch[1]));
    } else {
      await this.showQueue();
    }
  }

  private async showQueue(): Promise<void> {
    try {
      const cases = await this.api.getQueue();
      this.setUnreachable(false);
      renderQueue(this.content, cases, (id) => {
        window.location.hash = `#/case/${encodeURIComponent(id)}`;
      });
    } catch {
      this.setUnreachable(true);
    }
    this.pollTimer = window.setTimeout(() => {
      if (window.location.hash.startsWith("#/case/")) return;
      void this.showQueue();
    }, POLL_MS);
  }

  private async showCase(caseId: string): Promise<void> {
    try {
      const payload = await this.api.getCase(caseId);
      this.setUnreachable(false);
      this.currentView = newCaseView(payload);
      this.renderCurrentCase();
    } catch (err) {
      if (err instanceof NotFoundError) {
        renderNotFound(this.content, caseId, () => {
          window.location.hash = "#/queue";
        });
        return;
      }
      this.setUnreachable(true);
    }
  }

  private renderCurrentCase(): void {
    const view = this.currentView;
    if (!view) return;
    renderCase(this.content, view, {
      onBack: () => {
        window.location.hash = "#/queue";
      },
      onDecision: (action) => {
        void submitDecision(this.api, view, action, () => this.renderCurrentCase()).then(
          (outcome) => {
            if (outcome.kind === "invalid") {
              const slot = this.content.querySelector(".validation-error");
              if (slot) slot.textContent = outcome.message;
              return;
            }
            if (outcome.kind === "conflict") this.toast(outcome.message, "conflict");
            else if (outcome.kind === "error") this.toast(outcome.message, "error");
            else this.toast(outcome.message, "info");
          },
        );
      },
    });
  }
}

export function mount(selector = "#app"): App {
  const root = document.querySelector<HTMLElement>(selector);
  if (!root) throw new Error(`mount point ${selector} not found`);
  const app = new App(root);
  app.start();
  return app;
}
