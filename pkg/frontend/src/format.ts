/** Tiny formatting helpers shared by the views. */

import type { CaseStatus } from "./types.js";

/** Activation badge text: 0.648 -> "0.65". */
export function fmtActivation(x: number): string {
  return x.toFixed(2);
}

export function fmtEntropy(x: number): string {
  return x.toFixed(2);
}

export function fmtConfidence(x: number): string {
  return `${Math.round(x * 100)}%`;
}

export function statusChipClass(status: CaseStatus): string {
  return `chip chip-${status}`;
}

export function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}
