/**
 * Interactive-element annotation: stable selector hints so the host's
 * script-execution tool can target elements precisely.
 */

import { Analysis } from "./analyze";
import { Interactive } from "./types";

const INTERACTIVE_TAGS = new Set(["a", "button", "input", "select", "textarea"]);

function roleOf(el: Element): string {
  const tag = el.tagName.toLowerCase();
  if (tag === "a") return "link";
  if (tag === "input") {
    const type = (el.getAttribute("type") || "text").toLowerCase();
    return type === "submit" || type === "button" ? "button" : "input";
  }
  return tag === "button" ? "button" : tag;
}

function labelOf(el: Element): string {
  const aria = el.getAttribute("aria-label");
  if (aria) return aria.trim().slice(0, 80);
  const text = (el.textContent || "").replace(/\s+/g, " ").trim();
  if (text) return text.slice(0, 80);
  const placeholder = el.getAttribute("placeholder");
  if (placeholder) return placeholder.trim().slice(0, 80);
  const value = el.getAttribute("value");
  if (value) return value.trim().slice(0, 80);
  return "";
}

function nthOfType(el: Element): number {
  let n = 1;
  let sibling = el.previousElementSibling;
  while (sibling) {
    if (sibling.tagName === el.tagName) n += 1;
    sibling = sibling.previousElementSibling;
  }
  return n;
}

/**
 * Stable selector hint: the element's id when present, otherwise the
 * shortest unique structural suffix of tag:nth-of-type segments.
 */
export function selectorHint(el: Element, doc: Document): string {
  const id = el.getAttribute("id");
  if (id) return `#${id}`;
  const segments: string[] = [];
  let cursor: Element | null = el;
  while (cursor && cursor.tagName.toLowerCase() !== "html") {
    segments.unshift(`${cursor.tagName.toLowerCase()}:nth-of-type(${nthOfType(cursor)})`);
    const candidate = segments.join(" > ");
    try {
      if (doc.querySelectorAll(candidate).length === 1) return candidate;
    } catch {
      // selector engine hiccup: keep extending the path
    }
    cursor = cursor.parentElement;
  }
  return segments.join(" > ");
}

/** Visible, uncovered link/button/input annotations in the main region. */
export function annotateInteractives(analysis: Analysis, doc: Document): Interactive[] {
  const out: Interactive[] = [];
  for (let i = 0; i < analysis.records.length; i += 1) {
    const record = analysis.records[i];
    if (!record.visible || record.covered || record.region !== "main") continue;
    if (!INTERACTIVE_TAGS.has(record.tag)) continue;
    out.push({
      hint: selectorHint(analysis.elements[i], doc),
      role: roleOf(analysis.elements[i]),
      label: labelOf(analysis.elements[i]),
    });
  }
  return out;
}
