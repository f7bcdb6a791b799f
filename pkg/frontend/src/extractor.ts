/**
 * Pipeline entry: analyze the live document read-only, then serialize a
 * compact observation. Returns a JSON envelope string; a detached or
 * missing document yields a structured error envelope instead of a throw.
 */

import { Analysis, analyze } from "./analyze";
import { serializeHtml, serializeTextOnly } from "./serialize";
import { ElementRecord, Envelope, Mode, PROTOCOL_VERSION } from "./types";

export function extract(mode: Mode, doc?: Document): string {
  const target = doc ?? (typeof document !== "undefined" ? document : undefined);
  if (!target || !target.documentElement) {
    const error: Envelope = {
      protocol: PROTOCOL_VERSION,
      content: "",
      removed_counts: { hidden: 0, covered: 0, non_essential: 0 },
      interactives: [],
      error: "detached or missing document",
    };
    return JSON.stringify(error);
  }
  const analysis = analyze(target);
  const serialized = mode === "html" ? serializeHtml(analysis, target) : serializeTextOnly(analysis, target);
  const envelope: Envelope = {
    protocol: PROTOCOL_VERSION,
    content: serialized.content,
    removed_counts: serialized.removed,
    interactives: serialized.interactives,
  };
  return JSON.stringify(envelope);
}

/** Debug surface: the raw per-element records behind an extraction. */
export function records(doc?: Document): ElementRecord[] {
  const target = doc ?? (typeof document !== "undefined" ? document : undefined);
  if (!target || !target.documentElement) return [];
  return analyze(target).records;
}

export type { Analysis };
