/**
 * Shared types for the page extractor.
 *
 * The envelope is the single string-in/string-out contract with the host:
 * extract(mode) returns JSON text of an Envelope.
 */

export type Mode = "text_only" | "html";

export type Region = "main" | "non_essential";

export interface Rect {
  x: number;
  y: number;
  w: number;
  h: number;
}

/** Per-element analysis result; the unit the passes agree on. */
export interface ElementRecord {
  /** Child-element index sequence from the document root. */
  path: number[];
  tag: string;
  /** Direct (own) text, trimmed; descendants carry their own records. */
  text: string;
  rect: Rect;
  visible: boolean;
  covered: boolean;
  region: Region;
}

export interface Interactive {
  hint: string;
  role: string;
  label: string;
}

export interface RemovedCounts {
  hidden: number;
  covered: number;
  non_essential: number;
}

export interface Envelope {
  protocol: number;
  content: string;
  removed_counts: RemovedCounts;
  interactives: Interactive[];
  error?: string;
}

export const PROTOCOL_VERSION = 1;

/** Elements entirely beyond this many viewport heights are dropped. */
export const OFFSCREEN_VIEWPORT_FACTOR = 3;

/** Character budget for html-mode output, enforced by subtree pruning. */
export const HTML_BUDGET = 35_000;

/** Partition bands as fractions of the viewport. */
export const HEADER_BAND = 0.15;
export const FOOTER_BAND = 0.1;
export const SIDEBAR_MAX_WIDTH = 0.25;
