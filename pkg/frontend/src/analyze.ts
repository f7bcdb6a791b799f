/**
 * The three analysis passes: visibility, overlay coverage, and region
 * partition. All passes are read-only over the live DOM; results live in
 * ElementRecords keyed by traversal order.
 */

import {
  ElementRecord,
  FOOTER_BAND,
  HEADER_BAND,
  OFFSCREEN_VIEWPORT_FACTOR,
  Rect,
  Region,
  SIDEBAR_MAX_WIDTH,
} from "./types";

export interface Viewport {
  width: number;
  height: number;
}

export function viewportOf(doc: Document): Viewport {
  const win = doc.defaultView;
  return {
    width: win && win.innerWidth ? win.innerWidth : 1024,
    height: win && win.innerHeight ? win.innerHeight : 768,
  };
}

function rectOf(el: Element): Rect {
  const r = el.getBoundingClientRect();
  return { x: r.x, y: r.y, w: Math.max(0, r.width), h: Math.max(0, r.height) };
}

/** Direct text of an element, excluding descendants, whitespace-collapsed. */
function ownText(el: Element): string {
  let out = "";
  for (const node of Array.from(el.childNodes)) {
    if (node.nodeType === 3 /* TEXT_NODE */) {
      out += node.textContent ?? "";
    }
  }
  return out.replace(/\s+/g, " ").trim();
}

const SKIPPED_TAGS = new Set(["script", "style", "noscript", "template", "head", "meta", "link", "title"]);

/**
 * Visibility pass: computed style (display/visibility/opacity), zero-area
 * boxes, and content entirely beyond OFFSCREEN_VIEWPORT_FACTOR viewport
 * heights. A hidden element hides its whole subtree.
 */
export function isStyleHidden(el: Element, doc: Document): boolean {
  const win = doc.defaultView;
  if (!win) return false;
  const style = win.getComputedStyle(el as HTMLElement);
  return style.display === "none" || style.visibility === "hidden" || style.opacity === "0";
}

function isOffscreen(rect: Rect, viewport: Viewport): boolean {
  return rect.y >= viewport.height * OFFSCREEN_VIEWPORT_FACTOR;
}

/**
 * Overlay pass support: a candidate overlay is a visible positioned layer
 * covering nearly the whole viewport with an elevated stacking position.
 */
function isOverlayCandidate(el: Element, rect: Rect, viewport: Viewport, doc: Document): boolean {
  const win = doc.defaultView;
  if (!win) return false;
  const style = win.getComputedStyle(el as HTMLElement);
  if (style.position !== "fixed" && style.position !== "absolute") return false;
  const z = parseInt(style.zIndex, 10);
  if (!(z > 0)) return false;
  const coverage = (rect.w * rect.h) / (viewport.width * viewport.height);
  return coverage >= 0.95;
}

function contains(outer: Rect, inner: Rect): boolean {
  return (
    inner.x >= outer.x &&
    inner.y >= outer.y &&
    inner.x + inner.w <= outer.x + outer.w &&
    inner.y + inner.h <= outer.y + outer.h
  );
}

function zIndexOf(el: Element, doc: Document): number {
  const win = doc.defaultView;
  if (!win) return 0;
  const z = parseInt(win.getComputedStyle(el as HTMLElement).zIndex, 10);
  return Number.isNaN(z) ? 0 : z;
}

/**
 * Partition pass: classify by viewport bands. The top band is a header
 * candidate, the bottom band a footer candidate, narrow column-like side
 * elements are sidebars; the remaining body band is main content. Children
 * of a non-essential container inherit its region (handled in the walk).
 */
export function classifyRegion(rect: Rect, viewport: Viewport): Region {
  const centerY = rect.y + rect.h / 2;
  const centerX = rect.x + rect.w / 2;
  if (centerY <= viewport.height * HEADER_BAND) return "non_essential";
  if (centerY >= viewport.height * (1 - FOOTER_BAND) && centerY <= viewport.height) return "non_essential";
  const sidebarWidth = viewport.width * SIDEBAR_MAX_WIDTH;
  const columnLike = rect.h >= viewport.height * 0.5; // a band, not a mere widget
  if (
    columnLike &&
    rect.w <= sidebarWidth &&
    (centerX <= sidebarWidth || centerX >= viewport.width - sidebarWidth)
  ) {
    return "non_essential";
  }
  return "main";
}

export interface Analysis {
  records: ElementRecord[];
  elements: Element[];
  viewport: Viewport;
}

/**
 * Walk the live document once and run all three passes.
 *
 * Records align one-to-one with `elements`; the node path is the
 * child-element index sequence, stable across a clone of the same tree.
 */
export function analyze(doc: Document): Analysis {
  const viewport = viewportOf(doc);
  const records: ElementRecord[] = [];
  const elements: Element[] = [];

  function walk(el: Element, path: number[], hiddenAbove: boolean, regionAbove: Region | null): void {
    const tag = el.tagName.toLowerCase();
    if (SKIPPED_TAGS.has(tag)) return;
    const rect = rectOf(el);
    const styleHidden = hiddenAbove || isStyleHidden(el, doc);
    const zeroArea = rect.w <= 0 || rect.h <= 0;
    const structural = tag === "html" || tag === "body";
    const visible = structural ? !styleHidden : !styleHidden && !zeroArea && !isOffscreen(rect, viewport);
    // children of a non-essential container stay non-essential
    const region: Region =
      !structural && regionAbove === "non_essential" ? "non_essential" : classifyRegion(rect, viewport);
    records.push({
      path,
      tag,
      text: ownText(el),
      rect,
      visible,
      covered: false,
      region,
    });
    elements.push(el);
    let index = 0;
    for (const child of Array.from(el.children)) {
      walk(child, path.concat(index), styleHidden, structural ? null : region);
      index += 1;
    }
  }

  if (doc.documentElement) {
    walk(doc.documentElement, [], false, null);
  }

  // overlay pass: mark elements fully beneath a higher-stacking full-coverage layer
  for (let i = 0; i < records.length; i += 1) {
    const record = records[i];
    if (!record.visible) continue;
    if (!isOverlayCandidate(elements[i], record.rect, viewport, doc)) continue;
    const overlay = elements[i];
    const overlayZ = zIndexOf(overlay, doc);
    for (let j = 0; j < records.length; j += 1) {
      if (i === j) continue;
      const other = records[j];
      if (!other.visible || other.covered) continue;
      if (overlay.contains(elements[j]) || elements[j].contains(overlay)) continue;
      if (!contains(record.rect, other.rect)) continue;
      const otherZ = zIndexOf(elements[j], doc);
      if (otherZ < overlayZ) {
        other.covered = true;
      }
    }
  }

  return { records, elements, viewport };
}
