/**
 * Test harness: loads fixture pages into a happy-dom Window and shims
 * per-element geometry from inline styles, since happy-dom has no layout
 * engine. Elements without explicit absolute/fixed coordinates get a
 * synthetic flowing rect inside the body band.
 */

import { readFileSync } from "node:fs";
import { join, dirname } from "node:path";
import { fileURLToPath } from "node:url";
import { Window } from "happy-dom";

const here = dirname(fileURLToPath(import.meta.url));
export const PAGES_DIR = join(here, "..", "..", "tests", "fixtures", "pages");

export const VIEWPORT = { width: 1024, height: 768 };

function parsePx(value: string | null): number | null {
  if (!value) return null;
  const m = /^(-?\d+(?:\.\d+)?)px$/.exec(value.trim());
  return m ? parseFloat(m[1]) : null;
}

/** Rects from inline styles; synthetic mid-page rows otherwise. */
export function shimRects(doc: Document): void {
  let flowCursor = 300; // inside the body band of the 1024x768 viewport
  const all = doc.querySelectorAll("*");
  all.forEach((el) => {
    const style = (el as HTMLElement).style;
    const left = parsePx(style?.left ?? null);
    const top = parsePx(style?.top ?? null);
    const width = parsePx(style?.width ?? null);
    const height = parsePx(style?.height ?? null);
    let rect: { x: number; y: number; width: number; height: number };
    const tag = el.tagName.toLowerCase();
    if (tag === "html" || tag === "body") {
      rect = { x: 0, y: 0, width: VIEWPORT.width, height: VIEWPORT.height };
    } else if (left !== null || top !== null || width !== null || height !== null) {
      rect = { x: left ?? 0, y: top ?? 0, width: width ?? VIEWPORT.width, height: height ?? 20 };
    } else {
      rect = { x: 0, y: flowCursor, width: VIEWPORT.width, height: 20 };
      flowCursor += 20;
    }
    (el as HTMLElement).getBoundingClientRect = () =>
      ({
        x: rect.x,
        y: rect.y,
        width: rect.width,
        height: rect.height,
        top: rect.y,
        left: rect.x,
        right: rect.x + rect.width,
        bottom: rect.y + rect.height,
        toJSON: () => rect,
      }) as DOMRect;
  });
}

export interface LoadedPage {
  window: Window;
  document: Document;
}

export function loadPage(name: string): LoadedPage {
  const html = readFileSync(join(PAGES_DIR, name), "utf-8");
  const window = new Window({
    innerWidth: VIEWPORT.width,
    innerHeight: VIEWPORT.height,
    url: `http://fixtures/${name}`,
  });
  window.document.write(html);
  const doc = window.document as unknown as Document;
  shimRects(doc);
  return { window, document: doc };
}

export const ALL_PAGES = [
  "article_hidden.html",
  "overlay_modal.html",
  "partitions.html",
  "interactives.html",
  "content_heavy.html",
  "empty.html",
];
