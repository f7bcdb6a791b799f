/**
 * Observation serialization.
 *
 * text_only: region-labeled text blocks from visible, uncovered main-region
 * elements, with inline interactive annotations; non-essential regions are
 * dropped. html: a pruned clone of the markup under a hard character
 * budget, removing non-essential subtrees first, then the deepest largest
 * ones. The live DOM is never mutated; pruning happens on a clone.
 */

import { Analysis } from "./analyze";
import { annotateInteractives, selectorHint } from "./interactives";
import { HTML_BUDGET, Interactive, RemovedCounts } from "./types";

const INTERACTIVE_TAGS = new Set(["a", "button", "input", "select", "textarea"]);

export interface Serialized {
  content: string;
  removed: RemovedCounts;
  interactives: Interactive[];
}

function countRemoved(analysis: Analysis): RemovedCounts {
  let hidden = 0;
  let covered = 0;
  let nonEssential = 0;
  for (const record of analysis.records) {
    if (!record.visible) hidden += 1;
    else if (record.covered) covered += 1;
    else if (record.region !== "main") nonEssential += 1;
  }
  return { hidden, covered, non_essential: nonEssential };
}

export function serializeTextOnly(analysis: Analysis, doc: Document): Serialized {
  const lines: string[] = ["[region: main]"];
  for (let i = 0; i < analysis.records.length; i += 1) {
    const record = analysis.records[i];
    if (!record.visible || record.covered || record.region !== "main") continue;
    if (record.text) {
      lines.push(record.text);
    }
    if (INTERACTIVE_TAGS.has(record.tag)) {
      const el = analysis.elements[i];
      const hint = selectorHint(el, doc);
      const label = (el.textContent || el.getAttribute("placeholder") || "").replace(/\s+/g, " ").trim();
      lines.push(`[${record.tag === "a" ? "link" : record.tag} ${hint} "${label.slice(0, 80)}"]`);
    }
  }
  return {
    content: lines.join("\n"),
    removed: countRemoved(analysis),
    interactives: annotateInteractives(analysis, doc),
  };
}

interface CloneEntry {
  node: Element;
  recordIndex: number;
  depth: number;
}

/** Walk a clone in lockstep with the analysis paths. */
function indexClone(cloneRoot: Element): Map<string, Element> {
  const byPath = new Map<string, Element>();

  function walk(el: Element, path: number[]): void {
    byPath.set(path.join("."), el);
    let index = 0;
    for (const child of Array.from(el.children)) {
      walk(child, path.concat(index));
      index += 1;
    }
  }

  walk(cloneRoot, []);
  return byPath;
}

export function serializeHtml(analysis: Analysis, doc: Document): Serialized {
  const root = doc.documentElement;
  if (!root) {
    return { content: "", removed: countRemoved(analysis), interactives: [] };
  }
  const clone = root.cloneNode(true) as Element;
  const byPath = indexClone(clone);

  const droppable: CloneEntry[] = [];
  for (let i = 0; i < analysis.records.length; i += 1) {
    const record = analysis.records[i];
    const node = byPath.get(record.path.join("."));
    if (!node || !node.parentNode) continue;
    if (!record.visible || record.covered) {
      node.parentNode.removeChild(node);
    } else if (record.path.length > 1) {
      droppable.push({ node, recordIndex: i, depth: record.path.length });
    }
  }

  // prune to budget: non-essential subtrees first, then deepest largest
  const overBudget = () => clone.outerHTML.length > HTML_BUDGET;
  if (overBudget()) {
    const nonEssential = droppable
      .filter((e) => analysis.records[e.recordIndex].region !== "main")
      .sort((a, b) => b.depth - a.depth);
    for (const entry of nonEssential) {
      if (!overBudget()) break;
      entry.node.parentNode?.removeChild(entry.node);
    }
  }
  while (overBudget()) {
    const alive = droppable.filter((e) => e.node.parentNode && e.node !== clone);
    if (!alive.length) break;
    alive.sort(
      (a, b) => b.depth - a.depth || b.node.outerHTML.length - a.node.outerHTML.length
    );
    alive[0].node.parentNode?.removeChild(alive[0].node);
  }

  let content = clone.outerHTML;
  if (content.length > HTML_BUDGET) {
    content = content.slice(0, HTML_BUDGET);
  }
  return {
    content,
    removed: countRemoved(analysis),
    interactives: annotateInteractives(analysis, doc),
  };
}
