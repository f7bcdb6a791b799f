"use strict";
(() => {
  // src/types.ts
  var PROTOCOL_VERSION = 1;
  var OFFSCREEN_VIEWPORT_FACTOR = 3;
  var HTML_BUDGET = 35e3;
  var HEADER_BAND = 0.15;
  var FOOTER_BAND = 0.1;
  var SIDEBAR_MAX_WIDTH = 0.25;

  // src/analyze.ts
  function viewportOf(doc) {
    const win = doc.defaultView;
    return {
      width: win && win.innerWidth ? win.innerWidth : 1024,
      height: win && win.innerHeight ? win.innerHeight : 768
    };
  }
  function rectOf(el) {
    const r = el.getBoundingClientRect();
    return { x: r.x, y: r.y, w: Math.max(0, r.width), h: Math.max(0, r.height) };
  }
  function ownText(el) {
    let out = "";
    for (const node of Array.from(el.childNodes)) {
      if (node.nodeType === 3) {
        out += node.textContent ?? "";
      }
    }
    return out.replace(/\s+/g, " ").trim();
  }
  var SKIPPED_TAGS = /* @__PURE__ */ new Set(["script", "style", "noscript", "template", "head", "meta", "link", "title"]);
  function isStyleHidden(el, doc) {
    const win = doc.defaultView;
    if (!win) return false;
    const style = win.getComputedStyle(el);
    return style.display === "none" || style.visibility === "hidden" || style.opacity === "0";
  }
  function isOffscreen(rect, viewport) {
    return rect.y >= viewport.height * OFFSCREEN_VIEWPORT_FACTOR;
  }
  function isOverlayCandidate(el, rect, viewport, doc) {
    const win = doc.defaultView;
    if (!win) return false;
    const style = win.getComputedStyle(el);
    if (style.position !== "fixed" && style.position !== "absolute") return false;
    const z = parseInt(style.zIndex, 10);
    if (!(z > 0)) return false;
    const coverage = rect.w * rect.h / (viewport.width * viewport.height);
    return coverage >= 0.95;
  }
  function contains(outer, inner) {
    return inner.x >= outer.x && inner.y >= outer.y && inner.x + inner.w <= outer.x + outer.w && inner.y + inner.h <= outer.y + outer.h;
  }
  function zIndexOf(el, doc) {
    const win = doc.defaultView;
    if (!win) return 0;
    const z = parseInt(win.getComputedStyle(el).zIndex, 10);
    return Number.isNaN(z) ? 0 : z;
  }
  function classifyRegion(rect, viewport) {
    const centerY = rect.y + rect.h / 2;
    const centerX = rect.x + rect.w / 2;
    if (centerY <= viewport.height * HEADER_BAND) return "non_essential";
    if (centerY >= viewport.height * (1 - FOOTER_BAND) && centerY <= viewport.height) return "non_essential";
    const sidebarWidth = viewport.width * SIDEBAR_MAX_WIDTH;
    const columnLike = rect.h >= viewport.height * 0.5;
    if (columnLike && rect.w <= sidebarWidth && (centerX <= sidebarWidth || centerX >= viewport.width - sidebarWidth)) {
      return "non_essential";
    }
    return "main";
  }
  function analyze(doc) {
    const viewport = viewportOf(doc);
    const records2 = [];
    const elements = [];
    function walk(el, path, hiddenAbove, regionAbove) {
      const tag = el.tagName.toLowerCase();
      if (SKIPPED_TAGS.has(tag)) return;
      const rect = rectOf(el);
      const styleHidden = hiddenAbove || isStyleHidden(el, doc);
      const zeroArea = rect.w <= 0 || rect.h <= 0;
      const structural = tag === "html" || tag === "body";
      const visible = structural ? !styleHidden : !styleHidden && !zeroArea && !isOffscreen(rect, viewport);
      const region = !structural && regionAbove === "non_essential" ? "non_essential" : classifyRegion(rect, viewport);
      records2.push({
        path,
        tag,
        text: ownText(el),
        rect,
        visible,
        covered: false,
        region
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
    for (let i = 0; i < records2.length; i += 1) {
      const record = records2[i];
      if (!record.visible) continue;
      if (!isOverlayCandidate(elements[i], record.rect, viewport, doc)) continue;
      const overlay = elements[i];
      const overlayZ = zIndexOf(overlay, doc);
      for (let j = 0; j < records2.length; j += 1) {
        if (i === j) continue;
        const other = records2[j];
        if (!other.visible || other.covered) continue;
        if (overlay.contains(elements[j]) || elements[j].contains(overlay)) continue;
        if (!contains(record.rect, other.rect)) continue;
        const otherZ = zIndexOf(elements[j], doc);
        if (otherZ < overlayZ) {
          other.covered = true;
        }
      }
    }
    return { records: records2, elements, viewport };
  }

  // src/interactives.ts
  var INTERACTIVE_TAGS = /* @__PURE__ */ new Set(["a", "button", "input", "select", "textarea"]);
  function roleOf(el) {
    const tag = el.tagName.toLowerCase();
    if (tag === "a") return "link";
    if (tag === "input") {
      const type = (el.getAttribute("type") || "text").toLowerCase();
      return type === "submit" || type === "button" ? "button" : "input";
    }
    return tag === "button" ? "button" : tag;
  }
  function labelOf(el) {
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
  function nthOfType(el) {
    let n = 1;
    let sibling = el.previousElementSibling;
    while (sibling) {
      if (sibling.tagName === el.tagName) n += 1;
      sibling = sibling.previousElementSibling;
    }
    return n;
  }
  function selectorHint(el, doc) {
    const id = el.getAttribute("id");
    if (id) return `#${id}`;
    const segments = [];
    let cursor = el;
    while (cursor && cursor.tagName.toLowerCase() !== "html") {
      segments.unshift(`${cursor.tagName.toLowerCase()}:nth-of-type(${nthOfType(cursor)})`);
      const candidate = segments.join(" > ");
      try {
        if (doc.querySelectorAll(candidate).length === 1) return candidate;
      } catch {
      }
      cursor = cursor.parentElement;
    }
    return segments.join(" > ");
  }
  function annotateInteractives(analysis, doc) {
    const out = [];
    for (let i = 0; i < analysis.records.length; i += 1) {
      const record = analysis.records[i];
      if (!record.visible || record.covered || record.region !== "main") continue;
      if (!INTERACTIVE_TAGS.has(record.tag)) continue;
      out.push({
        hint: selectorHint(analysis.elements[i], doc),
        role: roleOf(analysis.elements[i]),
        label: labelOf(analysis.elements[i])
      });
    }
    return out;
  }

  // src/serialize.ts
  var INTERACTIVE_TAGS2 = /* @__PURE__ */ new Set(["a", "button", "input", "select", "textarea"]);
  function countRemoved(analysis) {
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
  function serializeTextOnly(analysis, doc) {
    const lines = ["[region: main]"];
    for (let i = 0; i < analysis.records.length; i += 1) {
      const record = analysis.records[i];
      if (!record.visible || record.covered || record.region !== "main") continue;
      if (record.text) {
        lines.push(record.text);
      }
      if (INTERACTIVE_TAGS2.has(record.tag)) {
        const el = analysis.elements[i];
        const hint = selectorHint(el, doc);
        const label = (el.textContent || el.getAttribute("placeholder") || "").replace(/\s+/g, " ").trim();
        lines.push(`[${record.tag === "a" ? "link" : record.tag} ${hint} "${label.slice(0, 80)}"]`);
      }
    }
    return {
      content: lines.join("\n"),
      removed: countRemoved(analysis),
      interactives: annotateInteractives(analysis, doc)
    };
  }
  function indexClone(cloneRoot) {
    const byPath = /* @__PURE__ */ new Map();
    function walk(el, path) {
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
  function serializeHtml(analysis, doc) {
    const root = doc.documentElement;
    if (!root) {
      return { content: "", removed: countRemoved(analysis), interactives: [] };
    }
    const clone = root.cloneNode(true);
    const byPath = indexClone(clone);
    const droppable = [];
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
    const overBudget = () => clone.outerHTML.length > HTML_BUDGET;
    if (overBudget()) {
      const nonEssential = droppable.filter((e) => analysis.records[e.recordIndex].region !== "main").sort((a, b) => b.depth - a.depth);
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
      interactives: annotateInteractives(analysis, doc)
    };
  }

  // src/extractor.ts
  function extract(mode, doc) {
    const target = doc ?? (typeof document !== "undefined" ? document : void 0);
    if (!target || !target.documentElement) {
      const error = {
        protocol: PROTOCOL_VERSION,
        content: "",
        removed_counts: { hidden: 0, covered: 0, non_essential: 0 },
        interactives: [],
        error: "detached or missing document"
      };
      return JSON.stringify(error);
    }
    const analysis = analyze(target);
    const serialized = mode === "html" ? serializeHtml(analysis, target) : serializeTextOnly(analysis, target);
    const envelope = {
      protocol: PROTOCOL_VERSION,
      content: serialized.content,
      removed_counts: serialized.removed,
      interactives: serialized.interactives
    };
    return JSON.stringify(envelope);
  }
  function records(doc) {
    const target = doc ?? (typeof document !== "undefined" ? document : void 0);
    if (!target || !target.documentElement) return [];
    return analyze(target).records;
  }

  // src/install.ts
  if (typeof window !== "undefined" && !window.__pageExtractor) {
    window.__pageExtractor = {
      extract: (mode) => extract(mode),
      records: () => records(),
      protocol: 1
    };
  }
})();
