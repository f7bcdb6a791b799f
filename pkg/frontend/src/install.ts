/**
 * Bundle entry: installs the extractor on the page under a single global.
 * The host/extractor boundary is exactly one string-in/string-out call:
 * window.__pageExtractor.extract(mode) -> JSON envelope text.
 */

import { extract, records } from "./extractor";

declare global {
  interface Window {
    __pageExtractor?: {
      extract: (mode: "text_only" | "html") => string;
      records: typeof records;
      protocol: number;
    };
  }
}

if (typeof window !== "undefined" && !window.__pageExtractor) {
  window.__pageExtractor = {
    extract: (mode) => extract(mode),
    records: () => records(),
    protocol: 1,
  };
}

export {};
