/**
 * Static compliance checks for CSP default-src 'self': the console must
 * work with no inline script, no inline style, no eval-family calls and no
 * third-party origins. jsdom does not enforce CSP, so the flow tests cover
 * behavior and these checks cover the policy surface.
 */

import { readFileSync, readdirSync, statSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

import { describe, expect, it } from "vitest";

const FRONTEND = join(dirname(fileURLToPath(import.meta.url)), "..");

function sourceFiles(dir: string): string[] {
  const out: string[] = [];
  for (const entry of readdirSync(dir)) {
    const path = join(dir, entry);
    if (statSync(path).isDirectory()) out.push(...sourceFiles(path));
    else if (entry.endsWith(".ts")) out.push(path);
  }
  return out;
}

describe("CSP default-src 'self' compliance", () => {
  const html = readFileSync(join(FRONTEND, "static", "index.html"), "utf-8");

  it("index.html has no inline script", () => {
    const scripts = html.match(/<script\b[^>]*>([\s\S]*?)<\/script>/gi) ?? [];
    for (const tag of scripts) {
      expect(tag).toMatch(/\bsrc=/);
      const body = tag.replace(/<script\b[^>]*>/i, "").replace(/<\/script>/i, "");
      expect(body.trim()).toBe("");
    }
    expect(scripts.length).toBeGreaterThan(0);
  });

  it("index.html has no inline style or style attributes", () => {
    expect(html).not.toMatch(/<style\b/i);
    expect(html).not.toMatch(/\bstyle=/i);
    expect(html).toMatch(/<link rel="stylesheet" href="\/styles\.css">/);
  });

  it("index.html has no inline event handlers or javascript: URLs", () => {
    expect(html).not.toMatch(/\son[a-z]+=/i);
    expect(html).not.toMatch(/javascript:/i);
  });

  it("references no third-party origins", () => {
    expect(html).not.toMatch(/https?:\/\//i);
  });

  it("sources never use eval-family APIs or markup injection", () => {
    for (const file of sourceFiles(join(FRONTEND, "src"))) {
      const source = readFileSync(file, "utf-8");
      expect(source, file).not.toMatch(/\beval\s*\(/);
      expect(source, file).not.toMatch(/new\s+Function\s*\(/);
      expect(source, file).not.toMatch(/\binnerHTML\b/);
      expect(source, file).not.toMatch(/\bouterHTML\b/);
      expect(source, file).not.toMatch(/insertAdjacentHTML/);
      expect(source, file).not.toMatch(/document\.write/);
      expect(source, file).not.toMatch(/setAttribute\(\s*["']on/);
    }
  });

  it("sources never touch persistent browser storage or cookies", () => {
    for (const file of sourceFiles(join(FRONTEND, "src"))) {
      const source = readFileSync(file, "utf-8");
      expect(source, file).not.toMatch(/localStorage/);
      expect(source, file).not.toMatch(/sessionStorage/);
      expect(source, file).not.toMatch(/document\.cookie/);
    }
  });
});
