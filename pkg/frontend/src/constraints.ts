// Client-side constraint checks for counter-offer forms. The server always
// revalidates; this only catches violations before submission.

import type { ConstraintDoc, ConstraintView, ValueDoc } from "./types.js";

const INT_RE = /^-?\d+$/;
const DECIMAL_RE = /^[+-]?\d+(\.\d+)?$/;

function compareDecimal(a: string, b: string): number {
  // Exact comparison on decimal strings; no binary floating point.
  const [aSign, aInt, aFrac] = splitDecimal(a);
  const [bSign, bInt, bFrac] = splitDecimal(b);
  const width = Math.max(aFrac.length, bFrac.length);
  const left = BigInt(aSign + aInt + aFrac.padEnd(width, "0"));
  const right = BigInt(bSign + bInt + bFrac.padEnd(width, "0"));
  return left < right ? -1 : left > right ? 1 : 0;
}

function splitDecimal(text: string): [string, string, string] {
  let sign = "";
  let rest = text;
  if (rest.startsWith("-") || rest.startsWith("+")) {
    sign = rest[0] === "-" ? "-" : "";
    rest = rest.slice(1);
  }
  const [intPart, fracPart = ""] = rest.split(".");
  return [sign, intPart, fracPart];
}

function kindOf(doc: ConstraintDoc): string | null {
  switch (doc.constraint) {
    case "exact":
      return doc.value.type;
    case "range":
      return doc.lo.type;
    case "oneOf":
      return doc.options[0]?.type ?? null;
    case "regex":
      return "text";
    case "any":
      return null;
  }
}

function valueText(doc: ValueDoc): string {
  return typeof doc.value === "number" ? String(doc.value) : doc.value;
}

// Returns null when the raw input satisfies the constraint, otherwise a
// message suitable for inline display next to the form field.
export function checkAssignment(view: ConstraintView, raw: string): string | null {
  const doc = view.constraint;
  const kind = kindOf(doc);

  if (kind === "int" && !INT_RE.test(raw)) {
    return `${view.key}: expected a whole number`;
  }
  if (kind === "decimal" && !DECIMAL_RE.test(raw)) {
    return `${view.key}: expected a decimal number`;
  }

  switch (doc.constraint) {
    case "any":
      return null;
    case "exact":
      return raw === valueText(doc.value)
        ? null
        : `${view.key}: must equal ${valueText(doc.value)}`;
    case "regex": {
      let pattern: RegExp;
      try {
        pattern = new RegExp(`^(?:${doc.pattern})$`);
      } catch {
        return `${view.key}: unsupported pattern`;
      }
      return pattern.test(raw) ? null : `${view.key}: must match /${doc.pattern}/`;
    }
    case "oneOf": {
      const options = doc.options.map(valueText);
      return options.includes(raw)
        ? null
        : `${view.key}: must be one of ${options.join(", ")}`;
    }
    case "range": {
      const lo = valueText(doc.lo);
      const hi = valueText(doc.hi);
      let inRange: boolean;
      if (kind === "int") {
        const value = BigInt(raw);
        inRange = value >= BigInt(lo) && value <= BigInt(hi);
      } else if (kind === "decimal") {
        inRange = compareDecimal(raw, lo) >= 0 && compareDecimal(raw, hi) <= 0;
      } else if (kind === "timestamp") {
        const value = Date.parse(raw);
        if (Number.isNaN(value)) return `${view.key}: expected a timestamp`;
        inRange = value >= Date.parse(lo) && value <= Date.parse(hi);
      } else {
        return `${view.key}: unsupported range kind`;
      }
      return inRange
        ? null
        : `${view.key}: constraint violated, must be between ${lo} and ${hi}`;
    }
  }
}

// Validate a whole counter form; returns all violations, empty when clean.
export function checkAssignments(
  views: ConstraintView[],
  assignments: Record<string, string>,
): string[] {
  const violations: string[] = [];
  const byKey = new Map(views.map((view) => [view.key, view]));
  for (const [key, raw] of Object.entries(assignments)) {
    const view = byKey.get(key);
    if (view === undefined) {
      violations.push(`${key}: not a parameter of this contract`);
      continue;
    }
    const violation = checkAssignment(view, raw);
    if (violation !== null) violations.push(violation);
  }
  return violations;
}
