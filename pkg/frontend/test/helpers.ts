import { readFileSync } from "node:fs";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";

export const FIXTURES = join(dirname(fileURLToPath(import.meta.url)), "fixtures");

export const fixture = (name: string) => join(FIXTURES, name);

/** Raw CSV body rows, independent of the package's own readers. */
export function rawRows(name: string): string[][] {
  return readFileSync(fixture(name), "utf-8")
    .split(/\r?\n/)
    .filter((line) => line !== "" && !line.startsWith("# "))
    .map((line) => line.split(","));
}

export function deepFreeze<T>(obj: T): T {
  if (obj !== null && typeof obj === "object") {
    Object.values(obj).forEach(deepFreeze);
    Object.freeze(obj);
  }
  return obj;
}
