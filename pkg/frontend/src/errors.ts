/** Error classes carrying the exit codes the simulator's CLI uses. */

export class ConfigError extends Error {}

/** Missing files and CSVs whose columns don't match the figure kind. */
export class DataError extends Error {}

export class InvariantError extends Error {}

export function exitCodeFor(err: unknown): number {
  if (err instanceof ConfigError) return 2;
  if (err instanceof DataError) return 3;
  if (err instanceof InvariantError) return 4;
  if (err instanceof Error && "code" in err) {
    // filesystem problems are data errors, same as the simulator CLI
    const code = (err as NodeJS.ErrnoException).code;
    if (code === "ENOENT" || code === "EACCES" || code === "EISDIR") return 3;
  }
  return 4;
}
