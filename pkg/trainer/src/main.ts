/** Command-line entry point.
 *
 *   main.js serve [--port N] [--batch-size N]
 *   main.js make-dataset --classes N --per-class M --image-size S --seed K --out DIR
 */
import { makeSynthetic, writeDataset } from "./dataset.js";
import { serveStreams, serveTcp } from "./worker.js";

function flag(args: string[], name: string): string | undefined {
  const index = args.indexOf(name);
  return index >= 0 ? args[index + 1] : undefined;
}

function intFlag(args: string[], name: string, fallback?: number): number {
  const raw = flag(args, name);
  if (raw === undefined) {
    if (fallback === undefined) throw new Error(`missing required flag ${name}`);
    return fallback;
  }
  const value = parseInt(raw, 10);
  if (Number.isNaN(value)) throw new Error(`flag ${name} expects an integer, got ${raw}`);
  return value;
}

async function main(): Promise<number> {
  const [command, ...args] = process.argv.slice(2);
  switch (command) {
    case "serve": {
      const options = { batchSize: intFlag(args, "--batch-size", 32) };
      const port = flag(args, "--port");
      if (port !== undefined) {
        serveTcp(parseInt(port, 10), options);
        await new Promise(() => {}); // runs until killed
      } else {
        await serveStreams(process.stdin, process.stdout, options);
      }
      return 0;
    }
    case "make-dataset": {
      const spec = {
        classes: intFlag(args, "--classes"),
        per_class: intFlag(args, "--per-class"),
        image_size: intFlag(args, "--image-size"),
        seed: intFlag(args, "--seed", 0),
      };
      const out = flag(args, "--out");
      if (!out) throw new Error("missing required flag --out");
      writeDataset(makeSynthetic(spec), out);
      process.stderr.write(`[trainer] wrote dataset to ${out}\n`);
      return 0;
    }
    default:
      process.stderr.write(
        "usage: main.js serve [--port N] [--batch-size N]\n" +
        "       main.js make-dataset --classes N --per-class M --image-size S" +
        " --seed K --out DIR\n");
      return 2;
  }
}

main().then(
  (code) => process.exit(code),
  (err) => {
    process.stderr.write(`error: ${err instanceof Error ? err.message : err}\n`);
    process.exit(1);
  },
);
