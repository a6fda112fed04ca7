/** Wire protocol: newline-delimited JSON, one object per line.
 *
 * Both directions open with a hello carrying the protocol version. The
 * engine then sends evaluate requests; the worker answers each with a
 * result or an error bearing the same id.
 */
import { z } from "zod";

export const PROTOCOL_VERSION = 1;

export const nodeSchema = z.discriminatedUnion("op", [
  z.object({
    op: z.literal("conv"),
    in: z.number().int().positive(),
    out: z.number().int().positive(),
    kernel: z.union([z.literal(1), z.literal(3)]),
  }),
  z.object({
    op: z.literal("pool"),
    kind: z.enum(["max", "mean"]),
    window: z.number().int().positive(),
    stride: z.number().int().positive(),
  }),
  z.object({ op: z.literal("add") }),
  z.object({ op: z.literal("gap") }),
  z.object({
    op: z.literal("linear"),
    in: z.number().int().positive(),
    out: z.number().int().positive(),
  }),
]);

export const architectureSchema = z.object({
  input: z.tuple([z.number().int().positive(), z.number().int().positive(),
                  z.number().int().positive()]),
  classes: z.number().int().positive(),
  nodes: z.array(nodeSchema),
  edges: z.array(z.tuple([z.number().int().gte(-1), z.number().int().gte(0)])),
});

export const datasetSchema = z.union([
  z.object({
    synthetic: z.object({
      classes: z.number().int().positive(),
      per_class: z.number().int().positive(),
      image_size: z.number().int().positive(),
      seed: z.number().int(),
    }),
  }),
  z.object({ train_path: z.string(), val_path: z.string() }),
]);

export const helloSchema = z.object({
  type: z.literal("hello"),
  protocol_version: z.number().int(),
});

export const evaluateSchema = z.object({
  type: z.literal("evaluate"),
  id: z.string().min(1),
  architecture: architectureSchema,
  epochs: z.number().int().positive(),
  dataset: datasetSchema.nullable().optional(),
});

export const resultSchema = z.object({
  type: z.literal("result"),
  id: z.string(),
  fitness: z.number().gte(0).lte(1),
});

export const errorSchema = z.object({
  type: z.literal("error"),
  id: z.string(),
  message: z.string(),
});

export const messageSchema = z.discriminatedUnion("type", [
  helloSchema, evaluateSchema, resultSchema, errorSchema,
]);

export type Architecture = z.infer<typeof architectureSchema>;
export type ArchNode = z.infer<typeof nodeSchema>;
export type DatasetRef = z.infer<typeof datasetSchema>;
export type EvaluateMessage = z.infer<typeof evaluateSchema>;
export type Message = z.infer<typeof messageSchema>;

export function encodeLine(message: Message): string {
  return JSON.stringify(message) + "\n";
}

export class ProtocolError extends Error {
  constructor(message: string, public line: string) {
    super(`${message}: ${JSON.stringify(line)}`);
  }
}

export function decodeLine(line: string): Message {
  let raw: unknown;
  try {
    raw = JSON.parse(line);
  } catch {
    throw new ProtocolError("invalid JSON", line);
  }
  const parsed = messageSchema.safeParse(raw);
  if (!parsed.success) {
    throw new ProtocolError(parsed.error.issues[0]?.message ?? "schema violation", line);
  }
  return parsed.data;
}

export function hello(): Message {
  return { type: "hello", protocol_version: PROTOCOL_VERSION };
}
