/** The worker loop: handshake, then evaluate requests one at a time.
 *
 * Results are cached in memory by request id, so a retried request id
 * returns the recorded fitness without retraining. Malformed lines are
 * answered with an error message and the loop continues.
 */
import * as net from "node:net";
import * as readline from "node:readline";
import { Readable, Writable } from "node:stream";
import { Dataset, loadSplit, makeSynthetic } from "./dataset.js";
import { buildModel, SchemaError } from "./model.js";
import {
  DatasetRef,
  EvaluateMessage,
  Message,
  PROTOCOL_VERSION,
  ProtocolError,
  decodeLine,
  encodeLine,
  hello,
} from "./protocol.js";
import { defaultTrainSpec, trainAndScore } from "./train.js";

export interface WorkerOptions {
  batchSize?: number;
  initSeed?: number;
}

export class Worker {
  private results = new Map<string, number>();

  constructor(private options: WorkerOptions = {}) {}

  private resolveDataset(ref: DatasetRef | null | undefined, classes: number): Dataset {
    if (!ref) throw new Error("request has no dataset");
    if ("synthetic" in ref) {
      if (ref.synthetic.classes !== classes) {
        throw new Error(
          `dataset has ${ref.synthetic.classes} classes, architecture expects ${classes}`);
      }
      return makeSynthetic(ref.synthetic);
    }
    const train = loadSplit(ref.train_path);
    const val = loadSplit(ref.val_path);
    if (train.classNames.length !== classes) {
      throw new Error(
        `dataset has ${train.classNames.length} classes, architecture expects ${classes}`);
    }
    return { train, val };
  }

  evaluate(request: EvaluateMessage): number {
    const cached = this.results.get(request.id);
    if (cached !== undefined) {
      log(`cached result for ${request.id}`);
      return cached;
    }
    const model = buildModel(request.architecture, this.options.initSeed);
    const dataset = this.resolveDataset(request.dataset, request.architecture.classes);
    const spec = defaultTrainSpec(request.epochs);
    if (this.options.batchSize) spec.batchSize = this.options.batchSize;
    log(`training ${request.id}: ${model.countParams()} params, ${request.epochs} epochs`);
    const outcome = trainAndScore(model, dataset, spec);
    this.results.set(request.id, outcome.vBest);
    log(`finished ${request.id}: v_best=${outcome.vBest.toFixed(4)}`);
    return outcome.vBest;
  }

  handleLine(line: string): Message | null {
    if (line.trim() === "") return null;
    let message: Message;
    try {
      message = decodeLine(line);
    } catch (err) {
      const reason = err instanceof ProtocolError ? err.message : String(err);
      return { type: "error", id: "", message: `malformed line: ${reason}` };
    }
    switch (message.type) {
      case "hello":
        if (message.protocol_version !== PROTOCOL_VERSION) {
          return {
            type: "error", id: "",
            message: `unsupported protocol version ${message.protocol_version}`,
          };
        }
        return hello();
      case "evaluate":
        try {
          return { type: "result", id: message.id, fitness: this.evaluate(message) };
        } catch (err) {
          const reason = err instanceof SchemaError || err instanceof Error
            ? err.message : String(err);
          return { type: "error", id: message.id, message: reason };
        }
      default:
        return { type: "error", id: "", message: `unexpected ${message.type} message` };
    }
  }
}

function log(text: string): void {
  process.stderr.write(`[trainer] ${text}\n`);
}

export function serveStreams(input: Readable, output: Writable,
                             options: WorkerOptions = {}): Promise<void> {
  const worker = new Worker(options);
  const lines = readline.createInterface({ input, crlfDelay: Infinity });
  return new Promise((resolve) => {
    lines.on("line", (line) => {
      const reply = worker.handleLine(line);
      if (reply !== null) {
        try {
          output.write(encodeLine(reply));
        } catch {
          log("dropped reply: output stream closed");
        }
      }
    });
    lines.on("close", resolve);
  });
}

export function serveTcp(port: number, options: WorkerOptions = {}): net.Server {
  const worker = new Worker(options);
  const server = net.createServer((socket) => {
    log(`connection from ${socket.remoteAddress ?? "?"}`);
    const lines = readline.createInterface({ input: socket, crlfDelay: Infinity });
    lines.on("line", (line) => {
      const reply = worker.handleLine(line);
      if (reply !== null && !socket.destroyed) {
        socket.write(encodeLine(reply));
      }
    });
    socket.on("error", () => lines.close());
  });
  server.listen(port, () => {
    const address = server.address();
    const actual = typeof address === "object" && address ? address.port : port;
    log(`listening on port ${actual}`);
  });
  return server;
}
