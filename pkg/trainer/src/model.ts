/** Builds a trainable network from an architecture document.
 *
 * Node semantics mirror the engine's decoder: 3x3 convolutions preserve
 * spatial dims and take a rectified-linear activation, 1x1 projection
 * convolutions stay linear (they sit on the residual path), the residual
 * add is rectified, pooling and the classifier head are activation-free.
 * No normalization layers, so the trainable-parameter count equals the
 * decoder's accounting exactly.
 */
import { Architecture } from "./protocol.js";
import {
  Add,
  Conv2d,
  GlobalAvgPool,
  Linear,
  ParamTensor,
  Pool2d,
  Shape3,
  softmaxCrossEntropy,
} from "./ops.js";
import { Rng } from "./rng.js";

type Layer =
  | { kind: "conv"; op: Conv2d }
  | { kind: "pool"; op: Pool2d }
  | { kind: "add"; op: Add }
  | { kind: "gap"; op: GlobalAvgPool }
  | { kind: "linear"; op: Linear };

export class SchemaError extends Error {}

export interface SgdConfig {
  learningRate: number;
  momentum: number;
  weightDecay: number;
}

export class Model {
  readonly layers: Layer[] = [];
  readonly inputsOf: number[][] = [];
  readonly inShapes: Shape3[] = [];
  readonly outShapes: Shape3[] = [];
  readonly inputShape: Shape3;
  readonly classes: number;
  private activations: Float32Array[] = [];

  constructor(arch: Architecture, initSeed = 2024) {
    const rng = new Rng(initSeed);
    const [c, h, w] = arch.input;
    this.inputShape = { c, h, w };
    this.classes = arch.classes;

    for (let i = 0; i < arch.nodes.length; i++) this.inputsOf.push([]);
    for (const [src, dst] of arch.edges) {
      if (dst >= arch.nodes.length || src >= arch.nodes.length) {
        throw new SchemaError(`edge [${src},${dst}] out of range`);
      }
      if (src >= dst) {
        throw new SchemaError(`edge [${src},${dst}] is not topologically ordered`);
      }
      this.inputsOf[dst].push(src);
    }

    const shapeOf = (index: number): Shape3 =>
      index === -1 ? this.inputShape : this.outShapes[index];

    arch.nodes.forEach((node, i) => {
      const ins = this.inputsOf[i];
      if (node.op === "add" ? ins.length !== 2 : ins.length !== 1) {
        throw new SchemaError(`node ${i} (${node.op}) has ${ins.length} inputs`);
      }
      const inShape = shapeOf(ins[0]);
      this.inShapes.push(inShape);
      switch (node.op) {
        case "conv": {
          if (inShape.c !== node.in) {
            throw new SchemaError(`node ${i}: conv expects ${node.in} channels, gets ${inShape.c}`);
          }
          const op = new Conv2d(node.in, node.out, node.kernel, node.kernel === 3, rng);
          this.layers.push({ kind: "conv", op });
          this.outShapes.push(op.outShape(inShape));
          break;
        }
        case "pool": {
          const op = new Pool2d(node.kind, node.window, node.stride);
          if (inShape.h < node.window || inShape.w < node.window) {
            throw new SchemaError(`node ${i}: cannot pool ${inShape.h}x${inShape.w}`);
          }
          this.layers.push({ kind: "pool", op });
          this.outShapes.push(op.outShape(inShape));
          break;
        }
        case "add": {
          const other = shapeOf(ins[1]);
          if (other.c !== inShape.c || other.h !== inShape.h || other.w !== inShape.w) {
            throw new SchemaError(`node ${i}: add inputs differ in shape`);
          }
          this.layers.push({ kind: "add", op: new Add() });
          this.outShapes.push(inShape);
          break;
        }
        case "gap": {
          this.layers.push({ kind: "gap", op: new GlobalAvgPool() });
          this.outShapes.push({ c: inShape.c, h: 1, w: 1 });
          break;
        }
        case "linear": {
          if (inShape.c !== node.in) {
            throw new SchemaError(`node ${i}: linear expects ${node.in} features, gets ${inShape.c}`);
          }
          this.layers.push({ kind: "linear", op: new Linear(node.in, node.out, rng) });
          this.outShapes.push({ c: node.out, h: 1, w: 1 });
          break;
        }
      }
    });

    if (this.layers.length === 0) throw new SchemaError("architecture has no nodes");
    const last = this.layers[this.layers.length - 1];
    if (last.kind !== "linear" || this.outShapes[this.layers.length - 1].c !== this.classes) {
      throw new SchemaError("architecture must end in a classifier matching `classes`");
    }
  }

  countParams(): number {
    let total = 0;
    for (const layer of this.layers) {
      if (layer.kind === "conv" || layer.kind === "linear") total += layer.op.paramCount();
    }
    return total;
  }

  parameters(): ParamTensor[] {
    const out: ParamTensor[] = [];
    for (const layer of this.layers) {
      if (layer.kind === "conv" || layer.kind === "linear") out.push(...layer.op.params());
    }
    return out;
  }

  /** Forward one sample; returns the class logits. */
  forward(image: Float32Array): Float32Array {
    const acts: Float32Array[] = new Array(this.layers.length);
    const valueOf = (index: number) => (index === -1 ? image : acts[index]);
    for (let i = 0; i < this.layers.length; i++) {
      const layer = this.layers[i];
      const ins = this.inputsOf[i];
      switch (layer.kind) {
        case "conv":
          acts[i] = layer.op.forward(valueOf(ins[0]), this.inShapes[i]);
          break;
        case "pool":
          acts[i] = layer.op.forward(valueOf(ins[0]), this.inShapes[i]);
          break;
        case "add":
          acts[i] = layer.op.forward(valueOf(ins[0]), valueOf(ins[1]));
          break;
        case "gap":
          acts[i] = layer.op.forward(valueOf(ins[0]), this.inShapes[i]);
          break;
        case "linear":
          acts[i] = layer.op.forward(valueOf(ins[0]));
          break;
      }
    }
    this.activations = acts;
    return acts[this.layers.length - 1];
  }

  /** Backward from logit gradients; accumulates parameter gradients. */
  backward(image: Float32Array, gradLogits: Float32Array): void {
    const acts = this.activations;
    const grads: (Float32Array | null)[] = new Array(this.layers.length).fill(null);
    grads[this.layers.length - 1] = gradLogits;
    const valueOf = (index: number) => (index === -1 ? image : acts[index]);
    const accumulate = (index: number, grad: Float32Array) => {
      if (index === -1) return; // gradient w.r.t. the image is discarded
      const existing = grads[index];
      if (existing === null) {
        grads[index] = grad;
      } else {
        for (let i = 0; i < existing.length; i++) existing[i] += grad[i];
      }
    };

    for (let i = this.layers.length - 1; i >= 0; i--) {
      const gradOut = grads[i];
      if (gradOut === null) continue;
      const layer = this.layers[i];
      const ins = this.inputsOf[i];
      switch (layer.kind) {
        case "conv":
          accumulate(ins[0], layer.op.backward(gradOut, acts[i], valueOf(ins[0]), this.inShapes[i]));
          break;
        case "pool":
          accumulate(ins[0], layer.op.backward(gradOut, this.inShapes[i]));
          break;
        case "add": {
          const grad = layer.op.backward(gradOut, acts[i]);
          accumulate(ins[0], grad);
          accumulate(ins[1], grad.slice());
          break;
        }
        case "gap":
          accumulate(ins[0], layer.op.backward(gradOut, this.inShapes[i]));
          break;
        case "linear":
          accumulate(ins[0], layer.op.backward(gradOut, valueOf(ins[0])));
          break;
      }
    }
  }

  /** Train on one minibatch; returns the mean loss. */
  trainBatch(images: Float32Array[], labels: number[], sgd: SgdConfig): number {
    let loss = 0;
    for (let n = 0; n < images.length; n++) {
      const logits = this.forward(images[n]);
      const gradLogits = new Float32Array(logits.length);
      loss += softmaxCrossEntropy(logits, labels[n], gradLogits);
      this.backward(images[n], gradLogits);
    }
    this.step(sgd, images.length);
    return loss / images.length;
  }

  private step(sgd: SgdConfig, batchSize: number): void {
    for (const p of this.parameters()) {
      const { value, grad, velocity } = p;
      for (let i = 0; i < value.length; i++) {
        const g = grad[i] / batchSize + sgd.weightDecay * value[i];
        velocity[i] = sgd.momentum * velocity[i] + g;
        value[i] -= sgd.learningRate * velocity[i];
        grad[i] = 0;
      }
    }
  }

  predict(image: Float32Array): number {
    const logits = this.forward(image);
    let best = 0;
    for (let i = 1; i < logits.length; i++) if (logits[i] > logits[best]) best = i;
    return best;
  }

  accuracy(images: Float32Array[], labels: number[]): number {
    if (images.length === 0) return 0;
    let correct = 0;
    for (let n = 0; n < images.length; n++) {
      if (this.predict(images[n]) === labels[n]) correct++;
    }
    return correct / images.length;
  }
}

export function buildModel(arch: Architecture, initSeed = 2024): Model {
  return new Model(arch, initSeed);
}
