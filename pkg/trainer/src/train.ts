/** The training loop: SGD with momentum, milestone learning-rate schedule,
 *  per-epoch validation scoring, best-epoch accuracy as the result. */
import { Dataset, Split, tileChannels } from "./dataset.js";
import { Model } from "./model.js";
import { Rng } from "./rng.js";

export interface Milestone {
  epoch: number;
  rate: number;
}

export interface TrainSpec {
  epochs: number;
  learningRate: number;
  momentum: number;
  weightDecay: number;
  milestones: Milestone[];
  batchSize: number;
  shuffleSeed: number;
}

export const REFERENCE_EPOCHS = 600;

export function defaultTrainSpec(epochs: number): TrainSpec {
  return {
    epochs,
    learningRate: 0.025,
    momentum: 0.9,
    weightDecay: 3e-4,
    milestones: scaleMilestones(
      [
        { epoch: 100, rate: 0.017 },
        { epoch: 300, rate: 0.001 },
        { epoch: 500, rate: 0.0001 },
      ],
      epochs,
    ),
    batchSize: 32,
    shuffleSeed: 7,
  };
}

/** Rescale milestone epochs proportionally when the budget is shorter than
 *  the first milestone; milestones past the budget simply never fire. */
export function scaleMilestones(milestones: Milestone[], epochs: number): Milestone[] {
  if (milestones.length === 0 || epochs >= milestones[0].epoch) return milestones;
  const factor = epochs / REFERENCE_EPOCHS;
  const scaled: Milestone[] = [];
  for (const m of milestones) {
    const epoch = Math.max(1, Math.round(m.epoch * factor));
    if (scaled.length > 0 && epoch <= scaled[scaled.length - 1].epoch) continue;
    scaled.push({ epoch, rate: m.rate });
  }
  return scaled;
}

export class DivergenceError extends Error {}

export interface TrainOutcome {
  vBest: number;
  perEpoch: number[];
}

function prepare(split: Split, channels: number): { x: Float32Array[]; y: number[] } {
  // center pixels to [-1, 1]; without normalization layers the network
  // trains poorly on all-positive inputs
  return {
    x: split.images.map((img) => {
      const centered = new Float32Array(img.length);
      for (let i = 0; i < img.length; i++) centered[i] = img[i] * 2 - 1;
      return tileChannels(centered, channels);
    }),
    y: split.labels,
  };
}

export function trainAndScore(model: Model, dataset: Dataset, spec: TrainSpec): TrainOutcome {
  const channels = model.inputShape.c;
  if (dataset.train.size !== model.inputShape.h || dataset.train.size !== model.inputShape.w) {
    throw new Error(
      `dataset images are ${dataset.train.size}x${dataset.train.size}, ` +
      `architecture expects ${model.inputShape.h}x${model.inputShape.w}`,
    );
  }
  const train = prepare(dataset.train, channels);
  const val = prepare(dataset.val, channels);
  const rng = new Rng(spec.shuffleSeed);
  const order = train.x.map((_, i) => i);

  let learningRate = spec.learningRate;
  let vBest = 0;
  const perEpoch: number[] = [];
  for (let epoch = 1; epoch <= spec.epochs; epoch++) {
    for (const m of spec.milestones) {
      if (epoch === m.epoch + 1) learningRate = m.rate;
    }
    rng.shuffle(order);
    for (let start = 0; start < order.length; start += spec.batchSize) {
      const batch = order.slice(start, start + spec.batchSize);
      const loss = model.trainBatch(
        batch.map((i) => train.x[i]),
        batch.map((i) => train.y[i]),
        { learningRate, momentum: spec.momentum, weightDecay: spec.weightDecay },
      );
      if (!Number.isFinite(loss)) {
        throw new DivergenceError(`training diverged at epoch ${epoch} (loss ${loss})`);
      }
    }
    const accuracy = model.accuracy(val.x, val.y);
    perEpoch.push(accuracy);
    if (accuracy > vBest) vBest = accuracy;
  }
  return { vBest, perEpoch };
}
